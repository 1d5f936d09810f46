#ifndef PSIM_BUDGET_HPP
#define PSIM_BUDGET_HPP

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>

#include "psim/errors.hpp"

namespace psim::budget {

struct Factor {
    double value = 0.0;
    double uncertainty = 0.0;
};

// Multiplicative source-efficiency ledger. The eight optical factors compose
// the source efficiency; detection efficiency, repetition rate, and detector
// deadtime convert it to count rates. The collection-optics factor is named
// T_optics to avoid any collision with a beamsplitter transmissivity.
struct EfficiencyBudget {
    std::optional<Factor> eta_Y;     // well-coupled dipole fraction
    std::optional<Factor> eta_ZPL;   // zero-phonon-line fraction
    std::optional<Factor> eta_blink; // 1 - dark-state occupation
    std::optional<Factor> beta_C;    // waveguide coupling
    std::optional<Factor> eta_p;     // on-chip propagation
    std::optional<Factor> T_optics;  // collection optics
    std::optional<Factor> eta_f;     // grating-to-fiber
    std::optional<Factor> eta_s;     // spectral filter

    Factor eta_det{0.65, 0.05};
    double rep_rate_mhz = 72.5;
    double deadtime_ns = 100.0;

    static constexpr std::array<const char*, 8> factor_names = {
        "eta_Y", "eta_ZPL", "eta_blink", "beta_C", "eta_p", "T_optics", "eta_f", "eta_s"};

    const std::optional<Factor>& factor(const std::string& name) const;
    std::optional<Factor>& factor(const std::string& name);

    void validate() const;
};

// Product of the eight optical factors; uncertainty by first-order relative
// quadrature. Throws ConfigError naming any missing factor.
std::pair<double, double> total_efficiency(const EfficiencyBudget& budget);

struct RateEstimate {
    double raw_mhz = 0.0;
    double raw_uncertainty_mhz = 0.0;
    double deadtime_corrected_mhz = 0.0;
};

// raw = total_efficiency * eta_det * rep_rate; the deadtime-corrected rate is
// the non-paralyzable raw / (1 + raw * deadtime).
RateEstimate expected_rate(const EfficiencyBudget& budget);

// eta_p = 10^(-loss_db_per_mm * length_mm / 10).
double propagation_transmission(double length_um, double loss_db_per_mm);

// Aligned text ledger plus totals.
void write_report(std::ostream& os, const EfficiencyBudget& budget);
// CSV columns: factor,value,uncertainty
void write_csv(std::ostream& os, const EfficiencyBudget& budget);

} // namespace psim::budget

#endif
