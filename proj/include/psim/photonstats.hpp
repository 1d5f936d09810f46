#ifndef PSIM_PHOTONSTATS_HPP
#define PSIM_PHOTONSTATS_HPP

#include <utility>
#include <vector>

#include "psim/errors.hpp"

namespace psim::stats {

// Hong-Ou-Mandel interferometer description. R and T are the beamsplitter
// reflectivity/transmissivity, (1 - epsilon) the classical interferometer
// visibility, eta_opt the total optical efficiency of the collection setup.
struct HomSetup {
    double R = 0.476;
    double T = 0.524;
    double epsilon = 0.003;
    double eta_opt = 0.053;

    void validate() const;
};

// Normalized zero-delay peak areas of the two polarization configurations,
// plus the raw central/long-delay amplitudes they were rescaled from.
struct PeakAreas {
    double A_parallel = 0.0; // co-polarized
    double A_perp = 0.0;     // cross-polarized
    double A_zero = 0.0;
    double A_inf = 0.0;

    void validate() const;
};

// g2(0) = 2 xi - xi^2 for impurity xi in [0, 1].
double g2_from_xi(double xi);

// Inverse relation, xi = 1 - sqrt(1 - g2).
double xi_from_g2(double g2);

// V_raw = (A_perp - A_parallel) / A_perp.
double vraw_from_areas(const PeakAreas& areas);

// Expected co-polarized central-peak amplitude for intrinsic visibility V:
//   A(V) = (R^3 T + R T^3)[1 + (2 - eta_opt) g2] - 2 R^2 T^2 (1 - eps)^2 V.
double hom_expected_area(double V, const HomSetup& setup, double g2);

struct IntrinsicVisibility {
    double V = 0.0;
    bool out_of_physical_range = false; // V > 1; value returned as-is
};

// Setup- and g2-corrected visibility:
//   V = [1 + (2 - eta_opt) g2] (R^2 + T^2) V_raw / (2 R T (1 - eps)^2).
IntrinsicVisibility hom_intrinsic(double V_raw, const HomSetup& setup, double g2);

struct InterceptFit {
    double V = 0.0;
    double slope = 0.0;
    double uncertainty = 0.0; // 1-sigma on V from the fit covariance
};

// Ordinary least squares through (g2, 1 - V_raw) points; V = 1 - intercept.
InterceptFit v_intercept_fit(const std::vector<std::pair<double, double>>& points);

// Two-state telegraph model g2(tau) = 1 + b exp(-lambda |tau|): the dark-state
// occupation implied by a bunching amplitude b is b / (1 + b).
double blinking_fraction(double bunching_amplitude);

double blinking_envelope(double tau_us, double bunching_amplitude, double lambda_per_us);

} // namespace psim::stats

#endif
