#include "psim/budget.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "psim/csv.hpp"

namespace psim::budget {

const std::optional<Factor>& EfficiencyBudget::factor(const std::string& name) const {
    return const_cast<EfficiencyBudget*>(this)->factor(name);
}

std::optional<Factor>& EfficiencyBudget::factor(const std::string& name) {
    if (name == "eta_Y") return eta_Y;
    if (name == "eta_ZPL") return eta_ZPL;
    if (name == "eta_blink") return eta_blink;
    if (name == "beta_C") return beta_C;
    if (name == "eta_p") return eta_p;
    if (name == "T_optics") return T_optics;
    if (name == "eta_f") return eta_f;
    if (name == "eta_s") return eta_s;
    throw ConfigError("unknown efficiency factor '" + name + "'");
}

void EfficiencyBudget::validate() const {
    for (const char* name : factor_names) {
        const auto& f = factor(name);
        if (!f) continue;
        if (!(f->value >= 0.0 && f->value <= 1.0))
            throw ConfigError(std::string("budget factor ") + name + " must be in [0, 1]");
        if (!(f->uncertainty >= 0.0))
            throw ConfigError(std::string("budget factor ") + name +
                              " uncertainty must be >= 0");
    }
    if (!(eta_det.value >= 0.0 && eta_det.value <= 1.0))
        throw ConfigError("eta_det must be in [0, 1]");
    if (!(rep_rate_mhz > 0.0)) throw ConfigError("rep_rate_mhz must be > 0");
    if (!(deadtime_ns >= 0.0)) throw ConfigError("deadtime_ns must be >= 0");
}

std::pair<double, double> total_efficiency(const EfficiencyBudget& budget) {
    budget.validate();
    double product = 1.0;
    double rel_var = 0.0;
    for (const char* name : EfficiencyBudget::factor_names) {
        const auto& f = budget.factor(name);
        if (!f) throw ConfigError(std::string("budget: missing factor ") + name);
        product *= f->value;
        if (f->value > 0.0) {
            double r = f->uncertainty / f->value;
            rel_var += r * r;
        }
    }
    return {product, product * std::sqrt(rel_var)};
}

RateEstimate expected_rate(const EfficiencyBudget& budget) {
    auto [eff, eff_u] = total_efficiency(budget);
    RateEstimate est;
    est.raw_mhz = eff * budget.eta_det.value * budget.rep_rate_mhz;
    double rel_var = 0.0;
    if (eff > 0.0) rel_var += (eff_u / eff) * (eff_u / eff);
    if (budget.eta_det.value > 0.0) {
        double r = budget.eta_det.uncertainty / budget.eta_det.value;
        rel_var += r * r;
    }
    est.raw_uncertainty_mhz = est.raw_mhz * std::sqrt(rel_var);
    // MHz * ns = 1e-3; non-paralyzable pile-up.
    double load = est.raw_mhz * budget.deadtime_ns * 1e-3;
    est.deadtime_corrected_mhz = est.raw_mhz / (1.0 + load);
    return est;
}

double propagation_transmission(double length_um, double loss_db_per_mm) {
    if (!(length_um >= 0.0) || !(loss_db_per_mm >= 0.0))
        throw ConfigError("propagation_transmission: length and loss must be >= 0");
    return std::pow(10.0, -loss_db_per_mm * (length_um * 1e-3) / 10.0);
}

void write_report(std::ostream& os, const EfficiencyBudget& budget) {
    auto [eff, eff_u] = total_efficiency(budget);
    auto rate = expected_rate(budget);
    char buf[128];
    os << "factor        value    uncertainty\n";
    for (const char* name : EfficiencyBudget::factor_names) {
        const auto& f = budget.factor(name);
        std::snprintf(buf, sizeof(buf), "%-12s  %7.4f  %7.4f\n", name, f->value, f->uncertainty);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "%-12s  %7.4f  %7.4f\n", "total", eff, eff_u);
    os << buf;
    std::snprintf(buf, sizeof(buf), "%-12s  %7.4f  %7.4f\n", "eta_det", budget.eta_det.value,
                  budget.eta_det.uncertainty);
    os << buf;
    std::snprintf(buf, sizeof(buf), "rep rate               %8.3f MHz\n", budget.rep_rate_mhz);
    os << buf;
    std::snprintf(buf, sizeof(buf), "expected rate          %8.3f +- %.3f MHz\n", rate.raw_mhz,
                  rate.raw_uncertainty_mhz);
    os << buf;
    std::snprintf(buf, sizeof(buf), "deadtime-corrected     %8.3f MHz (deadtime %.0f ns)\n",
                  rate.deadtime_corrected_mhz, budget.deadtime_ns);
    os << buf;
}

void write_csv(std::ostream& os, const EfficiencyBudget& budget) {
    auto [eff, eff_u] = total_efficiency(budget);
    os << "factor,value,uncertainty\n";
    for (const char* name : EfficiencyBudget::factor_names) {
        const auto& f = budget.factor(name);
        os << name << ',' << csv::format_double(f->value) << ','
           << csv::format_double(f->uncertainty) << '\n';
    }
    os << "total," << csv::format_double(eff) << ',' << csv::format_double(eff_u) << '\n';
}

} // namespace psim::budget
