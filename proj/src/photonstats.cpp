#include "psim/photonstats.hpp"

#include <cmath>

#include "psim/optim.hpp"

namespace psim::stats {

void HomSetup::validate() const {
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in01(R) || !in01(T) || !in01(epsilon) || !in01(eta_opt))
        throw ConfigError("hom setup: R, T, epsilon, eta_opt must be in [0, 1]");
    if (std::abs(R + T - 1.0) > 1e-6)
        throw ConfigError("hom setup: R + T must equal 1 within 1e-6");
}

void PeakAreas::validate() const {
    if (A_parallel < 0.0 || A_perp < 0.0 || A_zero < 0.0 || A_inf < 0.0)
        throw ConfigError("peak areas must be >= 0");
}

double g2_from_xi(double xi) {
    if (!(xi >= 0.0 && xi <= 1.0))
        throw ConfigError("g2_from_xi: xi must be in [0, 1], got " + std::to_string(xi));
    return 2.0 * xi - xi * xi;
}

double xi_from_g2(double g2) {
    if (!(g2 >= 0.0 && g2 <= 1.0))
        throw ConfigError("xi_from_g2: g2 must be in [0, 1], got " + std::to_string(g2));
    return 1.0 - std::sqrt(1.0 - g2);
}

double vraw_from_areas(const PeakAreas& areas) {
    areas.validate();
    if (!(areas.A_perp > 0.0)) throw NumericalError("vraw_from_areas: A_perp must be > 0");
    return (areas.A_perp - areas.A_parallel) / areas.A_perp;
}

double hom_expected_area(double V, const HomSetup& setup, double g2) {
    setup.validate();
    if (!(V >= 0.0 && V <= 1.0)) throw ConfigError("hom_expected_area: V must be in [0, 1]");
    const double R = setup.R, T = setup.T;
    const double e1 = 1.0 - setup.epsilon;
    return (R * R * R * T + R * T * T * T) * (1.0 + (2.0 - setup.eta_opt) * g2) -
           2.0 * R * R * T * T * e1 * e1 * V;
}

IntrinsicVisibility hom_intrinsic(double V_raw, const HomSetup& setup, double g2) {
    setup.validate();
    if (!(V_raw >= 0.0 && V_raw <= 1.0)) throw ConfigError("hom_intrinsic: V_raw must be in [0, 1]");
    if (setup.epsilon >= 1.0) throw NumericalError("hom_intrinsic: epsilon = 1 (no interference)");
    const double R = setup.R, T = setup.T;
    const double e1 = 1.0 - setup.epsilon;
    IntrinsicVisibility out;
    out.V = (1.0 + (2.0 - setup.eta_opt) * g2) * (R * R + T * T) * V_raw / (2.0 * R * T * e1 * e1);
    out.out_of_physical_range = out.V > 1.0;
    return out;
}

InterceptFit v_intercept_fit(const std::vector<std::pair<double, double>>& points) {
    if (points.size() < 3) throw NumericalError("v_intercept_fit: need at least 3 points");
    std::vector<double> x, y;
    x.reserve(points.size());
    y.reserve(points.size());
    for (auto& [g2, one_minus_vraw] : points) {
        x.push_back(g2);
        y.push_back(one_minus_vraw);
    }
    bool distinct = false;
    for (std::size_t i = 1; i < x.size(); ++i)
        if (x[i] != x[0]) distinct = true;
    if (!distinct) throw NumericalError("v_intercept_fit: rank-deficient input (all g2 equal)");

    auto fit = optim::ols_line(x, y);
    InterceptFit out;
    out.V = 1.0 - fit.intercept;
    out.slope = fit.slope;
    out.uncertainty = fit.intercept_sigma;
    return out;
}

double blinking_fraction(double bunching_amplitude) {
    if (!(bunching_amplitude >= 0.0)) throw ConfigError("blinking_fraction: b must be >= 0");
    if (std::isinf(bunching_amplitude)) return 1.0;
    return bunching_amplitude / (1.0 + bunching_amplitude);
}

double blinking_envelope(double tau_us, double bunching_amplitude, double lambda_per_us) {
    if (!(lambda_per_us > 0.0)) throw ConfigError("blinking_envelope: lambda must be > 0");
    return 1.0 + bunching_amplitude * std::exp(-lambda_per_us * std::abs(tau_us));
}

} // namespace psim::stats
