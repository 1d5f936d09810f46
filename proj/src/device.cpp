#include "psim/device.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include "psim/csv.hpp"

namespace psim::device {

namespace {
constexpr double pi = std::numbers::pi;

void check_unit_interval(double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0))
        throw ConfigError(std::string(name) + " must be in [0, 1], got " + std::to_string(v));
}
} // namespace

double ModeProfile::amplitude(double offset_nm) const {
    switch (kind) {
    case ProfileKind::AnalyticEven: {
        double w = effective_width_nm;
        if (std::abs(offset_nm) >= w / 2.0) return 0.0;
        return std::cos(pi * offset_nm / w);
    }
    case ProfileKind::AnalyticOdd: {
        double u = offset_nm / effective_width_nm;
        return u * std::exp((1.0 - u * u) / 2.0);
    }
    case ProfileKind::Tabulated: {
        if (samples.empty()) return 0.0;
        if (offset_nm <= samples.front().first || offset_nm >= samples.back().first) {
            if (offset_nm == samples.front().first) return samples.front().second;
            if (offset_nm == samples.back().first) return samples.back().second;
            return 0.0;
        }
        auto it = std::lower_bound(samples.begin(), samples.end(), offset_nm,
                                   [](const auto& s, double x) { return s.first < x; });
        auto [x1, y1] = *it;
        auto [x0, y0] = *(it - 1);
        return y0 + (y1 - y0) * (offset_nm - x0) / (x1 - x0);
    }
    }
    return 0.0;
}

void ModeProfile::validate() const {
    if (kind == ProfileKind::Tabulated) {
        if (samples.size() < 2) throw ConfigError("tabulated profile needs at least 2 samples");
        for (std::size_t i = 1; i < samples.size(); ++i)
            if (samples[i].first <= samples[i - 1].first)
                throw ConfigError("tabulated profile offsets must be strictly increasing");
        double m = 0.0;
        for (auto& [x, a] : samples) m = std::max(m, std::abs(a));
        if (std::abs(m - 1.0) > 1e-9)
            throw ConfigError("tabulated profile must be normalized to max |u| = 1");
    } else {
        if (!(effective_width_nm > 0.0))
            throw ConfigError("analytic profile needs effective_width_nm > 0");
    }
}

ModeProfile ModeProfile::analytic_even(double width_nm) {
    ModeProfile p;
    p.kind = ProfileKind::AnalyticEven;
    p.effective_width_nm = width_nm;
    p.validate();
    return p;
}

ModeProfile ModeProfile::analytic_odd(double peak_nm) {
    ModeProfile p;
    p.kind = ProfileKind::AnalyticOdd;
    p.effective_width_nm = peak_nm;
    p.validate();
    return p;
}

ModeProfile ModeProfile::tabulated(std::vector<std::pair<double, double>> samples) {
    ModeProfile p;
    p.kind = ProfileKind::Tabulated;
    p.samples = std::move(samples);
    double m = 0.0;
    for (auto& [x, a] : p.samples) m = std::max(m, std::abs(a));
    if (m <= 0.0) throw ConfigError("tabulated profile is identically zero");
    for (auto& [x, a] : p.samples) a /= m;
    p.validate();
    return p;
}

ModeProfile ModeProfile::tabulated_from_csv(std::istream& is) {
    auto rows = csv::read_numeric(is, 2, "mode profile csv");
    std::vector<std::pair<double, double>> samples;
    samples.reserve(rows.size());
    for (auto& r : rows) samples.emplace_back(r[0], r[1]);
    return tabulated(std::move(samples));
}

void DeviceParams::validate() const {
    check_unit_interval(T_E, "T_E");
    check_unit_interval(T_C, "T_C");
    check_unit_interval(T_Ef, "T_Ef");
    check_unit_interval(T_Cf, "T_Cf");
    check_unit_interval(B_C, "B_C");
    check_unit_interval(B_E, "B_E");
    if (!(width_nm > 0.0)) throw ConfigError("width_nm must be > 0");
}

void FilterChain::validate() const {
    if (!(split_E >= 0.0 && split_C >= 0.0 && split_E + split_C <= 1.0 + 1e-12))
        throw ConfigError("filter chain splitter fractions must be non-negative, sum <= 1");
    for (auto& s : sections) {
        check_unit_interval(s.t_E, "section t_E");
        check_unit_interval(s.t_C, "section t_C");
    }
}

std::pair<double, double> beta_at(const ModeProfile& profile_E, const ModeProfile& profile_C,
                                  const DeviceParams& params, double offset_nm) {
    params.validate();
    if (std::abs(offset_nm) >= params.width_nm / 2.0)
        throw ConfigError("offset " + std::to_string(offset_nm) + " nm outside the waveguide (width " +
                          std::to_string(params.width_nm) + " nm)");
    double uE = profile_E.amplitude(offset_nm);
    double uC = profile_C.amplitude(offset_nm);
    return {params.B_E * uE * uE, params.B_C * uC * uC};
}

double pump_suppression(const DeviceParams& params) {
    params.validate();
    return (params.T_E * params.T_Ef + params.T_C * params.T_Cf) / 2.0;
}

double pump_suppression(const FilterChain& chain) {
    chain.validate();
    double tE = 1.0, tC = 1.0;
    for (auto& s : chain.sections) {
        tE *= s.t_E;
        tC *= s.t_C;
    }
    return chain.split_E * tE + chain.split_C * tC;
}

double impurity_simplified(double T_p, double beta_E, double beta_C) {
    if (!(T_p >= 0.0)) throw ConfigError("T_p must be >= 0");
    if (beta_E * beta_C <= 0.0) throw DivergentImpurity();
    return 2.0 * T_p / (beta_E * beta_C);
}

double impurity_exact(const DeviceParams& params, double beta_E, double beta_C) {
    params.validate();
    double i_r = params.T_E * params.T_Ef + params.T_C * params.T_Cf;
    double i_sp = (params.T_E * beta_E + params.T_C * beta_C) * (beta_C + beta_E * params.T_Ef);
    if (i_sp <= 0.0) throw DivergentImpurity();
    return i_r / i_sp;
}

std::vector<std::pair<double, double>> impurity_vs_power(const DeviceParams& params, double beta_E,
                                                         double beta_C,
                                                         const bloch::EmitterParams& emitter,
                                                         const bloch::PulseParams& pulse_template,
                                                         const std::vector<double>& powers,
                                                         double rel_tol) {
    for (double p : powers)
        if (!(p > 0.0)) throw ConfigError("impurity_vs_power: powers must be > 0");

    const double xi0 = impurity_simplified(pump_suppression(params), beta_E, beta_C);
    const double t_end = bloch::default_t_end(emitter, pulse_template);

    auto p_e = [&](double theta) {
        auto traj = bloch::evolve_pulse(emitter, pulse_template.with_theta(theta), t_end, rel_tol);
        return bloch::emission_probability(traj, emitter);
    };

    // Slope of the linear low-power extrapolation, p_e ~ c theta^2. Richardson
    // over two small areas removes the quartic term.
    const double th = 0.1;
    const double c = (4.0 * p_e(th) / (th * th) - p_e(2.0 * th) / (4.0 * th * th)) / 3.0;

    std::vector<std::pair<double, double>> out;
    out.reserve(powers.size());
    for (double P : powers) {
        double theta = pi * std::sqrt(P);
        double pe = p_e(theta);
        if (pe <= 0.0) throw NumericalError("impurity_vs_power: vanishing emission probability");
        out.emplace_back(P, xi0 * (c * pi * pi * P) / pe);
    }
    return out;
}

std::vector<ImpurityPoint> impurity_map(const DeviceParams& params, const ModeProfile& profile_E,
                                        const ModeProfile& profile_C,
                                        const std::vector<double>& offsets_nm) {
    std::vector<ImpurityPoint> out;
    out.reserve(offsets_nm.size());
    const double T_p = pump_suppression(params);
    for (double x : offsets_nm) {
        auto [bE, bC] = beta_at(profile_E, profile_C, params, x);
        ImpurityPoint pt;
        pt.offset_nm = x;
        pt.beta_E = bE;
        pt.beta_C = bC;
        if (bE * bC <= 0.0) {
            pt.divergent = true;
            pt.xi = std::numeric_limits<double>::infinity();
        } else {
            pt.xi = impurity_simplified(T_p, bE, bC);
        }
        out.push_back(pt);
    }
    return out;
}

void write_impurity_map_csv(std::ostream& os, const std::vector<ImpurityPoint>& map) {
    os << "offset_nm,beta_E,beta_C,xi\n";
    for (auto& pt : map) {
        os << csv::format_double(pt.offset_nm) << ',' << csv::format_double(pt.beta_E) << ','
           << csv::format_double(pt.beta_C) << ',';
        if (pt.divergent)
            os << "inf";
        else
            os << csv::format_double(pt.xi);
        os << '\n';
    }
}

namespace {

double xi_at(const ModeProfile& pE, const ModeProfile& pC, const DeviceParams& params, double T_p,
             double x) {
    auto [bE, bC] = beta_at(pE, pC, params, x);
    if (bE * bC <= 0.0) return std::numeric_limits<double>::infinity();
    return 2.0 * T_p / (bE * bC);
}

} // namespace

BetaCSolution extract_beta_c(double xi_measured, double T_p, const ModeProfile& profile_E,
                             const ModeProfile& profile_C, const DeviceParams& params) {
    if (!(xi_measured > 2.0 * T_p))
        throw NumericalError("extract_beta_c: xi <= 2 T_p has no solution with beta <= 1");

    const double half = params.width_nm / 2.0;
    auto f = [&](double x) { return xi_at(profile_E, profile_C, params, T_p, x); };

    // Locate the impurity minimum, then bisect on the outward (rising) branch.
    const int n_scan = 2000;
    double x_min = 0.0, f_min = std::numeric_limits<double>::infinity();
    for (int i = 1; i < n_scan; ++i) {
        double x = half * i / n_scan;
        double v = f(x);
        if (v < f_min) {
            f_min = v;
            x_min = x;
        }
    }
    if (!(f_min < xi_measured))
        throw NumericalError("extract_beta_c: no root in (0, width/2); measured xi below the "
                             "minimum reachable impurity");

    double lo = x_min, hi = half;
    double step = half / n_scan;
    bool bracketed = false;
    for (double x = x_min + step; x < half; x += step) {
        if (f(x) >= xi_measured) {
            hi = x;
            lo = x - step;
            bracketed = true;
            break;
        }
    }
    if (!bracketed) throw NumericalError("extract_beta_c: no root in (0, width/2)");

    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (f(mid) < xi_measured)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-9) break;
    }
    double x_root = 0.5 * (lo + hi);
    auto [bE, bC] = beta_at(profile_E, profile_C, params, x_root);
    (void)bE;
    return BetaCSolution{bC, x_root};
}

Calibration calibrate_profiles(const CalibrationTargets& t) {
    if (!(t.beta_C_peak > t.beta_C_at_anchor) || !(t.beta_C_peak >= t.beta_C_sweet))
        throw ConfigError("calibration: need beta_C_peak > anchor and >= sweet-spot values");
    Calibration c;
    c.B_C = t.beta_C_peak;
    c.w_C_nm = pi * t.anchor_offset_nm / std::acos(std::sqrt(t.beta_C_at_anchor / c.B_C));
    c.x_p_nm = c.w_C_nm / pi * std::acos(std::sqrt(t.beta_C_sweet / c.B_C));

    double beta_E_anchor = 2.0 * t.T_p / (t.xi_at_anchor * t.beta_C_at_anchor);
    ModeProfile pE = ModeProfile::analytic_odd(c.x_p_nm);
    double u = pE.amplitude(t.anchor_offset_nm);
    c.B_E = beta_E_anchor / (u * u);
    if (!(c.B_E > 0.0 && c.B_E <= 1.0))
        throw NumericalError("calibration produced B_E outside (0, 1]");
    return c;
}

std::pair<double, double> TransmissionSpectrum::at(double lambda) const {
    if (lambda_nm.size() < 2) throw ConfigError("transmission spectrum needs >= 2 samples");
    if (lambda < lambda_nm.front() || lambda > lambda_nm.back())
        throw ConfigError("transmission spectrum: wavelength " + std::to_string(lambda) +
                          " nm outside tabulated range");
    auto it = std::lower_bound(lambda_nm.begin(), lambda_nm.end(), lambda);
    std::size_t i = std::distance(lambda_nm.begin(), it);
    if (i == 0) return {T_E[0], T_C[0]};
    double w = (lambda - lambda_nm[i - 1]) / (lambda_nm[i] - lambda_nm[i - 1]);
    return {T_E[i - 1] + w * (T_E[i] - T_E[i - 1]), T_C[i - 1] + w * (T_C[i] - T_C[i - 1])};
}

TransmissionSpectrum TransmissionSpectrum::from_csv(std::istream& is) {
    auto rows = csv::read_numeric(is, 3, "transmission spectrum csv");
    TransmissionSpectrum s;
    for (auto& r : rows) {
        if (!s.lambda_nm.empty() && r[0] <= s.lambda_nm.back())
            throw ConfigError("transmission spectrum wavelengths must be strictly increasing");
        s.lambda_nm.push_back(r[0]);
        s.T_E.push_back(r[1]);
        s.T_C.push_back(r[2]);
    }
    return s;
}

} // namespace psim::device
