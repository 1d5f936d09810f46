#include "psim/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace psim::config {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& section) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + section);
    }
}

double get_num(const json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number()) throw ConfigError(std::string("key '") + key + "' must be a number");
    return j[key].get<double>();
}

budget::Factor get_factor(const json& j, const char* key, budget::Factor fallback) {
    if (!j.contains(key)) return fallback;
    const json& f = j[key];
    if (!f.is_object()) throw ConfigError(std::string("budget factor '") + key + "' must be an object");
    check_keys(f, {"value", "uncertainty"}, std::string("budget.") + key);
    if (!f.contains("value")) throw ConfigError(std::string("budget factor '") + key + "' needs a value");
    budget::Factor out;
    out.value = f["value"].get<double>();
    out.uncertainty = get_num(f, "uncertainty", 0.0);
    return out;
}

device::ModeProfile parse_profile(const json& j, const std::string& section,
                                  const device::ModeProfile& fallback) {
    if (j.is_null()) return fallback;
    check_keys(j, {"kind", "effective_width_nm", "csv"}, section);
    std::string kind = j.value("kind", "");
    if (kind == "analytic-even")
        return device::ModeProfile::analytic_even(get_num(j, "effective_width_nm", 0.0));
    if (kind == "analytic-odd")
        return device::ModeProfile::analytic_odd(get_num(j, "effective_width_nm", 0.0));
    if (kind == "tabulated") {
        if (!j.contains("csv")) throw ConfigError(section + ": tabulated profile needs a csv path");
        std::ifstream f(j["csv"].get<std::string>());
        if (!f) throw ConfigError(section + ": cannot open " + j["csv"].get<std::string>());
        return device::ModeProfile::tabulated_from_csv(f);
    }
    throw ConfigError(section + ": kind must be analytic-even, analytic-odd, or tabulated");
}

} // namespace

RunConfig::RunConfig() {
    auto cal = device::calibrate_profiles();
    cal.apply(device_params);
    profile_E = cal.profile_E();
    profile_C = cal.profile_C();
    efficiency.eta_Y = budget::Factor{0.91, 0.01};
    efficiency.eta_ZPL = budget::Factor{0.915, 0.005};
    efficiency.eta_blink = budget::Factor{0.97, 0.0};
    efficiency.beta_C = budget::Factor{0.80, 0.05};
    efficiency.eta_p = budget::Factor{0.85, 0.05};
    efficiency.T_optics = budget::Factor{0.51, 0.02};
    efficiency.eta_f = budget::Factor{0.24, 0.02};
    efficiency.eta_s = budget::Factor{0.80, 0.01};
}

void RunConfig::validate() const {
    emitter.validate();
    pulse.validate();
    device_params.validate();
    profile_E.validate();
    profile_C.validate();
    source.validate();
    hom.validate();
    efficiency.validate();
    if (!(integration_rel_tol > 0.0 && integration_rel_tol < 1e-2))
        throw ConfigError("integration.rel_tol must be in (0, 1e-2)");
}

RunConfig RunConfig::load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    return load(f, path);
}

RunConfig RunConfig::load(std::istream& is, const std::string& origin) {
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError(origin + ": config must be a JSON object");

    check_keys(j,
               {"seed", "output_dir", "emitter", "pulse", "integration", "device", "mode_profiles",
                "source_model", "hom_setup", "budget"},
               "config");

    RunConfig cfg;

    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned()) throw ConfigError("seed must be a non-negative integer");
        cfg.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();

    if (j.contains("emitter")) {
        const json& e = j["emitter"];
        check_keys(e, {"gamma_per_ns", "gamma_d_per_ns"}, "emitter");
        cfg.emitter.gamma = get_num(e, "gamma_per_ns", cfg.emitter.gamma);
        cfg.emitter.gamma_d = get_num(e, "gamma_d_per_ns", cfg.emitter.gamma_d);
    }

    if (j.contains("pulse")) {
        const json& p = j["pulse"];
        check_keys(p, {"theta_rad", "intensity_fwhm_ps", "sigma_ps", "t0_ns", "delta_per_ns"},
                   "pulse");
        cfg.pulse.theta = get_num(p, "theta_rad", cfg.pulse.theta);
        if (p.contains("sigma_ps") && p.contains("intensity_fwhm_ps"))
            throw ConfigError("pulse: give either sigma_ps or intensity_fwhm_ps, not both");
        if (p.contains("sigma_ps")) {
            cfg.pulse.sigma_ns = get_num(p, "sigma_ps", 0.0) * 1e-3;
        } else if (p.contains("intensity_fwhm_ps")) {
            cfg.pulse.sigma_ns =
                bloch::PulseParams::sigma_from_intensity_fwhm(get_num(p, "intensity_fwhm_ps", 0.0) * 1e-3);
        }
        cfg.pulse.t0_ns = get_num(p, "t0_ns", cfg.pulse.t0_ns);
        cfg.pulse.delta = get_num(p, "delta_per_ns", cfg.pulse.delta);
    }

    if (j.contains("integration")) {
        const json& i = j["integration"];
        check_keys(i, {"rel_tol"}, "integration");
        cfg.integration_rel_tol = get_num(i, "rel_tol", cfg.integration_rel_tol);
    }

    if (j.contains("device")) {
        const json& d = j["device"];
        check_keys(d, {"T_E", "T_C", "T_Ef", "T_Cf", "B_C", "B_E", "width_nm"}, "device");
        cfg.device_params.T_E = get_num(d, "T_E", cfg.device_params.T_E);
        cfg.device_params.T_C = get_num(d, "T_C", cfg.device_params.T_C);
        cfg.device_params.T_Ef = get_num(d, "T_Ef", cfg.device_params.T_Ef);
        cfg.device_params.T_Cf = get_num(d, "T_Cf", cfg.device_params.T_Cf);
        cfg.device_params.B_C = get_num(d, "B_C", cfg.device_params.B_C);
        cfg.device_params.B_E = get_num(d, "B_E", cfg.device_params.B_E);
        cfg.device_params.width_nm = get_num(d, "width_nm", cfg.device_params.width_nm);
    }

    if (j.contains("mode_profiles")) {
        const json& m = j["mode_profiles"];
        check_keys(m, {"excitation", "collection"}, "mode_profiles");
        if (m.contains("excitation"))
            cfg.profile_E = parse_profile(m["excitation"], "mode_profiles.excitation", cfg.profile_E);
        if (m.contains("collection"))
            cfg.profile_C = parse_profile(m["collection"], "mode_profiles.collection", cfg.profile_C);
    }

    if (j.contains("source_model")) {
        const json& s = j["source_model"];
        check_keys(s,
                   {"p_click", "xi", "blink_rate_per_us", "blink_fraction", "rep_period_ns", "V",
                    "deadtime_ns", "lifetime_ns", "emission_mode"},
                   "source_model");
        cfg.source.p_click = get_num(s, "p_click", cfg.source.p_click);
        cfg.source.xi = get_num(s, "xi", cfg.source.xi);
        cfg.source.blink_rate_per_us = get_num(s, "blink_rate_per_us", cfg.source.blink_rate_per_us);
        cfg.source.blink_fraction = get_num(s, "blink_fraction", cfg.source.blink_fraction);
        cfg.source.rep_period_ns = get_num(s, "rep_period_ns", cfg.source.rep_period_ns);
        cfg.source.V = get_num(s, "V", cfg.source.V);
        cfg.source.deadtime_ns = get_num(s, "deadtime_ns", cfg.source.deadtime_ns);
        cfg.source.lifetime_ns = get_num(s, "lifetime_ns", cfg.source.lifetime_ns);
        if (s.contains("emission_mode")) {
            std::string mode = s["emission_mode"].get<std::string>();
            if (mode == "fast")
                cfg.source.use_quantum_jump = false;
            else if (mode == "quantum-jump")
                cfg.source.use_quantum_jump = true;
            else
                throw ConfigError("source_model.emission_mode must be 'fast' or 'quantum-jump'");
        }
    }
    cfg.source.emitter = cfg.emitter;
    cfg.source.pulse = cfg.pulse;

    if (j.contains("hom_setup")) {
        const json& h = j["hom_setup"];
        check_keys(h, {"R", "T", "epsilon", "eta_opt"}, "hom_setup");
        cfg.hom.R = get_num(h, "R", cfg.hom.R);
        cfg.hom.T = get_num(h, "T", cfg.hom.T);
        cfg.hom.epsilon = get_num(h, "epsilon", cfg.hom.epsilon);
        cfg.hom.eta_opt = get_num(h, "eta_opt", cfg.hom.eta_opt);
    }

    if (j.contains("budget")) {
        const json& b = j["budget"];
        check_keys(b,
                   {"eta_Y", "eta_ZPL", "eta_blink", "beta_C", "eta_p", "T_optics", "eta_f", "eta_s",
                    "eta_det", "rep_rate_mhz", "deadtime_ns"},
                   "budget");
        for (const char* name : budget::EfficiencyBudget::factor_names) {
            auto& slot = cfg.efficiency.factor(name);
            budget::Factor fallback = slot ? *slot : budget::Factor{};
            if (b.contains(name)) slot = get_factor(b, name, fallback);
        }
        cfg.efficiency.eta_det = get_factor(b, "eta_det", cfg.efficiency.eta_det);
        cfg.efficiency.rep_rate_mhz = get_num(b, "rep_rate_mhz", cfg.efficiency.rep_rate_mhz);
        cfg.efficiency.deadtime_ns = get_num(b, "deadtime_ns", cfg.efficiency.deadtime_ns);
    }

    cfg.validate();
    return cfg;
}

std::uint64_t RunConfig::resolve_seed(std::optional<std::uint64_t> cli_seed) const {
    if (cli_seed) return *cli_seed;
    if (seed) return *seed;
    throw ConfigError("no seed given: set 'seed' in the config or pass --seed");
}

std::string calibration_json(const device::CalibrationTargets& targets) {
    auto cal = device::calibrate_profiles(targets);
    json j;
    j["device"] = {{"B_C", cal.B_C}, {"B_E", cal.B_E}};
    j["mode_profiles"] = {
        {"excitation", {{"kind", "analytic-odd"}, {"effective_width_nm", cal.x_p_nm}}},
        {"collection", {{"kind", "analytic-even"}, {"effective_width_nm", cal.w_C_nm}}}};
    return j.dump(2);
}

} // namespace psim::config
