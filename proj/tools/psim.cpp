// Command-line front end: pulsed two-level dynamics, waveguide impurity maps,
// click-stream synthesis with histogram re-analysis, HOM visibility
// correction, and the source efficiency budget.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "psim/bloch.hpp"
#include "psim/budget.hpp"
#include "psim/config.hpp"
#include "psim/csv.hpp"
#include "psim/device.hpp"
#include "psim/montecarlo.hpp"
#include "psim/photonstats.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using psim::config::RunConfig;

namespace {

constexpr int EXIT_CONFIG = 2;
constexpr int EXIT_NUMERICAL = 3;

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    int threads = 0;
};

RunConfig load_config(const Common& c) {
    if (c.config_path.empty()) throw psim::ConfigError("--config is required");
    RunConfig cfg = RunConfig::load_file(c.config_path);
    if (!c.out_dir.empty()) cfg.output_dir = c.out_dir;
    return cfg;
}

std::ofstream open_out(const RunConfig& cfg, const std::string& name) {
    fs::create_directories(cfg.output_dir);
    fs::path p = fs::path(cfg.output_dir) / name;
    std::ofstream f(p, std::ios::binary);
    if (!f) throw psim::ConfigError("cannot write " + p.string());
    return f;
}

int cmd_rabi(const Common& common, double p_min, double p_max, int n_points,
             const std::string& trajectory_file) {
    RunConfig cfg = load_config(common);
    std::vector<double> powers;
    for (int i = 0; i < n_points; ++i)
        powers.push_back(p_min * std::pow(p_max / p_min, double(i) / (n_points - 1)));

    auto [beta_E, beta_C] =
        psim::device::beta_at(cfg.profile_E, cfg.profile_C, cfg.device_params, 20.0);
    auto xi_rows = psim::device::impurity_vs_power(cfg.device_params, beta_E, beta_C, cfg.emitter,
                                                   cfg.pulse, powers, cfg.integration_rel_tol);

    const double t_end = psim::bloch::default_t_end(cfg.emitter, cfg.pulse);
    auto out = open_out(cfg, "rabi.csv");
    out << "power,theta_rad,p_e,xi\n";
    double best_pe = -1.0, theta_at_max = 0.0;
    for (std::size_t i = 0; i < powers.size(); ++i) {
        double theta = std::numbers::pi * std::sqrt(powers[i]);
        auto traj = psim::bloch::evolve_pulse(cfg.emitter, cfg.pulse.with_theta(theta), t_end,
                                              cfg.integration_rel_tol);
        double pe = psim::bloch::emission_probability(traj, cfg.emitter);
        if (pe > best_pe && powers[i] <= 2.0) {
            best_pe = pe;
            theta_at_max = theta;
        }
        out << psim::csv::format_double(powers[i]) << ',' << psim::csv::format_double(theta) << ','
            << psim::csv::format_double(pe) << ',' << psim::csv::format_double(xi_rows[i].second)
            << '\n';
    }

    auto xi_pi = psim::device::impurity_vs_power(cfg.device_params, beta_E, beta_C, cfg.emitter,
                                                 cfg.pulse, {1.0}, cfg.integration_rel_tol);
    std::printf("rabi: first p_e maximum at theta = %.4f rad (%.4f pi)\n", theta_at_max,
                theta_at_max / std::numbers::pi);
    std::printf("rabi: xi at pi-pulse = %.6g\n", xi_pi[0].second);

    if (!trajectory_file.empty()) {
        auto traj = psim::bloch::evolve_pulse(cfg.emitter, cfg.pulse, t_end, cfg.integration_rel_tol);
        auto tf = open_out(cfg, trajectory_file);
        psim::bloch::write_trajectory_csv(tf, traj);
    }
    return 0;
}

int cmd_impurity_map(const Common& common, double x_min, double x_max, double step) {
    RunConfig cfg = load_config(common);
    std::vector<double> offsets;
    for (double x = x_min; x <= x_max + 1e-12; x += step) offsets.push_back(x);
    auto map = psim::device::impurity_map(cfg.device_params, cfg.profile_E, cfg.profile_C, offsets);
    auto out = open_out(cfg, "impurity_map.csv");
    psim::device::write_impurity_map_csv(out, map);
    std::printf("impurity-map: %zu offsets written to %s/impurity_map.csv\n", map.size(),
                cfg.output_dir.c_str());
    return 0;
}

void write_stream(const RunConfig& cfg, const std::string& base, const psim::mc::ClickStream& s,
                  const std::string& format) {
    if (format == "binary") {
        auto f = open_out(cfg, base + ".psim");
        s.write_binary(f);
    } else {
        auto f = open_out(cfg, base + ".csv");
        s.write_csv(f);
    }
}

int cmd_synth(const Common& common, const std::string& experiment, std::uint64_t n_pulses,
              const std::string& format, std::int64_t bin_ps, std::int64_t window_periods) {
    RunConfig cfg = load_config(common);
    const std::uint64_t seed = cfg.resolve_seed(common.seed);
    const std::int64_t rep = cfg.source.rep_period_ps();
    const std::int64_t window = window_periods * rep;

    json result;
    result["experiment"] = experiment;
    result["n_pulses"] = n_pulses;
    result["seed"] = seed;

    auto histogram_and_write = [&](const psim::mc::ClickStream& a, const psim::mc::ClickStream& b,
                                   const std::string& base) {
        auto hist = psim::mc::correlate(a, b, bin_ps, window, rep, common.threads);
        auto hf = open_out(cfg, base + "_hist.csv");
        hist.write_csv(hf);
        return hist;
    };

    if (experiment == "hbt") {
        auto [a, b] = psim::mc::synth_hbt(cfg.source, n_pulses, seed, common.threads);
        write_stream(cfg, "hbt_ch0", a, format);
        write_stream(cfg, "hbt_ch1", b, format);
        auto hist = histogram_and_write(a, b, "hbt");
        auto g2 = psim::mc::extract_g2(hist, rep, std::min<std::int64_t>(window - rep, 50'000'000));
        result["g2"] = g2.g2;
        result["g2_uncertainty"] = g2.sigma;
        std::printf("synth hbt: g2(0) = %.5f +- %.5f\n", g2.g2, g2.sigma);
    } else if (experiment == "hom-co" || experiment == "hom-cross") {
        bool co = experiment == "hom-co";
        auto pol = co ? psim::mc::Polarization::Co : psim::mc::Polarization::Cross;
        auto [a, b] = psim::mc::synth_hom(cfg.source, cfg.hom, pol, n_pulses, seed, common.threads);
        std::string base = co ? "hom_co" : "hom_cross";
        write_stream(cfg, base + "_ch0", a, format);
        write_stream(cfg, base + "_ch1", b, format);
        auto hist = histogram_and_write(a, b, base);

        double central = static_cast<double>(hist.area(-rep / 2.0, rep / 2.0));
        result["central_area"] = central;

        // When the counterpart run already produced its histogram, finish the
        // V_raw extraction in one go.
        std::string other_base = co ? "hom_cross" : "hom_co";
        fs::path other = fs::path(cfg.output_dir) / (other_base + "_hist.csv");
        if (fs::exists(other)) {
            auto rows = psim::csv::read_numeric_file(other.string(), 2);
            psim::mc::CorrelationHistogram oh;
            oh.bin_width_ps = bin_ps;
            oh.window_ps = window;
            oh.rep_period_ps = rep;
            oh.counts.reserve(rows.size());
            for (auto& r : rows) oh.counts.push_back(static_cast<std::uint64_t>(r[1]));
            auto vr = co ? psim::mc::extract_vraw(hist, oh) : psim::mc::extract_vraw(oh, hist);
            result["v_raw"] = vr.v_raw;
            result["v_raw_uncertainty"] = vr.sigma;
            std::printf("synth %s: V_raw = %.4f +- %.4f (with %s)\n", experiment.c_str(), vr.v_raw,
                        vr.sigma, other_base.c_str());
        } else {
            std::printf("synth %s: central area %.0f; run %s to extract V_raw\n",
                        experiment.c_str(), central, other_base.c_str());
        }
    } else {
        throw psim::ConfigError("unknown experiment '" + experiment + "' (hbt, hom-co, hom-cross)");
    }

    auto rf = open_out(cfg, experiment + "_result.json");
    rf << result.dump(2) << '\n';
    return 0;
}

int cmd_budget(const Common& common) {
    RunConfig cfg = load_config(common);
    psim::budget::write_report(std::cout, cfg.efficiency);
    auto f = open_out(cfg, "budget.csv");
    psim::budget::write_csv(f, cfg.efficiency);
    return 0;
}

int cmd_hom_correct(const Common& common, double vraw, double g2, std::optional<double> r,
                    std::optional<double> t, std::optional<double> eps,
                    std::optional<double> eta_opt, const std::string& points_file) {
    psim::stats::HomSetup setup;
    if (!common.config_path.empty()) setup = load_config(common).hom;
    if (r) setup.R = *r;
    if (t) setup.T = *t;
    if (eps) setup.epsilon = *eps;
    if (eta_opt) setup.eta_opt = *eta_opt;

    if (!points_file.empty()) {
        auto rows = psim::csv::read_numeric_file(points_file, 2);
        std::vector<std::pair<double, double>> pts;
        for (auto& row : rows) pts.emplace_back(row[0], 1.0 - row[1]);
        auto fit = psim::stats::v_intercept_fit(pts);
        std::printf("intercept fit over %zu points: V = %.4f +- %.4f (slope %.4f)\n", pts.size(),
                    fit.V, fit.uncertainty, fit.slope);
        return 0;
    }

    auto v = psim::stats::hom_intrinsic(vraw, setup, g2);
    std::printf("V = %.4f%s\n", v.V, v.out_of_physical_range ? "  [outside physical range]" : "");
    return 0;
}

int cmd_fit_rabi(const Common& common, const std::string& data_file) {
    RunConfig cfg = load_config(common);
    auto rows = psim::csv::read_numeric_file(data_file, 2);
    std::vector<std::pair<double, double>> data;
    for (auto& r : rows) data.emplace_back(r[0], r[1]);
    auto fit = psim::bloch::fit_rabi(data, cfg.emitter.gamma, cfg.pulse);
    std::printf("fit-rabi: P_pi = %.6g, gamma_d = %.4f /ns, scale = %.6g, residual = %.4g%s\n",
                fit.p_pi, fit.gamma_d, fit.scale, fit.residual_norm,
                fit.converged ? "" : "  [NOT CONVERGED]");
    return fit.converged ? 0 : EXIT_NUMERICAL;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"waveguide single-photon source simulator"};
    app.require_subcommand(1);

    Common common;

    auto add_common = [&](CLI::App* sub, bool needs_config = true) {
        auto* opt = sub->add_option("--config", common.config_path, "JSON config file");
        if (needs_config) opt->required();
        sub->add_option("--seed", [&common](const std::vector<std::string>& v) {
            common.seed = std::stoull(v[0]);
            return true;
        }, "override the config seed");
        sub->add_option("--out", common.out_dir, "output directory (overrides config)");
        sub->add_option("--threads", common.threads, "worker threads (0 = all cores)");
    };

    // rabi
    double p_min = 0.02, p_max = 4.0;
    int n_points = 40;
    std::string trajectory_file;
    auto* rabi = app.add_subcommand("rabi", "power sweep: p_e and impurity vs power");
    add_common(rabi);
    rabi->add_option("--p-min", p_min, "lowest power, pi-pulse units");
    rabi->add_option("--p-max", p_max, "highest power, pi-pulse units");
    rabi->add_option("--n-points", n_points, "points in the sweep")->check(CLI::Range(2, 100000));
    rabi->add_option("--trajectory", trajectory_file, "also write the pi-pulse trajectory CSV");

    // impurity-map
    double x_min = 0.0, x_max = 60.0, x_step = 0.25;
    auto* imap = app.add_subcommand("impurity-map", "beta factors and impurity vs emitter offset");
    add_common(imap);
    imap->add_option("--x-min", x_min, "first offset (nm)");
    imap->add_option("--x-max", x_max, "last offset (nm)");
    imap->add_option("--step", x_step, "offset step (nm)")->check(CLI::PositiveNumber);

    // synth
    std::string experiment = "hbt", format = "binary";
    std::uint64_t n_pulses = 10'000'000;
    std::int64_t bin_ps = 200, window_periods = 3700;
    auto* synth = app.add_subcommand("synth", "synthesize detector click streams and re-analyze");
    add_common(synth);
    synth->add_option("--experiment", experiment, "hbt, hom-co, or hom-cross");
    synth->add_option("--pulses", n_pulses, "number of excitation pulses");
    synth->add_option("--format", format, "stream file format: csv or binary")
        ->check(CLI::IsMember({"csv", "binary"}));
    synth->add_option("--bin-ps", bin_ps, "histogram bin width (ps)")->check(CLI::PositiveNumber);
    synth->add_option("--window-periods", window_periods, "histogram half-window in rep periods");

    // budget
    auto* bud = app.add_subcommand("budget", "efficiency ledger and expected rates");
    add_common(bud);

    // hom-correct
    double vraw = 0.0, g2v = 0.0;
    std::optional<double> optR, optT, optEps, optEta;
    std::string points_file;
    auto* hc = app.add_subcommand("hom-correct", "setup- and g2-corrected HOM visibility");
    add_common(hc, false);
    hc->add_option("--vraw", vraw, "raw visibility");
    hc->add_option("--g2", g2v, "measured g2(0)");
    hc->add_option("--r", [&optR](const std::vector<std::string>& v) { optR = std::stod(v[0]); return true; }, "beamsplitter R");
    hc->add_option("--t", [&optT](const std::vector<std::string>& v) { optT = std::stod(v[0]); return true; }, "beamsplitter T");
    hc->add_option("--epsilon", [&optEps](const std::vector<std::string>& v) { optEps = std::stod(v[0]); return true; }, "1 - classical visibility");
    hc->add_option("--eta-opt", [&optEta](const std::vector<std::string>& v) { optEta = std::stod(v[0]); return true; }, "total optical efficiency");
    hc->add_option("--points", points_file, "CSV of (g2, V_raw) rows: run the intercept fit");

    // fit-rabi
    std::string data_file;
    auto* fr = app.add_subcommand("fit-rabi", "fit P_pi, gamma_d, scale to (power, intensity) data");
    add_common(fr);
    fr->add_option("--data", data_file, "CSV with power,intensity rows")->required();

    // calibrate
    auto* cal = app.add_subcommand("calibrate", "regenerate the default device calibration block");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : EXIT_CONFIG;
    }

    try {
        if (rabi->parsed()) return cmd_rabi(common, p_min, p_max, n_points, trajectory_file);
        if (imap->parsed()) return cmd_impurity_map(common, x_min, x_max, x_step);
        if (synth->parsed())
            return cmd_synth(common, experiment, n_pulses, format, bin_ps, window_periods);
        if (bud->parsed()) return cmd_budget(common);
        if (hc->parsed())
            return cmd_hom_correct(common, vraw, g2v, optR, optT, optEps, optEta, points_file);
        if (fr->parsed()) return cmd_fit_rabi(common, data_file);
        if (cal->parsed()) {
            std::cout << psim::config::calibration_json() << '\n';
            return 0;
        }
    } catch (const psim::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return EXIT_CONFIG;
    } catch (const psim::NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return EXIT_NUMERICAL;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
