#include "psim/bloch.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "psim/ode.hpp"
#include "psim/optim.hpp"

namespace psim::bloch {

using std::complex;
namespace {
constexpr complex<double> I{0.0, 1.0};
}

void EmitterParams::validate() const {
    if (!(gamma >= 0.0) || !std::isfinite(gamma))
        throw ConfigError("emitter: gamma must be >= 0 and finite");
    if (!(gamma_d >= 0.0) || !std::isfinite(gamma_d))
        throw ConfigError("emitter: gamma_d must be >= 0 and finite");
}

void PulseParams::validate() const {
    if (!(sigma_ns > 0.0)) throw ConfigError("pulse: sigma must be > 0");
    if (!(theta >= 0.0)) throw ConfigError("pulse: theta must be >= 0");
    if (!std::isfinite(delta)) throw ConfigError("pulse: delta must be finite");
}

double PulseParams::omega(double t_ns) const {
    double u = (t_ns - t0_ns) / sigma_ns;
    return theta / (std::sqrt(std::numbers::pi) * sigma_ns) * std::exp(-u * u);
}

double PulseParams::sigma_from_intensity_fwhm(double fwhm_ns) {
    return fwhm_ns / (2.0 * std::sqrt(std::numbers::ln2));
}

double BlochState::positivity_defect() const {
    return std::max(0.0, std::norm(rho_ge) - rho_gg * rho_ee);
}

Eigen::Matrix4cd build_generator(const EmitterParams& emitter, double omega, double delta) {
    emitter.validate();
    const double g = emitter.gamma;
    const double gd = emitter.gamma_d;
    const complex<double> iw2 = I * (omega / 2.0);
    const double coh = -(g + 2.0 * gd) / 2.0;

    Eigen::Matrix4cd M;
    M << 0.0, iw2, -iw2, g,
         iw2, coh + I * delta, 0.0, -iw2,
        -iw2, 0.0, coh - I * delta, iw2,
         0.0, -iw2, iw2, -g;
    return M;
}

double default_t_end(const EmitterParams& emitter, const PulseParams& pulse) {
    // 16 lifetimes leave rho_ee ~ 1e-7, comfortably inside the decay-complete
    // precondition of emission_probability.
    double tail = emitter.gamma > 0.0 ? 16.0 / emitter.gamma : 1.0;
    return pulse.t0_ns + 8.0 * pulse.sigma_ns + tail;
}

namespace {

// State layout: y[0..3] = (rho_gg, rho_ge, rho_eg, rho_ee), y[4] = gamma * int rho_ee dt.
template <typename OmegaFn>
Trajectory integrate(const EmitterParams& em, OmegaFn&& omega_of_t, double delta, double t_end,
                     double rel_tol, double h_out_pulse, double pulse_lo, double pulse_hi) {
    const double g = em.gamma, gd = em.gamma_d;
    const double coh = -(g + 2.0 * gd) / 2.0;

    auto rhs = [&](double t, const ode::CVec<5>& y, ode::CVec<5>& dy) {
        const complex<double> iw2 = I * (omega_of_t(t) / 2.0);
        dy[0] = iw2 * y[1] - iw2 * y[2] + g * y[3];
        dy[1] = iw2 * y[0] + (coh + I * delta) * y[1] - iw2 * y[3];
        dy[2] = -iw2 * y[0] + (coh - I * delta) * y[2] + iw2 * y[3];
        dy[3] = -iw2 * y[1] + iw2 * y[2] - g * y[3];
        dy[4] = g * y[3];
    };

    ode::Dopri5<5, decltype(rhs)> solver(rhs, rel_tol, rel_tol * 1e-3);
    ode::CVec<5> y0 = ode::CVec<5>::Zero();
    y0[0] = 1.0;
    solver.init(0.0, y0);

    // Output grid: accepted steps, subdivided via dense output so consumers see
    // the pulse resolved (h_out_pulse inside the pulse window) and the decay
    // tail adequately sampled.
    const double h_out_tail = g > 0.0 ? 0.05 / g : t_end / 64.0;

    Trajectory traj;
    auto push = [&](double t, const ode::CVec<5>& y) {
        traj.times_ns.push_back(t);
        traj.states.push_back(BlochState{y[0].real(), y[1], y[3].real()});
        traj.cumulative_emission.push_back(y[4].real());
    };
    push(0.0, y0);

    // The integrator must not leap over the pulse: force a stop at the pulse
    // window edge and cap steps inside it so the drive is always sampled.
    const double max_pulse_step = std::max((pulse_hi - pulse_lo) / 56.0, 1e-9);
    auto limit_for = [&](double t) {
        if (t < pulse_lo) return std::min(pulse_lo, t_end);
        if (t < pulse_hi) return std::min(std::min(t + max_pulse_step, pulse_hi), t_end);
        return t_end;
    };

    ode::DenseSegment<5> seg;
    double t = 0.0;
    while (t < t_end) {
        double t_prev = t;
        t = solver.step(limit_for(t), seg);
        double h_out = (t > pulse_lo && t_prev < pulse_hi) ? h_out_pulse : h_out_tail;
        if (t - t_prev > h_out) {
            int n_sub = static_cast<int>(std::ceil((t - t_prev) / h_out));
            for (int i = 1; i < n_sub; ++i) {
                double ts = t_prev + (t - t_prev) * i / n_sub;
                push(ts, seg.eval(ts));
            }
        }
        push(t, solver.y());
    }
    return traj;
}

} // namespace

Trajectory evolve_pulse(const EmitterParams& emitter, const PulseParams& pulse, double t_end_ns,
                        double rel_tol) {
    emitter.validate();
    pulse.validate();
    if (!(t_end_ns > pulse.t0_ns + 5.0 * pulse.sigma_ns))
        throw ConfigError("evolve_pulse: t_end must exceed t0 + 5 sigma");

    // Outside +-7 sigma the drive is below 6e-22 of its peak; skipping it there
    // lets the integrator take long steps across the decay tail.
    const double lo = pulse.t0_ns - 7.0 * pulse.sigma_ns;
    const double hi = pulse.t0_ns + 7.0 * pulse.sigma_ns;
    auto omega_fn = [&](double t) { return (t < lo || t > hi) ? 0.0 : pulse.omega(t); };

    return integrate(emitter, omega_fn, pulse.delta, t_end_ns, rel_tol, pulse.sigma_ns / 4.0, lo,
                     hi);
}

Trajectory evolve_constant_drive(const EmitterParams& emitter, double omega, double delta,
                                 double t_end_ns, double rel_tol) {
    emitter.validate();
    if (!(t_end_ns > 0.0)) throw ConfigError("evolve_constant_drive: t_end must be > 0");
    auto omega_fn = [omega](double) { return omega; };
    double h_out = t_end_ns / 256.0;
    return integrate(emitter, omega_fn, delta, t_end_ns, rel_tol, h_out, 0.0, t_end_ns);
}

double emission_probability(const Trajectory& traj, const EmitterParams& emitter) {
    if (traj.size() < 2) throw NumericalError("emission_probability: trajectory too short");
    if (traj.states.back().rho_ee >= 1e-6)
        throw NumericalError("emission_probability: trajectory truncated before decay completes "
                             "(rho_ee = " +
                             std::to_string(traj.states.back().rho_ee) + " at end)");

    if (traj.cumulative_emission.size() == traj.size()) return traj.cumulative_emission.back();

    double acc = 0.0;
    for (std::size_t i = 1; i < traj.size(); ++i) {
        double dt = traj.times_ns[i] - traj.times_ns[i - 1];
        acc += 0.5 * dt * (traj.states[i].rho_ee + traj.states[i - 1].rho_ee);
    }
    return emitter.gamma * acc;
}

BlochState steady_state_cw(const EmitterParams& emitter, double omega, double delta) {
    emitter.validate();
    if (!(omega >= 0.0)) throw ConfigError("steady_state_cw: omega must be >= 0");

    Eigen::Matrix4cd M = build_generator(emitter, omega, delta);

    // M is rank-deficient by trace conservation; replace the first row with the
    // trace constraint and solve. FullPivLU exposes genuinely degenerate cases
    // (e.g. gamma = omega = 0, where no unique steady state exists).
    Eigen::Matrix4cd A = M;
    A.row(0) << 1.0, 0.0, 0.0, 1.0;
    Eigen::Vector4cd b(1.0, 0.0, 0.0, 0.0);

    Eigen::FullPivLU<Eigen::Matrix4cd> lu(A);
    if (!lu.isInvertible())
        throw NumericalError("steady_state_cw: degenerate generator, no unique steady state");
    Eigen::Vector4cd rho = lu.solve(b);

    double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
    double residual = (M * rho).cwiseAbs().maxCoeff();
    if (residual > 1e-10 * scale)
        throw NumericalError("steady_state_cw: null-space residual too large");

    return BlochState{rho[0].real(), rho[1], rho[3].real()};
}

std::vector<std::pair<double, double>> rabi_curve(const EmitterParams& emitter,
                                                  const PulseParams& pulse_template,
                                                  const std::vector<double>& theta_values,
                                                  double rel_tol) {
    for (std::size_t i = 1; i < theta_values.size(); ++i)
        if (theta_values[i] < theta_values[i - 1])
            throw ConfigError("rabi_curve: theta values must be sorted ascending");

    std::vector<std::pair<double, double>> out;
    out.reserve(theta_values.size());
    const double t_end = default_t_end(emitter, pulse_template);
    for (double th : theta_values) {
        if (th == 0.0) {
            out.emplace_back(0.0, 0.0);
            continue;
        }
        Trajectory traj = evolve_pulse(emitter, pulse_template.with_theta(th), t_end, rel_tol);
        out.emplace_back(th, emission_probability(traj, emitter));
    }
    return out;
}

RabiModel::RabiModel(double gamma, const PulseParams& pulse_template, double theta_max,
                     double gamma_d_max, int n_theta, int n_gamma_d)
    : theta_max_(theta_max), gamma_d_max_(gamma_d_max), n_theta_(n_theta), n_gd_(n_gamma_d) {
    table_.resize(std::size_t(n_theta_) * n_gd_);
    // Interpolation-grade tolerance; the grid itself dominates the model error.
    const double tol = 1e-7;
    for (int j = 0; j < n_gd_; ++j) {
        EmitterParams em{gamma, gamma_d_max_ * j / (n_gd_ - 1)};
        const double t_end = default_t_end(em, pulse_template);
        for (int i = 0; i < n_theta_; ++i) {
            double th = theta_max_ * i / (n_theta_ - 1);
            double pe = 0.0;
            if (th > 0.0) {
                Trajectory traj = evolve_pulse(em, pulse_template.with_theta(th), t_end, tol);
                pe = emission_probability(traj, em);
            }
            table_[std::size_t(j) * n_theta_ + i] = pe;
        }
    }
}

namespace {

// Catmull-Rom on a uniform grid, clamped at the ends.
double interp1(const double* v, int n, double x) {
    if (x <= 0.0) return v[0];
    if (x >= n - 1.0) return v[n - 1];
    int i = static_cast<int>(x);
    double f = x - i;
    double p0 = v[std::max(0, i - 1)], p1 = v[i], p2 = v[std::min(n - 1, i + 1)],
           p3 = v[std::min(n - 1, i + 2)];
    return p1 + 0.5 * f *
                    (p2 - p0 +
                     f * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 +
                          f * (3.0 * (p1 - p2) + p3 - p0)));
}

} // namespace

double RabiModel::p_e(double theta, double gamma_d) const {
    double xt = std::clamp(theta, 0.0, theta_max_) / theta_max_ * (n_theta_ - 1);
    double xg = std::clamp(gamma_d, 0.0, gamma_d_max_) / gamma_d_max_ * (n_gd_ - 1);

    int j = std::clamp(static_cast<int>(xg), 0, n_gd_ - 1);
    double f = xg - j;
    double rows[4];
    for (int k = -1; k <= 2; ++k) {
        int jj = std::clamp(j + k, 0, n_gd_ - 1);
        rows[k + 1] = interp1(table_.data() + std::size_t(jj) * n_theta_, n_theta_, xt);
    }
    double p0 = rows[0], p1 = rows[1], p2 = rows[2], p3 = rows[3];
    return p1 + 0.5 * f *
                    (p2 - p0 +
                     f * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 +
                          f * (3.0 * (p1 - p2) + p3 - p0)));
}

RabiFit fit_rabi(const std::vector<std::pair<double, double>>& data, const RabiModel& model) {
    if (data.size() < 8) throw NumericalError("fit_rabi: need at least 8 data points");
    double p_max = 0.0, i_max = 0.0, p_at_imax = 0.0;
    for (auto& [p, inten] : data) {
        if (p <= 0.0) throw NumericalError("fit_rabi: powers must be > 0");
        p_max = std::max(p_max, p);
        if (inten > i_max) {
            i_max = inten;
            p_at_imax = p;
        }
    }
    if (i_max <= 0.0) throw NumericalError("fit_rabi: degenerate data (no positive intensity)");

    constexpr double pi = std::numbers::pi;

    // Residual with the linear amplitude eliminated in closed form.
    auto objective = [&](const std::vector<double>& x) {
        double p_pi = x[0], gd = x[1];
        double smm = 0.0, smi = 0.0;
        for (auto& [p, inten] : data) {
            double m = model.p_e(pi * std::sqrt(p / p_pi), gd);
            smm += m * m;
            smi += m * inten;
        }
        double s = smm > 0.0 ? smi / smm : 0.0;
        double rss = 0.0;
        for (auto& [p, inten] : data) {
            double r = inten - s * model.p_e(pi * std::sqrt(p / p_pi), gd);
            rss += r * r;
        }
        return rss;
    };

    // Multi-start over P_pi: the oscillatory model has local minima at
    // rational multiples of the true pi-power.
    const double p0 = p_at_imax;
    const std::vector<double> starts = {0.4 * p0, 0.6 * p0, 0.8 * p0, 1.0 * p0, 1.4 * p0, 2.0 * p0};
    const std::vector<double> lo = {0.1 * p0, 0.0};
    const std::vector<double> hi = {5.0 * p0, model.gamma_d_max()};

    optim::NmResult best;
    best.fval = std::numeric_limits<double>::infinity();
    for (double s : starts) {
        for (double gd0 : {0.0, 0.2, 0.4}) {
            auto r = optim::nelder_mead(objective, {s, gd0}, {0.15 * s, 0.08}, lo, hi, 1e-13, 300);
            if (r.fval < best.fval) best = r;
        }
    }
    // Polish from the best start.
    auto polish =
        optim::nelder_mead(objective, best.x, {0.01 * best.x[0], 0.005}, lo, hi, 1e-16, 800);
    if (polish.fval < best.fval) best = polish;

    RabiFit fit;
    fit.p_pi = best.x[0];
    fit.gamma_d = best.x[1];
    double smm = 0.0, smi = 0.0;
    for (auto& [p, inten] : data) {
        double m = model.p_e(pi * std::sqrt(p / fit.p_pi), fit.gamma_d);
        smm += m * m;
        smi += m * inten;
    }
    fit.scale = smm > 0.0 ? smi / smm : 0.0;
    fit.residual_norm = std::sqrt(best.fval);
    fit.converged = best.converged && fit.scale > 0.0;
    return fit;
}

RabiFit fit_rabi(const std::vector<std::pair<double, double>>& data, double gamma,
                 const PulseParams& pulse_template) {
    double p_max = 0.0, i_max = 0.0, p_at_imax = 1.0;
    for (auto& [p, inten] : data) {
        p_max = std::max(p_max, p);
        if (inten > i_max) {
            i_max = inten;
            p_at_imax = p;
        }
    }
    if (i_max <= 0.0) throw NumericalError("fit_rabi: degenerate data (no positive intensity)");
    double theta_max = std::numbers::pi * std::sqrt(p_max / (0.1 * p_at_imax));
    theta_max = std::min(theta_max, 16.0 * std::numbers::pi);
    RabiModel model(gamma, pulse_template, theta_max);
    return fit_rabi(data, model);
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
    os << "t_ns,rho_gg,re_rho_ge,im_rho_ge,rho_ee\n";
    char buf[192];
    for (std::size_t i = 0; i < traj.size(); ++i) {
        const auto& s = traj.states[i];
        std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g,%.10g,%.10g\n", traj.times_ns[i],
                      s.rho_gg, s.rho_ge.real(), s.rho_ge.imag(), s.rho_ee);
        os << buf;
    }
}

} // namespace psim::bloch
