#include <cstdio>
#include <numbers>
#include <vector>

#include "psim/bloch.hpp"

using namespace psim::bloch;
using std::numbers::pi;

int main() {
    EmitterParams em{1.5625, 0.2};
    PulseParams pulse;
    const double t_end = default_t_end(em, pulse);

    for (double th : {0.5 * pi, pi, 1.5 * pi, 2.0 * pi, 2.5 * pi, 3.0 * pi}) {
        auto traj = evolve_pulse(em, pulse.with_theta(th), t_end, 1e-10);
        double pe = emission_probability(traj, em);
        // population right after the pulse
        double after = 0.0;
        for (std::size_t i = 0; i < traj.size(); ++i)
            if (traj.times_ns[i] >= pulse.t0_ns + 7.0 * pulse.sigma_ns) {
                after = traj.states[i].rho_ee;
                break;
            }
        std::printf("theta=%5.2f pi  p_e=%.6f  rho_ee(after)=%.6f  sin2=%.6f\n", th / pi, pe,
                    after, std::pow(std::sin(th / 2.0), 2));
    }

    // fit_rabi landscape probe
    const double p_pi_true = 1.37, scale_true = 5200.0;
    std::vector<double> powers;
    for (int i = 0; i < 16; ++i) powers.push_back(p_pi_true * 0.1 * std::pow(30.0, i / 15.0));
    std::vector<std::pair<double, double>> clean;
    for (double P : powers) {
        double th = pi * std::sqrt(P / p_pi_true);
        auto traj = evolve_pulse(em, pulse.with_theta(th), t_end, 1e-9);
        clean.emplace_back(P, scale_true * emission_probability(traj, em));
    }
    RabiModel model(em.gamma, pulse, pi * std::sqrt(powers.back() / (0.1 * p_pi_true)));

    auto rss = [&](double p_pi, double gd) {
        double smm = 0, smi = 0;
        for (auto& [p, y] : clean) {
            double m = model.p_e(pi * std::sqrt(p / p_pi), gd);
            smm += m * m;
            smi += m * y;
        }
        double s = smi / smm, out = 0;
        for (auto& [p, y] : clean) {
            double r = y - s * model.p_e(pi * std::sqrt(p / p_pi), gd);
            out += r * r;
        }
        return out;
    };
    for (double gd : {0.0, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4})
        std::printf("rss(P_pi=true, gd=%.2f) = %.6g\n", gd, rss(p_pi_true, gd));
    for (double pp : {0.95, 0.99, 1.0, 1.01, 1.05})
        std::printf("rss(P_pi=%.2f*true, gd=0.2) = %.6g\n", pp, rss(pp * p_pi_true, 0.2));

    auto fit = fit_rabi(clean, model);
    std::printf("fit: p_pi=%.4f gd=%.4f scale=%.4f conv=%d resid=%.4g\n", fit.p_pi, fit.gamma_d,
                fit.scale, int(fit.converged), fit.residual_norm);
    return 0;
}
