#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

#include "psim/bloch.hpp"
#include "psim/rng.hpp"

using namespace psim;
using namespace psim::bloch;
using std::numbers::pi;

namespace {

// Independent steady-state oracle: hand-rolled complex Gaussian elimination on
// the trace-constrained system, no shared code with the library solve.
Eigen::Vector4cd null_state_by_elimination(Eigen::Matrix4cd M) {
    M.row(0) << 1.0, 0.0, 0.0, 1.0;
    Eigen::Vector4cd b(1.0, 0.0, 0.0, 0.0);
    for (int col = 0; col < 4; ++col) {
        int piv = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::abs(M(r, col)) > std::abs(M(piv, col))) piv = r;
        M.row(col).swap(M.row(piv));
        std::swap(b(col), b(piv));
        REQUIRE(std::abs(M(col, col)) > 1e-14);
        for (int r = col + 1; r < 4; ++r) {
            std::complex<double> f = M(r, col) / M(col, col);
            M.row(r) -= f * M.row(col);
            b(r) -= f * b(col);
        }
    }
    Eigen::Vector4cd x;
    for (int r = 3; r >= 0; --r) {
        std::complex<double> acc = b(r);
        for (int c = r + 1; c < 4; ++c) acc -= M(r, c) * x(c);
        x(r) = acc / M(r, r);
    }
    return x;
}

} // namespace

TEST_CASE("generator: pure decay limit") {
    EmitterParams em{1.0, 0.0};
    auto M = build_generator(em, 0.0, 0.0);
    CHECK(M(0, 3) == std::complex<double>(1.0, 0.0));
    CHECK(M(3, 3) == std::complex<double>(-1.0, 0.0));
    CHECK(M(1, 1) == std::complex<double>(-0.5, 0.0));
    CHECK(M(2, 2) == std::complex<double>(-0.5, 0.0));
    int nonzero = 0;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            if (std::abs(M(r, c)) > 0.0) ++nonzero;
    CHECK(nonzero == 4);
}

TEST_CASE("generator: trace-preserving structure for random parameters") {
    Rng rng(7);
    for (int k = 0; k < 50; ++k) {
        EmitterParams em{rng.uniform(0.01, 5.0), rng.uniform(0.0, 2.0)};
        auto M = build_generator(em, rng.uniform(0.0, 10.0), rng.uniform(-5.0, 5.0));
        // d(rho_gg + rho_ee)/dt = 0: the population rows of each column cancel.
        for (int c = 0; c < 4; ++c) CHECK(std::abs(M(0, c) + M(3, c)) < 1e-15);
    }
}

TEST_CASE("generator: coherence decay entry at the reference rates") {
    EmitterParams em{1.5625, 0.2};
    auto M = build_generator(em, 1.0, 0.0);
    CHECK(M(1, 1).real() == doctest::Approx(-0.98125).epsilon(1e-12));
    CHECK(M(2, 2).real() == doctest::Approx(-0.98125).epsilon(1e-12));
}

TEST_CASE("evolve_pulse: no drive leaves the ground state untouched") {
    EmitterParams em{1.5625, 0.2};
    PulseParams pulse;
    pulse.theta = 0.0;
    auto traj = evolve_pulse(em, pulse, default_t_end(em, pulse));
    for (const auto& s : traj.states) CHECK(std::abs(s.rho_ee) < 1e-14);
    CHECK(emission_probability(traj, em) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("evolve_pulse: lossless area theorem") {
    EmitterParams em{0.0, 0.0};
    PulseParams pulse;
    pulse.sigma_ns = 0.001;
    pulse.t0_ns = 0.05;

    SUBCASE("pi pulse inverts completely") {
        auto traj = evolve_pulse(em, pulse.with_theta(pi), 0.2, 1e-10);
        CHECK(traj.states.back().rho_ee == doctest::Approx(1.0).epsilon(1e-6));
    }
    SUBCASE("sin^2(theta/2) across [0, 4 pi]") {
        for (double th : {0.3, 0.5 * pi, 1.0, pi, 1.7 * pi, 2.0 * pi, 2.9 * pi, 3.5 * pi, 4.0 * pi}) {
            auto traj = evolve_pulse(em, pulse.with_theta(th), 0.2, 1e-10);
            double expected = std::pow(std::sin(th / 2.0), 2);
            CHECK(std::abs(traj.states.back().rho_ee - expected) < 1e-4);
        }
    }
}

TEST_CASE("evolve_pulse: trace, hermiticity, positivity across random parameters") {
    Rng rng(42);
    const double tol = 1e-9;
    for (int k = 0; k < 30; ++k) {
        EmitterParams em{rng.uniform(0.1, 3.0), rng.uniform(0.0, 1.0)};
        PulseParams pulse;
        pulse.theta = rng.uniform(0.0, 3.0 * pi);
        pulse.sigma_ns = rng.uniform(0.003, 0.05);
        pulse.t0_ns = 8.0 * pulse.sigma_ns;
        pulse.delta = rng.uniform(-3.0, 3.0);
        auto traj = evolve_pulse(em, pulse, default_t_end(em, pulse), tol);
        for (const auto& s : traj.states) {
            CHECK(std::abs(s.trace() - 1.0) < 10.0 * tol);
            CHECK(s.rho_eg() == std::conj(s.rho_ge));
            CHECK(s.rho_ee > -10.0 * tol);
            CHECK(s.rho_ee < 1.0 + 10.0 * tol);
            CHECK(s.positivity_defect() < 1e-8);
        }
    }
}

TEST_CASE("evolve_pulse: halving the tolerance moves p_e by less than the tolerance") {
    EmitterParams em{1.5625, 0.2};
    PulseParams pulse; // defaults are the reference pulse
    double t_end = default_t_end(em, pulse);
    for (double tol : {1e-6, 1e-8}) {
        double a = emission_probability(evolve_pulse(em, pulse, t_end, tol), em);
        double b = emission_probability(evolve_pulse(em, pulse, t_end, tol / 2.0), em);
        CHECK(std::abs(a - b) < tol);
    }
}

TEST_CASE("evolve_pulse: step-size underflow reports the failure time") {
    // A pulse narrower than representable resolution around t0 forces the
    // integrator below the minimal step.
    EmitterParams em{1.0, 0.0};
    PulseParams pulse;
    pulse.sigma_ns = 1e-15;
    pulse.theta = pi;
    pulse.t0_ns = 1.0;
    CHECK_THROWS_AS(evolve_pulse(em, pulse, 2.0, 1e-12), IntegrationError);
}

TEST_CASE("emission_probability: complete inversion then full decay") {
    EmitterParams em{2.0, 0.0};
    PulseParams pulse;
    pulse.sigma_ns = 1e-4;
    pulse.t0_ns = 0.01;
    auto traj = evolve_pulse(em, pulse.with_theta(pi), 0.01 + 8.0 * 1e-4 + 16.0 / em.gamma, 1e-10);
    CHECK(emission_probability(traj, em) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("emission_probability: truncated trajectory is rejected") {
    EmitterParams em{1.5625, 0.2};
    PulseParams pulse;
    auto traj = evolve_pulse(em, pulse, pulse.t0_ns + 6.0 * pulse.sigma_ns, 1e-9);
    CHECK_THROWS_AS(emission_probability(traj, em), NumericalError);
}

TEST_CASE("emission_probability: trapezoid fallback for ingested trajectories") {
    EmitterParams em{1.5625, 0.0};
    PulseParams pulse;
    auto traj = evolve_pulse(em, pulse, default_t_end(em, pulse), 1e-10);
    double exact = emission_probability(traj, em);
    traj.cumulative_emission.clear();
    double trapz = emission_probability(traj, em);
    CHECK(trapz == doctest::Approx(exact).epsilon(2e-4));
}

TEST_CASE("steady_state_cw: weak and strong drive limits") {
    EmitterParams em{1.5625, 0.2};
    CHECK(steady_state_cw(em, 1e-6, 0.0).rho_ee < 1e-10);
    CHECK(steady_state_cw(em, 2000.0, 0.0).rho_ee == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("steady_state_cw: saturation formula and elimination oracle") {
    Rng rng(11);
    SUBCASE("gamma_d = 0 resonant matches the textbook formula") {
        for (int k = 0; k < 20; ++k) {
            double g = rng.uniform(0.2, 4.0), w = rng.uniform(0.05, 12.0);
            EmitterParams em{g, 0.0};
            double expected = (w * w / 4.0) / (w * w / 2.0 + g * g / 4.0);
            CHECK(steady_state_cw(em, w, 0.0).rho_ee == doctest::Approx(expected).epsilon(1e-8));
        }
    }
    SUBCASE("general parameters match an independent dense solve") {
        for (int k = 0; k < 30; ++k) {
            EmitterParams em{rng.uniform(0.2, 4.0), rng.uniform(0.0, 1.5)};
            double w = rng.uniform(0.05, 8.0), d = rng.uniform(-4.0, 4.0);
            auto ss = steady_state_cw(em, w, d);
            auto oracle = null_state_by_elimination(build_generator(em, w, d));
            CHECK(std::abs(ss.rho_ee - oracle(3).real()) < 1e-10);
            CHECK(std::abs(ss.rho_gg - oracle(0).real()) < 1e-10);
            CHECK(std::abs(ss.rho_ge - oracle(1)) < 1e-10);
        }
    }
}

TEST_CASE("steady_state_cw: agrees with the long-time limit of constant drive") {
    EmitterParams em{1.0, 0.3};
    double w = 2.0, d = 0.7;
    auto ss = steady_state_cw(em, w, d);
    auto traj = evolve_constant_drive(em, w, d, 40.0, 1e-11);
    const auto& last = traj.states.back();
    CHECK(std::abs(last.rho_ee - ss.rho_ee) < 1e-6);
    CHECK(std::abs(last.rho_ge - ss.rho_ge) < 1e-6);
}

TEST_CASE("steady_state_cw: degenerate generator is an error") {
    EmitterParams em{0.0, 0.0};
    CHECK_THROWS_AS(steady_state_cw(em, 0.0, 0.0), NumericalError);
    CHECK_THROWS_AS(steady_state_cw(em, 1.0, 0.0), NumericalError);
}

TEST_CASE("rabi_curve: undamped oscillation and damped reference curve") {
    SUBCASE("near-lossless short pulse follows sin^2(theta/2)") {
        // With gamma_d = 0 and a pulse much shorter than the lifetime, every
        // excitation decays into exactly one photon: p_e -> sin^2(theta/2).
        EmitterParams em{0.02, 0.0};
        PulseParams pulse;
        pulse.sigma_ns = 0.001;
        pulse.t0_ns = 0.05;
        auto curve = rabi_curve(em, pulse, {0.5 * pi, pi, 2.0 * pi}, 1e-10);
        for (auto [th, pe] : curve)
            CHECK(std::abs(pe - std::pow(std::sin(th / 2.0), 2)) < 1e-4);
    }
    SUBCASE("reference parameters peak within 5% of pi and damp at 3 pi") {
        EmitterParams em{1.5625, 0.2};
        PulseParams pulse;
        std::vector<double> thetas;
        for (int i = 0; i <= 60; ++i) thetas.push_back(0.4 * pi + (1.2 * pi) * i / 60.0);
        auto curve = rabi_curve(em, pulse, thetas, 1e-8);
        double best_th = 0.0, best_pe = -1.0;
        for (auto [th, pe] : curve)
            if (pe > best_pe) {
                best_pe = pe;
                best_th = th;
            }
        CHECK(std::abs(best_th - pi) / pi < 0.05);

        // Dephasing damps the oscillation: the 3 pi inversion falls short of
        // the lossless sin^2(3 pi / 2) = 1, and the 2 pi dip no longer
        // returns to zero.
        auto pop_after = [&](const EmitterParams& e, double th) {
            auto traj = evolve_pulse(e, pulse.with_theta(th), default_t_end(e, pulse), 1e-10);
            for (std::size_t i = 0; i < traj.size(); ++i)
                if (traj.times_ns[i] >= pulse.t0_ns + 7.0 * pulse.sigma_ns)
                    return traj.states[i].rho_ee;
            return traj.states.back().rho_ee;
        };
        EmitterParams lossless{0.0, 0.0};
        double damping_factor = pop_after(em, 3.0 * pi) / pop_after(lossless, 3.0 * pi);
        CHECK(damping_factor < 1.0);
        CHECK(damping_factor > 0.5);
        auto dip = rabi_curve(em, pulse, {2.0 * pi}, 1e-9);
        CHECK(dip[0].second > 0.01);
    }
}

TEST_CASE("rabi_curve: rejects unsorted theta values") {
    EmitterParams em{1.5625, 0.2};
    PulseParams pulse;
    CHECK_THROWS_AS(rabi_curve(em, pulse, {2.0, 1.0}, 1e-8), ConfigError);
}

TEST_CASE("fit_rabi: noise-free and noisy round trips") {
    const double gamma = 1.5625, gamma_d_true = 0.2, p_pi_true = 1.37, scale_true = 5200.0;
    PulseParams pulse;
    EmitterParams em{gamma, gamma_d_true};

    std::vector<double> powers;
    for (int i = 0; i < 16; ++i) powers.push_back(p_pi_true * 0.1 * std::pow(30.0, i / 15.0));

    const double t_end = default_t_end(em, pulse);
    std::vector<std::pair<double, double>> clean;
    for (double P : powers) {
        double th = pi * std::sqrt(P / p_pi_true);
        auto traj = evolve_pulse(em, pulse.with_theta(th), t_end, 1e-9);
        clean.emplace_back(P, scale_true * emission_probability(traj, em));
    }

    RabiModel model(gamma, pulse, pi * std::sqrt(powers.back() / (0.1 * p_pi_true)));

    SUBCASE("noise-free parameters recovered within 1%") {
        auto fit = fit_rabi(clean, model);
        CHECK(fit.converged);
        CHECK(std::abs(fit.p_pi - p_pi_true) / p_pi_true < 0.01);
        CHECK(std::abs(fit.scale - scale_true) / scale_true < 0.01);
        CHECK(std::abs(fit.gamma_d - gamma_d_true) < 0.01);
    }

    SUBCASE("2% multiplicative noise keeps P_pi within 5%, 100-seed ensemble") {
        int failures = 0;
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            Rng rng = Rng::substream(991, 5, seed);
            auto noisy = clean;
            for (auto& [p, y] : noisy) y *= 1.0 + 0.02 * rng.normal();
            auto fit = fit_rabi(noisy, model);
            if (std::abs(fit.p_pi - p_pi_true) / p_pi_true >= 0.05) ++failures;
        }
        CHECK(failures == 0);
    }

    SUBCASE("constant-zero data is a degenerate fit") {
        std::vector<std::pair<double, double>> zeros;
        for (double P : powers) zeros.emplace_back(P, 0.0);
        CHECK_THROWS_AS(fit_rabi(zeros, model), NumericalError);
    }
}

TEST_CASE("trajectory CSV export") {
    EmitterParams em{1.5625, 0.2};
    PulseParams pulse;
    auto traj = evolve_pulse(em, pulse, default_t_end(em, pulse), 1e-8);
    std::ostringstream os;
    write_trajectory_csv(os, traj);
    std::istringstream is(os.str());
    std::string header;
    std::getline(is, header);
    CHECK(header == "t_ns,rho_gg,re_rho_ge,im_rho_ge,rho_ee");
    std::size_t rows = 0;
    for (std::string line; std::getline(is, line);) ++rows;
    CHECK(rows == traj.size());
}

TEST_CASE("pulse conventions") {
    CHECK(PulseParams::sigma_from_intensity_fwhm(0.026) ==
          doctest::Approx(0.026 / (2.0 * std::sqrt(std::numbers::ln2))).epsilon(1e-12));
    PulseParams p;
    p.theta = pi;
    p.sigma_ns = 0.02;
    // The envelope integrates to the pulse area.
    double area = 0.0, dt = 1e-4;
    for (double t = p.t0_ns - 0.4; t < p.t0_ns + 0.4; t += dt) area += p.omega(t) * dt;
    CHECK(area == doctest::Approx(pi).epsilon(1e-6));
}
