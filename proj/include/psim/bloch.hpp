#ifndef PSIM_BLOCH_HPP
#define PSIM_BLOCH_HPP

#include <complex>
#include <iosfwd>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "psim/errors.hpp"

namespace psim::bloch {

// Two-level emitter: radiative decay gamma and pure dephasing gamma_d, both in ns^-1.
// gamma = 0 is accepted so that the lossless limit can be exercised.
struct EmitterParams {
    double gamma = 1.5625;  // 640 ps lifetime
    double gamma_d = 0.2;

    void validate() const;
};

// Gaussian drive pulse in the frame rotating at the laser frequency:
//   Omega(t) = theta / (sqrt(pi) * sigma) * exp(-(t - t0)^2 / sigma^2)
// so that the pulse area integrates to theta. delta = omega_laser - omega_emitter in rad/ns.
struct PulseParams {
    double theta = 3.14159265358979323846;  // pulse area, rad
    double sigma_ns = 0.0156;               // field half-width
    double t0_ns = 0.2;
    double delta = 0.0;

    void validate() const;

    double omega(double t_ns) const;

    // Convention for quoting pulse lengths as an intensity FWHM. sigma can
    // always be set directly instead.
    static double sigma_from_intensity_fwhm(double fwhm_ns);

    PulseParams with_theta(double th) const {
        PulseParams p = *this;
        p.theta = th;
        return p;
    }
};

// Density-matrix snapshot. rho_eg is conj(rho_ge) by construction, so only
// rho_ge is stored.
struct BlochState {
    double rho_gg = 1.0;
    std::complex<double> rho_ge = 0.0;
    double rho_ee = 0.0;

    std::complex<double> rho_eg() const { return std::conj(rho_ge); }
    double trace() const { return rho_gg + rho_ee; }
    // Positivity defect: max(0, |rho_ge|^2 - rho_gg * rho_ee).
    double positivity_defect() const;
};

struct Trajectory {
    std::vector<double> times_ns;
    std::vector<BlochState> states;
    // Running gamma * int rho_ee dt, integrated as an extra error-controlled
    // component. Same length as times_ns when produced by evolve_*; empty for
    // trajectories ingested from file.
    std::vector<double> cumulative_emission;

    std::size_t size() const { return times_ns.size(); }
};

// Equation-of-motion generator M for rho = (rho_gg, rho_ge, rho_eg, rho_ee),
// rho' = M rho. The gg and ee rows of every column sum to zero, which is the
// trace-preservation property of the master equation.
Eigen::Matrix4cd build_generator(const EmitterParams& emitter, double omega, double delta);

double default_t_end(const EmitterParams& emitter, const PulseParams& pulse);

// Integrates the pulsed master equation from the ground state at t = 0 up to
// t_end with relative tolerance rel_tol.
Trajectory evolve_pulse(const EmitterParams& emitter, const PulseParams& pulse, double t_end_ns,
                        double rel_tol = 1e-9);

// Constant-drive (cw) evolution from the ground state; used for steady-state checks.
Trajectory evolve_constant_drive(const EmitterParams& emitter, double omega, double delta,
                                 double t_end_ns, double rel_tol = 1e-9);

// p_e = gamma * int rho_ee dt. Uses the error-controlled running integral when
// the trajectory carries one, trapezoid on the stored grid otherwise.
// Requires the trajectory to extend until the emitter has decayed
// (rho_ee < 1e-6 at the final point).
double emission_probability(const Trajectory& traj, const EmitterParams& emitter);

// Steady state of the cw-driven system: null vector of M normalized to unit trace.
BlochState steady_state_cw(const EmitterParams& emitter, double omega, double delta);

// p_e versus pulse area.
std::vector<std::pair<double, double>> rabi_curve(const EmitterParams& emitter,
                                                  const PulseParams& pulse_template,
                                                  const std::vector<double>& theta_values,
                                                  double rel_tol = 1e-9);

// Precomputed p_e(theta, gamma_d) surface used by fit_rabi. Building it costs
// a few hundred integrations; evaluating is interpolation only, so repeated
// fits against the same emitter/pulse are cheap.
class RabiModel {
public:
    RabiModel(double gamma, const PulseParams& pulse_template, double theta_max,
              double gamma_d_max = 0.6, int n_theta = 161, int n_gamma_d = 13);

    double p_e(double theta, double gamma_d) const;
    double theta_max() const { return theta_max_; }
    double gamma_d_max() const { return gamma_d_max_; }

private:
    double theta_max_, gamma_d_max_;
    int n_theta_, n_gd_;
    std::vector<double> table_;  // [gd_index * n_theta + theta_index]
};

struct RabiFit {
    double p_pi = 0.0;      // power at pi-pulse, in the units of the input powers
    double gamma_d = 0.0;   // ns^-1
    double scale = 0.0;     // detected intensity per unit p_e
    double residual_norm = 0.0;
    bool converged = false;
};

// Least-squares fit of scale * p_e(pi * sqrt(P / P_pi); gamma_d) to measured
// (power, intensity) data. Derivative-free with multi-start over P_pi.
// Throws NumericalError for degenerate data; a non-converged fit is returned
// with converged = false and best-so-far parameters.
RabiFit fit_rabi(const std::vector<std::pair<double, double>>& data, const RabiModel& model);
RabiFit fit_rabi(const std::vector<std::pair<double, double>>& data, double gamma,
                 const PulseParams& pulse_template);

// CSV columns: t_ns,rho_gg,re_rho_ge,im_rho_ge,rho_ee
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);

} // namespace psim::bloch

#endif
