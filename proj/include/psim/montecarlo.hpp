#ifndef PSIM_MONTECARLO_HPP
#define PSIM_MONTECARLO_HPP

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "psim/bloch.hpp"
#include "psim/errors.hpp"
#include "psim/photonstats.hpp"
#include "psim/rng.hpp"

namespace psim::mc {

// Timestamped detector events, strictly increasing per channel, all inside
// [0, duration_ps).
struct ClickStream {
    struct Event {
        std::int64_t t_ps;
        std::uint16_t channel;
    };

    std::vector<Event> events;
    std::int64_t duration_ps = 0;

    void validate() const;

    // Binary layout (little-endian): "PSIM", u16 version = 1, u16 channel
    // count, then per event u64 timestamp_ps + u16 channel.
    void write_binary(std::ostream& os) const;
    static ClickStream read_binary(std::istream& is);

    // CSV columns: timestamp_ps,channel
    void write_csv(std::ostream& os) const;
    static ClickStream read_csv(std::istream& is);
};

// Parameters of the synthetic source. In fast mode each pulse yields at most
// one detected QD photon (Bernoulli p_click) with an exponential decay-time
// stamp; in quantum-jump mode per-pulse emissions come from the stochastic
// unraveling, so re-excitation during the pulse produces genuine two-photon
// events, and detection is thinned to keep the detected rate at p_click.
struct SourceModel {
    double p_click = 0.1;
    double xi = 0.004;
    double blink_rate_per_us = 0.25; // total telegraph relaxation rate
    double blink_fraction = 0.03;    // stationary dark-state occupation
    double rep_period_ns = 13.793;
    double V = 0.96;
    double deadtime_ns = 100.0;
    double lifetime_ns = 0.64; // click-time shaping in fast mode

    bool use_quantum_jump = false;
    bloch::EmitterParams emitter{};
    bloch::PulseParams pulse{};

    void validate() const;
    std::int64_t rep_period_ps() const;
    std::int64_t deadtime_ps() const;
};

struct CorrelationHistogram {
    std::int64_t bin_width_ps = 0;
    std::int64_t window_ps = 0;     // covers delays in [-window, +window)
    std::int64_t rep_period_ps = 0; // window is an integer number of periods
    std::vector<std::uint64_t> counts;

    double bin_center_ps(std::size_t i) const {
        return -double(window_ps) + (double(i) + 0.5) * double(bin_width_ps);
    }
    // Sum of counts with bin center in [lo, hi).
    std::uint64_t area(double lo_ps, double hi_ps) const;

    // CSV columns: delay_ps,counts
    void write_csv(std::ostream& os) const;
};

// One stochastic unraveling of the pulsed emitter: non-Hermitian evolution
// between jumps, radiative jumps recorded as emission times (ns), dephasing
// jumps re-prepare the excited state without a photon. The decay tail after
// the pulse window is sampled analytically.
std::vector<double> quantum_jump_pulse(const bloch::EmitterParams& emitter,
                                       const bloch::PulseParams& pulse, Rng& rng);

struct P2Result {
    double p1 = 0.0, p1_se = 0.0;
    double p2 = 0.0, p2_se = 0.0; // probability of >= 2 emissions
    double mean_photons = 0.0, mean_photons_se = 0.0;
};

// Monte Carlo emission-count statistics over n_traj trajectories (>= 1e4).
P2Result p2_probability(const bloch::EmitterParams& emitter, const bloch::PulseParams& pulse,
                        std::size_t n_traj, std::uint64_t seed, int n_threads = 0);

// Hanbury Brown-Twiss synthesis: per pulse, blinking-gated QD emission plus a
// Bernoulli(xi * p_click) laser-leak photon, all routed 50:50 onto two
// detectors with non-paralyzable deadtime.
std::pair<ClickStream, ClickStream> synth_hbt(const SourceModel& model, std::uint64_t n_pulses,
                                              std::uint64_t seed, int n_threads = 0);

enum class Polarization { Co, Cross };

// Hong-Ou-Mandel synthesis through an unbalanced Mach-Zehnder delayed by one
// repetition period. Photon pairs meeting at the output beamsplitter draw
// their outcome from the pairwise coincidence probability
//   p_cc = R^2 + T^2 - 2 R T (1 - eps)^2 V_pair,
// with V_pair = V for co-polarized emitter photons and 0 otherwise.
std::pair<ClickStream, ClickStream> synth_hom(const SourceModel& model,
                                              const stats::HomSetup& setup, Polarization pol,
                                              std::uint64_t n_pulses, std::uint64_t seed,
                                              int n_threads = 0);

// Histogram of pairwise delays t_b - t_a within +-window, sorted two-pointer
// sweep. window must be a positive integer multiple of rep_period.
CorrelationHistogram correlate(const ClickStream& a, const ClickStream& b,
                               std::int64_t bin_width_ps, std::int64_t window_ps,
                               std::int64_t rep_period_ps, int n_threads = 0);

struct G2Options {
    bool fit_peaks = false;     // double-sided exponential amplitude fit
    double irf_sigma_ps = 0.0;  // Gaussian instrument response width for the fit
    int n_norm_peaks = 50;      // side peaks averaged per side near norm_delay
};

struct G2Result {
    double g2 = 0.0;
    double sigma = 0.0;
    double central_area = 0.0;
    double mean_side_area = 0.0;
};

// Central-peak area over the mean side-peak area near norm_delay (default
// 50 us), Poisson uncertainty propagated.
G2Result extract_g2(const CorrelationHistogram& hist, std::int64_t rep_period_ps,
                    std::int64_t norm_delay_ps = 50'000'000, const G2Options& opts = {});

struct VRawResult {
    double v_raw = 0.0;
    double sigma = 0.0;
    double a_parallel = 0.0; // co central area normalized to its long-delay area
    double a_perp = 0.0;     // cross, same normalization
};

// Normalizes each central area by its own long-delay side-peak level, then
// V_raw = (A_perp - A_parallel) / A_perp.
VRawResult extract_vraw(const CorrelationHistogram& co, const CorrelationHistogram& cross);

struct BunchingFit {
    double amplitude = 1.0;   // 1 + b, side-peak envelope at tau -> 0
    double rate_per_us = 0.0; // envelope decay rate
    double baseline = 0.0;    // side-peak area at tau -> infinity
};

// Fits C (1 + b exp(-lambda tau)) to the side-peak areas of an HBT histogram.
BunchingFit fit_bunching_envelope(const CorrelationHistogram& hist, std::int64_t rep_period_ps);

// Two-sided exponential peak shape convolved with a Gaussian IRF, S(0-ish) = 1
// scale; used by the fit mode of extract_g2 and exposed for tests.
double peak_shape(double tau_ps, double tau_decay_ps, double irf_sigma_ps);

} // namespace psim::mc

#endif
