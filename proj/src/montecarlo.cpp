#include "psim/montecarlo.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <istream>
#include <numbers>
#include <ostream>
#include <thread>

#include <Eigen/Dense>

#include "psim/csv.hpp"
#include "psim/ode.hpp"
#include "psim/optim.hpp"

namespace psim::mc {

namespace {

constexpr std::uint64_t STREAM_BLINK = 1;
constexpr std::uint64_t STREAM_PULSE = 2;
constexpr std::uint64_t STREAM_SLOT = 3;
constexpr std::uint64_t STREAM_TRAJ = 4;

constexpr std::uint64_t TAG_HBT = 0x80627421ULL;
constexpr std::uint64_t TAG_HOM_CO = 0x80627422ULL;
constexpr std::uint64_t TAG_HOM_CROSS = 0x80627423ULL;

constexpr std::uint64_t BLOCK = 1ULL << 15; // pulses per parallel work unit

int resolve_threads(int n_threads) {
    if (n_threads > 0) return n_threads;
    unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

// Runs fn(block_index) over [0, n_blocks) with results independent of the
// thread count: blocks are a fixed partition and each writes its own slot.
template <typename Fn>
void run_blocks(std::uint64_t n_blocks, int n_threads, Fn&& fn) {
    n_threads = std::min<std::uint64_t>(resolve_threads(n_threads), std::max<std::uint64_t>(n_blocks, 1));
    if (n_threads <= 1 || n_blocks <= 1) {
        for (std::uint64_t b = 0; b < n_blocks; ++b) fn(b);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) {
        pool.emplace_back([&, t]() {
            for (std::uint64_t b = t; b < n_blocks; b += n_threads) fn(b);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace

void ClickStream::validate() const {
    std::array<std::int64_t, 64> last;
    last.fill(std::numeric_limits<std::int64_t>::min());
    std::int64_t prev = std::numeric_limits<std::int64_t>::min();
    for (const auto& e : events) {
        if (e.t_ps < 0 || e.t_ps >= duration_ps)
            throw ConfigError("click stream: timestamp outside [0, duration)");
        if (e.t_ps < prev) throw ConfigError("click stream: events not time-sorted");
        prev = e.t_ps;
        if (e.channel < last.size()) {
            if (e.t_ps <= last[e.channel])
                throw ConfigError("click stream: timestamps not strictly increasing per channel");
            last[e.channel] = e.t_ps;
        }
    }
}

namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw ConfigError("click stream: truncated binary input");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
}

} // namespace

void ClickStream::write_binary(std::ostream& os) const {
    os.write("PSIM", 4);
    put_le<std::uint16_t>(os, 1);
    std::uint16_t n_channels = 0;
    for (const auto& e : events) n_channels = std::max<std::uint16_t>(n_channels, e.channel + 1);
    put_le<std::uint16_t>(os, n_channels);
    for (const auto& e : events) {
        put_le<std::uint64_t>(os, static_cast<std::uint64_t>(e.t_ps));
        put_le<std::uint16_t>(os, e.channel);
    }
}

ClickStream ClickStream::read_binary(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "PSIM", 4) != 0)
        throw ConfigError("click stream: bad magic, not a PSIM binary stream");
    std::uint16_t version = get_le<std::uint16_t>(is);
    if (version != 1) throw ConfigError("click stream: unsupported version");
    (void)get_le<std::uint16_t>(is); // channel count
    ClickStream s;
    while (true) {
        is.peek();
        if (is.eof()) break;
        std::uint64_t t = get_le<std::uint64_t>(is);
        std::uint16_t ch = get_le<std::uint16_t>(is);
        s.events.push_back(Event{static_cast<std::int64_t>(t), ch});
    }
    s.duration_ps = s.events.empty() ? 0 : s.events.back().t_ps + 1;
    return s;
}

void ClickStream::write_csv(std::ostream& os) const {
    os << "timestamp_ps,channel\n";
    for (const auto& e : events) os << e.t_ps << ',' << e.channel << '\n';
}

ClickStream ClickStream::read_csv(std::istream& is) {
    auto rows = csv::read_numeric(is, 2, "click stream csv");
    ClickStream s;
    s.events.reserve(rows.size());
    for (auto& r : rows)
        s.events.push_back(Event{static_cast<std::int64_t>(std::llround(r[0])),
                                 static_cast<std::uint16_t>(r[1])});
    s.duration_ps = s.events.empty() ? 0 : s.events.back().t_ps + 1;
    return s;
}

void SourceModel::validate() const {
    auto prob = [](double v, const char* name) {
        if (!(v >= 0.0 && v <= 1.0))
            throw ConfigError(std::string("source model: ") + name + " must be in [0, 1]");
    };
    prob(p_click, "p_click");
    prob(xi, "xi");
    prob(blink_fraction, "blink_fraction");
    prob(V, "V");
    if (!(rep_period_ns > 0.0)) throw ConfigError("source model: rep_period must be > 0");
    if (!(deadtime_ns >= 0.0)) throw ConfigError("source model: deadtime must be >= 0");
    if (!(blink_rate_per_us >= 0.0)) throw ConfigError("source model: blink_rate must be >= 0");
    if (!(lifetime_ns > 0.0)) throw ConfigError("source model: lifetime must be > 0");
    if (use_quantum_jump) {
        emitter.validate();
        pulse.validate();
    }
}

std::int64_t SourceModel::rep_period_ps() const { return std::llround(rep_period_ns * 1e3); }
std::int64_t SourceModel::deadtime_ps() const { return std::llround(deadtime_ns * 1e3); }

std::uint64_t CorrelationHistogram::area(double lo_ps, double hi_ps) const {
    std::uint64_t acc = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        double c = bin_center_ps(i);
        if (c >= lo_ps && c < hi_ps) acc += counts[i];
    }
    return acc;
}

void CorrelationHistogram::write_csv(std::ostream& os) const {
    os << "delay_ps,counts\n";
    for (std::size_t i = 0; i < counts.size(); ++i)
        os << csv::format_double(bin_center_ps(i)) << ',' << counts[i] << '\n';
}

// ---------------------------------------------------------------------------
// Quantum-jump unraveling

std::vector<double> quantum_jump_pulse(const bloch::EmitterParams& em,
                                       const bloch::PulseParams& pulse, Rng& rng) {
    em.validate();
    pulse.validate();
    const double g = em.gamma;
    const double Gamma = g + 2.0 * em.gamma_d;
    const std::complex<double> I{0.0, 1.0};

    std::vector<double> times;
    Eigen::Vector2cd psi(1.0, 0.0);
    double target = rng.uniform();
    double t_cursor = std::max(0.0, pulse.t0_ns - 6.0 * pulse.sigma_ns);
    const double t_hi = pulse.t0_ns + 6.0 * pulse.sigma_ns;

    if (pulse.theta > 0.0) {
        auto rhs = [&](double t, const ode::CVec<2>& y, ode::CVec<2>& dy) {
            const double w2 = pulse.omega(t) / 2.0;
            dy[0] = -I * w2 * y[1];
            dy[1] = -I * w2 * y[0] + (-I * pulse.delta - Gamma / 2.0) * y[1];
        };
        using Solver = ode::Dopri5<2, decltype(rhs)>;
        Solver solver(rhs, 1e-8, 1e-10);
        ode::CVec<2> y;
        y << psi(0), psi(1);
        solver.init(t_cursor, y);

        // Cap steps at the pulse width so the drive cannot be stepped over.
        const double max_step = pulse.sigma_ns;

        ode::DenseSegment<2> seg;
        int guard = 0;
        while (solver.t() < t_hi) {
            if (++guard > 2'000'000) throw NumericalError("quantum_jump_pulse: jump loop stuck");
            double t_prev = solver.t();
            double t_now = solver.step(std::min(solver.t() + max_step, t_hi), seg);
            double s_now = solver.y().squaredNorm();
            if (s_now > target) continue;

            // Bisect the crossing ||psi(t)||^2 = target inside this step.
            double lo = t_prev, hi = t_now;
            for (int it = 0; it < 80 && hi - lo > 1e-14 * std::max(1.0, std::abs(hi)); ++it) {
                double mid = 0.5 * (lo + hi);
                if (seg.eval(mid).squaredNorm() > target)
                    lo = mid;
                else
                    hi = mid;
            }
            double t_jump = 0.5 * (lo + hi);

            bool radiative = Gamma > 0.0 && rng.uniform() < g / Gamma;
            ode::CVec<2> yj;
            if (radiative) {
                times.push_back(t_jump);
                yj << 1.0, 0.0;
            } else {
                yj << 0.0, 1.0; // dephasing re-prepares |e>, no photon
            }
            solver.init(t_jump, yj);
            target = rng.uniform();
        }
        psi(0) = solver.y()[0];
        psi(1) = solver.y()[1];
        t_cursor = solver.t();
    }

    // After the drive, the no-jump norm is |c_g|^2 + |c_e|^2 exp(-Gamma tau):
    // remaining jumps are sampled in closed form.
    if (Gamma > 0.0) {
        double a = std::norm(psi(0));
        double b2 = std::norm(psi(1));
        for (int guard = 0; guard < 1'000'000; ++guard) {
            if (target <= a || b2 <= 0.0) break; // decays to |g> without another jump
            double tau = std::log(b2 / (target - a)) / Gamma;
            t_cursor += tau;
            if (rng.uniform() < g / Gamma) {
                times.push_back(t_cursor);
                break; // emitted and in the ground state, drive is over
            }
            a = 0.0; // dephasing jump onto |e>
            b2 = 1.0;
            target = rng.uniform();
        }
    }
    return times;
}

P2Result p2_probability(const bloch::EmitterParams& em, const bloch::PulseParams& pulse,
                        std::size_t n_traj, std::uint64_t seed, int n_threads) {
    if (n_traj < 10'000) throw ConfigError("p2_probability: need n_traj >= 1e4");
    em.validate();
    pulse.validate();

    const std::uint64_t n_blocks = (n_traj + BLOCK - 1) / BLOCK;
    struct Tally {
        std::uint64_t n1 = 0, n2 = 0, photons = 0, photons_sq = 0;
    };
    std::vector<Tally> tallies(n_blocks);

    run_blocks(n_blocks, n_threads, [&](std::uint64_t b) {
        Tally tally;
        std::uint64_t lo = b * BLOCK, hi = std::min<std::uint64_t>(n_traj, (b + 1) * BLOCK);
        for (std::uint64_t i = lo; i < hi; ++i) {
            Rng rng = Rng::substream(seed, STREAM_TRAJ, i);
            auto times = quantum_jump_pulse(em, pulse, rng);
            std::uint64_t k = times.size();
            if (k == 1) ++tally.n1;
            if (k >= 2) ++tally.n2;
            tally.photons += k;
            tally.photons_sq += k * k;
        }
        tallies[b] = tally;
    });

    Tally total;
    for (auto& t : tallies) {
        total.n1 += t.n1;
        total.n2 += t.n2;
        total.photons += t.photons;
        total.photons_sq += t.photons_sq;
    }

    const double n = static_cast<double>(n_traj);
    P2Result r;
    r.p1 = total.n1 / n;
    r.p2 = total.n2 / n;
    r.p1_se = std::sqrt(std::max(r.p1 * (1.0 - r.p1), 1.0 / n) / n);
    r.p2_se = std::sqrt(std::max(r.p2 * (1.0 - r.p2), 1.0 / n) / n);
    r.mean_photons = total.photons / n;
    double var = total.photons_sq / n - r.mean_photons * r.mean_photons;
    r.mean_photons_se = std::sqrt(std::max(var, 1.0 / n) / n);
    return r;
}

// ---------------------------------------------------------------------------
// Click-stream synthesis

namespace {

struct Photon {
    double t_rel_ns; // relative to the pulse center
    bool leak;
    bool long_arm = false;
};

// Stationary-start telegraph sampled at pulse times; one sequential pass so
// every consumer of pulse n sees the same state regardless of block layout.
std::vector<std::uint8_t> blink_sequence(const SourceModel& m, std::uint64_t n_pulses,
                                         std::uint64_t seed) {
    std::vector<std::uint8_t> on(n_pulses, 1);
    if (m.blink_fraction <= 0.0 || m.blink_rate_per_us <= 0.0) return on;
    const double f = m.blink_fraction;
    const double relax = 1.0 - std::exp(-m.blink_rate_per_us * m.rep_period_ns * 1e-3);
    const double p_on_off = f * relax;
    const double p_off_on = (1.0 - f) * relax;

    Rng rng = Rng::substream(seed, STREAM_BLINK, 0);
    bool state_on = rng.uniform() >= f;
    for (std::uint64_t i = 0; i < n_pulses; ++i) {
        on[i] = state_on ? 1 : 0;
        double u = rng.uniform();
        if (state_on ? (u < p_on_off) : (u < p_off_on)) state_on = !state_on;
    }
    return on;
}

struct PulseGenerator {
    const SourceModel& m;
    double p_det = 0.0;        // per-photon detection probability in quantum-jump mode
    double leak_p = 0.0;       // Bernoulli probability of a leak photon per pulse
    double leak_sigma_ns = 0.0;

    explicit PulseGenerator(const SourceModel& model) : m(model) {
        leak_p = m.xi * m.p_click;
        if (m.use_quantum_jump) {
            double t_end = bloch::default_t_end(m.emitter, m.pulse);
            auto traj = bloch::evolve_pulse(m.emitter, m.pulse, t_end, 1e-9);
            double p_e = bloch::emission_probability(traj, m.emitter);
            if (p_e < m.p_click)
                throw ConfigError("source model: p_click exceeds the emission probability " +
                                  std::to_string(p_e));
            p_det = m.p_click / p_e;
            leak_sigma_ns = m.pulse.sigma_ns / std::numbers::sqrt2;
        } else {
            leak_sigma_ns = 0.011;
        }
    }

    void photons(bool qd_on, Rng& rng, std::vector<Photon>& out) const {
        out.clear();
        if (qd_on) {
            if (m.use_quantum_jump) {
                auto times = quantum_jump_pulse(m.emitter, m.pulse, rng);
                for (double t : times)
                    if (rng.bernoulli(p_det)) out.push_back({t - m.pulse.t0_ns, false});
            } else if (rng.bernoulli(m.p_click)) {
                out.push_back({rng.exponential(1.0 / m.lifetime_ns), false});
            }
        }
        if (leak_p > 0.0 && rng.bernoulli(leak_p))
            out.push_back({rng.normal() * leak_sigma_ns, true});
    }
};

// Concatenate per-block channel events, time-sort, and apply non-paralyzable
// deadtime. Equal timestamps keep the earlier substream (stable sort), the
// later duplicate is absorbed by the deadtime pass.
ClickStream finalize_channel(std::vector<std::vector<std::int64_t>>& blocks, std::uint16_t channel,
                             std::int64_t duration_ps, std::int64_t deadtime_ps) {
    std::size_t total = 0;
    for (auto& b : blocks) total += b.size();
    std::vector<std::int64_t> all;
    all.reserve(total);
    for (auto& b : blocks) all.insert(all.end(), b.begin(), b.end());
    std::stable_sort(all.begin(), all.end());

    ClickStream s;
    s.duration_ps = duration_ps;
    s.events.reserve(all.size());
    std::int64_t gate = std::max<std::int64_t>(deadtime_ps, 1);
    std::int64_t last = std::numeric_limits<std::int64_t>::min() / 2;
    for (std::int64_t t : all) {
        if (t - last < gate) continue;
        s.events.push_back(ClickStream::Event{t, channel});
        last = t;
    }
    return s;
}

} // namespace

std::pair<ClickStream, ClickStream> synth_hbt(const SourceModel& model, std::uint64_t n_pulses,
                                              std::uint64_t seed, int n_threads) {
    model.validate();
    if (n_pulses < 1) throw ConfigError("synth_hbt: n_pulses must be >= 1");
    const std::uint64_t seed2 = Rng::mix(seed ^ TAG_HBT);
    const std::int64_t rep = model.rep_period_ps();
    const std::int64_t duration = static_cast<std::int64_t>(n_pulses) * rep;

    const auto blink = blink_sequence(model, n_pulses, seed2);
    const PulseGenerator gen(model);

    const std::uint64_t n_blocks = (n_pulses + BLOCK - 1) / BLOCK;
    std::vector<std::vector<std::int64_t>> ch0(n_blocks), ch1(n_blocks);

    run_blocks(n_blocks, n_threads, [&](std::uint64_t b) {
        std::vector<Photon> buf;
        std::uint64_t lo = b * BLOCK, hi = std::min<std::uint64_t>(n_pulses, (b + 1) * BLOCK);
        for (std::uint64_t p = lo; p < hi; ++p) {
            Rng rng = Rng::substream(seed2, STREAM_PULSE, p);
            gen.photons(blink[p] != 0, rng, buf);
            for (const auto& ph : buf) {
                std::int64_t t = static_cast<std::int64_t>(p) * rep + std::llround(ph.t_rel_ns * 1e3);
                if (t < 0 || t >= duration) continue;
                (rng.bernoulli(0.5) ? ch0 : ch1)[b].push_back(t);
            }
        }
    });

    return {finalize_channel(ch0, 0, duration, model.deadtime_ps()),
            finalize_channel(ch1, 1, duration, model.deadtime_ps())};
}

std::pair<ClickStream, ClickStream> synth_hom(const SourceModel& model,
                                              const stats::HomSetup& setup, Polarization pol,
                                              std::uint64_t n_pulses, std::uint64_t seed,
                                              int n_threads) {
    model.validate();
    setup.validate();
    if (n_pulses < 1) throw ConfigError("synth_hom: n_pulses must be >= 1");
    const std::uint64_t tag = pol == Polarization::Co ? TAG_HOM_CO : TAG_HOM_CROSS;
    const std::uint64_t seed2 = Rng::mix(seed ^ tag);
    const std::int64_t rep = model.rep_period_ps();
    const std::int64_t duration = static_cast<std::int64_t>(n_pulses) * rep;

    const auto blink = blink_sequence(model, n_pulses, seed2);
    const PulseGenerator gen(model);

    const double R = setup.R, T = setup.T;
    const double e1 = 1.0 - setup.epsilon;
    const double v_model = pol == Polarization::Co ? model.V : 0.0;

    const std::uint64_t n_blocks = (n_pulses + BLOCK - 1) / BLOCK;
    std::vector<std::vector<std::int64_t>> ch0(n_blocks), ch1(n_blocks);

    // Photons are regenerated from their pulse substream wherever needed, so a
    // slot can consume the long-arm photons of the previous block's last pulse
    // without any cross-block state.
    auto routed_photons = [&](std::uint64_t pulse_idx, std::vector<Photon>& buf) {
        Rng rng = Rng::substream(seed2, STREAM_PULSE, pulse_idx);
        gen.photons(blink[pulse_idx] != 0, rng, buf);
        for (auto& ph : buf) ph.long_arm = rng.bernoulli(R);
    };

    run_blocks(n_blocks, n_threads, [&](std::uint64_t b) {
        std::vector<Photon> prev, cur;
        std::uint64_t lo = b * BLOCK, hi = std::min<std::uint64_t>(n_pulses, (b + 1) * BLOCK);
        for (std::uint64_t s = lo; s < hi; ++s) {
            // Slot s receives long-arm photons of pulse s-1 and short-arm
            // photons of pulse s.
            if (s == lo) {
                if (s > 0)
                    routed_photons(s - 1, prev);
                else
                    prev.clear();
            }
            routed_photons(s, cur);

            std::vector<const Photon*> longs, shorts;
            for (const auto& ph : prev)
                if (ph.long_arm) longs.push_back(&ph);
            for (const auto& ph : cur)
                if (!ph.long_arm) shorts.push_back(&ph);

            Rng srng = Rng::substream(seed2, STREAM_SLOT, s);
            auto emit = [&](std::int64_t t, int ch) {
                if (t < 0 || t >= duration) return;
                (ch == 0 ? ch0 : ch1)[b].push_back(t);
            };
            const std::int64_t slot_t = static_cast<std::int64_t>(s) * rep;
            auto stamp = [&](const Photon* ph) {
                return slot_t + std::llround(ph->t_rel_ns * 1e3);
            };

            std::size_t il = 0, is = 0;
            if (!longs.empty() && !shorts.empty()) {
                const Photon* pl = longs[0];
                const Photon* ps = shorts[0];
                il = 1;
                is = 1;
                double v_pair = (!pl->leak && !ps->leak) ? v_model : 0.0;
                double p_cc = R * R + T * T - 2.0 * R * T * e1 * e1 * v_pair;
                double u = srng.uniform();
                if (u < p_cc) {
                    if (srng.bernoulli(0.5)) {
                        emit(stamp(pl), 0);
                        emit(stamp(ps), 1);
                    } else {
                        emit(stamp(pl), 1);
                        emit(stamp(ps), 0);
                    }
                } else {
                    int ch = srng.bernoulli(0.5) ? 0 : 1;
                    emit(stamp(pl), ch);
                    emit(stamp(ps), ch);
                }
            }
            // Unpaired photons route independently; the two interferometer
            // arms enter opposite beamsplitter ports.
            for (; il < longs.size(); ++il) emit(stamp(longs[il]), srng.bernoulli(R) ? 0 : 1);
            for (; is < shorts.size(); ++is) emit(stamp(shorts[is]), srng.bernoulli(T) ? 0 : 1);

            prev.swap(cur);
        }
    });

    return {finalize_channel(ch0, 0, duration, model.deadtime_ps()),
            finalize_channel(ch1, 1, duration, model.deadtime_ps())};
}

// ---------------------------------------------------------------------------
// Correlation and extraction

CorrelationHistogram correlate(const ClickStream& a, const ClickStream& b,
                               std::int64_t bin_width_ps, std::int64_t window_ps,
                               std::int64_t rep_period_ps, int n_threads) {
    if (bin_width_ps <= 0) throw ConfigError("correlate: bin width must be > 0");
    if (rep_period_ps <= 0) throw ConfigError("correlate: rep period must be > 0");
    if (window_ps < rep_period_ps)
        throw ConfigError("correlate: window smaller than one rep period");
    if (window_ps % rep_period_ps != 0)
        throw ConfigError("correlate: window must be an integer number of rep periods");

    CorrelationHistogram hist;
    hist.bin_width_ps = bin_width_ps;
    hist.window_ps = window_ps;
    hist.rep_period_ps = rep_period_ps;
    const std::size_t n_bins = static_cast<std::size_t>((2 * window_ps + bin_width_ps - 1) / bin_width_ps);
    hist.counts.assign(n_bins, 0);

    const auto& ea = a.events;
    const auto& eb = b.events;
    if (ea.empty() || eb.empty()) return hist;

    int nt = std::min<int>(resolve_threads(n_threads), 8);
    std::vector<std::vector<std::uint64_t>> shards(nt, std::vector<std::uint64_t>(n_bins, 0));

    auto work = [&](int shard) {
        auto& counts = shards[shard];
        std::size_t begin = ea.size() * shard / nt;
        std::size_t end = ea.size() * (shard + 1) / nt;
        std::size_t lo = 0, hi = 0;
        for (std::size_t i = begin; i < end; ++i) {
            const std::int64_t t = ea[i].t_ps;
            while (lo < eb.size() && eb[lo].t_ps < t - window_ps) ++lo;
            if (hi < lo) hi = lo;
            while (hi < eb.size() && eb[hi].t_ps < t + window_ps) ++hi;
            for (std::size_t j = lo; j < hi; ++j) {
                std::int64_t dt = eb[j].t_ps - t;
                counts[static_cast<std::size_t>((dt + window_ps) / bin_width_ps)] += 1;
            }
        }
    };

    if (nt <= 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (int s = 0; s < nt; ++s) pool.emplace_back(work, s);
        for (auto& th : pool) th.join();
    }
    for (auto& shard : shards)
        for (std::size_t i = 0; i < n_bins; ++i) hist.counts[i] += shard[i];
    return hist;
}

namespace {

// Peak centers m * rep fully contained in the window, |m| in [m_lo, m_hi].
std::vector<std::int64_t> peak_centers(const CorrelationHistogram& hist, std::int64_t rep,
                                       std::int64_t m_lo, std::int64_t m_hi) {
    std::vector<std::int64_t> centers;
    std::int64_t m_max = (hist.window_ps - rep / 2) / rep;
    m_hi = std::min(m_hi, m_max);
    for (std::int64_t m = m_lo; m <= m_hi; ++m) {
        centers.push_back(m * rep);
        centers.push_back(-m * rep);
    }
    return centers;
}

double peak_area(const CorrelationHistogram& hist, std::int64_t center, std::int64_t rep) {
    return static_cast<double>(
        hist.area(static_cast<double>(center) - rep / 2.0, static_cast<double>(center) + rep / 2.0));
}

struct PeakSlice {
    std::vector<double> tau_ps;
    std::vector<double> counts;
};

PeakSlice slice_peak(const CorrelationHistogram& hist, std::int64_t center, std::int64_t rep) {
    PeakSlice s;
    for (std::size_t i = 0; i < hist.counts.size(); ++i) {
        double c = hist.bin_center_ps(i);
        double tau = c - static_cast<double>(center);
        if (tau >= -rep / 2.0 && tau < rep / 2.0) {
            s.tau_ps.push_back(tau);
            s.counts.push_back(static_cast<double>(hist.counts[i]));
        }
    }
    return s;
}

// Least-squares amplitude and flat baseline for fixed shape values.
std::pair<double, double> amplitude_fit(const std::vector<double>& shape,
                                        const std::vector<double>& counts) {
    double s_ss = 0, s_s = 0, s_cs = 0, s_c = 0;
    const double n = static_cast<double>(shape.size());
    for (std::size_t i = 0; i < shape.size(); ++i) {
        s_ss += shape[i] * shape[i];
        s_s += shape[i];
        s_cs += counts[i] * shape[i];
        s_c += counts[i];
    }
    double det = n * s_ss - s_s * s_s;
    if (std::abs(det) < 1e-300) return {0.0, s_c / std::max(n, 1.0)};
    double amp = (n * s_cs - s_s * s_c) / det;
    double base = (s_c * s_ss - s_s * s_cs) / det;
    return {amp, base};
}

} // namespace

double peak_shape(double tau_ps, double tau_decay_ps, double irf_sigma_ps) {
    const double ad = std::abs(tau_ps) / tau_decay_ps;
    if (irf_sigma_ps <= 0.0) return std::exp(-ad);
    const double s = irf_sigma_ps, td = tau_decay_ps, tau = tau_ps;
    auto half = [&](double sign) {
        // exp(s^2/(2 td^2) + sign*tau/td) * erfc((s/td + sign*tau/s)/sqrt(2)),
        // evaluated via the asymptotic form when erfc underflows.
        double u = (s / td + sign * tau / s) / std::numbers::sqrt2;
        double x = s * s / (2.0 * td * td) + sign * tau / td;
        if (u > 25.0)
            return std::exp(x - u * u) / (u * std::sqrt(std::numbers::pi));
        return std::exp(x) * std::erfc(u);
    };
    return 0.5 * (half(-1.0) + half(1.0));
}

G2Result extract_g2(const CorrelationHistogram& hist, std::int64_t rep_period_ps,
                    std::int64_t norm_delay_ps, const G2Options& opts) {
    const std::int64_t rep = rep_period_ps;
    if (rep <= 0) throw ConfigError("extract_g2: rep period must be > 0");
    if (norm_delay_ps + rep / 2 > hist.window_ps)
        throw ConfigError("extract_g2: norm_delay outside the histogram window");

    const std::int64_t m0 = std::max<std::int64_t>(1, norm_delay_ps / rep);
    const std::int64_t m_lo = std::max<std::int64_t>(1, m0 - (opts.n_norm_peaks - 1));
    auto centers = peak_centers(hist, rep, m_lo, m0);
    if (centers.empty()) throw ConfigError("extract_g2: no side peaks near norm_delay");

    double central = peak_area(hist, 0, rep);
    double side_total = 0.0;
    for (auto c : centers) side_total += peak_area(hist, c, rep);
    if (side_total <= 0.0) throw NumericalError("extract_g2: empty side peaks");
    const double n_side = static_cast<double>(centers.size());
    const double mean_side = side_total / n_side;

    G2Result res;
    res.central_area = central;
    res.mean_side_area = mean_side;
    res.g2 = central / mean_side;
    res.sigma = std::sqrt(std::max(central, 1.0)) / mean_side * //
                std::sqrt(1.0 + std::max(central, 1.0) / side_total);

    if (opts.fit_peaks) {
        // Decay time from the aggregated side-peak profile, amplitudes per peak.
        PeakSlice agg = slice_peak(hist, centers[0], rep);
        for (std::size_t k = 1; k < centers.size(); ++k) {
            PeakSlice s = slice_peak(hist, centers[k], rep);
            for (std::size_t i = 0; i < agg.counts.size() && i < s.counts.size(); ++i)
                agg.counts[i] += s.counts[i];
        }
        auto sse_for = [&](double tau_d) {
            std::vector<double> shape(agg.tau_ps.size());
            for (std::size_t i = 0; i < shape.size(); ++i)
                shape[i] = peak_shape(agg.tau_ps[i], tau_d, opts.irf_sigma_ps);
            auto [amp, base] = amplitude_fit(shape, agg.counts);
            double sse = 0.0;
            for (std::size_t i = 0; i < shape.size(); ++i) {
                double r = agg.counts[i] - amp * shape[i] - base;
                sse += r * r;
            }
            return sse;
        };
        // Golden-section on log tau_d.
        double lo = std::log(std::max<double>(hist.bin_width_ps, 2.0));
        double hi = std::log(rep / 2.0);
        const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
        double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
        double f1 = sse_for(std::exp(x1)), f2 = sse_for(std::exp(x2));
        for (int it = 0; it < 60; ++it) {
            if (f1 < f2) {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - gr * (hi - lo);
                f1 = sse_for(std::exp(x1));
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + gr * (hi - lo);
                f2 = sse_for(std::exp(x2));
            }
        }
        const double tau_d = std::exp(0.5 * (lo + hi));

        auto fit_amp = [&](std::int64_t center) {
            PeakSlice s = slice_peak(hist, center, rep);
            std::vector<double> shape(s.tau_ps.size());
            for (std::size_t i = 0; i < shape.size(); ++i)
                shape[i] = peak_shape(s.tau_ps[i], tau_d, opts.irf_sigma_ps);
            return amplitude_fit(shape, s.counts).first;
        };
        double a0 = fit_amp(0);
        double a_side = 0.0;
        for (auto c : centers) a_side += fit_amp(c);
        a_side /= n_side;
        if (a_side <= 0.0) throw NumericalError("extract_g2: side-peak amplitude fit failed");
        res.g2 = a0 / a_side;
    }
    return res;
}

VRawResult extract_vraw(const CorrelationHistogram& co, const CorrelationHistogram& cross) {
    if (co.rep_period_ps != cross.rep_period_ps || co.window_ps != cross.window_ps)
        throw ConfigError("extract_vraw: histograms must share window and rep period");
    const std::int64_t rep = co.rep_period_ps;
    if (co.window_ps < 5 * rep)
        throw ConfigError("extract_vraw: histograms must span >= 5 rep periods");

    // Long-delay normalization: outermost complete peaks, skipping |m| <= 2
    // where the delay interferometer structures the histogram.
    const std::int64_t m_max = (co.window_ps - rep / 2) / rep;
    const std::int64_t m_lo = std::max<std::int64_t>(3, m_max - 49);
    auto centers = peak_centers(co, rep, m_lo, m_max);
    if (centers.empty()) throw ConfigError("extract_vraw: no usable long-delay peaks");

    auto tally = [&](const CorrelationHistogram& h) {
        double central = peak_area(h, 0, rep);
        double side = 0.0;
        for (auto c : centers) side += peak_area(h, c, rep);
        return std::pair<double, double>{central, side};
    };
    auto [c_co, s_co] = tally(co);
    auto [c_x, s_x] = tally(cross);
    if (s_co <= 0.0 || s_x <= 0.0) throw NumericalError("extract_vraw: empty long-delay peaks");
    if (c_x <= 0.0) throw NumericalError("extract_vraw: zero cross-polarized central area");

    const double n_peaks = static_cast<double>(centers.size());
    VRawResult r;
    r.a_parallel = c_co / (s_co / n_peaks);
    r.a_perp = c_x / (s_x / n_peaks);
    r.v_raw = (r.a_perp - r.a_parallel) / r.a_perp;

    double ratio = r.a_parallel / r.a_perp; // 1 - V_raw
    double rel = std::sqrt(1.0 / std::max(c_co, 1.0) + 1.0 / c_x + 1.0 / s_co + 1.0 / s_x);
    r.sigma = ratio * rel;
    return r;
}

BunchingFit fit_bunching_envelope(const CorrelationHistogram& hist, std::int64_t rep_period_ps) {
    const std::int64_t rep = rep_period_ps;
    const std::int64_t m_max = (hist.window_ps - rep / 2) / rep;
    if (m_max < 8) throw ConfigError("fit_bunching_envelope: need >= 8 side peaks in the window");

    std::vector<double> tau_us(m_max), area(m_max);
    for (std::int64_t m = 1; m <= m_max; ++m) {
        tau_us[m - 1] = static_cast<double>(m) * rep * 1e-6;
        area[m - 1] = peak_area(hist, m * rep, rep) + peak_area(hist, -m * rep, rep);
    }

    auto objective = [&](const std::vector<double>& x) {
        const double b = x[0], lam = x[1];
        double s_ff = 0, s_af = 0;
        for (std::size_t i = 0; i < area.size(); ++i) {
            double f = 1.0 + b * std::exp(-lam * tau_us[i]);
            s_ff += f * f;
            s_af += area[i] * f;
        }
        double c = s_ff > 0 ? s_af / s_ff : 0.0;
        double sse = 0;
        for (std::size_t i = 0; i < area.size(); ++i) {
            double r = area[i] - c * (1.0 + b * std::exp(-lam * tau_us[i]));
            sse += r * r;
        }
        return sse;
    };

    double tail = area.back();
    if (tail <= 0.0) throw NumericalError("fit_bunching_envelope: empty long-delay peaks");
    double b0 = std::max(0.0, area.front() / tail - 1.0);
    auto best = optim::nelder_mead(objective, {b0, 0.25}, {0.02, 0.1}, {0.0, 1e-3}, {1.0, 100.0},
                                   1e-14, 500);

    BunchingFit fit;
    fit.amplitude = 1.0 + best.x[0];
    fit.rate_per_us = best.x[1];
    double s_ff = 0, s_af = 0;
    for (std::size_t i = 0; i < area.size(); ++i) {
        double f = 1.0 + best.x[0] * std::exp(-best.x[1] * tau_us[i]);
        s_ff += f * f;
        s_af += area[i] * f;
    }
    fit.baseline = s_ff > 0 ? s_af / s_ff : 0.0;
    return fit;
}

} // namespace psim::mc
