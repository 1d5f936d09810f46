#ifndef PSIM_RNG_HPP
#define PSIM_RNG_HPP

#include <cmath>
#include <cstdint>

namespace psim {

// Small counter-seeded generator (splitmix64 core). Substreams are derived from
// (seed, stream, index) so parallel workers draw from independent sequences and
// results do not depend on thread scheduling.
class Rng {
public:
    explicit Rng(std::uint64_t state) : s_(state) {}

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Independent substream keyed by (seed, stream, index).
    static Rng substream(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
        std::uint64_t z = mix(seed ^ (0xA0761D6478BD642FULL * (stream + 1)));
        z = mix(z + 0x8EBC6AF09C88C6E3ULL * (index + 1));
        return Rng(z);
    }

    std::uint64_t next_u64() {
        s_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = s_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1]; safe as the argument of a logarithm.
    double uniform_pos() { return 1.0 - uniform(); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    double exponential(double rate) { return -std::log(uniform_pos()) / rate; }

    // Marsaglia polar method, spare cached per generator.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, q;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            q = u * u + v * v;
        } while (q >= 1.0 || q == 0.0);
        double f = std::sqrt(-2.0 * std::log(q) / q);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

private:
    std::uint64_t s_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace psim

#endif
