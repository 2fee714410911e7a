#pragma once

#include "tdm/common.hpp"

#include <bit>
#include <cmath>
#include <cstdint>

namespace tdm {

// Splittable counter-based generator (SplitMix-style). Each (seed, stream id)
// pair owns an independent sequence, so per-sample streams can be consumed in
// any order across workers and still reproduce bit-identically.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : seed_(seed), stream_(stream_id) {
        const std::uint64_t base = mix64(seed ^ 0x5851f42d4c957f2dULL);
        state_ = mix64(base + 0x9e3779b97f4a7c15ULL * (stream_id + 1));
        gamma_ = mix_gamma(base ^ mix64(stream_id * 0xda942042e4dd58b5ULL + 0x8bb84b93962eacc9ULL));
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_; }

    std::uint64_t next_u64() {
        state_ += gamma_;
        return mix64(state_);
    }

    // uniform on [0, 1), 53-bit mantissa
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::int64_t uniform_int(std::int64_t n) {
        return static_cast<std::int64_t>(uniform() * static_cast<double>(n)) % n;
    }

    // standard normal, Marsaglia polar with cached spare
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

    Vec normal_vec(int dim) {
        Vec z(dim);
        for (int i = 0; i < dim; ++i) z[i] = normal();
        return z;
    }

private:
    static std::uint64_t mix64(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ULL;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebULL;
        z ^= z >> 31;
        return z;
    }

    // odd gamma with enough bit transitions (JDK SplittableRandom recipe)
    static std::uint64_t mix_gamma(std::uint64_t z) {
        z = mix64(z) | 1ULL;
        if (std::popcount(z ^ (z >> 1)) < 24) z ^= 0xaaaaaaaaaaaaaaaaULL;
        return z;
    }

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t state_ = 0;
    std::uint64_t gamma_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Named substream: all randomness in a run flows from one root seed split by
// (module name, item index).
inline RngStream substream(std::uint64_t root_seed, std::string_view name, std::uint64_t index = 0) {
    return RngStream(root_seed, fnv1a64(name) + 0x9e3779b97f4a7c15ULL * index);
}

} // namespace tdm
