#pragma once

#include <cmath>
#include <cstdint>

namespace metabvs {

namespace detail {

/// SplitMix64 output function (Steele, Lea & Flood 2014; Vigna's fixed-increment variant).
inline std::uint64_t splitmix64_mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace detail

/// Derives the seed for substream `stream` of a master seed. Used to hand
/// independent generators to chains, replicates and methods; the mapping is
/// fixed so that runs are reproducible.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return detail::splitmix64_mix(seed + 0x9E3779B97F4A7C15ULL * (stream + 1));
}

/// Splittable 64-bit generator. One instance per chain; substreams come from
/// derive_seed so that concurrent chains never share state.
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed) : state_(seed) {}
    RngStream(std::uint64_t seed, std::uint64_t stream) : state_(derive_seed(seed, stream)) {}

    using result_type = std::uint64_t;
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }

    result_type operator()() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return detail::splitmix64_mix(state_);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller; deterministic given the stream,
    /// unlike std::normal_distribution.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    bool bernoulli(double prob) { return uniform() < prob; }

  private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace metabvs
