#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>

namespace heraldsim {

// Deterministic random stream. All distributions are implemented on top of
// raw mt19937_64 output so that a given (seed, stream_id) pair reproduces the
// same draws independent of standard-library distribution internals.
class RandomStream {
  public:
    explicit RandomStream(std::uint64_t seed, std::uint64_t stream_id = 0)
        : engine_(mix(seed, stream_id)) {}

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    double exponential(double mean) { return -mean * std::log1p(-uniform()); }

    double normal(double mean = 0.0, double sigma = 1.0) {
        if (have_cached_) {
            have_cached_ = false;
            return mean + sigma * cached_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        cached_ = r * std::sin(2.0 * M_PI * u2);
        have_cached_ = true;
        return mean + sigma * r * std::cos(2.0 * M_PI * u2);
    }

    std::uint64_t poisson(double mean) {
        if (mean < 0.0) throw std::invalid_argument("poisson: negative mean");
        if (mean == 0.0) return 0;
        return mean < 30.0 ? poisson_knuth(mean) : poisson_ptrs(mean);
    }

    // Number of Bernoulli(p) trials up to and including the first success.
    // p <= 0 returns a sentinel larger than any trial count in use.
    std::int64_t geometric(double p) {
        if (p >= 1.0) return 1;
        if (p <= 0.0) return std::numeric_limits<std::int64_t>::max();
        double u = 0.0;
        while (u == 0.0) u = uniform();
        const double trials = std::floor(std::log(u) / std::log1p(-p)) + 1.0;
        if (trials >= 9.0e18) return std::numeric_limits<std::int64_t>::max();
        return static_cast<std::int64_t>(trials);
    }

    // Index in [0, n) with probability weights[i] / sum(weights).
    template <typename Weights>
    std::size_t pick(const Weights& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        double x = uniform() * total;
        std::size_t last = 0;
        std::size_t i = 0;
        for (double w : weights) {
            x -= w;
            if (x < 0.0) return i;
            last = i;
            ++i;
        }
        return last;
    }

    std::uint64_t raw() { return engine_(); }

  private:
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream_id) {
        // splitmix64 over the pair keeps distinct streams decorrelated.
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream_id + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t poisson_knuth(double mean) {
        const double limit = std::exp(-mean);
        std::uint64_t k = 0;
        double prod = uniform();
        while (prod > limit) {
            ++k;
            prod *= uniform();
        }
        return k;
    }

    // Hormann's PTRS transformed-rejection sampler, valid for mean >= 10.
    std::uint64_t poisson_ptrs(double mean) {
        const double slam = std::sqrt(mean);
        const double loglam = std::log(mean);
        const double b = 0.931 + 2.53 * slam;
        const double a = -0.059 + 0.02483 * b;
        const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        const double v_r = 0.9277 - 3.6224 / (b - 2.0);
        while (true) {
            const double u = uniform() - 0.5;
            const double v = uniform();
            const double us = 0.5 - std::fabs(u);
            const double kf = std::floor((2.0 * a / us + b) * u + mean + 0.43);
            if (us >= 0.07 && v <= v_r && kf >= 0.0)
                return static_cast<std::uint64_t>(kf);
            if (kf < 0.0 || (us < 0.013 && v > us)) continue;
            const double lhs = std::log(v * inv_alpha / (a / (us * us) + b));
            const double rhs = kf * loglam - mean - std::lgamma(kf + 1.0);
            if (lhs <= rhs) return static_cast<std::uint64_t>(kf);
        }
    }

    std::mt19937_64 engine_;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

}  // namespace heraldsim
