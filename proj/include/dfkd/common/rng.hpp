#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

#include "dfkd/common/errors.hpp"

namespace dfkd {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

/// Deterministic random stream. All randomness in a run flows from one root
/// seed; independent components derive their own streams with split(), so
/// adding a consumer never perturbs the draws of existing ones.
///
/// Normal deviates use Box-Muller on top of mt19937_64 rather than
/// std::normal_distribution, whose draw sequence is implementation-defined.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : gen_(detail::splitmix64(seed)) {}

    static RngStream split(std::uint64_t root, std::string_view tag, std::uint64_t a = 0,
                           std::uint64_t b = 0) {
        std::uint64_t s = root;
        s = detail::splitmix64(s ^ detail::fnv1a64(tag));
        s = detail::splitmix64(s ^ a);
        s = detail::splitmix64(s ^ b);
        return RngStream(s);
    }

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Uniform in (0, 1]; safe as a log argument.
    double uniform_pos() { return 1.0 - uniform(); }

    double normal() {
        const double u1 = uniform_pos();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <typename T>
    void fill_normal(T* out, std::size_t n, double mean = 0.0, double stddev = 1.0) {
        for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(mean + stddev * normal());
    }

    template <typename T>
    void fill_uniform(T* out, std::size_t n, double lo, double hi) {
        for (std::size_t i = 0; i < n; ++i)
            out[i] = static_cast<T>(lo + (hi - lo) * uniform());
    }

    /// Draws an index from a discrete distribution by inverse CDF.
    int sample_discrete(const std::vector<double>& probs) {
        const double u = uniform();
        double cum = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            cum += probs[i];
            if (u < cum) return static_cast<int>(i);
        }
        return static_cast<int>(probs.size()) - 1;
    }

    /// Fisher-Yates shuffle of index vector.
    void shuffle(std::vector<std::size_t>& idx) {
        for (std::size_t i = idx.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(gen_() % i);
            std::swap(idx[i - 1], idx[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

/// Validates a probability vector: entries >= 0, sum within 1e-9 of 1.
inline void validate_distribution(const std::vector<double>& p) {
    if (p.empty()) throw ConfigError("label distribution is empty");
    double sum = 0.0;
    for (double v : p) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw ConfigError("label distribution has a negative or non-finite entry");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw ConfigError("label distribution does not sum to 1");
}

}  // namespace dfkd
