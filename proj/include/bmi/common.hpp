#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bmi {

inline constexpr std::string_view kToolVersion = "bmicl 0.1.0";

// ---------------------------------------------------------------
// Error taxonomy. Everything derives from Error so callers can
// catch the whole family at the CLI boundary.
// ---------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParameterError : public Error {  // bad arguments to an operation
public:
    using Error::Error;
};

class DataError : public Error {  // malformed or non-finite data
public:
    using Error::Error;
};

class ConfigError : public Error {  // inconsistent configuration
public:
    using Error::Error;
};

class ShapeError : public Error {  // tensor shape mismatch
public:
    using Error::Error;
};

class StateError : public Error {  // stale cache, diverged training, ...
public:
    using Error::Error;
};

class LoadError : public Error {  // file/manifest problems
public:
    using Error::Error;
};

class UnsupportedError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------
// Rng: splittable deterministic generator (splitmix64 core).
// Every stream is derived from a named seed so experiments can be
// replayed bit-exactly; no global RNG anywhere in the library.
// ---------------------------------------------------------------

class Rng {
public:
    // The seed runs through a different mixer (murmur3 fmix64) than the stream
    // increment: seeding with the golden-ratio step itself would make Rng(s)
    // and Rng(s+1) walk the same global sequence one draw apart.
    explicit Rng(std::uint64_t seed) : state_(fmix64(seed ^ 0x6A09E667F3BCC909ULL)) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double next_double() { return (next_u64() >> 11) * 0x1.0p-53; }
    float next_float() { return static_cast<float>((next_u64() >> 40) * 0x1.0p-24); }

    // uniform integer in [0, n), n > 0
    std::uint64_t below(std::uint64_t n) {
        // Lemire multiply-shift with rejection; exact and fast.
        std::uint64_t x = next_u64();
        __uint128_t m = static_cast<__uint128_t>(x) * n;
        auto lo = static_cast<std::uint64_t>(m);
        if (lo < n) {
            std::uint64_t t = (0 - n) % n;
            while (lo < t) {
                x = next_u64();
                m = static_cast<__uint128_t>(x) * n;
                lo = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // standard normal, Box-Muller (fresh pair per call keeps streams splittable)
    double normal() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 1e-300) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // child stream derived from a label; independent of draw order on the parent
    Rng split(std::string_view label) const {
        std::uint64_t h = 0xcbf29ce484222325ULL ^ state_;
        for (char c : label) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        return Rng(h);
    }

    Rng split(std::string_view label, std::uint64_t index) const {
        Rng r = split(label);
        r.state_ = fmix64(r.state_ ^ (index + 0x9E3779B97F4A7C15ULL));
        return r;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t fmix64(std::uint64_t z) {
        z ^= z >> 33;
        z *= 0xFF51AFD7ED558CCDULL;
        z ^= z >> 33;
        z *= 0xC4CEB9FE1A85EC53ULL;
        z ^= z >> 33;
        return z;
    }

    std::uint64_t state_;
};

// ---------------------------------------------------------------
// Small stats helpers used by reports and tests.
// ---------------------------------------------------------------

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// sample standard deviation (n-1); 0 for fewer than two values
inline double stddev_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline bool all_finite(const std::vector<float>& v) {
    for (float x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace bmi
