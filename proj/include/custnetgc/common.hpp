#pragma once

// Shared plumbing: error taxonomy (mapped to CLI exit codes), FNV hashing for
// artifact stamping, deterministic RNG helpers, float formatting, parallel_for.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace custnetgc {

// Exit-code contract: 0 success, 1 usage, 2 data, 3 numeric.
class UsageError : public std::runtime_error {
public:
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
    return fnv1a64(s.data(), s.size());
}

inline std::string hash_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xF];
        h >>= 4;
    }
    return out;
}

// Shortest round-trip decimal form; used everywhere text artifacts must be
// byte-stable across reruns.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// mt19937_64 is fully specified by the standard, but the std distributions
// are not; the draws below are pinned so seeds reproduce bit-for-bit.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // in [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) {
        // rejection sampling, unbiased
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_int(i)]);
        }
    }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Static-partition parallel loop. Each index is processed by exactly one
// worker and no cross-thread reductions happen, so results are identical for
// any thread count.
template <typename Body>
inline void parallel_for(std::size_t n, int threads, const Body& body) {
    if (threads <= 0) {
        threads = static_cast<int>(std::thread::hardware_concurrency());
        if (threads <= 0) threads = 1;
    }
    const std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    if (t <= 1 || n == 0) {
        body(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(t - 1);
    const std::size_t chunk = (n + t - 1) / t;
    for (std::size_t w = 1; w < t; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] { body(lo, hi); });
    }
    body(0, std::min(chunk, n));
    for (auto& th : pool) th.join();
}

inline void check_finite(const std::vector<double>& v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string("non-finite value in ") + what);
        }
    }
}

}  // namespace custnetgc
