#pragma once

// Iterative radix-2 FFT and analysis windows. Power-of-two sizes only, which
// the STFT front end enforces.

#include <complex>
#include <vector>

#include "custnetgc/common.hpp"

namespace custnetgc {

enum class Window { Hann, Hamming, Rect };

inline const char* window_name(Window w) {
    switch (w) {
        case Window::Hann: return "hann";
        case Window::Hamming: return "hamming";
        default: return "rect";
    }
}

// Periodic windows (denominator n, not n-1), the common STFT convention.
inline std::vector<double> make_window(int n, Window w) {
    std::vector<double> out(static_cast<std::size_t>(n), 1.0);
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    for (int k = 0; k < n; ++k) {
        switch (w) {
            case Window::Hann:
                out[static_cast<std::size_t>(k)] = 0.5 - 0.5 * std::cos(kTwoPi * k / n);
                break;
            case Window::Hamming:
                out[static_cast<std::size_t>(k)] = 0.54 - 0.46 * std::cos(kTwoPi * k / n);
                break;
            case Window::Rect:
                break;
        }
    }
    return out;
}

inline bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse = false) {
    const std::size_t n = a.size();
    if (n == 0) return;
    if (!is_power_of_two(static_cast<int>(n))) {
        throw NumericError("fft size must be a power of two");
    }
    // bit-reversal permutation
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    constexpr double kPi = 3.1415926535897932384626433832795;
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * kPi / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const auto u = a[i + k];
                const auto v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
    if (inverse) {
        for (auto& x : a) x /= static_cast<double>(n);
    }
}

}  // namespace custnetgc
