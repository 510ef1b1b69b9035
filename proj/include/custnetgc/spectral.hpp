#pragma once

// Time-frequency analysis: STFT, mel filterbank + log-mel, median-filter
// HPSS with soft masks, log(1+a*x) compression, and per-frame spectral
// slopes / energies.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <vector>

#include "custnetgc/audio.hpp"
#include "custnetgc/common.hpp"
#include "custnetgc/fft.hpp"

namespace custnetgc {

enum class SpectrogramKind { Magnitude, LogMel, Harmonic, Percussive };
enum class HpssComponent { None, Harmonic, Percussive };

inline const char* spectrogram_kind_name(SpectrogramKind k) {
    switch (k) {
        case SpectrogramKind::Magnitude: return "magnitude";
        case SpectrogramKind::LogMel: return "logmel";
        case SpectrogramKind::Harmonic: return "harmonic";
        default: return "percussive";
    }
}

// Complex STFT, bins 0..n_fft/2, stored bin-major: bins[f * n_frames + t].
struct ComplexSpectrogram {
    int n_fft = 0;
    int hop = 0;
    int sample_rate_hz = 0;
    Window window = Window::Hann;
    int n_bins = 0;
    int n_frames = 0;
    std::vector<std::complex<double>> bins;

    const std::complex<double>& at(int f, int t) const {
        return bins[static_cast<std::size_t>(f) * n_frames + t];
    }
    double bin_frequency_hz(int f) const {
        return static_cast<double>(f) * sample_rate_hz / n_fft;
    }
    double frame_time_s(int t) const {
        return (static_cast<double>(t) * hop + n_fft / 2.0) / sample_rate_hz;
    }
};

struct Spectrogram {
    SpectrogramKind kind = SpectrogramKind::Magnitude;
    HpssComponent component = HpssComponent::None;
    int n_rows = 0;
    int n_frames = 0;
    std::vector<double> values;  // row-major [n_rows][n_frames]
    std::vector<double> row_frequencies;  // Hz (center frequency per row)
    std::vector<double> frame_times_s;

    double& at(int r, int t) { return values[static_cast<std::size_t>(r) * n_frames + t]; }
    double at(int r, int t) const { return values[static_cast<std::size_t>(r) * n_frames + t]; }
};

// Frame policy: no padding, frames fully inside the signal, so
// n_frames = floor((len - n_fft)/hop) + 1.
inline ComplexSpectrogram stft(const AudioClip& clip, int n_fft, int hop, Window window) {
    if (!is_power_of_two(n_fft) || n_fft < 16) {
        throw DataError("stft: n_fft must be a power of two >= 16");
    }
    if (hop <= 0 || hop > n_fft) throw DataError("stft: need 0 < hop <= n_fft");
    if (static_cast<int>(clip.samples.size()) < n_fft) {
        throw DataError("stft: clip shorter than one frame (" +
                        std::to_string(clip.samples.size()) + " < " + std::to_string(n_fft) + ")");
    }

    ComplexSpectrogram out;
    out.n_fft = n_fft;
    out.hop = hop;
    out.sample_rate_hz = clip.sample_rate_hz;
    out.window = window;
    out.n_bins = n_fft / 2 + 1;
    out.n_frames = static_cast<int>((clip.samples.size() - static_cast<std::size_t>(n_fft)) /
                                    static_cast<std::size_t>(hop)) + 1;
    out.bins.resize(static_cast<std::size_t>(out.n_bins) * out.n_frames);

    const auto win = make_window(n_fft, window);
    std::vector<std::complex<double>> frame(static_cast<std::size_t>(n_fft));
    for (int t = 0; t < out.n_frames; ++t) {
        const std::size_t start = static_cast<std::size_t>(t) * hop;
        for (int k = 0; k < n_fft; ++k) {
            frame[static_cast<std::size_t>(k)] = clip.samples[start + k] * win[static_cast<std::size_t>(k)];
        }
        fft_inplace(frame);
        for (int f = 0; f < out.n_bins; ++f) {
            out.bins[static_cast<std::size_t>(f) * out.n_frames + t] = frame[static_cast<std::size_t>(f)];
        }
    }
    return out;
}

inline Spectrogram magnitude(const ComplexSpectrogram& spec) {
    Spectrogram out;
    out.kind = SpectrogramKind::Magnitude;
    out.n_rows = spec.n_bins;
    out.n_frames = spec.n_frames;
    out.values.resize(static_cast<std::size_t>(out.n_rows) * out.n_frames);
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = std::abs(spec.bins[i]);
    out.row_frequencies.resize(static_cast<std::size_t>(spec.n_bins));
    for (int f = 0; f < spec.n_bins; ++f) out.row_frequencies[static_cast<std::size_t>(f)] = spec.bin_frequency_hz(f);
    out.frame_times_s.resize(static_cast<std::size_t>(spec.n_frames));
    for (int t = 0; t < spec.n_frames; ++t) out.frame_times_s[static_cast<std::size_t>(t)] = spec.frame_time_s(t);
    return out;
}

// M = 2595 * log10(1 + f/700)
inline double hz_to_mel(double f_hz) {
    if (f_hz < 0) throw DataError("hz_to_mel: negative frequency");
    return 2595.0 * std::log10(1.0 + f_hz / 700.0);
}

inline double mel_to_hz(double mel) {
    return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

struct MelFilterbank {
    int n_mels = 0;
    int n_fft = 0;
    int sample_rate_hz = 0;
    double f_min_hz = 0.0;
    double f_max_hz = 0.0;
    std::vector<double> weights;  // row-major [n_mels][n_bins]
    std::vector<double> center_frequencies_hz;

    int n_bins() const { return n_fft / 2 + 1; }
    double weight(int m, int f) const {
        return weights[static_cast<std::size_t>(m) * n_bins() + f];
    }
};

// Triangular filters with mel-equispaced edges, each row rescaled to peak 1.
inline MelFilterbank mel_filterbank(int n_mels, int n_fft, int sr_hz, double f_min_hz,
                                    double f_max_hz) {
    if (n_mels < 2) throw DataError("mel_filterbank: n_mels must be >= 2");
    if (!(f_min_hz >= 0 && f_min_hz < f_max_hz && f_max_hz <= sr_hz / 2.0)) {
        throw DataError("mel_filterbank: need 0 <= f_min < f_max <= sr/2");
    }
    MelFilterbank fb;
    fb.n_mels = n_mels;
    fb.n_fft = n_fft;
    fb.sample_rate_hz = sr_hz;
    fb.f_min_hz = f_min_hz;
    fb.f_max_hz = f_max_hz;

    const double mel_lo = hz_to_mel(f_min_hz);
    const double mel_hi = hz_to_mel(f_max_hz);
    std::vector<double> edges_hz(static_cast<std::size_t>(n_mels) + 2);
    for (int i = 0; i < n_mels + 2; ++i) {
        const double mel = mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1);
        edges_hz[static_cast<std::size_t>(i)] = mel_to_hz(mel);
    }
    fb.center_frequencies_hz.assign(edges_hz.begin() + 1, edges_hz.end() - 1);

    const int n_bins = fb.n_bins();
    fb.weights.assign(static_cast<std::size_t>(n_mels) * n_bins, 0.0);
    for (int m = 0; m < n_mels; ++m) {
        const double lo = edges_hz[static_cast<std::size_t>(m)];
        const double c = edges_hz[static_cast<std::size_t>(m) + 1];
        const double hi = edges_hz[static_cast<std::size_t>(m) + 2];
        double peak = 0.0;
        for (int f = 0; f < n_bins; ++f) {
            const double freq = static_cast<double>(f) * sr_hz / n_fft;
            double w = 0.0;
            if (freq > lo && freq < hi) {
                w = freq <= c ? (freq - lo) / (c - lo) : (hi - freq) / (hi - c);
            }
            fb.weights[static_cast<std::size_t>(m) * n_bins + f] = w;
            peak = std::max(peak, w);
        }
        if (peak > 0.0) {
            for (int f = 0; f < n_bins; ++f) {
                fb.weights[static_cast<std::size_t>(m) * n_bins + f] /= peak;
            }
        }
    }
    return fb;
}

// L_n(t) = log(max(sum_f |X(f,t)| * H_n(f), floor))
inline Spectrogram log_mel(const ComplexSpectrogram& spec, const MelFilterbank& fb,
                           double floor = 1e-10) {
    if (fb.n_fft != spec.n_fft || fb.sample_rate_hz != spec.sample_rate_hz) {
        throw DataError("log_mel: filterbank built for different n_fft or sample rate");
    }
    if (floor <= 0) throw DataError("log_mel: floor must be > 0");
    Spectrogram out;
    out.kind = SpectrogramKind::LogMel;
    out.n_rows = fb.n_mels;
    out.n_frames = spec.n_frames;
    out.values.assign(static_cast<std::size_t>(fb.n_mels) * spec.n_frames, 0.0);
    out.row_frequencies = fb.center_frequencies_hz;
    out.frame_times_s.resize(static_cast<std::size_t>(spec.n_frames));
    for (int t = 0; t < spec.n_frames; ++t) out.frame_times_s[static_cast<std::size_t>(t)] = spec.frame_time_s(t);

    for (int m = 0; m < fb.n_mels; ++m) {
        for (int t = 0; t < spec.n_frames; ++t) {
            double acc = 0.0;
            for (int f = 0; f < spec.n_bins; ++f) {
                const double w = fb.weight(m, f);
                if (w != 0.0) acc += std::abs(spec.at(f, t)) * w;
            }
            out.at(m, t) = std::log(std::max(acc, floor));
        }
    }
    return out;
}

namespace detail {

// Median of a sliding window with reflected edges.
inline void median_filter_1d(const double* src, int n, int stride, int kernel, double* dst,
                             int dst_stride) {
    const int half = kernel / 2;
    std::vector<double> window(static_cast<std::size_t>(kernel));
    for (int i = 0; i < n; ++i) {
        for (int k = -half; k <= half; ++k) {
            int j = i + k;
            if (j < 0) j = -j;                    // reflect
            if (j >= n) j = 2 * (n - 1) - j;
            if (j < 0) j = 0;                     // degenerate n==1
            window[static_cast<std::size_t>(k + half)] = src[static_cast<std::size_t>(j) * stride];
        }
        auto mid = window.begin() + half;
        std::nth_element(window.begin(), mid, window.end());
        dst[static_cast<std::size_t>(i) * dst_stride] = *mid;
    }
}

}  // namespace detail

struct HpssResult {
    Spectrogram harmonic;    // Magnitude kind, component Harmonic
    Spectrogram percussive;  // Magnitude kind, component Percussive
};

// Median-filtering HPSS. Harmonic enhancement filters each bin across time,
// percussive enhancement filters each frame across frequency; soft masks
// M_h = H^p / (H^p + P^p) with 0/0 resolved to 0.5, M_p = 1 - M_h.
inline HpssResult hpss(const ComplexSpectrogram& spec, int h_kernel = 31, int p_kernel = 31,
                       double power = 2.0) {
    if (h_kernel < 3 || h_kernel % 2 == 0 || p_kernel < 3 || p_kernel % 2 == 0) {
        throw DataError("hpss: kernels must be odd and >= 3");
    }
    if (power < 1.0) throw DataError("hpss: power must be >= 1");
    if (spec.n_bins == 0 || spec.n_frames == 0) throw DataError("hpss: empty spectrogram");

    const Spectrogram mag = magnitude(spec);
    const int nb = spec.n_bins, nt = spec.n_frames;

    std::vector<double> h_med(mag.values.size()), p_med(mag.values.size());
    for (int f = 0; f < nb; ++f) {  // along time
        detail::median_filter_1d(&mag.values[static_cast<std::size_t>(f) * nt], nt, 1, h_kernel,
                                 &h_med[static_cast<std::size_t>(f) * nt], 1);
    }
    for (int t = 0; t < nt; ++t) {  // along frequency
        detail::median_filter_1d(&mag.values[static_cast<std::size_t>(t)], nb, nt, p_kernel,
                                 &p_med[static_cast<std::size_t>(t)], nt);
    }

    HpssResult out;
    out.harmonic = mag;
    out.harmonic.component = HpssComponent::Harmonic;
    out.percussive = mag;
    out.percussive.component = HpssComponent::Percussive;
    for (std::size_t i = 0; i < mag.values.size(); ++i) {
        const double hp = std::pow(h_med[i], power);
        const double pp = std::pow(p_med[i], power);
        const double denom = hp + pp;
        const double mask_h = denom > 0.0 ? hp / denom : 0.5;
        out.harmonic.values[i] = mask_h * mag.values[i];
        out.percussive.values[i] = (1.0 - mask_h) * mag.values[i];
    }
    return out;
}

// log(1 + alpha * m); kind follows the HPSS component of the input.
inline Spectrogram compress_component(const Spectrogram& mag, double alpha) {
    if (mag.kind != SpectrogramKind::Magnitude) {
        throw DataError("compress_component: input must be a magnitude spectrogram");
    }
    if (alpha <= 0) throw DataError("compress_component: alpha must be > 0");
    Spectrogram out = mag;
    switch (mag.component) {
        case HpssComponent::Harmonic: out.kind = SpectrogramKind::Harmonic; break;
        case HpssComponent::Percussive: out.kind = SpectrogramKind::Percussive; break;
        default: throw DataError("compress_component: input has no HPSS component tag");
    }
    for (double& v : out.values) v = std::log1p(alpha * v);
    return out;
}

struct SlopeSeries {
    std::vector<double> slopes;    // log-magnitude units per Hz
    std::vector<double> energies;  // sum over bins of |X|^2 per frame
    std::vector<double> frame_times_s;
};

// Inspection dump: one line per row, frames as columns. `stamp` goes into a
// leading comment line when non-empty.
inline void save_spectrogram_csv(const std::string& path, const Spectrogram& s,
                                 const std::string& stamp = "") {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    if (!stamp.empty()) f << "# config_hash=" << stamp << "\n";
    for (int r = 0; r < s.n_rows; ++r) {
        for (int t = 0; t < s.n_frames; ++t) {
            if (t) f << ',';
            f << format_double(s.at(r, t));
        }
        f << '\n';
    }
}

// Per frame: OLS slope of log(|X| + floor) against bin frequency in Hz over
// [f_min, f_max], plus the frame's total squared magnitude.
inline SlopeSeries spectral_slopes(const ComplexSpectrogram& spec, double f_min_hz = 0.0,
                                   double f_max_hz = -1.0, double floor = 1e-10) {
    if (spec.n_bins == 0 || spec.n_frames == 0) throw DataError("spectral_slopes: empty spectrogram");
    if (f_max_hz < 0) f_max_hz = spec.sample_rate_hz / 2.0;

    std::vector<int> band;
    for (int f = 0; f < spec.n_bins; ++f) {
        const double freq = spec.bin_frequency_hz(f);
        if (freq >= f_min_hz && freq <= f_max_hz) band.push_back(f);
    }
    if (band.size() < 2) throw DataError("spectral_slopes: fewer than 2 bins in regression band");

    const auto nb = static_cast<double>(band.size());
    double x_mean = 0.0;
    for (int f : band) x_mean += spec.bin_frequency_hz(f);
    x_mean /= nb;
    double sxx = 0.0;
    for (int f : band) {
        const double d = spec.bin_frequency_hz(f) - x_mean;
        sxx += d * d;
    }

    SlopeSeries out;
    out.slopes.resize(static_cast<std::size_t>(spec.n_frames));
    out.energies.resize(static_cast<std::size_t>(spec.n_frames));
    out.frame_times_s.resize(static_cast<std::size_t>(spec.n_frames));
    for (int t = 0; t < spec.n_frames; ++t) {
        double y_mean = 0.0;
        for (int f : band) y_mean += std::log(std::abs(spec.at(f, t)) + floor);
        y_mean /= nb;
        double sxy = 0.0;
        for (int f : band) {
            sxy += (spec.bin_frequency_hz(f) - x_mean) *
                   (std::log(std::abs(spec.at(f, t)) + floor) - y_mean);
        }
        out.slopes[static_cast<std::size_t>(t)] = sxy / sxx;

        double energy = 0.0;
        for (int f = 0; f < spec.n_bins; ++f) energy += std::norm(spec.at(f, t));
        out.energies[static_cast<std::size_t>(t)] = energy;
        out.frame_times_s[static_cast<std::size_t>(t)] = spec.frame_time_s(t);
    }
    return out;
}

}  // namespace custnetgc
