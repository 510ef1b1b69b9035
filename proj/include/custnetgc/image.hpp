#pragma once

// Feature-image construction: the slope/energy plot raster the classifier
// consumes, the stacked L-mHP channel image, bilinear resizing, and PNG
// round-tripping of both.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "custnetgc/common.hpp"
#include "custnetgc/png.hpp"
#include "custnetgc/spectral.hpp"

namespace custnetgc {

struct FeatureImage {
    enum class Provenance { SlopePlot, LmHP, Other };

    int height = 0;
    int width = 0;
    int channels = 0;                 // 3 or 4
    std::vector<double> pixels;       // row-major interleaved, values in [0, 1]
    Provenance provenance = Provenance::Other;

    double& at(int y, int x, int c) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    static FeatureImage filled(int h, int w, int ch, double value, Provenance p) {
        FeatureImage img;
        img.height = h;
        img.width = w;
        img.channels = ch;
        img.provenance = p;
        img.pixels.assign(static_cast<std::size_t>(h) * w * ch, value);
        return img;
    }
};

// Classic bilinear with corner alignment: endpoints map to endpoints.
inline std::vector<double> bilinear_resize_plane(const std::vector<double>& src, int sh, int sw,
                                                 int dh, int dw) {
    if (sh <= 0 || sw <= 0 || dh <= 0 || dw <= 0) throw DataError("bilinear_resize: empty plane");
    std::vector<double> dst(static_cast<std::size_t>(dh) * dw);
    const double ry = dh > 1 ? static_cast<double>(sh - 1) / (dh - 1) : 0.0;
    const double rx = dw > 1 ? static_cast<double>(sw - 1) / (dw - 1) : 0.0;
    for (int y = 0; y < dh; ++y) {
        const double fy = y * ry;
        const int y0 = std::min(static_cast<int>(fy), sh - 1);
        const int y1 = std::min(y0 + 1, sh - 1);
        const double wy = fy - y0;
        for (int x = 0; x < dw; ++x) {
            const double fx = x * rx;
            const int x0 = std::min(static_cast<int>(fx), sw - 1);
            const int x1 = std::min(x0 + 1, sw - 1);
            const double wx = fx - x0;
            const double top = src[static_cast<std::size_t>(y0) * sw + x0] * (1 - wx) +
                               src[static_cast<std::size_t>(y0) * sw + x1] * wx;
            const double bot = src[static_cast<std::size_t>(y1) * sw + x0] * (1 - wx) +
                               src[static_cast<std::size_t>(y1) * sw + x1] * wx;
            dst[static_cast<std::size_t>(y) * dw + x] = top * (1 - wy) + bot * wy;
        }
    }
    return dst;
}

inline FeatureImage resize_image(const FeatureImage& src, int dh, int dw) {
    FeatureImage out = FeatureImage::filled(dh, dw, src.channels, 0.0, src.provenance);
    std::vector<double> plane(static_cast<std::size_t>(src.height) * src.width);
    for (int c = 0; c < src.channels; ++c) {
        for (int y = 0; y < src.height; ++y) {
            for (int x = 0; x < src.width; ++x) {
                plane[static_cast<std::size_t>(y) * src.width + x] = src.at(y, x, c);
            }
        }
        auto resized = bilinear_resize_plane(plane, src.height, src.width, dh, dw);
        for (int y = 0; y < dh; ++y) {
            for (int x = 0; x < dw; ++x) {
                out.at(y, x, c) = resized[static_cast<std::size_t>(y) * dw + x];
            }
        }
    }
    return out;
}

// Fixed value ranges for the energy axis, recorded in the run metadata so
// every clip in a dataset is drawn on comparable axes.
struct SlopePlotRanges {
    double e_min = 0.0;
    double e_max = 1.0;
};

// Deterministic RGBA raster of the energy envelope over time: ink is the
// area under the envelope, drawn over white with thin axis lines.
//
// Alpha convention: background pixels carry A=1 and ink carries A=0, so the
// as-printed channel merge (strip_alpha) resolves to ink color on white.
inline FeatureImage render_slope_plot(const SlopeSeries& series, int width, int height,
                                      const SlopePlotRanges& ranges) {
    if (width <= 0 || height <= 0) throw DataError("render_slope_plot: zero-sized canvas");
    if (series.energies.empty()) throw DataError("render_slope_plot: empty series");

    FeatureImage img = FeatureImage::filled(height, width, 4, 1.0, FeatureImage::Provenance::SlopePlot);

    const int margin = std::max(2, std::min(width, height) / 32);
    const int plot_left = margin, plot_right = width - margin;
    const int plot_top = margin, plot_bottom = height - margin;
    const double span = ranges.e_max > ranges.e_min ? ranges.e_max - ranges.e_min : 1.0;
    const auto n = series.energies.size();

    constexpr double ink_r = 0.122, ink_g = 0.231, ink_b = 0.498;
    auto put_ink = [&](int y, int x, double r, double g, double b) {
        img.at(y, x, 0) = r;
        img.at(y, x, 1) = g;
        img.at(y, x, 2) = b;
        img.at(y, x, 3) = 0.0;
    };

    const int x_span = std::max(1, plot_right - 1 - plot_left);
    const int y_span = std::max(1, plot_bottom - 1 - plot_top);
    for (int x = plot_left; x < plot_right; ++x) {
        // nearest sample for this column; plots are column-deterministic
        const double fpos =
            n == 1 ? 0.0 : static_cast<double>(x - plot_left) * (static_cast<double>(n) - 1.0) / x_span;
        const auto i = std::min<std::size_t>(static_cast<std::size_t>(std::lround(fpos)), n - 1);
        const double norm = std::clamp((series.energies[i] - ranges.e_min) / span, 0.0, 1.0);
        const int top = plot_bottom - 1 - static_cast<int>(std::lround(norm * y_span));
        for (int y = std::max(top, 0); y < plot_bottom; ++y) put_ink(y, x, ink_r, ink_g, ink_b);
    }
    // axes
    for (int y = plot_top; y < plot_bottom; ++y) put_ink(y, plot_left - 1, 0.0, 0.0, 0.0);
    for (int x = plot_left - 1; x < plot_right; ++x) put_ink(plot_bottom, x, 0.0, 0.0, 0.0);

    return img;
}

// Each spectrogram is min-max normalized on its own, resized, and stacked as
// channels in the order LogMel, Harmonic, Percussive. A constant input
// becomes an all-zero channel, reported through `warnings`.
inline FeatureImage stack_lmhp(const Spectrogram& logmel, const Spectrogram& harmonic,
                               const Spectrogram& percussive, int height, int width,
                               std::vector<std::string>* warnings = nullptr) {
    const Spectrogram* parts[3] = {&logmel, &harmonic, &percussive};
    for (const auto* p : parts) {
        if (p->n_rows == 0 || p->n_frames == 0) throw DataError("stack_lmhp: empty spectrogram");
    }
    if (height <= 0 || width <= 0) throw DataError("stack_lmhp: zero-sized output");

    FeatureImage out = FeatureImage::filled(height, width, 3, 0.0, FeatureImage::Provenance::LmHP);
    for (int c = 0; c < 3; ++c) {
        const Spectrogram& s = *parts[c];
        const auto [mn_it, mx_it] = std::minmax_element(s.values.begin(), s.values.end());
        const double mn = *mn_it, mx = *mx_it;
        std::vector<double> norm(s.values.size(), 0.0);
        if (mx > mn) {
            for (std::size_t i = 0; i < s.values.size(); ++i) norm[i] = (s.values[i] - mn) / (mx - mn);
        } else if (warnings) {
            warnings->push_back(std::string("constant ") + spectrogram_kind_name(s.kind) +
                                " spectrogram; channel zeroed");
        }
        auto resized = bilinear_resize_plane(norm, s.n_rows, s.n_frames, height, width);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                out.at(y, x, c) = resized[static_cast<std::size_t>(y) * width + x];
            }
        }
    }
    return out;
}

// Jet-style colormap used for heatmap overlays.
inline void colormap_jet(double m, double& r, double& g, double& b) {
    m = std::clamp(m, 0.0, 1.0);
    r = std::clamp(1.5 - std::fabs(4.0 * m - 3.0), 0.0, 1.0);
    g = std::clamp(1.5 - std::fabs(4.0 * m - 2.0), 0.0, 1.0);
    b = std::clamp(1.5 - std::fabs(4.0 * m - 1.0), 0.0, 1.0);
}

inline RawImage to_raw_image(const FeatureImage& img) {
    RawImage raw;
    raw.width = img.width;
    raw.height = img.height;
    raw.channels = img.channels;
    raw.pixels.resize(img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const double v = std::clamp(img.pixels[i], 0.0, 1.0);
        raw.pixels[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    return raw;
}

inline FeatureImage from_raw_image(const RawImage& raw, FeatureImage::Provenance prov) {
    FeatureImage img;
    img.height = raw.height;
    img.width = raw.width;
    img.channels = raw.channels;
    img.provenance = prov;
    img.pixels.resize(raw.pixels.size());
    for (std::size_t i = 0; i < raw.pixels.size(); ++i) img.pixels[i] = raw.pixels[i] / 255.0;
    return img;
}

inline void save_feature_image(const std::string& path, const FeatureImage& img) {
    write_png(path, to_raw_image(img));
}

inline FeatureImage load_feature_image(const std::string& path,
                                       FeatureImage::Provenance prov = FeatureImage::Provenance::Other) {
    return from_raw_image(read_png(path), prov);
}

// Grayscale spectrogram rendering for the per-kind PNG artifacts: min-max
// normalized, low row = bottom of the image.
inline FeatureImage spectrogram_to_image(const Spectrogram& s) {
    if (s.n_rows == 0 || s.n_frames == 0) throw DataError("spectrogram_to_image: empty input");
    FeatureImage img = FeatureImage::filled(s.n_rows, s.n_frames, 3, 0.0,
                                            FeatureImage::Provenance::Other);
    const auto [mn_it, mx_it] = std::minmax_element(s.values.begin(), s.values.end());
    const double mn = *mn_it, mx = *mx_it;
    for (int r = 0; r < s.n_rows; ++r) {
        for (int t = 0; t < s.n_frames; ++t) {
            const double v = mx > mn ? (s.at(r, t) - mn) / (mx - mn) : 0.0;
            const int y = s.n_rows - 1 - r;
            img.at(y, t, 0) = v;
            img.at(y, t, 1) = v;
            img.at(y, t, 2) = v;
        }
    }
    return img;
}

}  // namespace custnetgc
