#pragma once

// Gradient-weighted class activation maps: channel importance weights from
// globally averaged class-score gradients, combined with the captured
// activations and clipped at zero, plus colormap overlays on the source
// image.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "custnetgc/common.hpp"
#include "custnetgc/image.hpp"
#include "custnetgc/net.hpp"
#include "custnetgc/tensor.hpp"

namespace custnetgc {

struct GradCamMap {
    int h = 0, w = 0;
    std::vector<double> values;  // all >= 0
    int class_index = -1;
    std::string source_layer;

    double at(int y, int x) const { return values[static_cast<std::size_t>(y) * w + x]; }
};

// w_k = mean over (i,j) of dS_c/dA^k(i,j). Accepts [H,W,K] as a batch-1
// activation-gradient tensor.
inline std::vector<double> importance_weights(const Tensor& grads) {
    if (grads.empty()) throw DataError("importance_weights: empty gradient tensor");
    grads.ensure_finite("gradcam gradients");
    const int K = grads.c;
    const std::size_t cells = grads.numel() / static_cast<std::size_t>(K);
    std::vector<double> w(static_cast<std::size_t>(K), 0.0);
    for (std::size_t i = 0; i < cells; ++i) {
        for (int k = 0; k < K; ++k) w[static_cast<std::size_t>(k)] += grads.data[i * static_cast<std::size_t>(K) + k];
    }
    for (double& v : w) v /= static_cast<double>(cells);
    return w;
}

// map(i,j) = max(0, sum_k w_k * A^k(i,j))
inline GradCamMap heatmap(const std::vector<double>& weights, const Tensor& activations,
                          int class_index) {
    if (weights.size() != static_cast<std::size_t>(activations.c)) {
        throw DataError("heatmap: weight count != activation channels");
    }
    GradCamMap map;
    map.h = activations.h;
    map.w = activations.w;
    map.class_index = class_index;
    map.values.assign(static_cast<std::size_t>(map.h) * map.w, 0.0);
    const int K = activations.c;
    for (int y = 0; y < map.h; ++y) {
        for (int x = 0; x < map.w; ++x) {
            double acc = 0.0;
            for (int k = 0; k < K; ++k) acc += weights[static_cast<std::size_t>(k)] * activations.at(0, y, x, k);
            map.values[static_cast<std::size_t>(y) * map.w + x] = acc > 0.0 ? acc : 0.0;
        }
    }
    return map;
}

// Full pipeline for one image: forward pass, gradient of the pre-softmax
// class score back to the captured layer, importance weights, heatmap.
inline GradCamMap explain(const Network& net, const FeatureImage& img, int class_index,
                          AlphaMode alpha_mode = AlphaMode::AsPrinted, int threads = 1) {
    if (net.gradcam_layer < 0) throw DataError("explain: network lacks a capture layer");
    if (class_index < 0 || class_index >= net.n_classes) {
        throw DataError("explain: class index out of range");
    }
    const Tensor x = image_to_input(net, img, alpha_mode);
    ForwardPass fp = forward(net, x, NetMode::Infer, threads);

    Tensor seed(1, 1, 1, net.n_classes);
    seed.at(0, 0, 0, class_index) = 1.0;  // d S_c / d logits
    BackwardPass bp = backward(net, fp, seed, NetMode::Infer, threads, false);

    const Tensor& grads = bp.act_grads[static_cast<std::size_t>(net.gradcam_layer)];
    const Tensor& acts = fp.outs[static_cast<std::size_t>(net.gradcam_layer)];
    GradCamMap map = heatmap(importance_weights(grads), acts, class_index);
    map.source_layer = net.layers[static_cast<std::size_t>(net.gradcam_layer)].name;
    return map;
}

// Blend: out = (1 - opacity*m) * base + opacity*m * colormap(m), where m is
// the min-max normalized map upsampled to the base resolution (all-zero maps
// stay zero). Output is RGB.
inline FeatureImage overlay(const GradCamMap& map, const FeatureImage& base, double opacity = 0.5,
                            AlphaMode alpha_mode = AlphaMode::AsPrinted) {
    if (opacity < 0.0 || opacity > 1.0) throw DataError("overlay: opacity must be in [0, 1]");
    if (map.values.empty()) throw DataError("overlay: empty map");

    const FeatureImage rgb = base.channels == 4 ? strip_alpha(base, alpha_mode) : base;

    double mx = 0.0;
    for (double v : map.values) mx = std::max(mx, v);
    std::vector<double> norm = map.values;
    if (mx > 0.0) {
        for (double& v : norm) v /= mx;
    }
    const std::vector<double> up = bilinear_resize_plane(norm, map.h, map.w, rgb.height, rgb.width);

    FeatureImage out = FeatureImage::filled(rgb.height, rgb.width, 3, 0.0, rgb.provenance);
    for (int y = 0; y < rgb.height; ++y) {
        for (int x = 0; x < rgb.width; ++x) {
            const double m = std::clamp(up[static_cast<std::size_t>(y) * rgb.width + x], 0.0, 1.0);
            double r, g, b2;
            colormap_jet(m, r, g, b2);
            const double wm = opacity * m;
            out.at(y, x, 0) = (1.0 - wm) * rgb.at(y, x, 0) + wm * r;
            out.at(y, x, 1) = (1.0 - wm) * rgb.at(y, x, 1) + wm * g;
            out.at(y, x, 2) = (1.0 - wm) * rgb.at(y, x, 2) + wm * b2;
        }
    }
    return out;
}

inline void save_gradcam_csv(const std::string& path, const GradCamMap& map) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    for (int y = 0; y < map.h; ++y) {
        for (int x = 0; x < map.w; ++x) {
            if (x) f << ',';
            f << format_double(map.at(y, x));
        }
        f << '\n';
    }
}

}  // namespace custnetgc
