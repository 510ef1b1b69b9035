#pragma once

// The network engine: a small static DAG of layers with forward, backward,
// activation capture, seeded training, and a self-describing checkpoint
// format. build_custnet() assembles the depthwise-separable architecture
// with entry / middle / exit flows and residual junctions.

#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "custnetgc/common.hpp"
#include "custnetgc/image.hpp"
#include "custnetgc/layers.hpp"
#include "custnetgc/tensor.hpp"

namespace custnetgc {

enum class LayerKind {
    Conv2D,
    DepthwiseConv2D,
    PointwiseConv2D,
    BatchNorm,
    ReLU,
    MaxPool2D,
    GlobalAveragePool,
    Dense,
    Softmax,
    ResidualAdd,
};

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2D: return "conv2d";
        case LayerKind::DepthwiseConv2D: return "depthwise_conv2d";
        case LayerKind::PointwiseConv2D: return "pointwise_conv2d";
        case LayerKind::BatchNorm: return "batch_norm";
        case LayerKind::ReLU: return "relu";
        case LayerKind::MaxPool2D: return "max_pool2d";
        case LayerKind::GlobalAveragePool: return "global_average_pool";
        case LayerKind::Dense: return "dense";
        case LayerKind::Softmax: return "softmax";
        default: return "residual_add";
    }
}

inline LayerKind layer_kind_from_name(const std::string& s) {
    for (int k = 0; k <= static_cast<int>(LayerKind::ResidualAdd); ++k) {
        if (s == layer_kind_name(static_cast<LayerKind>(k))) return static_cast<LayerKind>(k);
    }
    throw DataError("unknown layer kind: " + s);
}

struct Layer {
    LayerKind kind = LayerKind::ReLU;
    std::string name;
    int in0 = -1;  // producing layer index; -1 = network input
    int in1 = -1;  // second input (ResidualAdd only)
    int kh = 0, kw = 0;
    int stride = 1;
    Padding padding = Padding::Same;
    int filters = 0;

    // parameter storage; empty when the kind has none
    std::vector<double> weight, bias, gamma, beta, run_mean, run_var;
};

struct Dim {
    int h = 0, w = 0, c = 0;
};

struct Network {
    int input_h = 0, input_w = 0, input_c = 0;
    int n_classes = 0;
    std::uint64_t rng_seed = 0;
    std::vector<Layer> layers;
    std::vector<Dim> out_dims;  // filled by shape_check

    int gradcam_layer = -1;  // post-activation map of the last separable conv
    int feature_layer = -1;  // global-average-pool output
    int logits_layer = -1;   // dense output, pre-softmax
    int softmax_layer = -1;

    Dim dim_of(int idx) const {
        if (idx < 0) return Dim{input_h, input_w, input_c};
        return out_dims[static_cast<std::size_t>(idx)];
    }

    int feature_length() const { return dim_of(feature_layer).c; }

    // Validates the graph end to end and computes every layer's output shape.
    void shape_check() {
        out_dims.assign(layers.size(), Dim{});
        for (std::size_t i = 0; i < layers.size(); ++i) {
            Layer& l = layers[i];
            if (l.in0 >= static_cast<int>(i) || l.in1 >= static_cast<int>(i)) {
                throw DataError("layer " + l.name + ": inputs must precede the layer");
            }
            const Dim a = dim_of(l.in0);
            Dim d = a;
            switch (l.kind) {
                case LayerKind::Conv2D:
                case LayerKind::PointwiseConv2D:
                    d.h = conv_out_extent(a.h, l.kh, l.stride, l.padding);
                    d.w = conv_out_extent(a.w, l.kw, l.stride, l.padding);
                    d.c = l.filters;
                    if (l.weight.size() != static_cast<std::size_t>(l.kh) * l.kw * a.c * l.filters) {
                        throw DataError("layer " + l.name + ": weight shape mismatch");
                    }
                    break;
                case LayerKind::DepthwiseConv2D:
                    d.h = conv_out_extent(a.h, l.kh, l.stride, l.padding);
                    d.w = conv_out_extent(a.w, l.kw, l.stride, l.padding);
                    if (l.weight.size() != static_cast<std::size_t>(l.kh) * l.kw * a.c) {
                        throw DataError("layer " + l.name + ": weight shape mismatch");
                    }
                    break;
                case LayerKind::BatchNorm:
                    if (l.gamma.size() != static_cast<std::size_t>(a.c)) {
                        throw DataError("layer " + l.name + ": batch-norm size mismatch");
                    }
                    break;
                case LayerKind::ReLU:
                    break;
                case LayerKind::MaxPool2D:
                    d.h = conv_out_extent(a.h, l.kh, l.stride, l.padding);
                    d.w = conv_out_extent(a.w, l.kw, l.stride, l.padding);
                    break;
                case LayerKind::GlobalAveragePool:
                    d = Dim{1, 1, a.c};
                    break;
                case LayerKind::Dense:
                    if (a.h != 1 || a.w != 1) {
                        throw DataError("layer " + l.name + ": dense input must be a vector");
                    }
                    if (l.weight.size() != static_cast<std::size_t>(a.c) * l.filters) {
                        throw DataError("layer " + l.name + ": weight shape mismatch");
                    }
                    d = Dim{1, 1, l.filters};
                    break;
                case LayerKind::Softmax:
                    break;
                case LayerKind::ResidualAdd: {
                    const Dim b = dim_of(l.in1);
                    if (a.h != b.h || a.w != b.w || a.c != b.c) {
                        throw DataError("layer " + l.name + ": residual junction shapes differ ([" +
                                        std::to_string(a.h) + "," + std::to_string(a.w) + "," +
                                        std::to_string(a.c) + "] vs [" + std::to_string(b.h) + "," +
                                        std::to_string(b.w) + "," + std::to_string(b.c) + "])");
                    }
                    break;
                }
            }
            if (d.h <= 0 || d.w <= 0 || d.c <= 0) {
                throw DataError("layer " + l.name + ": output shape collapsed to zero");
            }
            out_dims[i] = d;
        }
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) {
            n += l.weight.size() + l.bias.size() + l.gamma.size() + l.beta.size();
        }
        return n;
    }
};

// ---------- builder ----------

class NetworkBuilder {
public:
    NetworkBuilder(int h, int w, int c, int n_classes, std::uint64_t seed) {
        net_.input_h = h;
        net_.input_w = w;
        net_.input_c = c;
        net_.n_classes = n_classes;
        net_.rng_seed = seed;
    }

    int last() const { return last_; }
    int channels_of(int idx) const { return dims_.at(static_cast<std::size_t>(idx)).c; }

    int conv(int filters, int k, int stride, Padding pad, const std::string& name, int from = -2) {
        Layer l = base(LayerKind::Conv2D, name, from);
        l.kh = l.kw = k;
        l.stride = stride;
        l.padding = pad;
        l.filters = filters;
        const Dim a = in_dim(l.in0);
        l.weight.assign(static_cast<std::size_t>(k) * k * a.c * filters, 0.0);
        l.bias.assign(static_cast<std::size_t>(filters), 0.0);
        return push(std::move(l));
    }

    int pointwise(int filters, const std::string& name, int from = -2) {
        const int idx = conv(filters, 1, 1, Padding::Same, name, from);
        net_.layers.back().kind = LayerKind::PointwiseConv2D;
        return idx;
    }

    int depthwise(int k, const std::string& name, int from = -2) {
        Layer l = base(LayerKind::DepthwiseConv2D, name, from);
        l.kh = l.kw = k;
        l.stride = 1;
        l.padding = Padding::Same;
        const Dim a = in_dim(l.in0);
        l.weight.assign(static_cast<std::size_t>(k) * k * a.c, 0.0);
        l.bias.assign(static_cast<std::size_t>(a.c), 0.0);
        return push(std::move(l));
    }

    int batch_norm(const std::string& name, int from = -2) {
        Layer l = base(LayerKind::BatchNorm, name, from);
        const Dim a = in_dim(l.in0);
        l.gamma.assign(static_cast<std::size_t>(a.c), 1.0);
        l.beta.assign(static_cast<std::size_t>(a.c), 0.0);
        l.run_mean.assign(static_cast<std::size_t>(a.c), 0.0);
        l.run_var.assign(static_cast<std::size_t>(a.c), 1.0);
        return push(std::move(l));
    }

    int relu(const std::string& name, int from = -2) {
        return push(base(LayerKind::ReLU, name, from));
    }

    int max_pool(int k, int stride, const std::string& name, int from = -2) {
        Layer l = base(LayerKind::MaxPool2D, name, from);
        l.kh = l.kw = k;
        l.stride = stride;
        l.padding = Padding::Same;
        return push(std::move(l));
    }

    int global_average_pool(const std::string& name, int from = -2) {
        return push(base(LayerKind::GlobalAveragePool, name, from));
    }

    int dense(int classes, const std::string& name, int from = -2) {
        Layer l = base(LayerKind::Dense, name, from);
        l.filters = classes;
        const Dim a = in_dim(l.in0);
        l.weight.assign(static_cast<std::size_t>(a.c) * classes, 0.0);
        return push(std::move(l));
    }

    int softmax(const std::string& name, int from = -2) {
        return push(base(LayerKind::Softmax, name, from));
    }

    int residual_add(int a, int b, const std::string& name) {
        Layer l = base(LayerKind::ResidualAdd, name, a);
        l.in1 = b;
        return push(std::move(l));
    }

    // depthwise 3x3 -> BN -> ReLU -> pointwise 1x1 -> BN -> ReLU; returns the
    // index of the final ReLU
    int separable_conv(int filters, int k, const std::string& name, int from = -2) {
        depthwise(k, name + ".dw", from);
        batch_norm(name + ".dw_bn");
        relu(name + ".dw_relu");
        pointwise(filters, name + ".pw");
        batch_norm(name + ".pw_bn");
        return relu(name + ".pw_relu");
    }

    Network finish() {
        net_.shape_check();
        return std::move(net_);
    }

private:
    Layer base(LayerKind kind, const std::string& name, int from) {
        Layer l;
        l.kind = kind;
        l.name = name;
        l.in0 = from == -2 ? last_ : from;
        return l;
    }

    Dim in_dim(int idx) const {
        if (idx < 0) return Dim{net_.input_h, net_.input_w, net_.input_c};
        return dims_.at(static_cast<std::size_t>(idx));
    }

    int push(Layer l) {
        // track dims incrementally so later adds can size their params
        const Dim a = in_dim(l.in0);
        Dim d = a;
        switch (l.kind) {
            case LayerKind::Conv2D:
            case LayerKind::PointwiseConv2D:
                d.h = conv_out_extent(a.h, l.kh, l.stride, l.padding);
                d.w = conv_out_extent(a.w, l.kw, l.stride, l.padding);
                d.c = l.filters;
                break;
            case LayerKind::DepthwiseConv2D:
            case LayerKind::MaxPool2D:
                d.h = conv_out_extent(a.h, l.kh, l.stride, l.padding);
                d.w = conv_out_extent(a.w, l.kw, l.stride, l.padding);
                break;
            case LayerKind::GlobalAveragePool:
                d = Dim{1, 1, a.c};
                break;
            case LayerKind::Dense:
                d = Dim{1, 1, l.filters};
                break;
            default:
                break;
        }
        net_.layers.push_back(std::move(l));
        dims_.push_back(d);
        last_ = static_cast<int>(net_.layers.size()) - 1;
        return last_;
    }

    Network net_;
    std::vector<Dim> dims_;
    int last_ = -1;
};

// Fan-in scaled uniform init, seeded; biases zero, batch-norm at identity.
inline void init_parameters(Network& net, std::uint64_t seed) {
    Rng rng(seed);
    net.rng_seed = seed;
    for (auto& l : net.layers) {
        if (l.weight.empty()) continue;
        std::size_t fan_in = 0;
        switch (l.kind) {
            case LayerKind::Conv2D:
            case LayerKind::PointwiseConv2D:
                fan_in = l.weight.size() / static_cast<std::size_t>(l.filters);
                break;
            case LayerKind::DepthwiseConv2D:
                fan_in = static_cast<std::size_t>(l.kh) * l.kw;
                break;
            case LayerKind::Dense:
                fan_in = l.weight.size() / static_cast<std::size_t>(l.filters);
                break;
            default:
                fan_in = l.weight.size();
                break;
        }
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (double& w : l.weight) w = rng.uniform(-limit, limit);
    }
}

// ---------- forward / backward ----------

enum class NetMode { Train, Infer };

struct ForwardPass {
    Tensor input;
    std::vector<Tensor> outs;
    std::vector<BatchNormCache> bn_cache;
    std::vector<std::vector<std::size_t>> pool_argmax;

    Tensor logits;  // pre-softmax dense output [N,1,1,classes]
    Tensor probs;   // softmax output

    const Tensor& out_of(int idx) const {
        return idx < 0 ? input : outs[static_cast<std::size_t>(idx)];
    }

    // activation capture for explainability / embeddings
    std::map<std::string, const Tensor*> captured(const Network& net) const {
        std::map<std::string, const Tensor*> m;
        if (net.gradcam_layer >= 0) m["gradcam_activation"] = &outs[static_cast<std::size_t>(net.gradcam_layer)];
        if (net.feature_layer >= 0) m["features"] = &outs[static_cast<std::size_t>(net.feature_layer)];
        return m;
    }
};

inline ForwardPass forward(const Network& net, const Tensor& x, NetMode mode, int threads = 1) {
    if (x.h != net.input_h || x.w != net.input_w || x.c != net.input_c) {
        throw DataError("forward: input shape " + x.shape_str() + " does not match network input [" +
                        std::to_string(net.input_h) + "," + std::to_string(net.input_w) + "," +
                        std::to_string(net.input_c) + "]");
    }
    x.ensure_finite("network input");

    ForwardPass fp;
    fp.input = x;
    fp.outs.resize(net.layers.size());
    fp.bn_cache.resize(net.layers.size());
    fp.pool_argmax.resize(net.layers.size());

    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const Layer& l = net.layers[i];
        const Tensor& a = fp.out_of(l.in0);
        switch (l.kind) {
            case LayerKind::Conv2D:
            case LayerKind::PointwiseConv2D:
                fp.outs[i] = conv2d_forward(a, l.weight, l.bias, l.kh, l.kw, l.stride, l.padding,
                                            l.filters, threads);
                break;
            case LayerKind::DepthwiseConv2D:
                fp.outs[i] = depthwise_forward(a, l.weight, l.bias, l.kh, l.kw, l.stride,
                                               l.padding, threads);
                break;
            case LayerKind::BatchNorm:
                fp.outs[i] = batchnorm_forward(a, l.gamma, l.beta, l.run_mean, l.run_var,
                                               mode == NetMode::Train, &fp.bn_cache[i], threads);
                break;
            case LayerKind::ReLU:
                fp.outs[i] = relu_forward(a);
                break;
            case LayerKind::MaxPool2D:
                fp.outs[i] = maxpool_forward(a, l.kh, l.kw, l.stride, l.padding, fp.pool_argmax[i],
                                             threads);
                break;
            case LayerKind::GlobalAveragePool:
                fp.outs[i] = gap_forward(a);
                break;
            case LayerKind::Dense:
                fp.outs[i] = dense_forward(a, l.weight, l.filters);
                break;
            case LayerKind::Softmax:
                fp.outs[i] = softmax_forward(a);
                break;
            case LayerKind::ResidualAdd: {
                const Tensor& b2 = fp.out_of(l.in1);
                if (!a.same_shape(b2)) {
                    throw DataError("residual add " + l.name + ": shapes differ at runtime");
                }
                fp.outs[i] = a;
                for (std::size_t j = 0; j < fp.outs[i].data.size(); ++j) fp.outs[i].data[j] += b2.data[j];
                break;
            }
        }
        fp.outs[i].ensure_finite(l.name.c_str());
    }

    if (net.logits_layer >= 0) fp.logits = fp.outs[static_cast<std::size_t>(net.logits_layer)];
    if (net.softmax_layer >= 0) fp.probs = fp.outs[static_cast<std::size_t>(net.softmax_layer)];
    return fp;
}

struct ParamGrads {
    std::vector<double> weight, bias, gamma, beta;
};

struct BackwardPass {
    std::vector<Tensor> act_grads;        // d(target)/d(layer output)
    std::vector<ParamGrads> param_grads;  // empty vectors where not applicable
    Tensor input_grad;
};

// Seeds the gradient at `seed_layer` (default: logits) and propagates to the
// input. `need_param_grads` is off for explanation-only passes.
inline BackwardPass backward(const Network& net, const ForwardPass& fp, const Tensor& seed_grad,
                             NetMode mode, int threads = 1, bool need_param_grads = true,
                             int seed_layer = -2) {
    if (seed_layer == -2) seed_layer = net.logits_layer;
    if (seed_layer < 0) throw DataError("backward: no seed layer");

    BackwardPass bp;
    bp.act_grads.resize(net.layers.size());
    bp.param_grads.resize(net.layers.size());
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const Tensor& o = fp.outs[i];
        bp.act_grads[i] = Tensor(o.n, o.h, o.w, o.c);
        if (need_param_grads) {
            auto& pg = bp.param_grads[i];
            const Layer& l = net.layers[i];
            pg.weight.assign(l.weight.size(), 0.0);
            pg.bias.assign(l.bias.size(), 0.0);
            pg.gamma.assign(l.gamma.size(), 0.0);
            pg.beta.assign(l.beta.size(), 0.0);
        }
    }
    bp.input_grad = Tensor(fp.input.n, fp.input.h, fp.input.w, fp.input.c);
    if (!seed_grad.same_shape(fp.outs[static_cast<std::size_t>(seed_layer)])) {
        throw DataError("backward: seed gradient shape mismatch");
    }
    bp.act_grads[static_cast<std::size_t>(seed_layer)] = seed_grad;

    auto grad_of = [&](int idx) -> Tensor& {
        return idx < 0 ? bp.input_grad : bp.act_grads[static_cast<std::size_t>(idx)];
    };

    for (int i = seed_layer; i >= 0; --i) {
        const Layer& l = net.layers[static_cast<std::size_t>(i)];
        const Tensor& gout = bp.act_grads[static_cast<std::size_t>(i)];
        const Tensor& a = fp.out_of(l.in0);
        Tensor& gin = grad_of(l.in0);
        ParamGrads& pg = bp.param_grads[static_cast<std::size_t>(i)];
        switch (l.kind) {
            case LayerKind::Conv2D:
            case LayerKind::PointwiseConv2D:
                conv2d_backward(a, gout, l.weight, l.kh, l.kw, l.stride, l.padding, l.filters,
                                threads, gin, need_param_grads ? &pg.weight : nullptr,
                                need_param_grads ? &pg.bias : nullptr);
                break;
            case LayerKind::DepthwiseConv2D:
                depthwise_backward(a, gout, l.weight, l.kh, l.kw, l.stride, l.padding, threads,
                                   gin, need_param_grads ? &pg.weight : nullptr,
                                   need_param_grads ? &pg.bias : nullptr);
                break;
            case LayerKind::BatchNorm:
                batchnorm_backward(a, gout, l.gamma, l.run_mean, l.run_var,
                                   mode == NetMode::Train, fp.bn_cache[static_cast<std::size_t>(i)],
                                   threads, gin, need_param_grads ? &pg.gamma : nullptr,
                                   need_param_grads ? &pg.beta : nullptr);
                break;
            case LayerKind::ReLU:
                relu_backward(a, gout, gin);
                break;
            case LayerKind::MaxPool2D:
                maxpool_backward(gout, fp.pool_argmax[static_cast<std::size_t>(i)], gin, threads);
                break;
            case LayerKind::GlobalAveragePool:
                gap_backward(a, gout, gin);
                break;
            case LayerKind::Dense:
                dense_backward(a, gout, l.weight, l.filters, gin,
                               need_param_grads ? &pg.weight : nullptr);
                break;
            case LayerKind::Softmax:
                softmax_backward(fp.outs[static_cast<std::size_t>(i)], gout, gin);
                break;
            case LayerKind::ResidualAdd: {
                Tensor& gin1 = grad_of(l.in1);
                for (std::size_t j = 0; j < gout.data.size(); ++j) {
                    gin.data[j] += gout.data[j];
                    gin1.data[j] += gout.data[j];
                }
                break;
            }
        }
        gout.ensure_finite((l.name + " gradient").c_str());
    }
    return bp;
}

// S_c = sum_i O_i * W[i][c], the pre-softmax class score.
inline double class_score(const std::vector<double>& features,
                          const std::vector<double>& dense_weight, int n_classes,
                          int class_index) {
    if (class_index < 0 || class_index >= n_classes) {
        throw DataError("class_score: class index out of range");
    }
    if (dense_weight.size() != features.size() * static_cast<std::size_t>(n_classes)) {
        throw DataError("class_score: feature/weight size mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        acc += features[i] * dense_weight[i * static_cast<std::size_t>(n_classes) +
                                          static_cast<std::size_t>(class_index)];
    }
    return acc;
}

// ---------- alpha-channel removal ----------

enum class AlphaMode {
    AsPrinted,           // C' = C + (1 - C) * A  (the source formula)
    CompositeOverWhite,  // C' = C * A + (1 - A)
};

inline const char* alpha_mode_name(AlphaMode m) {
    return m == AlphaMode::AsPrinted ? "as_printed" : "composite_over_white";
}

inline AlphaMode alpha_mode_from_name(const std::string& s) {
    if (s == "as_printed") return AlphaMode::AsPrinted;
    if (s == "composite_over_white") return AlphaMode::CompositeOverWhite;
    throw DataError("unknown alpha mode: " + s);
}

inline FeatureImage strip_alpha(const FeatureImage& img, AlphaMode mode = AlphaMode::AsPrinted) {
    if (img.channels != 4) throw DataError("strip_alpha: image must have 4 channels");
    FeatureImage out = FeatureImage::filled(img.height, img.width, 3, 0.0, img.provenance);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double a = img.at(y, x, 3);
            for (int c = 0; c < 3; ++c) {
                const double v = img.at(y, x, c);
                out.at(y, x, c) = mode == AlphaMode::AsPrinted ? v + (1.0 - v) * a
                                                               : v * a + (1.0 - a);
            }
        }
    }
    return out;
}

// Image -> network input tensor, stripping alpha and resizing when needed.
inline Tensor image_to_input(const Network& net, const FeatureImage& img, AlphaMode mode) {
    FeatureImage rgb = img.channels == 4 ? strip_alpha(img, mode) : img;
    if (rgb.channels != net.input_c) {
        throw DataError("image has " + std::to_string(rgb.channels) + " channels, network wants " +
                        std::to_string(net.input_c));
    }
    if (rgb.height != net.input_h || rgb.width != net.input_w) {
        rgb = resize_image(rgb, net.input_h, net.input_w);
    }
    Tensor t(1, net.input_h, net.input_w, net.input_c);
    t.data = rgb.pixels;
    return t;
}

// ---------- CustomNet ----------

// Entry flow (3x3 stride-2 conv to 32, 3x3 conv to 64), num_middle_blocks
// residual blocks of three 128-filter separable convs, and an exit flow with
// a 1024-filter strided residual, 256- and 728-filter separable pairs, and
// two pooling/junction stages. 1x1 projection convs are inserted on residual
// branches wherever the joined shapes disagree. Input is square; 244 is the
// published size, smaller sizes train faster at desk scale.
inline Network build_custnet(int input_size = 244, int n_classes = 2, int num_middle_blocks = 4,
                             std::uint64_t seed = 0) {
    if (input_size < 16) throw DataError("build_custnet: input size must be >= 16");
    if (num_middle_blocks < 1) throw DataError("build_custnet: need at least one middle block");
    if (n_classes < 2) throw DataError("build_custnet: need at least two classes");

    NetworkBuilder b(input_size, input_size, 3, n_classes, seed);

    // entry flow
    b.conv(32, 3, 2, Padding::Same, "entry.conv1");
    b.batch_norm("entry.bn1");
    b.relu("entry.relu1");
    b.conv(64, 3, 1, Padding::Same, "entry.conv2");
    b.batch_norm("entry.bn2");
    b.relu("entry.relu2");

    // middle flow
    for (int blk = 0; blk < num_middle_blocks; ++blk) {
        const std::string p = "middle" + std::to_string(blk + 1);
        const int residual = b.last();
        b.separable_conv(128, 3, p + ".sep1");
        b.separable_conv(128, 3, p + ".sep2");
        const int body = b.separable_conv(128, 3, p + ".sep3");
        int res_in = residual;
        if (b.channels_of(residual) != 128) {
            res_in = b.pointwise(128, p + ".proj", residual);
        }
        b.residual_add(body, res_in, p + ".add");
    }

    // exit flow
    const int pre_exit = b.last();
    b.conv(1024, 1, 2, Padding::Same, "exit.res_conv", pre_exit);
    const int exit_residual = b.batch_norm("exit.res_bn");

    b.separable_conv(256, 3, "exit.sep1", pre_exit);
    b.separable_conv(256, 3, "exit.sep2");
    const int pooled1 = b.max_pool(3, 2, "exit.pool1");
    const int proj1 = b.pointwise(256, "exit.proj1", exit_residual);
    b.residual_add(pooled1, proj1, "exit.add1");

    b.separable_conv(728, 3, "exit.sep3");
    const int last_sep = b.separable_conv(728, 3, "exit.sep4");
    const int pooled2 = b.max_pool(3, 2, "exit.pool2");
    const int proj2 = b.conv(728, 1, 2, Padding::Same, "exit.proj2", exit_residual);
    b.residual_add(pooled2, proj2, "exit.add2");

    const int gap = b.global_average_pool("head.gap");
    const int logits = b.dense(n_classes, "head.dense");
    const int sm = b.softmax("head.softmax");

    Network net = b.finish();
    net.gradcam_layer = last_sep;
    net.feature_layer = gap;
    net.logits_layer = logits;
    net.softmax_layer = sm;
    init_parameters(net, seed);
    return net;
}

// ---------- training ----------

enum class Optimizer { SGD, SGDMomentum, Adam };

inline const char* optimizer_name(Optimizer o) {
    switch (o) {
        case Optimizer::SGD: return "sgd";
        case Optimizer::SGDMomentum: return "sgd_momentum";
        default: return "adam";
    }
}

inline Optimizer optimizer_from_name(const std::string& s) {
    if (s == "sgd") return Optimizer::SGD;
    if (s == "sgd_momentum") return Optimizer::SGDMomentum;
    if (s == "adam") return Optimizer::Adam;
    throw DataError("unknown optimizer: " + s);
}

struct TrainConfig {
    int epochs = 30;
    int batch_size = 16;
    double learning_rate = 1e-3;
    Optimizer optimizer = Optimizer::Adam;
    std::uint64_t seed = 0;
    double train_fraction = 0.8;
    int threads = 1;
    AlphaMode alpha_mode = AlphaMode::AsPrinted;

    void validate() const {
        if (epochs <= 0 || batch_size <= 0) throw DataError("train: epochs and batch_size must be > 0");
        if (learning_rate < 0) throw DataError("train: learning_rate must be >= 0");
        if (!(train_fraction > 0 && train_fraction < 1)) {
            throw DataError("train: train_fraction must be in (0, 1)");
        }
    }
};

struct TrainHistory {
    std::vector<double> train_loss, train_acc, val_loss, val_acc;
};

struct LabeledImage {
    FeatureImage image;
    Label label = Label::Unknown;
    std::string id;
};

// Deterministic stratified split: per class, round(fraction * n) go to
// train after a seeded shuffle. Starvation (a class missing from either
// side, or fewer than 2 training examples of a class) is an error.
inline void stratified_split(std::size_t n_items, const std::vector<Label>& labels,
                             double fraction, std::uint64_t seed, std::vector<std::size_t>& train,
                             std::vector<std::size_t>& val) {
    train.clear();
    val.clear();
    for (Label cls : {Label::HC, Label::PD}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < n_items; ++i) {
            if (labels[i] == cls) idx.push_back(i);
        }
        if (idx.empty()) throw DataError(std::string("dataset has no ") + label_name(cls) + " examples");
        Rng rng(seed ^ fnv1a64(label_name(cls)));
        rng.shuffle(idx);
        const auto n_train = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(idx.size())));
        if (n_train < 2 || n_train >= idx.size()) {
            throw DataError(std::string("class starvation after split: ") + label_name(cls) +
                            " would have " + std::to_string(n_train) + " train / " +
                            std::to_string(idx.size() - n_train) + " val examples");
        }
        train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
        val.insert(val.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
}

namespace detail {

struct EvalStats {
    double loss = 0.0;
    double acc = 0.0;
};

inline Tensor gather_batch(const std::vector<Tensor>& inputs, const std::vector<std::size_t>& order,
                           std::size_t lo, std::size_t hi) {
    const Tensor& first = inputs[order[lo]];
    Tensor batch(static_cast<int>(hi - lo), first.h, first.w, first.c);
    const std::size_t per = first.numel();
    for (std::size_t i = lo; i < hi; ++i) {
        std::memcpy(&batch.data[(i - lo) * per], inputs[order[i]].data.data(), per * sizeof(double));
    }
    return batch;
}

}  // namespace detail

// Seeded, single-schedule training. Intra-batch parallelism only splits
// element-wise loops, so the result is identical for any thread count.
inline TrainHistory train(Network& net, const std::vector<LabeledImage>& images,
                          const TrainConfig& cfg, std::vector<std::size_t>* train_out = nullptr,
                          std::vector<std::size_t>* val_out = nullptr) {
    cfg.validate();
    if (images.size() < 4) throw DataError("train: need at least 4 examples");

    std::vector<Label> labels;
    labels.reserve(images.size());
    std::vector<Tensor> inputs;
    inputs.reserve(images.size());
    for (const auto& li : images) {
        if (li.label != Label::PD && li.label != Label::HC) {
            throw DataError("train: labels must be PD or HC (" + li.id + ")");
        }
        labels.push_back(li.label);
        Tensor t = image_to_input(net, li.image, cfg.alpha_mode);
        inputs.push_back(std::move(t));
    }

    std::vector<std::size_t> train_idx, val_idx;
    stratified_split(images.size(), labels, cfg.train_fraction, cfg.seed, train_idx, val_idx);
    if (train_out) *train_out = train_idx;
    if (val_out) *val_out = val_idx;

    // flat parameter/optimizer-state view
    std::vector<std::vector<double>*> params;
    for (auto& l : net.layers) {
        for (auto* p : {&l.weight, &l.bias, &l.gamma, &l.beta}) {
            if (!p->empty()) params.push_back(p);
        }
    }
    std::vector<std::vector<double>> adam_m, adam_v, momentum;
    if (cfg.optimizer == Optimizer::Adam) {
        for (auto* p : params) {
            adam_m.emplace_back(p->size(), 0.0);
            adam_v.emplace_back(p->size(), 0.0);
        }
    } else if (cfg.optimizer == Optimizer::SGDMomentum) {
        for (auto* p : params) momentum.emplace_back(p->size(), 0.0);
    }
    long long adam_t = 0;

    auto collect_grads = [&](const BackwardPass& bp, std::vector<const std::vector<double>*>& out) {
        out.clear();
        for (std::size_t i = 0; i < net.layers.size(); ++i) {
            const Layer& l = net.layers[i];
            const ParamGrads& pg = bp.param_grads[i];
            if (!l.weight.empty()) out.push_back(&pg.weight);
            if (!l.bias.empty()) out.push_back(&pg.bias);
            if (!l.gamma.empty()) out.push_back(&pg.gamma);
            if (!l.beta.empty()) out.push_back(&pg.beta);
        }
    };

    auto apply_update = [&](const std::vector<const std::vector<double>*>& grads) {
        const double lr = cfg.learning_rate;
        switch (cfg.optimizer) {
            case Optimizer::SGD:
                for (std::size_t p = 0; p < params.size(); ++p) {
                    auto& w = *params[p];
                    const auto& g = *grads[p];
                    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * g[j];
                }
                break;
            case Optimizer::SGDMomentum:
                for (std::size_t p = 0; p < params.size(); ++p) {
                    auto& w = *params[p];
                    auto& mv = momentum[p];
                    const auto& g = *grads[p];
                    for (std::size_t j = 0; j < w.size(); ++j) {
                        mv[j] = 0.9 * mv[j] + g[j];
                        w[j] -= lr * mv[j];
                    }
                }
                break;
            case Optimizer::Adam: {
                ++adam_t;
                const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
                const double bc1 = 1.0 - std::pow(b1, static_cast<double>(adam_t));
                const double bc2 = 1.0 - std::pow(b2, static_cast<double>(adam_t));
                for (std::size_t p = 0; p < params.size(); ++p) {
                    auto& w = *params[p];
                    auto& m = adam_m[p];
                    auto& v = adam_v[p];
                    const auto& g = *grads[p];
                    for (std::size_t j = 0; j < w.size(); ++j) {
                        m[j] = b1 * m[j] + (1 - b1) * g[j];
                        v[j] = b2 * v[j] + (1 - b2) * g[j] * g[j];
                        w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
                    }
                }
                break;
            }
        }
    };

    auto evaluate_split = [&](const std::vector<std::size_t>& idx) {
        detail::EvalStats st;
        std::size_t correct = 0;
        for (std::size_t chunk = 0; chunk < idx.size(); chunk += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t hi = std::min(idx.size(), chunk + static_cast<std::size_t>(cfg.batch_size));
            Tensor batch = detail::gather_batch(inputs, idx, chunk, hi);
            ForwardPass fp = forward(net, batch, NetMode::Infer, cfg.threads);
            for (std::size_t i = chunk; i < hi; ++i) {
                const int row = static_cast<int>(i - chunk);
                const int truth = labels[idx[i]] == Label::PD ? 1 : 0;
                const double p = std::max(fp.probs.at(row, 0, 0, truth), 1e-300);
                st.loss += -std::log(p);
                int arg = 0;
                for (int k = 1; k < net.n_classes; ++k) {
                    if (fp.probs.at(row, 0, 0, k) > fp.probs.at(row, 0, 0, arg)) arg = k;
                }
                if (arg == truth) ++correct;
            }
        }
        st.loss /= static_cast<double>(idx.size());
        st.acc = static_cast<double>(correct) / static_cast<double>(idx.size());
        return st;
    };

    TrainHistory hist;
    std::vector<const std::vector<double>*> grad_ptrs;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order = train_idx;
        Rng shuffler(cfg.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(epoch) + 1);
        shuffler.shuffle(order);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t chunk = 0; chunk < order.size(); chunk += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t hi = std::min(order.size(), chunk + static_cast<std::size_t>(cfg.batch_size));
            const int bn = static_cast<int>(hi - chunk);
            Tensor batch = detail::gather_batch(inputs, order, chunk, hi);
            ForwardPass fp = forward(net, batch, NetMode::Train, cfg.threads);

            // fold this batch's statistics into the running averages
            for (std::size_t i = 0; i < net.layers.size(); ++i) {
                Layer& l = net.layers[i];
                if (l.kind != LayerKind::BatchNorm) continue;
                const auto& cache = fp.bn_cache[i];
                for (std::size_t ch = 0; ch < l.run_mean.size(); ++ch) {
                    l.run_mean[ch] = kBatchNormMomentum * l.run_mean[ch] +
                                     (1.0 - kBatchNormMomentum) * cache.mean[ch];
                    l.run_var[ch] = kBatchNormMomentum * l.run_var[ch] +
                                    (1.0 - kBatchNormMomentum) * cache.var[ch];
                }
            }

            // mean softmax cross-entropy; gradient seeded at the logits
            Tensor dlogits(bn, 1, 1, net.n_classes);
            double batch_loss = 0.0;
            for (int row = 0; row < bn; ++row) {
                const int truth = labels[order[chunk + static_cast<std::size_t>(row)]] == Label::PD ? 1 : 0;
                const double p = std::max(fp.probs.at(row, 0, 0, truth), 1e-300);
                batch_loss += -std::log(p);
                for (int k = 0; k < net.n_classes; ++k) {
                    dlogits.at(row, 0, 0, k) =
                        (fp.probs.at(row, 0, 0, k) - (k == truth ? 1.0 : 0.0)) / bn;
                }
                int arg = 0;
                for (int k = 1; k < net.n_classes; ++k) {
                    if (fp.probs.at(row, 0, 0, k) > fp.probs.at(row, 0, 0, arg)) arg = k;
                }
                if (arg == truth) ++correct;
            }
            batch_loss /= bn;
            if (!std::isfinite(batch_loss)) {
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                   ", batch starting " + std::to_string(chunk));
            }
            loss_sum += batch_loss * bn;

            BackwardPass bp = backward(net, fp, dlogits, NetMode::Train, cfg.threads, true);
            collect_grads(bp, grad_ptrs);
            apply_update(grad_ptrs);
        }

        hist.train_loss.push_back(loss_sum / static_cast<double>(order.size()));
        hist.train_acc.push_back(static_cast<double>(correct) / static_cast<double>(order.size()));
        const auto val = evaluate_split(val_idx);
        hist.val_loss.push_back(val.loss);
        hist.val_acc.push_back(val.acc);
    }
    return hist;
}

// ---------- checkpoint ----------

constexpr char kCheckpointMagic[9] = "CNGCCKPT";

inline std::string serialize_checkpoint(const Network& net, const std::string& config_hash) {
    nlohmann::json j;
    j["schema"] = "custnetgc-checkpoint/1";
    j["input"] = {net.input_h, net.input_w, net.input_c};
    j["n_classes"] = net.n_classes;
    j["seed"] = net.rng_seed;
    j["config_hash"] = config_hash;
    j["gradcam_layer"] = net.gradcam_layer;
    j["feature_layer"] = net.feature_layer;
    j["logits_layer"] = net.logits_layer;
    j["softmax_layer"] = net.softmax_layer;
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : net.layers) {
        nlohmann::json lj;
        lj["kind"] = layer_kind_name(l.kind);
        lj["name"] = l.name;
        lj["in0"] = l.in0;
        lj["in1"] = l.in1;
        lj["kh"] = l.kh;
        lj["kw"] = l.kw;
        lj["stride"] = l.stride;
        lj["padding"] = l.padding == Padding::Same ? "same" : "valid";
        lj["filters"] = l.filters;
        lj["sizes"] = {l.weight.size(), l.bias.size(), l.gamma.size(), l.beta.size(),
                       l.run_mean.size(), l.run_var.size()};
        layers.push_back(std::move(lj));
    }
    j["layers"] = std::move(layers);

    const std::string header = j.dump();
    std::string out(kCheckpointMagic, 8);
    const auto put_u64 = [&out](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    };
    put_u64(1);  // version
    put_u64(header.size());
    out += header;
    const auto put_doubles = [&out](const std::vector<double>& v) {
        const std::size_t at = out.size();
        out.resize(at + v.size() * sizeof(double));
        std::memcpy(out.data() + at, v.data(), v.size() * sizeof(double));
    };
    for (const auto& l : net.layers) {
        put_doubles(l.weight);
        put_doubles(l.bias);
        put_doubles(l.gamma);
        put_doubles(l.beta);
        put_doubles(l.run_mean);
        put_doubles(l.run_var);
    }
    return out;
}

inline void save_checkpoint(const Network& net, const std::string& path,
                            const std::string& config_hash) {
    const std::string bytes = serialize_checkpoint(net, config_hash);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write checkpoint: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("short write to " + path);
}

// Stable identity of a parameter set, used to pair boost models with the
// network they were trained against.
inline std::string network_hash(const Network& net) {
    const std::string bytes = serialize_checkpoint(net, "");
    return hash_hex(fnv1a64(bytes.data(), bytes.size()));
}

struct LoadedCheckpoint {
    Network net;
    std::string config_hash;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 24 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
        throw DataError("not a checkpoint file: " + path);
    }
    const auto get_u64 = [&bytes](std::size_t at) {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + static_cast<std::size_t>(i)])) << (8 * i);
        return v;
    };
    if (get_u64(8) != 1) throw DataError("unsupported checkpoint version in " + path);
    const std::uint64_t hlen = get_u64(16);
    if (24 + hlen > bytes.size()) throw DataError("truncated checkpoint: " + path);
    nlohmann::json j = nlohmann::json::parse(bytes.substr(24, hlen));

    LoadedCheckpoint lc;
    Network& net = lc.net;
    lc.config_hash = j.at("config_hash").get<std::string>();
    net.input_h = j.at("input")[0].get<int>();
    net.input_w = j.at("input")[1].get<int>();
    net.input_c = j.at("input")[2].get<int>();
    net.n_classes = j.at("n_classes").get<int>();
    net.rng_seed = j.at("seed").get<std::uint64_t>();
    net.gradcam_layer = j.at("gradcam_layer").get<int>();
    net.feature_layer = j.at("feature_layer").get<int>();
    net.logits_layer = j.at("logits_layer").get<int>();
    net.softmax_layer = j.at("softmax_layer").get<int>();

    std::size_t at = 24 + hlen;
    const auto get_doubles = [&](std::vector<double>& v, std::size_t count) {
        if (at + count * sizeof(double) > bytes.size()) {
            throw DataError("truncated checkpoint tensors: " + path);
        }
        v.resize(count);
        std::memcpy(v.data(), bytes.data() + at, count * sizeof(double));
        at += count * sizeof(double);
    };
    for (const auto& lj : j.at("layers")) {
        Layer l;
        l.kind = layer_kind_from_name(lj.at("kind").get<std::string>());
        l.name = lj.at("name").get<std::string>();
        l.in0 = lj.at("in0").get<int>();
        l.in1 = lj.at("in1").get<int>();
        l.kh = lj.at("kh").get<int>();
        l.kw = lj.at("kw").get<int>();
        l.stride = lj.at("stride").get<int>();
        l.padding = lj.at("padding").get<std::string>() == "same" ? Padding::Same : Padding::Valid;
        l.filters = lj.at("filters").get<int>();
        const auto& sz = lj.at("sizes");
        get_doubles(l.weight, sz[0].get<std::size_t>());
        get_doubles(l.bias, sz[1].get<std::size_t>());
        get_doubles(l.gamma, sz[2].get<std::size_t>());
        get_doubles(l.beta, sz[3].get<std::size_t>());
        get_doubles(l.run_mean, sz[4].get<std::size_t>());
        get_doubles(l.run_var, sz[5].get<std::size_t>());
        net.layers.push_back(std::move(l));
    }
    net.shape_check();
    return lc;
}

}  // namespace custnetgc
