#pragma once

// Layer kernels: forward and backward passes for every layer kind the
// network graph uses. All loops assign each output element to exactly one
// worker (or accumulate in a fixed order), so results do not depend on the
// thread count.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "custnetgc/common.hpp"
#include "custnetgc/tensor.hpp"

namespace custnetgc {

enum class Padding { Same, Valid };

inline int conv_out_extent(int in, int k, int stride, Padding pad) {
    if (pad == Padding::Same) return (in + stride - 1) / stride;
    if (in < k) throw DataError("valid padding: input smaller than kernel");
    return (in - k) / stride + 1;
}

inline int pad_before(int in, int out, int k, int stride, Padding pad) {
    if (pad == Padding::Valid) return 0;
    const int total = std::max((out - 1) * stride + k - in, 0);
    return total / 2;
}

// -------- Conv2D (also used for 1x1 pointwise) --------
// weight layout [kh][kw][cin][cout], bias [cout]

inline Tensor conv2d_forward(const Tensor& in, const std::vector<double>& weight,
                             const std::vector<double>& bias, int kh, int kw, int stride,
                             Padding pad, int cout, int threads) {
    const int oh = conv_out_extent(in.h, kh, stride, pad);
    const int ow = conv_out_extent(in.w, kw, stride, pad);
    const int pb_y = pad_before(in.h, oh, kh, stride, pad);
    const int pb_x = pad_before(in.w, ow, kw, stride, pad);
    Tensor out(in.n, oh, ow, cout);

    parallel_for(static_cast<std::size_t>(in.n) * oh, threads, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> acc(static_cast<std::size_t>(cout));
        for (std::size_t r = lo; r < hi; ++r) {
            const int b = static_cast<int>(r) / oh;
            const int oy = static_cast<int>(r) % oh;
            for (int ox = 0; ox < ow; ++ox) {
                for (int co = 0; co < cout; ++co) acc[static_cast<std::size_t>(co)] = bias[static_cast<std::size_t>(co)];
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy * stride - pb_y + ky;
                    if (iy < 0 || iy >= in.h) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = ox * stride - pb_x + kx;
                        if (ix < 0 || ix >= in.w) continue;
                        const double* src = &in.data[in.idx(b, iy, ix, 0)];
                        const double* wrow =
                            &weight[((static_cast<std::size_t>(ky) * kw + kx) * in.c) * cout];
                        for (int ci = 0; ci < in.c; ++ci) {
                            const double v = src[ci];
                            if (v == 0.0) continue;
                            const double* wc = wrow + static_cast<std::size_t>(ci) * cout;
                            for (int co = 0; co < cout; ++co) acc[static_cast<std::size_t>(co)] += v * wc[co];
                        }
                    }
                }
                double* dst = &out.data[out.idx(b, oy, ox, 0)];
                for (int co = 0; co < cout; ++co) dst[co] = acc[static_cast<std::size_t>(co)];
            }
        }
    });
    return out;
}

inline void conv2d_backward(const Tensor& in, const Tensor& grad_out,
                            const std::vector<double>& weight, int kh, int kw, int stride,
                            Padding pad, int cout, int threads, Tensor& grad_in,
                            std::vector<double>* grad_weight, std::vector<double>* grad_bias) {
    const int oh = grad_out.h, ow = grad_out.w;
    const int pb_y = pad_before(in.h, oh, kh, stride, pad);
    const int pb_x = pad_before(in.w, ow, kw, stride, pad);

    // d input
    parallel_for(static_cast<std::size_t>(in.n) * in.h, threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
            const int b = static_cast<int>(r) / in.h;
            const int iy = static_cast<int>(r) % in.h;
            for (int ix = 0; ix < in.w; ++ix) {
                double* gdst = &grad_in.data[grad_in.idx(b, iy, ix, 0)];
                for (int ky = 0; ky < kh; ++ky) {
                    const int num_y = iy + pb_y - ky;
                    if (num_y < 0 || num_y % stride != 0) continue;
                    const int oy = num_y / stride;
                    if (oy >= oh) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int num_x = ix + pb_x - kx;
                        if (num_x < 0 || num_x % stride != 0) continue;
                        const int ox = num_x / stride;
                        if (ox >= ow) continue;
                        const double* g = &grad_out.data[grad_out.idx(b, oy, ox, 0)];
                        const double* wrow =
                            &weight[((static_cast<std::size_t>(ky) * kw + kx) * in.c) * cout];
                        for (int ci = 0; ci < in.c; ++ci) {
                            const double* wc = wrow + static_cast<std::size_t>(ci) * cout;
                            double acc = 0.0;
                            for (int co = 0; co < cout; ++co) acc += g[co] * wc[co];
                            gdst[ci] += acc;
                        }
                    }
                }
            }
        }
    });

    if (grad_weight) {
        // each worker owns a [cin][cout] slab for its (ky,kx) positions
        parallel_for(static_cast<std::size_t>(kh) * kw, threads, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t kk = lo; kk < hi; ++kk) {
                const int ky = static_cast<int>(kk) / kw;
                const int kx = static_cast<int>(kk) % kw;
                double* wslab = &(*grad_weight)[(kk * in.c) * cout];
                for (int b = 0; b < in.n; ++b) {
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - pb_y + ky;
                        if (iy < 0 || iy >= in.h) continue;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride - pb_x + kx;
                            if (ix < 0 || ix >= in.w) continue;
                            const double* src = &in.data[in.idx(b, iy, ix, 0)];
                            const double* g = &grad_out.data[grad_out.idx(b, oy, ox, 0)];
                            for (int ci = 0; ci < in.c; ++ci) {
                                const double v = src[ci];
                                if (v == 0.0) continue;
                                double* wc = wslab + static_cast<std::size_t>(ci) * cout;
                                for (int co = 0; co < cout; ++co) wc[co] += v * g[co];
                            }
                        }
                    }
                }
            }
        });
    }
    if (grad_bias) {
        for (int b = 0; b < in.n; ++b) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    const double* g = &grad_out.data[grad_out.idx(b, oy, ox, 0)];
                    for (int co = 0; co < cout; ++co) (*grad_bias)[static_cast<std::size_t>(co)] += g[co];
                }
            }
        }
    }
}

// -------- DepthwiseConv2D --------
// weight layout [kh][kw][c], bias [c]; depth multiplier 1

inline Tensor depthwise_forward(const Tensor& in, const std::vector<double>& weight,
                                const std::vector<double>& bias, int kh, int kw, int stride,
                                Padding pad, int threads) {
    const int oh = conv_out_extent(in.h, kh, stride, pad);
    const int ow = conv_out_extent(in.w, kw, stride, pad);
    const int pb_y = pad_before(in.h, oh, kh, stride, pad);
    const int pb_x = pad_before(in.w, ow, kw, stride, pad);
    Tensor out(in.n, oh, ow, in.c);

    parallel_for(static_cast<std::size_t>(in.n) * oh, threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
            const int b = static_cast<int>(r) / oh;
            const int oy = static_cast<int>(r) % oh;
            for (int ox = 0; ox < ow; ++ox) {
                double* dst = &out.data[out.idx(b, oy, ox, 0)];
                for (int ci = 0; ci < in.c; ++ci) dst[ci] = bias[static_cast<std::size_t>(ci)];
                for (int ky = 0; ky < kh; ++ky) {
                    const int iy = oy * stride - pb_y + ky;
                    if (iy < 0 || iy >= in.h) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int ix = ox * stride - pb_x + kx;
                        if (ix < 0 || ix >= in.w) continue;
                        const double* src = &in.data[in.idx(b, iy, ix, 0)];
                        const double* wrow = &weight[(static_cast<std::size_t>(ky) * kw + kx) * in.c];
                        for (int ci = 0; ci < in.c; ++ci) dst[ci] += src[ci] * wrow[ci];
                    }
                }
            }
        }
    });
    return out;
}

inline void depthwise_backward(const Tensor& in, const Tensor& grad_out,
                               const std::vector<double>& weight, int kh, int kw, int stride,
                               Padding pad, int threads, Tensor& grad_in,
                               std::vector<double>* grad_weight, std::vector<double>* grad_bias) {
    const int oh = grad_out.h, ow = grad_out.w;
    const int pb_y = pad_before(in.h, oh, kh, stride, pad);
    const int pb_x = pad_before(in.w, ow, kw, stride, pad);

    parallel_for(static_cast<std::size_t>(in.n) * in.h, threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
            const int b = static_cast<int>(r) / in.h;
            const int iy = static_cast<int>(r) % in.h;
            for (int ix = 0; ix < in.w; ++ix) {
                double* gdst = &grad_in.data[grad_in.idx(b, iy, ix, 0)];
                for (int ky = 0; ky < kh; ++ky) {
                    const int num_y = iy + pb_y - ky;
                    if (num_y < 0 || num_y % stride != 0) continue;
                    const int oy = num_y / stride;
                    if (oy >= oh) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int num_x = ix + pb_x - kx;
                        if (num_x < 0 || num_x % stride != 0) continue;
                        const int ox = num_x / stride;
                        if (ox >= ow) continue;
                        const double* g = &grad_out.data[grad_out.idx(b, oy, ox, 0)];
                        const double* wrow = &weight[(static_cast<std::size_t>(ky) * kw + kx) * in.c];
                        for (int ci = 0; ci < in.c; ++ci) gdst[ci] += g[ci] * wrow[ci];
                    }
                }
            }
        }
    });

    if (grad_weight) {
        parallel_for(static_cast<std::size_t>(kh) * kw, threads, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t kk = lo; kk < hi; ++kk) {
                const int ky = static_cast<int>(kk) / kw;
                const int kx = static_cast<int>(kk) % kw;
                double* wrow = &(*grad_weight)[kk * in.c];
                for (int b = 0; b < in.n; ++b) {
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - pb_y + ky;
                        if (iy < 0 || iy >= in.h) continue;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride - pb_x + kx;
                            if (ix < 0 || ix >= in.w) continue;
                            const double* src = &in.data[in.idx(b, iy, ix, 0)];
                            const double* g = &grad_out.data[grad_out.idx(b, oy, ox, 0)];
                            for (int ci = 0; ci < in.c; ++ci) wrow[ci] += src[ci] * g[ci];
                        }
                    }
                }
            }
        });
    }
    if (grad_bias) {
        for (int b = 0; b < in.n; ++b) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    const double* g = &grad_out.data[grad_out.idx(b, oy, ox, 0)];
                    for (int ci = 0; ci < in.c; ++ci) (*grad_bias)[static_cast<std::size_t>(ci)] += g[ci];
                }
            }
        }
    }
}

// -------- BatchNorm --------
// Training mode normalizes with biased batch statistics per channel and
// stashes them for the backward pass; inference mode uses running averages.
// Epsilon is tiny so that unit variance / zero mean is an identity map to
// within 1e-9.

constexpr double kBatchNormEps = 1e-10;
constexpr double kBatchNormMomentum = 0.9;

struct BatchNormCache {
    std::vector<double> mean, var;
};

inline Tensor batchnorm_forward(const Tensor& in, const std::vector<double>& gamma,
                                const std::vector<double>& beta,
                                const std::vector<double>& run_mean,
                                const std::vector<double>& run_var, bool training,
                                BatchNormCache* cache, int threads) {
    Tensor out(in.n, in.h, in.w, in.c);
    const std::size_t m = static_cast<std::size_t>(in.n) * in.h * in.w;
    const int C = in.c;
    if (training && cache) {
        cache->mean.assign(static_cast<std::size_t>(C), 0.0);
        cache->var.assign(static_cast<std::size_t>(C), 0.0);
    }

    parallel_for(static_cast<std::size_t>(C), threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t ch = lo; ch < hi; ++ch) {
            double mean, var;
            if (training) {
                double sum = 0.0;
                for (std::size_t i = 0; i < m; ++i) sum += in.data[i * C + ch];
                mean = sum / static_cast<double>(m);
                double sq = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double d = in.data[i * C + ch] - mean;
                    sq += d * d;
                }
                var = sq / static_cast<double>(m);
                if (cache) {
                    cache->mean[ch] = mean;
                    cache->var[ch] = var;
                }
            } else {
                mean = run_mean[ch];
                var = run_var[ch];
            }
            const double inv = 1.0 / std::sqrt(var + kBatchNormEps);
            const double g = gamma[ch], b = beta[ch];
            for (std::size_t i = 0; i < m; ++i) {
                out.data[i * C + ch] = g * (in.data[i * C + ch] - mean) * inv + b;
            }
        }
    });
    return out;
}

inline void batchnorm_backward(const Tensor& in, const Tensor& grad_out,
                               const std::vector<double>& gamma,
                               const std::vector<double>& run_mean,
                               const std::vector<double>& run_var, bool training,
                               const BatchNormCache& cache, int threads, Tensor& grad_in,
                               std::vector<double>* grad_gamma, std::vector<double>* grad_beta) {
    const std::size_t m = static_cast<std::size_t>(in.n) * in.h * in.w;
    const int C = in.c;

    parallel_for(static_cast<std::size_t>(C), threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t ch = lo; ch < hi; ++ch) {
            const double mean = training ? cache.mean[ch] : run_mean[ch];
            const double var = training ? cache.var[ch] : run_var[ch];
            const double inv = 1.0 / std::sqrt(var + kBatchNormEps);
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                const double dy = grad_out.data[i * C + ch];
                sum_dy += dy;
                sum_dy_xhat += dy * (in.data[i * C + ch] - mean) * inv;
            }
            if (grad_gamma) (*grad_gamma)[ch] += sum_dy_xhat;
            if (grad_beta) (*grad_beta)[ch] += sum_dy;
            const double g = gamma[ch];
            if (training) {
                const double inv_m = 1.0 / static_cast<double>(m);
                for (std::size_t i = 0; i < m; ++i) {
                    const double dy = grad_out.data[i * C + ch];
                    const double xhat = (in.data[i * C + ch] - mean) * inv;
                    grad_in.data[i * C + ch] +=
                        g * inv * (dy - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat);
                }
            } else {
                for (std::size_t i = 0; i < m; ++i) {
                    grad_in.data[i * C + ch] += g * inv * grad_out.data[i * C + ch];
                }
            }
        }
    });
}

// -------- ReLU --------

inline Tensor relu_forward(const Tensor& in) {
    Tensor out = in;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return out;
}

inline void relu_backward(const Tensor& in, const Tensor& grad_out, Tensor& grad_in) {
    for (std::size_t i = 0; i < in.data.size(); ++i) {
        if (in.data[i] > 0.0) grad_in.data[i] += grad_out.data[i];
    }
}

// -------- MaxPool2D --------
// Same padding pads with -inf; ties go to the first position in scan order.

inline Tensor maxpool_forward(const Tensor& in, int kh, int kw, int stride, Padding pad,
                              std::vector<std::size_t>& argmax, int threads) {
    const int oh = conv_out_extent(in.h, kh, stride, pad);
    const int ow = conv_out_extent(in.w, kw, stride, pad);
    const int pb_y = pad_before(in.h, oh, kh, stride, pad);
    const int pb_x = pad_before(in.w, ow, kw, stride, pad);
    Tensor out(in.n, oh, ow, in.c);
    argmax.assign(out.numel(), 0);

    parallel_for(static_cast<std::size_t>(in.n) * oh, threads, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
            const int b = static_cast<int>(r) / oh;
            const int oy = static_cast<int>(r) % oh;
            for (int ox = 0; ox < ow; ++ox) {
                for (int ci = 0; ci < in.c; ++ci) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_idx = 0;
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride - pb_y + ky;
                        if (iy < 0 || iy >= in.h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride - pb_x + kx;
                            if (ix < 0 || ix >= in.w) continue;
                            const std::size_t src = in.idx(b, iy, ix, ci);
                            if (in.data[src] > best) {
                                best = in.data[src];
                                best_idx = src;
                            }
                        }
                    }
                    const std::size_t dst = out.idx(b, oy, ox, ci);
                    out.data[dst] = best;
                    argmax[dst] = best_idx;
                }
            }
        }
    });
    return out;
}

inline void maxpool_backward(const Tensor& grad_out, const std::vector<std::size_t>& argmax,
                             Tensor& grad_in, int threads) {
    // windows overlap, so scatter per sample to keep additions ordered
    parallel_for(static_cast<std::size_t>(grad_out.n), threads, [&](std::size_t lo, std::size_t hi) {
        const std::size_t per = grad_out.numel() / static_cast<std::size_t>(grad_out.n);
        for (std::size_t b = lo; b < hi; ++b) {
            for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
                grad_in.data[argmax[i]] += grad_out.data[i];
            }
        }
    });
}

// -------- GlobalAveragePool --------

inline Tensor gap_forward(const Tensor& in) {
    Tensor out(in.n, 1, 1, in.c);
    const double inv = 1.0 / (static_cast<double>(in.h) * in.w);
    for (int b = 0; b < in.n; ++b) {
        for (int ci = 0; ci < in.c; ++ci) {
            double acc = 0.0;
            for (int y = 0; y < in.h; ++y) {
                for (int x = 0; x < in.w; ++x) acc += in.at(b, y, x, ci);
            }
            out.at(b, 0, 0, ci) = acc * inv;
        }
    }
    return out;
}

inline void gap_backward(const Tensor& in, const Tensor& grad_out, Tensor& grad_in) {
    const double inv = 1.0 / (static_cast<double>(in.h) * in.w);
    for (int b = 0; b < in.n; ++b) {
        for (int ci = 0; ci < in.c; ++ci) {
            const double g = grad_out.at(b, 0, 0, ci) * inv;
            for (int y = 0; y < in.h; ++y) {
                for (int x = 0; x < in.w; ++x) grad_in.at(b, y, x, ci) += g;
            }
        }
    }
}

// -------- Dense --------
// weight [cin][cout]; bias-free so the class score is exactly the dot
// product of the pooled feature vector with the class column.

inline Tensor dense_forward(const Tensor& in, const std::vector<double>& weight, int cout) {
    Tensor out(in.n, 1, 1, cout);
    const int cin = in.c;
    for (int b = 0; b < in.n; ++b) {
        const double* src = &in.data[in.idx(b, 0, 0, 0)];
        double* dst = &out.data[out.idx(b, 0, 0, 0)];
        for (int ci = 0; ci < cin; ++ci) {
            const double v = src[ci];
            const double* wrow = &weight[static_cast<std::size_t>(ci) * cout];
            for (int co = 0; co < cout; ++co) dst[co] += v * wrow[co];
        }
    }
    return out;
}

inline void dense_backward(const Tensor& in, const Tensor& grad_out,
                           const std::vector<double>& weight, int cout, Tensor& grad_in,
                           std::vector<double>* grad_weight) {
    const int cin = in.c;
    for (int b = 0; b < in.n; ++b) {
        const double* g = &grad_out.data[grad_out.idx(b, 0, 0, 0)];
        const double* src = &in.data[in.idx(b, 0, 0, 0)];
        double* gdst = &grad_in.data[grad_in.idx(b, 0, 0, 0)];
        for (int ci = 0; ci < cin; ++ci) {
            const double* wrow = &weight[static_cast<std::size_t>(ci) * cout];
            double acc = 0.0;
            for (int co = 0; co < cout; ++co) acc += g[co] * wrow[co];
            gdst[ci] += acc;
            if (grad_weight) {
                double* gw = &(*grad_weight)[static_cast<std::size_t>(ci) * cout];
                for (int co = 0; co < cout; ++co) gw[co] += src[ci] * g[co];
            }
        }
    }
}

// -------- Softmax (rowwise over the last axis) --------

inline Tensor softmax_forward(const Tensor& in) {
    Tensor out = in;
    for (int b = 0; b < in.n; ++b) {
        double* row = &out.data[out.idx(b, 0, 0, 0)];
        double mx = row[0];
        for (int k = 1; k < in.c; ++k) mx = std::max(mx, row[k]);
        double sum = 0.0;
        for (int k = 0; k < in.c; ++k) {
            row[k] = std::exp(row[k] - mx);
            sum += row[k];
        }
        for (int k = 0; k < in.c; ++k) row[k] /= sum;
    }
    return out;
}

inline void softmax_backward(const Tensor& out, const Tensor& grad_out, Tensor& grad_in) {
    for (int b = 0; b < out.n; ++b) {
        const double* y = &out.data[out.idx(b, 0, 0, 0)];
        const double* dy = &grad_out.data[grad_out.idx(b, 0, 0, 0)];
        double dot = 0.0;
        for (int k = 0; k < out.c; ++k) dot += dy[k] * y[k];
        double* dx = &grad_in.data[grad_in.idx(b, 0, 0, 0)];
        for (int k = 0; k < out.c; ++k) dx[k] += y[k] * (dy[k] - dot);
    }
}

}  // namespace custnetgc
