#pragma once

// Dense NHWC tensor of doubles. Vector-like quantities use h = w = 1 so a
// single shape covers every layer in the network.

#include <cstddef>
#include <string>
#include <vector>

#include "custnetgc/common.hpp"

namespace custnetgc {

struct Tensor {
    int n = 0, h = 0, w = 0, c = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int n_, int h_, int w_, int c_)
        : n(n_), h(h_), w(w_), c(c_),
          data(static_cast<std::size_t>(n_) * h_ * w_ * c_, 0.0) {}

    std::size_t numel() const { return data.size(); }
    bool empty() const { return data.empty(); }

    std::size_t idx(int in, int iy, int ix, int ic) const {
        return ((static_cast<std::size_t>(in) * h + iy) * w + ix) * c + ic;
    }
    double& at(int in, int iy, int ix, int ic) { return data[idx(in, iy, ix, ic)]; }
    double at(int in, int iy, int ix, int ic) const { return data[idx(in, iy, ix, ic)]; }

    bool same_shape(const Tensor& o) const {
        return n == o.n && h == o.h && w == o.w && c == o.c;
    }

    std::string shape_str() const {
        return "[" + std::to_string(n) + "," + std::to_string(h) + "," + std::to_string(w) +
               "," + std::to_string(c) + "]";
    }

    void ensure_finite(const char* what) const { check_finite(data, what); }
};

}  // namespace custnetgc
