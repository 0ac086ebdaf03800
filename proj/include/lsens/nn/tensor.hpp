#pragma once

#include <cstddef>
#include <vector>

#include "lsens/common.hpp"

namespace lsens::nn {

// Dense NCHW float tensor. Values are contiguous; plane(i, c) addresses one
// H*W channel plane of one sample.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<float> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          v(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0f) {}

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.n, t.c, t.h, t.w); }

    std::size_t size() const { return v.size(); }
    int plane_size() const { return h * w; }
    bool same_shape(const Tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    float* plane(int i, int ch) {
        return v.data() + (static_cast<std::size_t>(i) * c + ch) * plane_size();
    }
    const float* plane(int i, int ch) const {
        return v.data() + (static_cast<std::size_t>(i) * c + ch) * plane_size();
    }
    // Start of all channel planes of sample i.
    float* sample(int i) {
        return v.data() + static_cast<std::size_t>(i) * c * plane_size();
    }
    const float* sample(int i) const {
        return v.data() + static_cast<std::size_t>(i) * c * plane_size();
    }

    float& at(int i, int ch, int y, int x) {
        return v[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
    }
    float at(int i, int ch, int y, int x) const {
        return v[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
    }
};

// Mirror-without-edge-repeat index fold; valid for any extent >= 1.
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

}  // namespace lsens::nn
