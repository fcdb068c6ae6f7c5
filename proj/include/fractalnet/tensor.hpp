#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "fractalnet/errors.hpp"
#include "fractalnet/rng.hpp"

namespace fractalnet {

// Dense row-major f32 array with shape metadata.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<float> data;

    Tensor() = default;

    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), 0.0f);
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) n *= d;
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int64_t> s, float v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor randn(std::vector<int64_t> s, Rng& rng, float stddev = 1.0f) {
        Tensor t(std::move(s));
        for (float& x : t.data) x = stddev * rng.normal();
        return t;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    // 4-d accessors (N, C, H, W)
    float& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    const float& at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }

    float& at2(int64_t i, int64_t j) { return data[i * shape[1] + j]; }
    const float& at2(int64_t i, int64_t j) const { return data[i * shape[1] + j]; }
};

inline void require_shape(const Tensor& t, const std::vector<int64_t>& s, const char* what) {
    if (t.shape != s) throw ShapeError(std::string("unexpected shape for ") + what);
}

}  // namespace fractalnet
