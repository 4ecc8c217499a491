#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "fear/common.hpp"

namespace fear {

// Dense n-dimensional value storage, NCHW layout for 4-d tensors.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> values;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        std::int64_t n = 1;
        for (int d : shape) {
            if (d <= 0) throw ShapeError("tensor dimension must be positive");
            n *= d;
        }
        values.assign(static_cast<std::size_t>(n), T(0));
    }

    Tensor(std::vector<int> s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
        if (static_cast<std::int64_t>(values.size()) != count(shape))
            throw ShapeError("tensor value count does not match shape");
    }

    static std::int64_t count(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    T* data() { return values.data(); }
    const T* data() const { return values.data(); }

    // 4-d accessors (n, c, h, w)
    T& at(int n, int c, int h, int w) {
        return values[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    const T& at(int n, int c, int h, int w) const {
        return values[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    // 2-d accessors (n, k)
    T& at(int n, int k) { return values[static_cast<std::size_t>(n) * shape[1] + k]; }
    const T& at(int n, int k) const { return values[static_cast<std::size_t>(n) * shape[1] + k]; }

    void fill(T v) { std::fill(values.begin(), values.end(), v); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    Tensor zeros_like() const { return Tensor(shape); }
};

// Dot product with four independent accumulators so the reduction
// vectorizes without relaxed floating-point flags. Deterministic.
template <typename T>
T dot_unrolled(const T* a, const T* b, std::size_t n) {
    T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (T v : t.values)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

template <typename T>
std::string shape_str(const Tensor<T>& t) {
    std::string s = "(";
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(t.shape[i]);
    }
    return s + ")";
}

}  // namespace fear
