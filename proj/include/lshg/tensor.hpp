#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lshg/common.hpp"

namespace lshg {

struct Shape4 {
    int64_t n = 0, c = 0, h = 0, w = 0;

    int64_t numel() const { return n * c * h * w; }
    bool operator==(const Shape4&) const = default;
    std::string str() const {
        return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
               std::to_string(w);
    }
};

// Rank-4 array in NCHW layout, w fastest. The one value type every layer
// consumes and produces.
template <typename T>
struct Tensor4 {
    Shape4 shape;
    std::vector<T> data;

    Tensor4() = default;
    explicit Tensor4(Shape4 s) : shape(s), data(static_cast<size_t>(s.numel()), T(0)) {
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
            throw ShapeError("negative dimension in shape " + s.str());
    }
    Tensor4(Shape4 s, std::vector<T> values) : shape(s), data(std::move(values)) {
        if (static_cast<int64_t>(data.size()) != s.numel())
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape " + s.str());
    }

    int64_t numel() const { return shape.numel(); }
    bool empty() const { return data.empty(); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& at(int64_t n, int64_t c, int64_t y, int64_t x) {
        return data[((n * shape.c + c) * shape.h + y) * shape.w + x];
    }
    T at(int64_t n, int64_t c, int64_t y, int64_t x) const {
        return data[((n * shape.c + c) * shape.h + y) * shape.w + x];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(T(0)); }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor4<U> cast() const {
        Tensor4<U> out(shape);
        for (size_t i = 0; i < data.size(); i++) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <typename T>
void check_same_shape(const Tensor4<T>& a, const Tensor4<T>& b, const char* what) {
    if (!(a.shape == b.shape))
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape.str() + " vs " +
                         b.shape.str());
}

template <typename T>
void check_finite(const Tensor4<T>& t, const char* what) {
    if (!t.all_finite()) throw NumericError(std::string(what) + ": non-finite value in tensor");
}

}  // namespace lshg
