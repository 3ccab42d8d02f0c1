#pragma once

#include <type_traits>

// Test-only oracles. The naive convolution here is deliberately the dumbest
// possible implementation and never touches the library's GEMM path.

#include <functional>
#include <vector>

#include "lshg/ops.hpp"
#include "lshg/rng.hpp"

namespace oracle {

template <typename T>
lshg::Tensor4<T> naive_conv2d(const lshg::Tensor4<T>& in, const lshg::ConvSpec& s,
                              const lshg::Tensor4<T>& w,
                              std::type_identity_t<const lshg::Tensor4<T>*> bias = nullptr) {
    const int64_t oh = s.out_dim(in.shape.h);
    const int64_t ow = s.out_dim(in.shape.w);
    lshg::Tensor4<T> out({in.shape.n, s.out_channels, oh, ow});
    const int64_t icg = s.in_channels / s.groups;
    const int64_t ocg = s.out_channels / s.groups;
    for (int64_t b = 0; b < in.shape.n; b++)
        for (int64_t oc = 0; oc < s.out_channels; oc++) {
            const int64_t g = oc / ocg;
            for (int64_t oy = 0; oy < oh; oy++)
                for (int64_t ox = 0; ox < ow; ox++) {
                    T acc = bias ? bias->data[oc] : T(0);
                    for (int64_t ic = 0; ic < icg; ic++)
                        for (int64_t ky = 0; ky < s.kernel; ky++)
                            for (int64_t kx = 0; kx < s.kernel; kx++) {
                                const int64_t iy =
                                    oy * s.stride - s.padding + ky * s.dilation;
                                const int64_t ix =
                                    ox * s.stride - s.padding + kx * s.dilation;
                                if (iy < 0 || iy >= in.shape.h || ix < 0 || ix >= in.shape.w)
                                    continue;
                                acc += in.at(b, g * icg + ic, iy, ix) *
                                       w.at(oc, ic, ky, kx);
                            }
                    out.at(b, oc, oy, ox) = acc;
                }
        }
    return out;
}

template <typename T>
void fill_uniform(lshg::Tensor4<T>& t, lshg::Rng& rng, double lo = -1.0, double hi = 1.0) {
    for (auto& v : t.data) v = T(rng.uniform(lo, hi));
}

inline double rel_err(double a, double b) {
    const double denom = std::max({std::fabs(a), std::fabs(b), 1e-3});
    return std::fabs(a - b) / denom;
}

// Central finite differences of a scalar functional against an analytic
// gradient, h = 1e-5; returns the worst relative error.
inline double fd_check(lshg::Tensor4<double>& x, const std::function<double()>& loss,
                       const lshg::Tensor4<double>& analytic, double h = 1e-5) {
    double worst = 0;
    for (int64_t i = 0; i < x.numel(); i++) {
        const double keep = x.data[i];
        x.data[i] = keep + h;
        const double lp = loss();
        x.data[i] = keep - h;
        const double lm = loss();
        x.data[i] = keep;
        const double fd = (lp - lm) / (2 * h);
        worst = std::max(worst, rel_err(fd, analytic.data[i]));
    }
    return worst;
}

// Weighted-sum readout making any tensor-valued op a scalar functional.
inline double weighted_sum(const lshg::Tensor4<double>& y, const lshg::Tensor4<double>& r) {
    double s = 0;
    for (int64_t i = 0; i < y.numel(); i++) s += y.data[i] * r.data[i];
    return s;
}

}  // namespace oracle
