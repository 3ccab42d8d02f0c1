#include "lshg/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cstring>
#include <limits>

namespace lshg {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

// Unpacks one (batch, group) input slice into a (icg*k*k) x (out_h*out_w)
// matrix. Out-of-image taps become zeros.
template <typename T>
void im2col(const T* src, int64_t icg, int64_t h, int64_t w, const ConvSpec& s, int64_t out_h,
            int64_t out_w, T* cols) {
    const int64_t p = out_h * out_w;
    for (int64_t c = 0; c < icg; c++) {
        for (int k_y = 0; k_y < s.kernel; k_y++) {
            for (int k_x = 0; k_x < s.kernel; k_x++) {
                T* row = cols + ((c * s.kernel + k_y) * s.kernel + k_x) * p;
                const T* plane = src + c * h * w;
                for (int64_t oy = 0; oy < out_h; oy++) {
                    const int64_t iy = oy * s.stride - s.padding + int64_t(k_y) * s.dilation;
                    T* dst = row + oy * out_w;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + out_w, T(0));
                        continue;
                    }
                    const T* srow = plane + iy * w;
                    const int64_t x0 = int64_t(s.padding) - int64_t(k_x) * s.dilation;
                    for (int64_t ox = 0; ox < out_w; ox++) {
                        const int64_t ix = ox * s.stride - x0;
                        dst[ox] = (ix >= 0 && ix < w) ? srow[ix] : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-add inverse of im2col.
template <typename T>
void col2im_add(const T* cols, int64_t icg, int64_t h, int64_t w, const ConvSpec& s,
                int64_t out_h, int64_t out_w, T* dst) {
    const int64_t p = out_h * out_w;
    for (int64_t c = 0; c < icg; c++) {
        for (int k_y = 0; k_y < s.kernel; k_y++) {
            for (int k_x = 0; k_x < s.kernel; k_x++) {
                const T* row = cols + ((c * s.kernel + k_y) * s.kernel + k_x) * p;
                T* plane = dst + c * h * w;
                for (int64_t oy = 0; oy < out_h; oy++) {
                    const int64_t iy = oy * s.stride - s.padding + int64_t(k_y) * s.dilation;
                    if (iy < 0 || iy >= h) continue;
                    T* drow = plane + iy * w;
                    const T* srow = row + oy * out_w;
                    const int64_t x0 = int64_t(s.padding) - int64_t(k_x) * s.dilation;
                    for (int64_t ox = 0; ox < out_w; ox++) {
                        const int64_t ix = ox * s.stride - x0;
                        if (ix >= 0 && ix < w) drow[ix] += srow[ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void depthwise_forward(const Tensor4<T>& in, const ConvSpec& s, const Tensor4<T>& wt,
                       const Tensor4<T>* bias, Tensor4<T>& out) {
    const int64_t n = in.shape.n, ch = in.shape.c, h = in.shape.h, w = in.shape.w;
    const int64_t oh = out.shape.h, ow = out.shape.w;
    const int64_t k = s.kernel;
#pragma omp parallel for schedule(static)
    for (int64_t nc = 0; nc < n * ch; nc++) {
        const int64_t c = nc % ch;
        const T* src = in.ptr() + nc * h * w;
        const T* kw = wt.ptr() + c * k * k;
        const T b = bias ? bias->data[c] : T(0);
        T* dst = out.ptr() + nc * oh * ow;
        for (int64_t oy = 0; oy < oh; oy++) {
            for (int64_t ox = 0; ox < ow; ox++) {
                T acc = b;
                for (int64_t ky = 0; ky < k; ky++) {
                    const int64_t iy = oy * s.stride - s.padding + ky * s.dilation;
                    if (iy < 0 || iy >= h) continue;
                    for (int64_t kx = 0; kx < k; kx++) {
                        const int64_t ix = ox * s.stride - s.padding + kx * s.dilation;
                        if (ix < 0 || ix >= w) continue;
                        acc += kw[ky * k + kx] * src[iy * w + ix];
                    }
                }
                dst[oy * ow + ox] = acc;
            }
        }
    }
}

template <typename T>
void depthwise_backward(const Tensor4<T>& in, const ConvSpec& s, const Tensor4<T>& wt,
                        const Tensor4<T>& gout, Tensor4<T>& gin, Tensor4<T>& gw) {
    const int64_t n = in.shape.n, ch = in.shape.c, h = in.shape.h, w = in.shape.w;
    const int64_t oh = gout.shape.h, ow = gout.shape.w;
    const int64_t k = s.kernel;
    // per-channel weight grads accumulate over the batch serially
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < ch; c++) {
        T* kg = gw.ptr() + c * k * k;
        const T* kw = wt.ptr() + c * k * k;
        for (int64_t b = 0; b < n; b++) {
            const T* src = in.ptr() + (b * ch + c) * h * w;
            const T* g = gout.ptr() + (b * ch + c) * oh * ow;
            T* gi = gin.ptr() + (b * ch + c) * h * w;
            for (int64_t oy = 0; oy < oh; oy++) {
                for (int64_t ox = 0; ox < ow; ox++) {
                    const T gv = g[oy * ow + ox];
                    if (gv == T(0)) continue;
                    for (int64_t ky = 0; ky < k; ky++) {
                        const int64_t iy = oy * s.stride - s.padding + ky * s.dilation;
                        if (iy < 0 || iy >= h) continue;
                        for (int64_t kx = 0; kx < k; kx++) {
                            const int64_t ix = ox * s.stride - s.padding + kx * s.dilation;
                            if (ix < 0 || ix >= w) continue;
                            kg[ky * k + kx] += gv * src[iy * w + ix];
                            gi[iy * w + ix] += gv * kw[ky * k + kx];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

void ConvSpec::validate() const {
    if (in_channels <= 0 || out_channels <= 0)
        throw ConfigError("conv: channel counts must be positive");
    if (kernel <= 0 || stride <= 0 || dilation <= 0 || groups <= 0)
        throw ConfigError("conv: kernel/stride/dilation/groups must be positive");
    if (padding < 0) throw ConfigError("conv: padding must be non-negative");
    if (in_channels % groups != 0 || out_channels % groups != 0)
        throw ConfigError("conv: channels not divisible by groups (" +
                          std::to_string(in_channels) + "/" + std::to_string(out_channels) +
                          " by " + std::to_string(groups) + ")");
}

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& input, const ConvSpec& spec,
                          const Tensor4<T>& weights, const Tensor4<T>* bias) {
    spec.validate();
    if (input.shape.c != spec.in_channels)
        throw ShapeError("conv2d: input has " + std::to_string(input.shape.c) +
                         " channels, spec expects " + std::to_string(spec.in_channels));
    if (!(weights.shape == spec.weight_shape()))
        throw ShapeError("conv2d: weight shape " + weights.shape.str() + " != expected " +
                         spec.weight_shape().str());
    if (spec.has_bias) {
        if (!bias || bias->numel() != spec.out_channels)
            throw ShapeError("conv2d: bias missing or wrong length");
    }
    const int64_t oh = spec.out_dim(input.shape.h);
    const int64_t ow = spec.out_dim(input.shape.w);
    if (oh < 1 || ow < 1)
        throw GeometryError("conv2d: output dims " + std::to_string(oh) + "x" +
                            std::to_string(ow) + " < 1 for input " + input.shape.str());

    Tensor4<T> out({input.shape.n, spec.out_channels, oh, ow});

    if (spec.is_depthwise()) {
        depthwise_forward(input, spec, weights, spec.has_bias ? bias : nullptr, out);
        return out;
    }

    const int64_t n = input.shape.n, h = input.shape.h, w = input.shape.w;
    const int64_t icg = spec.in_channels / spec.groups;
    const int64_t ocg = spec.out_channels / spec.groups;
    const int64_t kk = int64_t(spec.kernel) * spec.kernel;
    const int64_t kdim = icg * kk;
    const int64_t p = oh * ow;
    const bool plain1x1 = spec.kernel == 1 && spec.stride == 1 && spec.padding == 0;

    std::vector<T> cols;
    if (!plain1x1) cols.resize(size_t(kdim) * p);

    for (int64_t b = 0; b < n; b++) {
        for (int g = 0; g < spec.groups; g++) {
            const T* src = input.ptr() + (b * spec.in_channels + g * icg) * h * w;
            const T* wsrc = weights.ptr() + g * ocg * kdim;
            T* dst = out.ptr() + (b * spec.out_channels + g * ocg) * p;
            CMapRM<T> wmat(wsrc, ocg, kdim);
            MapRM<T> omat(dst, ocg, p);
            if (plain1x1) {
                CMapRM<T> xmat(src, kdim, p);
                omat.noalias() = wmat * xmat;
            } else {
                im2col(src, icg, h, w, spec, oh, ow, cols.data());
                CMapRM<T> xmat(cols.data(), kdim, p);
                omat.noalias() = wmat * xmat;
            }
        }
        if (spec.has_bias) {
            for (int64_t c = 0; c < spec.out_channels; c++) {
                T* dst = out.ptr() + (b * spec.out_channels + c) * p;
                const T bv = bias->data[c];
                for (int64_t i = 0; i < p; i++) dst[i] += bv;
            }
        }
    }
    return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& input, const ConvSpec& spec,
                             const Tensor4<T>& weights, const Tensor4<T>& grad_out) {
    spec.validate();
    const int64_t oh = spec.out_dim(input.shape.h);
    const int64_t ow = spec.out_dim(input.shape.w);
    const Shape4 expect{input.shape.n, spec.out_channels, oh, ow};
    if (!(grad_out.shape == expect))
        throw ShapeError("conv2d_backward: grad_out shape " + grad_out.shape.str() +
                         " != forward output " + expect.str());

    ConvGrads<T> g;
    g.input = Tensor4<T>(input.shape);
    g.weights = Tensor4<T>(weights.shape);
    if (spec.has_bias) {
        g.bias = Tensor4<T>({1, spec.out_channels, 1, 1});
        const int64_t p = oh * ow;
        for (int64_t b = 0; b < input.shape.n; b++)
            for (int64_t c = 0; c < spec.out_channels; c++) {
                const T* src = grad_out.ptr() + (b * spec.out_channels + c) * p;
                T acc = 0;
                for (int64_t i = 0; i < p; i++) acc += src[i];
                g.bias.data[c] += acc;
            }
    }

    if (spec.is_depthwise()) {
        depthwise_backward(input, spec, weights, grad_out, g.input, g.weights);
        return g;
    }

    const int64_t n = input.shape.n, h = input.shape.h, w = input.shape.w;
    const int64_t icg = spec.in_channels / spec.groups;
    const int64_t ocg = spec.out_channels / spec.groups;
    const int64_t kdim = icg * int64_t(spec.kernel) * spec.kernel;
    const int64_t p = oh * ow;
    const bool plain1x1 = spec.kernel == 1 && spec.stride == 1 && spec.padding == 0;

    std::vector<T> cols;
    if (!plain1x1) cols.resize(size_t(kdim) * p);

    for (int64_t b = 0; b < n; b++) {
        for (int g_i = 0; g_i < spec.groups; g_i++) {
            const T* src = input.ptr() + (b * spec.in_channels + g_i * icg) * h * w;
            const T* gsrc = grad_out.ptr() + (b * spec.out_channels + g_i * ocg) * p;
            const T* wsrc = weights.ptr() + g_i * ocg * kdim;
            T* gw = g.weights.ptr() + g_i * ocg * kdim;
            T* gi = g.input.ptr() + (b * spec.in_channels + g_i * icg) * h * w;

            CMapRM<T> gmat(gsrc, ocg, p);
            CMapRM<T> wmat(wsrc, ocg, kdim);
            MapRM<T> gwmat(gw, ocg, kdim);
            if (plain1x1) {
                CMapRM<T> xmat(src, kdim, p);
                gwmat.noalias() += gmat * xmat.transpose();
                MapRM<T> gimat(gi, kdim, p);
                gimat.noalias() = wmat.transpose() * gmat;
            } else {
                im2col(src, icg, h, w, spec, oh, ow, cols.data());
                CMapRM<T> xmat(cols.data(), kdim, p);
                gwmat.noalias() += gmat * xmat.transpose();
                MapRM<T> cmat(cols.data(), kdim, p);
                cmat.noalias() = wmat.transpose() * gmat;
                col2im_add(cols.data(), icg, h, w, spec, oh, ow, gi);
            }
        }
    }
    return g;
}

template <typename T>
PoolResult<T> maxpool2x2_forward(const Tensor4<T>& input) {
    const int64_t h = input.shape.h, w = input.shape.w;
    if (h % 2 != 0 || w % 2 != 0)
        throw GeometryError("maxpool2x2: spatial dims must be even, got " + input.shape.str());
    if (input.numel() > std::numeric_limits<int32_t>::max())
        throw ShapeError("maxpool2x2: tensor too large for int32 argmax indices");

    PoolResult<T> r;
    r.output = Tensor4<T>({input.shape.n, input.shape.c, h / 2, w / 2});
    r.argmax.resize(size_t(r.output.numel()));
    const int64_t nc = input.shape.n * input.shape.c;
    const int64_t oh = h / 2, ow = w / 2;
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < nc; i++) {
        const T* src = input.ptr() + i * h * w;
        T* dst = r.output.ptr() + i * oh * ow;
        int32_t* idx = r.argmax.data() + i * oh * ow;
        const int64_t base = i * h * w;
        for (int64_t oy = 0; oy < oh; oy++) {
            for (int64_t ox = 0; ox < ow; ox++) {
                // row-major scan; strict > keeps the first of any tie
                int64_t best = (2 * oy) * w + 2 * ox;
                T bv = src[best];
                const int64_t cands[3] = {(2 * oy) * w + 2 * ox + 1, (2 * oy + 1) * w + 2 * ox,
                                          (2 * oy + 1) * w + 2 * ox + 1};
                for (int64_t cand : cands) {
                    if (src[cand] > bv) {
                        bv = src[cand];
                        best = cand;
                    }
                }
                dst[oy * ow + ox] = bv;
                idx[oy * ow + ox] = static_cast<int32_t>(base + best);
            }
        }
    }
    return r;
}

template <typename T>
Tensor4<T> maxpool2x2_backward(const std::vector<int32_t>& argmax, Shape4 input_shape,
                               const Tensor4<T>& grad_out) {
    if (static_cast<int64_t>(argmax.size()) != grad_out.numel())
        throw ShapeError("maxpool2x2_backward: argmax/grad_out length mismatch");
    Tensor4<T> gin(input_shape);
    for (size_t i = 0; i < argmax.size(); i++) gin.data[argmax[i]] += grad_out.data[i];
    return gin;
}

template <typename T>
Tensor4<T> upsample_nearest2x_forward(const Tensor4<T>& input) {
    const int64_t h = input.shape.h, w = input.shape.w;
    Tensor4<T> out({input.shape.n, input.shape.c, h * 2, w * 2});
    const int64_t nc = input.shape.n * input.shape.c;
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < nc; i++) {
        const T* src = input.ptr() + i * h * w;
        T* dst = out.ptr() + i * 4 * h * w;
        for (int64_t y = 0; y < h; y++) {
            T* r0 = dst + (2 * y) * 2 * w;
            T* r1 = r0 + 2 * w;
            for (int64_t x = 0; x < w; x++) {
                const T v = src[y * w + x];
                r0[2 * x] = r0[2 * x + 1] = v;
                r1[2 * x] = r1[2 * x + 1] = v;
            }
        }
    }
    return out;
}

template <typename T>
Tensor4<T> upsample_nearest2x_backward(const Tensor4<T>& grad_out) {
    const int64_t h = grad_out.shape.h, w = grad_out.shape.w;
    if (h % 2 != 0 || w % 2 != 0)
        throw GeometryError("upsample_nearest2x_backward: grad dims must be even");
    Tensor4<T> gin({grad_out.shape.n, grad_out.shape.c, h / 2, w / 2});
    const int64_t nc = gin.shape.n * gin.shape.c;
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < nc; i++) {
        const T* src = grad_out.ptr() + i * h * w;
        T* dst = gin.ptr() + i * (h / 2) * (w / 2);
        for (int64_t y = 0; y < h / 2; y++) {
            const T* r0 = src + (2 * y) * w;
            const T* r1 = r0 + w;
            for (int64_t x = 0; x < w / 2; x++)
                dst[y * (w / 2) + x] = r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1];
        }
    }
    return gin;
}

template <typename T>
Tensor4<T> batchnorm_forward(const Tensor4<T>& input, const Tensor4<T>& gamma,
                             const Tensor4<T>& beta, Tensor4<T>& running_mean,
                             Tensor4<T>& running_var, BnMode mode, T momentum, T epsilon,
                             BnCache<T>* cache) {
    const int64_t c = input.shape.c;
    if (gamma.numel() != c || beta.numel() != c)
        throw ShapeError("batchnorm: gamma/beta length != channels");
    if (!(epsilon > T(0))) throw ConfigError("batchnorm: epsilon must be positive");
    const int64_t m = input.shape.n * input.shape.h * input.shape.w;
    if (mode == BnMode::train && m < 2)
        throw StatsError("batchnorm: batch*height*width must be >= 2 in train mode, got " +
                         std::to_string(m));

    Tensor4<T> out(input.shape);
    const int64_t hw = input.shape.h * input.shape.w;
    const int64_t n = input.shape.n;

    std::vector<T> mean(c), invstd(c);
    if (mode == BnMode::train) {
        for (int64_t ch = 0; ch < c; ch++) {
            double sum = 0;
            for (int64_t b = 0; b < n; b++) {
                const T* src = input.ptr() + (b * c + ch) * hw;
                for (int64_t i = 0; i < hw; i++) sum += src[i];
            }
            const double mu = sum / double(m);
            double var = 0;
            for (int64_t b = 0; b < n; b++) {
                const T* src = input.ptr() + (b * c + ch) * hw;
                for (int64_t i = 0; i < hw; i++) {
                    const double d = double(src[i]) - mu;
                    var += d * d;
                }
            }
            const double pop_var = var / double(m);           // normalization
            const double unb_var = var / double(m - 1);       // running stats
            mean[ch] = T(mu);
            invstd[ch] = T(1.0 / std::sqrt(pop_var + double(epsilon)));
            running_mean.data[ch] = (T(1) - momentum) * running_mean.data[ch] + momentum * T(mu);
            running_var.data[ch] =
                (T(1) - momentum) * running_var.data[ch] + momentum * T(unb_var);
        }
    } else {
        for (int64_t ch = 0; ch < c; ch++) {
            mean[ch] = running_mean.data[ch];
            invstd[ch] = T(1.0 / std::sqrt(double(running_var.data[ch]) + double(epsilon)));
        }
    }

#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < n * c; bc++) {
        const int64_t ch = bc % c;
        const T* src = input.ptr() + bc * hw;
        T* dst = out.ptr() + bc * hw;
        const T mu = mean[ch], is = invstd[ch], ga = gamma.data[ch], be = beta.data[ch];
        for (int64_t i = 0; i < hw; i++) dst[i] = (src[i] - mu) * is * ga + be;
    }

    if (cache) {
        cache->mean = std::move(mean);
        cache->invstd = std::move(invstd);
    }
    return out;
}

template <typename T>
BnGrads<T> batchnorm_backward(const Tensor4<T>& input, const Tensor4<T>& gamma,
                              const BnCache<T>& cache, const Tensor4<T>& grad_out) {
    check_same_shape(input, grad_out, "batchnorm_backward");
    const int64_t c = input.shape.c;
    const int64_t n = input.shape.n;
    const int64_t hw = input.shape.h * input.shape.w;
    const int64_t m = n * hw;

    BnGrads<T> g;
    g.input = Tensor4<T>(input.shape);
    g.gamma = Tensor4<T>({1, c, 1, 1});
    g.beta = Tensor4<T>({1, c, 1, 1});

#pragma omp parallel for schedule(static)
    for (int64_t ch = 0; ch < c; ch++) {
        const T mu = cache.mean[ch], is = cache.invstd[ch];
        double sum_dy = 0, sum_dy_xhat = 0;
        for (int64_t b = 0; b < n; b++) {
            const T* x = input.ptr() + (b * c + ch) * hw;
            const T* dy = grad_out.ptr() + (b * c + ch) * hw;
            for (int64_t i = 0; i < hw; i++) {
                const double xh = (double(x[i]) - double(mu)) * double(is);
                sum_dy += dy[i];
                sum_dy_xhat += double(dy[i]) * xh;
            }
        }
        g.gamma.data[ch] = T(sum_dy_xhat);
        g.beta.data[ch] = T(sum_dy);
        const double ga = gamma.data[ch];
        const double k1 = sum_dy / double(m);
        const double k2 = sum_dy_xhat / double(m);
        for (int64_t b = 0; b < n; b++) {
            const T* x = input.ptr() + (b * c + ch) * hw;
            const T* dy = grad_out.ptr() + (b * c + ch) * hw;
            T* dx = g.input.ptr() + (b * c + ch) * hw;
            for (int64_t i = 0; i < hw; i++) {
                const double xh = (double(x[i]) - double(mu)) * double(is);
                dx[i] = T(ga * double(is) * (double(dy[i]) - k1 - xh * k2));
            }
        }
    }
    return g;
}

template <typename T>
BnGrads<T> batchnorm_backward_eval(const Tensor4<T>& input, const Tensor4<T>& gamma,
                                   const Tensor4<T>& running_var, T epsilon,
                                   const Tensor4<T>& grad_out) {
    check_same_shape(input, grad_out, "batchnorm_backward_eval");
    const int64_t c = input.shape.c;
    const int64_t n = input.shape.n;
    const int64_t hw = input.shape.h * input.shape.w;

    BnGrads<T> g;
    g.input = Tensor4<T>(input.shape);
    g.gamma = Tensor4<T>({1, c, 1, 1});
    g.beta = Tensor4<T>({1, c, 1, 1});
    // gamma/beta grads are rarely consumed in eval but cost little
    for (int64_t ch = 0; ch < c; ch++) {
        const T is = T(1.0 / std::sqrt(double(running_var.data[ch]) + double(epsilon)));
        const T scale = gamma.data[ch] * is;
        double sum_dy = 0;
        for (int64_t b = 0; b < n; b++) {
            const T* dy = grad_out.ptr() + (b * c + ch) * hw;
            T* dx = g.input.ptr() + (b * c + ch) * hw;
            for (int64_t i = 0; i < hw; i++) {
                dx[i] = dy[i] * scale;
                sum_dy += dy[i];
            }
        }
        g.beta.data[ch] = T(sum_dy);
    }
    return g;
}

template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& input) {
    Tensor4<T> out(input.shape);
    const T* src = input.ptr();
    T* dst = out.ptr();
    const int64_t n = input.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; i++) dst[i] = src[i] > T(0) ? src[i] : T(0);
    return out;
}

template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& output, const Tensor4<T>& grad_out) {
    check_same_shape(output, grad_out, "relu_backward");
    Tensor4<T> gin(output.shape);
    const int64_t n = output.numel();
    for (int64_t i = 0; i < n; i++)
        gin.data[i] = output.data[i] > T(0) ? grad_out.data[i] : T(0);
    return gin;
}

template <typename T>
Tensor4<T> add_forward(const Tensor4<T>& a, const Tensor4<T>& b) {
    check_same_shape(a, b, "add");
    Tensor4<T> out(a.shape);
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; i++) out.data[i] = a.data[i] + b.data[i];
    return out;
}

template <typename T>
Tensor4<T> concat_channels_forward(const std::vector<const Tensor4<T>*>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape4 s0 = parts[0]->shape;
    int64_t total_c = 0;
    for (const auto* p : parts) {
        if (p->shape.n != s0.n || p->shape.h != s0.h || p->shape.w != s0.w)
            throw ShapeError("concat: batch/spatial mismatch " + p->shape.str() + " vs " +
                             s0.str());
        total_c += p->shape.c;
    }
    Tensor4<T> out({s0.n, total_c, s0.h, s0.w});
    const int64_t hw = s0.h * s0.w;
    for (int64_t b = 0; b < s0.n; b++) {
        int64_t coff = 0;
        for (const auto* p : parts) {
            const T* src = p->ptr() + b * p->shape.c * hw;
            T* dst = out.ptr() + (b * total_c + coff) * hw;
            std::memcpy(dst, src, size_t(p->shape.c) * hw * sizeof(T));
            coff += p->shape.c;
        }
    }
    return out;
}

template <typename T>
std::vector<Tensor4<T>> concat_channels_backward(const std::vector<int64_t>& part_channels,
                                                 const Tensor4<T>& grad_out) {
    std::vector<Tensor4<T>> grads;
    grads.reserve(part_channels.size());
    const int64_t hw = grad_out.shape.h * grad_out.shape.w;
    int64_t coff = 0;
    for (int64_t pc : part_channels) {
        Tensor4<T> g({grad_out.shape.n, pc, grad_out.shape.h, grad_out.shape.w});
        for (int64_t b = 0; b < grad_out.shape.n; b++) {
            const T* src = grad_out.ptr() + (b * grad_out.shape.c + coff) * hw;
            std::memcpy(g.ptr() + b * pc * hw, src, size_t(pc) * hw * sizeof(T));
        }
        coff += pc;
        grads.push_back(std::move(g));
    }
    if (coff != grad_out.shape.c)
        throw ShapeError("concat_backward: part channels do not sum to grad channels");
    return grads;
}

#define LSHG_INSTANTIATE(T)                                                                     \
    template Tensor4<T> conv2d_forward<T>(const Tensor4<T>&, const ConvSpec&,                   \
                                          const Tensor4<T>&, const Tensor4<T>*);                \
    template ConvGrads<T> conv2d_backward<T>(const Tensor4<T>&, const ConvSpec&,                \
                                             const Tensor4<T>&, const Tensor4<T>&);             \
    template PoolResult<T> maxpool2x2_forward<T>(const Tensor4<T>&);                            \
    template Tensor4<T> maxpool2x2_backward<T>(const std::vector<int32_t>&, Shape4,             \
                                               const Tensor4<T>&);                              \
    template Tensor4<T> upsample_nearest2x_forward<T>(const Tensor4<T>&);                       \
    template Tensor4<T> upsample_nearest2x_backward<T>(const Tensor4<T>&);                      \
    template Tensor4<T> batchnorm_forward<T>(const Tensor4<T>&, const Tensor4<T>&,              \
                                             const Tensor4<T>&, Tensor4<T>&, Tensor4<T>&,       \
                                             BnMode, T, T, BnCache<T>*);                        \
    template BnGrads<T> batchnorm_backward<T>(const Tensor4<T>&, const Tensor4<T>&,             \
                                              const BnCache<T>&, const Tensor4<T>&);            \
    template BnGrads<T> batchnorm_backward_eval<T>(const Tensor4<T>&, const Tensor4<T>&,        \
                                                   const Tensor4<T>&, T, const Tensor4<T>&);    \
    template Tensor4<T> relu_forward<T>(const Tensor4<T>&);                                     \
    template Tensor4<T> relu_backward<T>(const Tensor4<T>&, const Tensor4<T>&);                 \
    template Tensor4<T> add_forward<T>(const Tensor4<T>&, const Tensor4<T>&);                   \
    template Tensor4<T> concat_channels_forward<T>(const std::vector<const Tensor4<T>*>&);      \
    template std::vector<Tensor4<T>> concat_channels_backward<T>(const std::vector<int64_t>&,   \
                                                                 const Tensor4<T>&);

LSHG_INSTANTIATE(float)
LSHG_INSTANTIATE(double)

#undef LSHG_INSTANTIATE

}  // namespace lshg
