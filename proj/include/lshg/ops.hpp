#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <type_traits>
#include <vector>

#include "lshg/tensor.hpp"

namespace lshg {

struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 1;  // square k x k
    int stride = 1;
    int padding = 0;
    int dilation = 1;
    int groups = 1;
    bool has_bias = false;

    void validate() const;

    bool is_depthwise() const {
        return groups == in_channels && out_channels == in_channels && groups > 1;
    }
    Shape4 weight_shape() const {
        return {out_channels, in_channels / groups, kernel, kernel};
    }
    int64_t fan_in() const {
        return int64_t(in_channels / groups) * kernel * kernel;
    }
    int64_t param_count() const {
        return weight_shape().numel() + (has_bias ? out_channels : 0);
    }
    int64_t out_dim(int64_t in) const {
        return (in + 2 * int64_t(padding) - int64_t(dilation) * (kernel - 1) - 1) / stride + 1;
    }
    // MACs for one batch element at the given input spatial size.
    uint64_t macs(int64_t in_h, int64_t in_w) const {
        return uint64_t(out_dim(in_h)) * uint64_t(out_dim(in_w)) * out_channels *
               (in_channels / groups) * kernel * kernel;
    }
};

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& input, const ConvSpec& spec,
                          const Tensor4<T>& weights,
                          std::type_identity_t<const Tensor4<T>*> bias = nullptr);

template <typename T>
struct ConvGrads {
    Tensor4<T> input;
    Tensor4<T> weights;
    Tensor4<T> bias;  // empty when spec.has_bias is false
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& input, const ConvSpec& spec,
                             const Tensor4<T>& weights, const Tensor4<T>& grad_out);

template <typename T>
struct PoolResult {
    Tensor4<T> output;
    std::vector<int32_t> argmax;  // flat input index of each window winner
};

template <typename T>
PoolResult<T> maxpool2x2_forward(const Tensor4<T>& input);

template <typename T>
Tensor4<T> maxpool2x2_backward(const std::vector<int32_t>& argmax, Shape4 input_shape,
                               const Tensor4<T>& grad_out);

template <typename T>
Tensor4<T> upsample_nearest2x_forward(const Tensor4<T>& input);

template <typename T>
Tensor4<T> upsample_nearest2x_backward(const Tensor4<T>& grad_out);

enum class BnMode { train, eval };

// Per-channel batch statistics saved by a train-mode forward for backward.
template <typename T>
struct BnCache {
    std::vector<T> mean;
    std::vector<T> invstd;
};

// gamma/beta and running stats are (1, C, 1, 1) tensors. Train mode normalizes
// by population batch statistics and updates the running stats in place
// (unbiased variance, the usual convention split).
template <typename T>
Tensor4<T> batchnorm_forward(const Tensor4<T>& input, const Tensor4<T>& gamma,
                             const Tensor4<T>& beta, Tensor4<T>& running_mean,
                             Tensor4<T>& running_var, BnMode mode, T momentum, T epsilon,
                             std::type_identity_t<BnCache<T>*> cache = nullptr);

template <typename T>
struct BnGrads {
    Tensor4<T> input;
    Tensor4<T> gamma;
    Tensor4<T> beta;
};

template <typename T>
BnGrads<T> batchnorm_backward(const Tensor4<T>& input, const Tensor4<T>& gamma,
                              const BnCache<T>& cache, const Tensor4<T>& grad_out);

// Eval-mode backward: scale by gamma * invstd from the running stats.
template <typename T>
BnGrads<T> batchnorm_backward_eval(const Tensor4<T>& input, const Tensor4<T>& gamma,
                                   const Tensor4<T>& running_var, T epsilon,
                                   const Tensor4<T>& grad_out);

template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& input);

// Subgradient at 0 is 0: grad flows only where output > 0.
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& output, const Tensor4<T>& grad_out);

template <typename T>
Tensor4<T> add_forward(const Tensor4<T>& a, const Tensor4<T>& b);

template <typename T>
Tensor4<T> concat_channels_forward(const std::vector<const Tensor4<T>*>& parts);

template <typename T>
std::vector<Tensor4<T>> concat_channels_backward(const std::vector<int64_t>& part_channels,
                                                 const Tensor4<T>& grad_out);

}  // namespace lshg
