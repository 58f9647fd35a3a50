#pragma once

#include <vector>

#include "segkit/autodiff.hpp"

namespace segkit {

/// Convolution weights laid out [k_h][k_w][in][out] with one bias per output channel.
template <typename T>
struct ConvKernel {
  int k_h = 0;
  int k_w = 0;
  int in_channels = 0;
  int out_channels = 0;
  Var<T> weights;  // shape 1 × k_h × k_w × (in·out)
  Var<T> bias;     // shape 1 × 1 × 1 × out

  static ConvKernel zeros(int k_h, int k_w, int in, int out, bool trainable = true);
  T& weight(int ky, int kx, int ci, int co) {
    return weights.mutable_value()[((static_cast<std::size_t>(ky) * k_w + kx) * in_channels + ci) *
                                       out_channels + co];
  }
};

/// Running statistics owned by a batchnorm layer; not trained by gradient.
template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.9);
  T epsilon = T(1e-5);
};

// Same-size zero padding, stride 1. Kernel extents must be odd.
template <typename T>
Var<T> conv2d(const Var<T>& input, const ConvKernel<T>& kernel);

// Kernel 2×2, stride 2: output spatial size is doubled.
template <typename T>
Var<T> transposed_conv2d(const Var<T>& input, const ConvKernel<T>& kernel);

template <typename T>
Var<T> maxpool2x2(const Var<T>& input);

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& input);

template <typename T>
Var<T> relu(const Var<T>& input);

// slope holds one value per channel.
template <typename T>
Var<T> prelu(const Var<T>& input, const Var<T>& slope);

template <typename T>
Var<T> sigmoid(const Var<T>& input);

// Normalizes every pixel's channel vector.
template <typename T>
Var<T> softmax_channels(const Var<T>& input);

// train == true normalizes with batch statistics (over n, h, w) and updates the
// running statistics; otherwise the running statistics are used.
template <typename T>
Var<T> batchnorm(const Var<T>& input, const Var<T>& scale, const Var<T>& shift,
                 BatchNormState<T>& state, bool train);

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& inputs);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, T factor);

// input ∘ mask, where mask has one channel broadcast over all of input's channels.
template <typename T>
Var<T> mul_channel_mask(const Var<T>& input, const Var<T>& mask);

template <typename T>
Var<T> sum(const Var<T>& input);

// Σ input ∘ weights with a constant weight tensor.
template <typename T>
Var<T> weighted_sum(const Var<T>& input, const Tensor<T>& weights);

/// Mean over pixels of −Σ_c truth_c · ln(max(score_c, 1e-12)).
template <typename T>
Var<T> cross_entropy(const Var<T>& scores, const Tensor<T>& truth);

}  // namespace segkit
