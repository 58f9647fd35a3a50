#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "segkit/gradcheck.hpp"
#include "segkit/ops.hpp"

namespace segkit {

enum class Activation { relu, prelu };

// Non-trainable state saved alongside the weights (batchnorm running statistics).
template <typename T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* values;
};

/// Flat, ordered view of every parameter and buffer in a model.
template <typename T>
struct ParamRegistry {
  std::vector<NamedParam<T>> params;
  std::vector<NamedBuffer<T>> buffers;

  void add(std::string name, const Var<T>& v) { params.push_back({std::move(name), v}); }
  void add_buffer(std::string name, std::vector<T>* v) { buffers.push_back({std::move(name), v}); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.var.value().size();
    return n;
  }
};

/// Seeded initializer: He-normal (fan-in) weights, zero biases.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}
  template <typename T>
  ConvKernel<T> conv(int k_h, int k_w, int in, int out);

 private:
  std::mt19937_64 rng_;
};

struct ForwardMode {
  bool train = false;
};

template <typename T>
class ActivationLayer {
 public:
  ActivationLayer() = default;
  ActivationLayer(Activation kind, int channels);
  Var<T> operator()(const Var<T>& x) const;
  void collect(ParamRegistry<T>& reg, const std::string& prefix) const;
  Activation kind() const { return kind_; }

 private:
  Activation kind_ = Activation::relu;
  Var<T> slope_;  // PReLU only, initialized to 0.25
};

template <typename T>
class BatchNormLayer {
 public:
  BatchNormLayer() = default;
  explicit BatchNormLayer(int channels);
  Var<T> operator()(const Var<T>& x, ForwardMode mode);
  void collect(ParamRegistry<T>& reg, const std::string& prefix);

 private:
  Var<T> scale_;
  Var<T> shift_;
  BatchNormState<T> state_;
};

template <typename T>
void collect_kernel(ParamRegistry<T>& reg, const std::string& prefix, const ConvKernel<T>& k) {
  reg.add(prefix + ".weight", k.weights);
  reg.add(prefix + ".bias", k.bias);
}

/// U-Net block: conv3×3 → conv3×3 → batchnorm → activation.
template <typename T>
class ConvBlockU {
 public:
  ConvBlockU(Initializer& init, int in_channels, int out_channels,
             Activation act = Activation::relu);
  Var<T> forward(const Var<T>& x, ForwardMode mode);
  void collect(ParamRegistry<T>& reg, const std::string& prefix);
  int out_channels() const { return out_channels_; }

 private:
  int out_channels_;
  ConvKernel<T> conv1_, conv2_;
  BatchNormLayer<T> bn_;
  ActivationLayer<T> act_;
};

/// VGG16-style block: `layers` conv3×3 layers, each followed by the activation.
template <typename T>
class ConvBlockV {
 public:
  ConvBlockV(Initializer& init, int in_channels, int out_channels, int layers,
             Activation act = Activation::prelu);
  Var<T> forward(const Var<T>& x, ForwardMode mode);
  void collect(ParamRegistry<T>& reg, const std::string& prefix);
  int out_channels() const { return out_channels_; }
  int layer_count() const { return static_cast<int>(convs_.size()); }

 private:
  int out_channels_;
  std::vector<ConvKernel<T>> convs_;
  std::vector<ActivationLayer<T>> acts_;
};

// VGG16 stage depths used for encoder levels 1..5.
int vgg_layer_count(int level);

/// Dense block: three (batchnorm → activation → conv) layers with kernels 5, 3, 1.
/// Layer 2 sees concat(x, o1); layer 3 sees concat(x, o1, o2).
template <typename T>
class ConvBlockQ {
 public:
  static constexpr int kWidth = 64;

  ConvBlockQ(Initializer& init, int in_channels, int width = kWidth,
             Activation act = Activation::relu);
  Var<T> forward(const Var<T>& x, ForwardMode mode);
  void collect(ParamRegistry<T>& reg, const std::string& prefix);
  int out_channels() const { return width_; }

 private:
  int width_;
  std::array<BatchNormLayer<T>, 3> bns_;
  std::array<ActivationLayer<T>, 3> acts_;
  std::array<ConvKernel<T>, 3> convs_;
};

/// Parallel 1×1, 3×3, 5×5, 7×7 convolutions (m/4 channels each, then activation),
/// concatenated in that order.
template <typename T>
class MultiKernelInput {
 public:
  MultiKernelInput(Initializer& init, int in_channels, int m, Activation act = Activation::relu);
  Var<T> forward(const Var<T>& x, ForwardMode mode);
  void collect(ParamRegistry<T>& reg, const std::string& prefix);
  int out_channels() const { return 4 * branch_width_; }

  static constexpr std::array<int, 4> kKernelSizes{1, 3, 5, 7};

 private:
  int branch_width_;
  std::array<ConvKernel<T>, 4> convs_;
  std::array<ActivationLayer<T>, 4> acts_;
};

/// Spatial attention over encoder features. The decoder signal (half resolution)
/// is projected by a 1×1 conv and upsampled; the encoder features are projected
/// by a 1×1 conv; relu(sum) → 1×1 conv → sigmoid gives the mask.
template <typename T>
class AttentionGate {
 public:
  struct Output {
    Var<T> gated;
    Var<T> mask;
  };

  AttentionGate(Initializer& init, int encoder_channels, int decoder_channels);
  Output forward(const Var<T>& encoder, const Var<T>& decoder);
  void collect(ParamRegistry<T>& reg, const std::string& prefix);

  ConvKernel<T>& encoder_proj() { return enc_; }
  ConvKernel<T>& decoder_proj() { return dec_; }
  ConvKernel<T>& mask_proj() { return psi_; }

 private:
  ConvKernel<T> enc_, dec_, psi_;
};

/// Top-down deep supervision over encoder outputs C_1..C_5:
/// S_5 = conv(C_5), S_n = conv(C_n) + up(S_{n+1}).
template <typename T>
class DeepSupervisionV1 {
 public:
  DeepSupervisionV1(Initializer& init, const std::vector<int>& level_channels, int width);
  std::vector<Var<T>> forward(const std::vector<Var<T>>& encoder);
  void collect(ParamRegistry<T>& reg, const std::string& prefix);
  std::vector<ConvKernel<T>>& convs() { return convs_; }

 private:
  std::vector<ConvKernel<T>> convs_;
};

/// Bottom-up deep supervision over C_1..C_4:
/// S_1 = conv(C_1), S_n = conv(C_n) + maxpool(S_{n-1}).
template <typename T>
class DeepSupervisionV2 {
 public:
  DeepSupervisionV2(Initializer& init, const std::vector<int>& level_channels, int width);
  std::vector<Var<T>> forward(const std::vector<Var<T>>& encoder);
  void collect(ParamRegistry<T>& reg, const std::string& prefix);
  std::vector<ConvKernel<T>>& convs() { return convs_; }

 private:
  std::vector<ConvKernel<T>> convs_;
};

/// Decoder-side deep supervision feeding the classification head:
/// Z_5 = conv(C_5), Z_n = conv(T_n) + up(Z_{n+1}); returns Z_1.
template <typename T>
class DeepSupervisionV3 {
 public:
  static constexpr int kWidth = 64;

  // level_channels lists T_1..T_4 widths followed by the bottleneck width.
  DeepSupervisionV3(Initializer& init, const std::vector<int>& level_channels,
                    int width = kWidth);
  Var<T> forward(const std::vector<Var<T>>& decoder, const Var<T>& bottleneck);
  void collect(ParamRegistry<T>& reg, const std::string& prefix);
  std::vector<ConvKernel<T>>& convs() { return convs_; }
  int width() const { return width_; }

 private:
  int width_;
  std::vector<ConvKernel<T>> convs_;
};

/// 1×1 conv to num_classes followed by a per-pixel softmax.
template <typename T>
class ClassificationHead {
 public:
  ClassificationHead(Initializer& init, int in_channels, int num_classes);
  Var<T> forward(const Var<T>& features);
  void collect(ParamRegistry<T>& reg, const std::string& prefix);
  int num_classes() const { return conv_.out_channels; }
  ConvKernel<T>& conv() { return conv_; }

 private:
  ConvKernel<T> conv_;
};

}  // namespace segkit
