#include "segkit/blocks.hpp"

#include <cmath>

namespace segkit {

template <typename T>
ConvKernel<T> Initializer::conv(int k_h, int k_w, int in, int out) {
  ConvKernel<T> k = ConvKernel<T>::zeros(k_h, k_w, in, out);
  const double stddev = std::sqrt(2.0 / static_cast<double>(k_h * k_w * in));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : k.weights.mutable_value().raw()) v = static_cast<T>(dist(rng_));
  return k;
}

template <typename T>
ActivationLayer<T>::ActivationLayer(Activation kind, int channels) : kind_(kind) {
  if (kind == Activation::prelu) slope_ = Var<T>(Tensor<T>(Shape{1, 1, 1, channels}, T(0.25)), true);
}

template <typename T>
Var<T> ActivationLayer<T>::operator()(const Var<T>& x) const {
  return kind_ == Activation::prelu ? prelu(x, slope_) : relu(x);
}

template <typename T>
void ActivationLayer<T>::collect(ParamRegistry<T>& reg, const std::string& prefix) const {
  if (kind_ == Activation::prelu) reg.add(prefix + ".slope", slope_);
}

template <typename T>
BatchNormLayer<T>::BatchNormLayer(int channels)
    : scale_(Tensor<T>(Shape{1, 1, 1, channels}, T(1)), true),
      shift_(Tensor<T>(Shape{1, 1, 1, channels}, T(0)), true) {
  state_.running_mean.assign(channels, T(0));
  state_.running_var.assign(channels, T(1));
}

template <typename T>
Var<T> BatchNormLayer<T>::operator()(const Var<T>& x, ForwardMode mode) {
  return batchnorm(x, scale_, shift_, state_, mode.train);
}

template <typename T>
void BatchNormLayer<T>::collect(ParamRegistry<T>& reg, const std::string& prefix) {
  reg.add(prefix + ".scale", scale_);
  reg.add(prefix + ".shift", shift_);
  reg.add_buffer(prefix + ".running_mean", &state_.running_mean);
  reg.add_buffer(prefix + ".running_var", &state_.running_var);
}

// ---- U ----

template <typename T>
ConvBlockU<T>::ConvBlockU(Initializer& init, int in_channels, int out_channels, Activation act)
    : out_channels_(out_channels),
      conv1_(init.conv<T>(3, 3, in_channels, out_channels)),
      conv2_(init.conv<T>(3, 3, out_channels, out_channels)),
      bn_(out_channels),
      act_(act, out_channels) {}

template <typename T>
Var<T> ConvBlockU<T>::forward(const Var<T>& x, ForwardMode mode) {
  return act_(bn_(conv2d(conv2d(x, conv1_), conv2_), mode));
}

template <typename T>
void ConvBlockU<T>::collect(ParamRegistry<T>& reg, const std::string& prefix) {
  collect_kernel(reg, prefix + ".conv1", conv1_);
  collect_kernel(reg, prefix + ".conv2", conv2_);
  bn_.collect(reg, prefix + ".bn");
  act_.collect(reg, prefix + ".act");
}

// ---- V ----

int vgg_layer_count(int level) {
  static constexpr int kStages[] = {2, 2, 3, 3, 3};
  if (level < 1 || level > 5) throw std::out_of_range("VGG level must be in 1..5");
  return kStages[level - 1];
}

template <typename T>
ConvBlockV<T>::ConvBlockV(Initializer& init, int in_channels, int out_channels, int layers,
                          Activation act)
    : out_channels_(out_channels) {
  if (layers != 2 && layers != 3) throw std::invalid_argument("VGG block has 2 or 3 layers");
  for (int i = 0; i < layers; ++i) {
    convs_.push_back(init.conv<T>(3, 3, i == 0 ? in_channels : out_channels, out_channels));
    acts_.emplace_back(act, out_channels);
  }
}

template <typename T>
Var<T> ConvBlockV<T>::forward(const Var<T>& x, ForwardMode) {
  Var<T> h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) h = acts_[i](conv2d(h, convs_[i]));
  return h;
}

template <typename T>
void ConvBlockV<T>::collect(ParamRegistry<T>& reg, const std::string& prefix) {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    collect_kernel(reg, prefix + ".conv" + std::to_string(i + 1), convs_[i]);
    acts_[i].collect(reg, prefix + ".act" + std::to_string(i + 1));
  }
}

// ---- Q ----

template <typename T>
ConvBlockQ<T>::ConvBlockQ(Initializer& init, int in_channels, int width, Activation act)
    : width_(width),
      bns_{BatchNormLayer<T>(in_channels), BatchNormLayer<T>(in_channels + width),
           BatchNormLayer<T>(in_channels + 2 * width)},
      acts_{ActivationLayer<T>(act, in_channels), ActivationLayer<T>(act, in_channels + width),
            ActivationLayer<T>(act, in_channels + 2 * width)},
      convs_{init.conv<T>(5, 5, in_channels, width),
             init.conv<T>(3, 3, in_channels + width, width),
             init.conv<T>(1, 1, in_channels + 2 * width, width)} {}

template <typename T>
Var<T> ConvBlockQ<T>::forward(const Var<T>& x, ForwardMode mode) {
  Var<T> o1 = conv2d(acts_[0](bns_[0](x, mode)), convs_[0]);
  Var<T> in2 = concat_channels<T>({x, o1});
  Var<T> o2 = conv2d(acts_[1](bns_[1](in2, mode)), convs_[1]);
  Var<T> in3 = concat_channels<T>({x, o1, o2});
  return conv2d(acts_[2](bns_[2](in3, mode)), convs_[2]);
}

template <typename T>
void ConvBlockQ<T>::collect(ParamRegistry<T>& reg, const std::string& prefix) {
  for (int i = 0; i < 3; ++i) {
    const std::string idx = std::to_string(i + 1);
    bns_[i].collect(reg, prefix + ".bn" + idx);
    acts_[i].collect(reg, prefix + ".act" + idx);
    collect_kernel(reg, prefix + ".conv" + idx, convs_[i]);
  }
}

// ---- multi-kernel input ----

template <typename T>
MultiKernelInput<T>::MultiKernelInput(Initializer& init, int in_channels, int m, Activation act)
    : branch_width_(m / 4) {
  if (m <= 0 || m % 4 != 0)
    throw std::invalid_argument("multi-kernel input needs m divisible by 4, got " +
                                std::to_string(m));
  for (std::size_t i = 0; i < kKernelSizes.size(); ++i) {
    convs_[i] = init.conv<T>(kKernelSizes[i], kKernelSizes[i], in_channels, branch_width_);
    acts_[i] = ActivationLayer<T>(act, branch_width_);
  }
}

template <typename T>
Var<T> MultiKernelInput<T>::forward(const Var<T>& x, ForwardMode) {
  std::vector<Var<T>> branches;
  for (std::size_t i = 0; i < convs_.size(); ++i) branches.push_back(acts_[i](conv2d(x, convs_[i])));
  return concat_channels(branches);
}

template <typename T>
void MultiKernelInput<T>::collect(ParamRegistry<T>& reg, const std::string& prefix) {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const std::string k = std::to_string(kKernelSizes[i]);
    collect_kernel(reg, prefix + ".k" + k, convs_[i]);
    acts_[i].collect(reg, prefix + ".act" + k);
  }
}

// ---- attention gate ----

template <typename T>
AttentionGate<T>::AttentionGate(Initializer& init, int encoder_channels, int decoder_channels)
    : enc_(init.conv<T>(1, 1, encoder_channels, decoder_channels)),
      dec_(init.conv<T>(1, 1, decoder_channels, decoder_channels)),
      psi_(init.conv<T>(1, 1, decoder_channels, 1)) {}

template <typename T>
typename AttentionGate<T>::Output AttentionGate<T>::forward(const Var<T>& encoder,
                                                            const Var<T>& decoder) {
  const Shape es = encoder.shape();
  const Shape ds = decoder.shape();
  if (es.n != ds.n || es.h != 2 * ds.h || es.w != 2 * ds.w)
    throw ShapeError("attention gate: encoder " + es.str() +
                     " must be twice the decoder resolution " + ds.str());
  // A 1×1 conv commutes with nearest upsampling, so project before upsampling.
  Var<T> g = upsample_nearest2x(conv2d(decoder, dec_));
  Var<T> e = conv2d(encoder, enc_);
  Var<T> mask = sigmoid(conv2d(relu(add(e, g)), psi_));
  return {mul_channel_mask(encoder, mask), mask};
}

template <typename T>
void AttentionGate<T>::collect(ParamRegistry<T>& reg, const std::string& prefix) {
  collect_kernel(reg, prefix + ".enc", enc_);
  collect_kernel(reg, prefix + ".dec", dec_);
  collect_kernel(reg, prefix + ".psi", psi_);
}

// ---- deep supervision ----

template <typename T>
DeepSupervisionV1<T>::DeepSupervisionV1(Initializer& init, const std::vector<int>& level_channels,
                                        int width) {
  for (int c : level_channels) convs_.push_back(init.conv<T>(1, 1, c, width));
}

template <typename T>
std::vector<Var<T>> DeepSupervisionV1<T>::forward(const std::vector<Var<T>>& encoder) {
  if (encoder.size() != convs_.size()) throw ShapeError("DS.v1: level count mismatch");
  std::vector<Var<T>> s(encoder.size());
  const std::size_t last = encoder.size() - 1;
  s[last] = conv2d(encoder[last], convs_[last]);
  for (std::size_t i = last; i-- > 0;)
    s[i] = add(conv2d(encoder[i], convs_[i]), upsample_nearest2x(s[i + 1]));
  return s;
}

template <typename T>
void DeepSupervisionV1<T>::collect(ParamRegistry<T>& reg, const std::string& prefix) {
  for (std::size_t i = 0; i < convs_.size(); ++i)
    collect_kernel(reg, prefix + ".conv" + std::to_string(i + 1), convs_[i]);
}

template <typename T>
DeepSupervisionV2<T>::DeepSupervisionV2(Initializer& init, const std::vector<int>& level_channels,
                                        int width) {
  for (int c : level_channels) convs_.push_back(init.conv<T>(1, 1, c, width));
}

template <typename T>
std::vector<Var<T>> DeepSupervisionV2<T>::forward(const std::vector<Var<T>>& encoder) {
  if (encoder.size() != convs_.size()) throw ShapeError("DS.v2: level count mismatch");
  std::vector<Var<T>> s(encoder.size());
  s[0] = conv2d(encoder[0], convs_[0]);
  for (std::size_t i = 1; i < encoder.size(); ++i)
    s[i] = add(conv2d(encoder[i], convs_[i]), maxpool2x2(s[i - 1]));
  return s;
}

template <typename T>
void DeepSupervisionV2<T>::collect(ParamRegistry<T>& reg, const std::string& prefix) {
  for (std::size_t i = 0; i < convs_.size(); ++i)
    collect_kernel(reg, prefix + ".conv" + std::to_string(i + 1), convs_[i]);
}

template <typename T>
DeepSupervisionV3<T>::DeepSupervisionV3(Initializer& init, const std::vector<int>& level_channels,
                                        int width)
    : width_(width) {
  for (int c : level_channels) convs_.push_back(init.conv<T>(1, 1, c, width));
}

template <typename T>
Var<T> DeepSupervisionV3<T>::forward(const std::vector<Var<T>>& decoder, const Var<T>& bottleneck) {
  if (decoder.size() + 1 != convs_.size()) throw ShapeError("DS.v3: level count mismatch");
  Var<T> z = conv2d(bottleneck, convs_.back());
  for (std::size_t i = decoder.size(); i-- > 0;)
    z = add(conv2d(decoder[i], convs_[i]), upsample_nearest2x(z));
  return z;
}

template <typename T>
void DeepSupervisionV3<T>::collect(ParamRegistry<T>& reg, const std::string& prefix) {
  for (std::size_t i = 0; i < convs_.size(); ++i)
    collect_kernel(reg, prefix + ".conv" + std::to_string(i + 1), convs_[i]);
}

// ---- head ----

template <typename T>
ClassificationHead<T>::ClassificationHead(Initializer& init, int in_channels, int num_classes) {
  if (num_classes < 2)
    throw std::invalid_argument("classification head needs at least 2 classes");
  conv_ = init.conv<T>(1, 1, in_channels, num_classes);
}

template <typename T>
Var<T> ClassificationHead<T>::forward(const Var<T>& features) {
  return softmax_channels(conv2d(features, conv_));
}

template <typename T>
void ClassificationHead<T>::collect(ParamRegistry<T>& reg, const std::string& prefix) {
  collect_kernel(reg, prefix + ".conv", conv_);
}

#define SEGKIT_INSTANTIATE_BLOCKS(T)                                            \
  template ConvKernel<T> Initializer::conv<T>(int, int, int, int);              \
  template class ActivationLayer<T>;                                            \
  template class BatchNormLayer<T>;                                             \
  template class ConvBlockU<T>;                                                 \
  template class ConvBlockV<T>;                                                 \
  template class ConvBlockQ<T>;                                                 \
  template class MultiKernelInput<T>;                                           \
  template class AttentionGate<T>;                                              \
  template class DeepSupervisionV1<T>;                                          \
  template class DeepSupervisionV2<T>;                                          \
  template class DeepSupervisionV3<T>;                                          \
  template class ClassificationHead<T>;

SEGKIT_INSTANTIATE_BLOCKS(float)
SEGKIT_INSTANTIATE_BLOCKS(double)

}  // namespace segkit
