#include "segkit/topology.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <variant>

namespace segkit {

void TopologySpec::validate() const {
  if (m <= 0) throw std::invalid_argument("m must be positive");
  if (depth != 4) throw std::invalid_argument("depth is fixed at 4 levels plus bottleneck");
  if (num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");
  if (static_cast<int>(attention) + static_cast<int>(ds_v1) + static_cast<int>(ds_v2) > 1)
    throw std::invalid_argument(
        "at most one of attention, ds_v1, ds_v2 may replace the skip connections");
  if (multi_kernel && m % 4 != 0)
    throw std::invalid_argument("multi-kernel input needs m divisible by 4, got " +
                                std::to_string(m));
}

const std::vector<std::string>& named_topology_ids() {
  static const std::vector<std::string> ids = {"U1",   "UA",   "UD",   "UAD", "UMD",  "UAMD",
                                               "UVMD", "UVDD", "UQD",  "UDD", "UMDD", "UDD2"};
  return ids;
}

bool is_named_topology(const std::string& id) {
  const auto& ids = named_topology_ids();
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

TopologySpec named_topology(const std::string& id, int m, int num_classes) {
  TopologySpec s;
  s.id = id;
  s.m = m;
  s.num_classes = num_classes;
  if (id == "U1") {
  } else if (id == "UA") {
    s.attention = true;
  } else if (id == "UD") {
    s.ds_v3 = true;
  } else if (id == "UAD") {
    s.attention = s.ds_v3 = true;
  } else if (id == "UMD") {
    s.multi_kernel = s.ds_v3 = true;
  } else if (id == "UAMD") {
    s.attention = s.multi_kernel = s.ds_v3 = true;
  } else if (id == "UVMD") {
    s.conv_kind = ConvKind::V;
    s.multi_kernel = s.ds_v3 = true;
  } else if (id == "UVDD") {
    s.conv_kind = ConvKind::V;
    s.ds_v3 = s.ds_v1 = true;
    s.activation = Activation::prelu;
  } else if (id == "UQD") {
    s.conv_kind = ConvKind::Q;
    s.ds_v3 = true;
  } else if (id == "UDD") {
    s.ds_v3 = s.ds_v1 = true;
  } else if (id == "UMDD") {
    s.multi_kernel = s.ds_v3 = s.ds_v1 = true;
  } else if (id == "UDD2") {
    s.ds_v3 = s.ds_v2 = true;
  } else {
    throw std::invalid_argument("unknown topology id '" + id + "'");
  }
  s.validate();
  return s;
}

std::string to_string(ConvKind kind) {
  switch (kind) {
    case ConvKind::U: return "U";
    case ConvKind::V: return "V";
    case ConvKind::Q: return "Q";
  }
  return "?";
}

std::string to_string(Activation act) { return act == Activation::prelu ? "prelu" : "relu"; }

ConvKind parse_conv_kind(const std::string& s) {
  if (s == "U") return ConvKind::U;
  if (s == "V") return ConvKind::V;
  if (s == "Q") return ConvKind::Q;
  throw std::invalid_argument("unknown conv_kind '" + s + "'");
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "prelu") return Activation::prelu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

const LevelPlanRow* LevelPlan::find(const std::string& tensor) const {
  for (const auto& r : rows)
    if (r.tensor == tensor) return &r;
  return nullptr;
}

int level_channels(const TopologySpec& spec, int level) {
  if (level < 1 || level > 5) throw std::out_of_range("level must be in 1..5");
  if (spec.conv_kind == ConvKind::Q) return ConvBlockQ<float>::kWidth;
  return spec.m << (level - 1);
}

namespace {

int fusion_channels(const TopologySpec& spec, int level) {
  if (spec.ds_v1 || spec.ds_v2) return spec.m;
  return level_channels(spec, level);
}

int head_width(const TopologySpec& spec) {
  return spec.ds_v3 ? DeepSupervisionV3<float>::kWidth : level_channels(spec, 1);
}

}  // namespace

LevelPlan validate_shapes(const TopologySpec& spec, int height, int width) {
  spec.validate();
  if (height <= 0 || width <= 0 || height % 16 != 0 || width % 16 != 0)
    throw ShapeError("input " + std::to_string(height) + "x" + std::to_string(width) +
                     " must be positive and divisible by 16");
  LevelPlan plan;
  auto row = [&](std::string name, int level, int channels) {
    const int f = 1 << (level - 1);
    plan.rows.push_back({std::move(name), level, height / f, width / f, channels});
  };
  if (spec.multi_kernel) row("mk", 1, spec.m);
  for (int l = 1; l <= 5; ++l) row("enc" + std::to_string(l), l, level_channels(spec, l));
  for (int l = 4; l >= 1; --l) {
    row("fuse" + std::to_string(l), l, fusion_channels(spec, l));
    row("dec_in" + std::to_string(l), l, fusion_channels(spec, l) + level_channels(spec, l));
    row("dec" + std::to_string(l), l, level_channels(spec, l));
  }
  if (spec.ds_v3) row("ds3", 1, DeepSupervisionV3<float>::kWidth);
  row("head_in", 1, head_width(spec));
  row("scores", 1, spec.num_classes);
  return plan;
}

template <typename T>
struct Network<T>::Impl {
  using Block = std::variant<ConvBlockU<T>, ConvBlockV<T>, ConvBlockQ<T>>;

  TopologySpec spec;
  std::optional<MultiKernelInput<T>> mk;
  std::vector<Block> encoder;  // 5 entries, last is the bottleneck
  std::vector<AttentionGate<T>> gates;
  std::optional<DeepSupervisionV1<T>> ds1;
  std::optional<DeepSupervisionV2<T>> ds2;
  std::vector<ConvKernel<T>> ups;  // index l-1 maps level l+1 → level l
  std::vector<Block> decoder;      // index l-1 is level l
  std::optional<DeepSupervisionV3<T>> ds3;
  std::optional<ClassificationHead<T>> head;
  ParamRegistry<T> registry;

  static Var<T> run(Block& b, const Var<T>& x, ForwardMode mode) {
    return std::visit([&](auto& blk) { return blk.forward(x, mode); }, b);
  }
  static void collect(Block& b, ParamRegistry<T>& reg, const std::string& prefix) {
    std::visit([&](auto& blk) { blk.collect(reg, prefix); }, b);
  }
};

template <typename T>
Network<T>::Network(const TopologySpec& spec, std::uint64_t seed) : impl_(std::make_unique<Impl>()) {
  spec.validate();
  Impl& s = *impl_;
  s.spec = spec;
  Initializer init(seed);
  const Activation act = spec.activation;
  auto ch = [&](int l) { return level_channels(spec, l); };

  auto make_block = [&](int in, int level, bool encoder_side) -> typename Impl::Block {
    switch (spec.conv_kind) {
      case ConvKind::Q:
        return ConvBlockQ<T>(init, in, ConvBlockQ<T>::kWidth, act);
      case ConvKind::V:
        if (encoder_side) return ConvBlockV<T>(init, in, ch(level), vgg_layer_count(level), act);
        [[fallthrough]];
      case ConvKind::U:
        break;
    }
    return ConvBlockU<T>(init, in, ch(level), act);
  };

  int in = 2;
  if (spec.multi_kernel) {
    s.mk.emplace(init, 2, spec.m, act);
    in = spec.m;
  }
  for (int l = 1; l <= 5; ++l) {
    s.encoder.push_back(make_block(in, l, true));
    in = ch(l);
  }
  if (spec.attention)
    for (int l = 1; l <= 4; ++l) s.gates.emplace_back(init, ch(l), ch(l + 1));
  if (spec.ds_v1) s.ds1.emplace(init, std::vector<int>{ch(1), ch(2), ch(3), ch(4), ch(5)}, spec.m);
  if (spec.ds_v2) s.ds2.emplace(init, std::vector<int>{ch(1), ch(2), ch(3), ch(4)}, spec.m);
  s.ups.resize(4);
  s.decoder.reserve(4);
  std::vector<std::optional<typename Impl::Block>> dec(4);
  for (int l = 4; l >= 1; --l) {
    s.ups[l - 1] = init.conv<T>(2, 2, ch(l + 1), ch(l));
    dec[l - 1].emplace(make_block(fusion_channels(spec, l) + ch(l), l, false));
  }
  for (auto& d : dec) s.decoder.push_back(std::move(*d));
  if (spec.ds_v3) s.ds3.emplace(init, std::vector<int>{ch(1), ch(2), ch(3), ch(4), ch(5)});
  s.head.emplace(init, head_width(spec), spec.num_classes);

  if (s.mk) s.mk->collect(s.registry, "mk");
  for (int l = 1; l <= 4; ++l) Impl::collect(s.encoder[l - 1], s.registry, "enc" + std::to_string(l));
  Impl::collect(s.encoder[4], s.registry, "bottleneck");
  for (std::size_t i = 0; i < s.gates.size(); ++i)
    s.gates[i].collect(s.registry, "ag" + std::to_string(i + 1));
  if (s.ds1) s.ds1->collect(s.registry, "ds1");
  if (s.ds2) s.ds2->collect(s.registry, "ds2");
  for (int l = 4; l >= 1; --l) {
    collect_kernel(s.registry, "up" + std::to_string(l), s.ups[l - 1]);
    Impl::collect(s.decoder[l - 1], s.registry, "dec" + std::to_string(l));
  }
  if (s.ds3) s.ds3->collect(s.registry, "ds3");
  s.head->collect(s.registry, "head");
}

template <typename T>
Network<T>::~Network() = default;
template <typename T>
Network<T>::Network(Network&&) noexcept = default;
template <typename T>
Network<T>& Network<T>::operator=(Network&&) noexcept = default;

template <typename T>
const TopologySpec& Network<T>::spec() const {
  return impl_->spec;
}
template <typename T>
ParamRegistry<T>& Network<T>::registry() {
  return impl_->registry;
}
template <typename T>
const ParamRegistry<T>& Network<T>::registry() const {
  return impl_->registry;
}
template <typename T>
int Network<T>::head_input_channels() const {
  return head_width(impl_->spec);
}

template <typename T>
ForwardTrace<T> Network<T>::forward(const Var<T>& input, ForwardMode mode) {
  Impl& s = *impl_;
  const Shape is = input.shape();
  if (is.c != 2) throw ShapeError("network input must have 2 channels, got " + is.str());
  if (is.h % 16 != 0 || is.w % 16 != 0)
    throw ShapeError("network input spatial dims must be divisible by 16, got " + is.str());

  ForwardTrace<T> tr;
  Var<T> x = input;
  if (s.mk) {
    x = s.mk->forward(x, mode);
    tr.multi_kernel = x;
  }
  for (int l = 1; l <= 5; ++l) {
    if (l > 1) x = maxpool2x2(x);
    x = Impl::run(s.encoder[l - 1], x, mode);
    tr.encoder.push_back(x);
  }

  std::vector<Var<T>> supervision;
  if (s.ds1) supervision = s.ds1->forward(tr.encoder);
  if (s.ds2) {
    supervision = s.ds2->forward({tr.encoder.begin(), tr.encoder.begin() + 4});
  }

  tr.fusion.resize(4);
  tr.decoder_inputs.resize(4);
  tr.decoder.resize(4);
  Var<T> below = tr.encoder[4];
  for (int l = 4; l >= 1; --l) {
    Var<T> fused;
    if (!s.gates.empty()) {
      fused = s.gates[l - 1].forward(tr.encoder[l - 1], below).gated;
    } else if (!supervision.empty()) {
      fused = supervision[l - 1];
    } else {
      fused = tr.encoder[l - 1];
    }
    Var<T> up = transposed_conv2d(below, s.ups[l - 1]);
    Var<T> d = concat_channels<T>({fused, up});
    below = Impl::run(s.decoder[l - 1], d, mode);
    tr.fusion[l - 1] = fused;
    tr.decoder_inputs[l - 1] = d;
    tr.decoder[l - 1] = below;
  }

  if (s.ds3) {
    tr.supervised = s.ds3->forward(tr.decoder, tr.encoder[4]);
    tr.head_input = *tr.supervised;
  } else {
    tr.head_input = tr.decoder[0];
  }
  tr.scores = s.head->forward(tr.head_input);
  return tr;
}

template <typename T>
Tensor<T> Network<T>::predict(const Tensor<T>& input) {
  NoGradGuard guard;
  return forward(Var<T>(input), ForwardMode{false}).scores.value();
}

template <typename T>
void check_trace(const ForwardTrace<T>& trace, const LevelPlan& plan) {
  auto check = [&](const std::string& name, const Var<T>& v) {
    const LevelPlanRow* r = plan.find(name);
    if (!r) throw ShapeError("plan has no entry for " + name);
    const Shape s = v.shape();
    if (s.h != r->height || s.w != r->width || s.c != r->channels)
      throw ShapeError(name + ": expected " + std::to_string(r->height) + "x" +
                       std::to_string(r->width) + "x" + std::to_string(r->channels) + ", got " +
                       s.str());
  };
  if (trace.multi_kernel) check("mk", *trace.multi_kernel);
  for (std::size_t i = 0; i < trace.encoder.size(); ++i)
    check("enc" + std::to_string(i + 1), trace.encoder[i]);
  for (std::size_t i = 0; i < trace.decoder.size(); ++i) {
    const std::string l = std::to_string(i + 1);
    check("fuse" + l, trace.fusion[i]);
    check("dec_in" + l, trace.decoder_inputs[i]);
    check("dec" + l, trace.decoder[i]);
  }
  if (trace.supervised) check("ds3", *trace.supervised);
  check("head_in", trace.head_input);
  check("scores", trace.scores);
}

template <typename T>
std::size_t copy_shared_parameters(const ParamRegistry<T>& from, ParamRegistry<T>& to) {
  std::map<std::string, const NamedParam<T>*> src;
  for (const auto& p : from.params) src[p.name] = &p;
  std::map<std::string, const NamedBuffer<T>*> bsrc;
  for (const auto& b : from.buffers) bsrc[b.name] = &b;
  std::size_t copied = 0;
  for (auto& p : to.params) {
    auto it = src.find(p.name);
    if (it == src.end() || !(it->second->var.shape() == p.var.shape())) continue;
    Var<T> v = p.var;
    v.mutable_value() = it->second->var.value();
    ++copied;
  }
  for (auto& b : to.buffers) {
    auto it = bsrc.find(b.name);
    if (it != bsrc.end() && it->second->values->size() == b.values->size()) *b.values = *it->second->values;
  }
  return copied;
}

template class Network<float>;
template class Network<double>;
template void check_trace(const ForwardTrace<float>&, const LevelPlan&);
template void check_trace(const ForwardTrace<double>&, const LevelPlan&);
template std::size_t copy_shared_parameters(const ParamRegistry<float>&, ParamRegistry<float>&);
template std::size_t copy_shared_parameters(const ParamRegistry<double>&, ParamRegistry<double>&);

}  // namespace segkit
