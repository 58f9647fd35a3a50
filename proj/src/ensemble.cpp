#include "segkit/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "segkit/ops.hpp"

namespace segkit {

StackingConfig stacking_preset(const std::string& name) {
  if (name == "NAD") return {StackInput::normalized, MergeKind::average, 64};
  if (name == "TCD") return {StackInput::tensor, MergeKind::concat, 64};
  throw std::invalid_argument("unknown stacking preset '" + name + "' (expected NAD or TCD)");
}

void EnsembleSpec::validate() const {
  if (member_ids.size() < 2 || member_ids.size() > 13)
    throw std::invalid_argument("an ensemble needs 2 to 13 members, got " +
                                std::to_string(member_ids.size()));
  if (mode == EnsembleMode::stacking && stacking.hidden_width <= 0)
    throw std::invalid_argument("stacking hidden width must be positive");
}

const std::vector<std::string>& named_ensemble_ids() {
  static const std::vector<std::string> ids = {"E4", "E5", "E6",  "E7",  "E8",
                                               "E9", "E10", "E11", "E12", "E13"};
  return ids;
}

const std::vector<std::string>& ensemble_roster(const std::string& id) {
  static const std::map<std::string, std::vector<std::string>> rosters = [] {
    std::map<std::string, std::vector<std::string>> r;
    r["E4"] = {"UAD", "UMD", "UQD", "UDD"};
    r["E5"] = {"UD", "UAD", "UMD", "UAMD", "UDD2"};
    r["E6"] = {"UD", "UAD", "UMD", "UAMD", "UVMD", "UVDD"};
    r["E7"] = {"UD", "UAD", "UMD", "UAMD", "UVMD", "UQD", "UDD2"};
    r["E8"] = {"FCN", "UD", "UAD", "UMD", "UAMD", "UVMD", "UQD", "UDD2"};
    r["E9"] = {"UD", "UAD", "UMD", "UAMD", "UVMD", "UVDD", "UQD", "UDD", "UMDD"};
    r["E10"] = {"UD", "UAD", "UMD", "UAMD", "UVMD", "UVDD", "UQD", "UDD", "UMDD", "UDD2"};
    r["E11"] = {"UA", "UD", "UAD", "UMD", "UAMD", "UVMD", "UVDD", "UQD", "UDD", "UMDD", "UDD2"};
    r["E12"] = {"U1", "UA", "UD", "UAD", "UMD", "UAMD", "UVMD", "UVDD", "UQD", "UDD", "UMDD", "UDD2"};
    r["E13"] = {"FCN", "U1",   "UA",  "UD",  "UAD",  "UMD", "UAMD",
                "UVMD", "UVDD", "UQD", "UDD", "UMDD", "UDD2"};
    return r;
  }();
  auto it = rosters.find(id);
  if (it == rosters.end()) throw std::invalid_argument("unknown ensemble '" + id + "'");
  return it->second;
}

EnsembleSpec parse_ensemble_mode(EnsembleSpec spec, const std::string& mode) {
  if (mode == "arith") {
    spec.mode = EnsembleMode::arith;
  } else if (mode == "geo") {
    spec.mode = EnsembleMode::geo;
  } else if (mode.rfind("stacking-", 0) == 0) {
    spec.mode = EnsembleMode::stacking;
    spec.stacking = stacking_preset(mode.substr(9));
  } else {
    throw std::invalid_argument("unknown ensemble mode '" + mode +
                                "' (expected arith, geo, stacking-NAD or stacking-TCD)");
  }
  return spec;
}

EnsembleSpec named_ensemble(const std::string& id, const std::string& mode) {
  EnsembleSpec spec;
  spec.id = id;
  spec.member_ids = ensemble_roster(id);
  return parse_ensemble_mode(spec, mode);
}

std::string mode_name(const EnsembleSpec& spec) {
  switch (spec.mode) {
    case EnsembleMode::arith: return "arith";
    case EnsembleMode::geo: return "geo";
    case EnsembleMode::stacking: break;
  }
  if (spec.stacking == stacking_preset("NAD")) return "stacking-NAD";
  if (spec.stacking == stacking_preset("TCD")) return "stacking-TCD";
  return "stacking";
}

std::string to_string(StackInput v) { return v == StackInput::normalized ? "normalized" : "tensor"; }

std::string to_string(MergeKind v) {
  switch (v) {
    case MergeKind::concat: return "concat";
    case MergeKind::average: return "average";
    case MergeKind::add: return "add";
  }
  return "?";
}

StackInput parse_stack_input(const std::string& s) {
  if (s == "normalized") return StackInput::normalized;
  if (s == "tensor") return StackInput::tensor;
  throw std::invalid_argument("unknown stacking input '" + s + "'");
}

MergeKind parse_merge(const std::string& s) {
  if (s == "concat") return MergeKind::concat;
  if (s == "average") return MergeKind::average;
  if (s == "add") return MergeKind::add;
  throw std::invalid_argument("unknown merge '" + s + "'");
}

namespace {

void check_members(const std::vector<Tensor<float>>& members) {
  if (members.empty()) throw std::invalid_argument("no member score maps");
  for (const auto& m : members)
    if (m.shape() != members.front().shape())
      throw ShapeError("member score maps differ in shape: " + m.shape().str() + " vs " +
                       members.front().shape().str());
}

}  // namespace

Tensor<float> average_arith(const std::vector<Tensor<float>>& members) {
  check_members(members);
  Tensor<float> out(members.front().shape());
  const double r = static_cast<double>(members.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0.0;
    for (const auto& m : members) s += m[i];
    out[i] = static_cast<float>(s / r);
  }
  return out;
}

Tensor<float> average_geo(const std::vector<Tensor<float>>& members, bool renormalize) {
  check_members(members);
  const Shape shape = members.front().shape();
  Tensor<float> out(shape);
  const double r = static_cast<double>(members.size());
  const int classes = shape.c;
  std::vector<double> g(static_cast<std::size_t>(classes));
  for (std::size_t p = 0; p < shape.pixels(); ++p) {
    double total = 0.0;
    for (int c = 0; c < classes; ++c) {
      double log_sum = 0.0;
      for (const auto& m : members) log_sum += std::log(std::max(1e-12, static_cast<double>(m[p * classes + c])));
      g[c] = std::exp(log_sum / r);
      total += g[c];
    }
    for (int c = 0; c < classes; ++c)
      out[p * classes + c] = static_cast<float>(renormalize ? g[c] / total : g[c]);
  }
  return out;
}

template <typename T>
StackingModel<T>::StackingModel(const StackingConfig& config, int members, int member_channels,
                                int num_classes, std::uint64_t seed)
    : StackingModel(config, std::vector<int>(static_cast<std::size_t>(std::max(members, 0)), member_channels),
                    num_classes, seed) {}

template <typename T>
StackingModel<T>::StackingModel(const StackingConfig& config, std::vector<int> member_channels,
                                int num_classes, std::uint64_t seed)
    : config_(config), member_channels_(std::move(member_channels)), num_classes_(num_classes) {
  if (member_channels_.empty()) throw std::invalid_argument("stacking needs at least one member");
  for (int c : member_channels_)
    if (c < 1) throw std::invalid_argument("invalid stacking member width");
  if (num_classes < 2 || config.hidden_width < 1) throw std::invalid_argument("invalid stacking dimensions");
  if (config.merge != MergeKind::concat)
    for (int c : member_channels_)
      if (c != member_channels_.front())
        throw ShapeError(to_string(config.merge) + " merge needs members of equal width; use concat");
  Initializer init(seed);
  hidden_ = init.conv<T>(1, 1, merged_width(), config.hidden_width);
  output_ = init.conv<T>(1, 1, config.hidden_width, num_classes);
  registry_.add("stack.hidden.weight", hidden_.weights);
  registry_.add("stack.hidden.bias", hidden_.bias);
  registry_.add("stack.output.weight", output_.weights);
  registry_.add("stack.output.bias", output_.bias);
}

template <typename T>
int StackingModel<T>::merged_width() const {
  if (config_.merge != MergeKind::concat) return member_channels_.front();
  return std::accumulate(member_channels_.begin(), member_channels_.end(), 0);
}

template <typename T>
Var<T> StackingModel<T>::forward(const std::vector<Var<T>>& member_outputs) const {
  if (member_outputs.size() != member_channels_.size())
    throw std::invalid_argument("stacking model expects " + std::to_string(members()) +
                                " member outputs, got " + std::to_string(member_outputs.size()));
  for (std::size_t r = 0; r < member_outputs.size(); ++r)
    if (member_outputs[r].shape().c != member_channels_[r])
      throw ShapeError("member " + std::to_string(r) + " output has " + std::to_string(member_outputs[r].shape().c) +
                       " channels, expected " + std::to_string(member_channels_[r]));
  Var<T> merged;
  switch (config_.merge) {
    case MergeKind::concat:
      merged = concat_channels(member_outputs);
      break;
    case MergeKind::average:
    case MergeKind::add: {
      merged = member_outputs.front();
      for (std::size_t r = 1; r < member_outputs.size(); ++r) merged = add(merged, member_outputs[r]);
      if (config_.merge == MergeKind::average)
        merged = scale(merged, static_cast<T>(1.0 / static_cast<double>(members())));
      break;
    }
  }
  return softmax_channels(conv2d(relu(conv2d(merged, hidden_)), output_));
}

template <typename T>
Tensor<T> StackingModel<T>::predict(const std::vector<Tensor<T>>& member_outputs) const {
  NoGradGuard guard;
  std::vector<Var<T>> vars;
  for (const auto& m : member_outputs) vars.emplace_back(m);
  return forward(vars).value();
}

template class StackingModel<float>;
template class StackingModel<double>;

Tensor<float> predict_features(Network<float>& net, const Tensor<float>& image, int patch, int stride) {
  return tiled(prepare_input(image), patch, stride, [&net](const Tensor<float>& x) {
    NoGradGuard guard;
    return net.forward(Var<float>(x), ForwardMode{false}).head_input.value();
  });
}

std::vector<MemberFn> resolve_members(const EnsembleSpec& spec, const MemberSet& set) {
  spec.validate();
  const bool tensors = spec.mode == EnsembleMode::stacking && spec.stacking.input == StackInput::tensor;
  std::vector<MemberFn> fns;
  for (const auto& id : spec.member_ids) {
    if (auto it = set.networks.find(id); it != set.networks.end() && it->second) {
      Network<float>* net = it->second;
      if (tensors)
        fns.push_back([net](const Tensor<float>& img) { return predict_features(*net, img); });
      else
        fns.push_back([net](const Tensor<float>& img) { return predict_scores(*net, img); });
      continue;
    }
    if (auto it = set.external_scores.find(id); it != set.external_scores.end()) {
      if (tensors)
        throw std::invalid_argument("member " + id +
                                    " only provides score maps; tensor-input stacking needs its head input");
      fns.push_back(it->second);
      continue;
    }
    if (id == "FCN")
      throw std::invalid_argument(
          "ensemble " + spec.id +
          " includes the FCN slot, which this toolkit does not build; register an external score provider");
    throw std::invalid_argument("ensemble " + spec.id + " member " + id + " is not available");
  }
  return fns;
}

namespace {

std::vector<Tensor<float>> run_members(const std::vector<MemberFn>& members, const Tensor<float>& image) {
  std::vector<Tensor<float>> outs;
  for (const auto& fn : members) outs.push_back(fn(image));
  return outs;
}

std::int64_t correct_pixels(const Tensor<float>& scores, const Tensor<float>& truth) {
  const int classes = scores.channels();
  std::int64_t correct = 0;
  for (std::size_t p = 0; p < scores.shape().pixels(); ++p) {
    const float* s = scores.raw().data() + p * classes;
    correct += truth[p * classes + (std::max_element(s, s + classes) - s)] == 1.0f;
  }
  return correct;
}

}  // namespace

StackingResult train_stacking(const EnsembleSpec& spec, const std::vector<MemberFn>& members,
                              const std::vector<const Sample*>& train,
                              const std::vector<const Sample*>& validation,
                              const StackingTrainConfig& config) {
  if (spec.mode != EnsembleMode::stacking) throw std::invalid_argument("ensemble is not a stacking ensemble");
  if (train.empty()) throw std::invalid_argument("stacking training set is empty");
  if (members.size() != spec.member_ids.size())
    throw std::invalid_argument("member functions do not match the roster");
  if (config.epochs < 0 || config.batch_size <= 0) throw std::invalid_argument("invalid stacking schedule");

  std::vector<std::vector<Tensor<float>>> cached;
  for (const Sample* s : train) cached.push_back(run_members(members, s->image));
  std::vector<int> channels;
  for (const auto& out : cached.front()) channels.push_back(out.channels());
  const int classes = train.front()->mask.channels();
  StackingResult result{StackingModel<float>(spec.stacking, channels, classes, config.seed),
                        {},
                        -1};
  StackingModel<float>& model = result.model;
  Optimizer<float> opt(config.optimizer);

  const auto& scored = validation.empty() ? train : validation;
  std::vector<std::vector<Tensor<float>>> scored_features;
  if (validation.empty())
    scored_features = cached;
  else
    for (const Sample* s : validation) scored_features.push_back(run_members(members, s->image));
  auto accuracy = [&] {
    std::int64_t correct = 0, total = 0;
    for (std::size_t i = 0; i < scored.size(); ++i) {
      correct += correct_pixels(model.predict(scored_features[i]), scored[i]->mask);
      total += static_cast<std::int64_t>(scored[i]->mask.shape().pixels());
    }
    return static_cast<double>(correct) / static_cast<double>(total);
  };

  std::vector<Tensor<float>> best;
  for (const auto& p : model.registry().params) best.push_back(p.var.value());
  double best_accuracy = -1.0;
  std::vector<std::size_t> order(train.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(config.seed, 11, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::int64_t correct = 0, pixels = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<std::vector<Tensor<float>>> per_member(members.size());
      std::vector<Tensor<float>> truths;
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t idx = order[i];
        if (config.augmentation) {
          const auto seed = derive_seed(derive_seed(config.seed, 12), static_cast<std::uint64_t>(epoch), idx);
          auto [img, mask] = augment(train[idx]->image, train[idx]->mask, seed);
          auto outs = run_members(members, img);
          for (std::size_t r = 0; r < members.size(); ++r) per_member[r].push_back(std::move(outs[r]));
          truths.push_back(std::move(mask));
        } else {
          for (std::size_t r = 0; r < members.size(); ++r) per_member[r].push_back(cached[idx][r]);
          truths.push_back(train[idx]->mask);
        }
      }
      std::vector<Var<float>> inputs;
      for (const auto& m : per_member) inputs.emplace_back(stack<float>(m));
      const Tensor<float> y = stack<float>(truths);
      for (auto& p : model.registry().params) {
        Var<float> v = p.var;
        v.zero_grad();
      }
      auto scores = model.forward(inputs);
      auto loss = cross_entropy(scores, y);
      const std::size_t n = y.shape().pixels();
      loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(n);
      correct += correct_pixels(scores.value(), y);
      pixels += static_cast<std::int64_t>(n);
      backward(loss);
      opt.step(model.registry().params);
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(pixels),
                    static_cast<double>(correct) / static_cast<double>(pixels), accuracy()};
    result.history.push_back(rec);
    if (rec.validation_accuracy > best_accuracy) {
      best_accuracy = rec.validation_accuracy;
      result.best_epoch = epoch;
      for (std::size_t i = 0; i < best.size(); ++i) best[i] = model.registry().params[i].var.value();
    }
  }
  for (std::size_t i = 0; i < best.size(); ++i) {
    Var<float> v = model.registry().params[i].var;
    v.mutable_value() = best[i];
  }
  return result;
}

Tensor<float> ensemble_scores(const EnsembleSpec& spec, const std::vector<MemberFn>& members,
                              const StackingModel<float>* stack, const Tensor<float>& image) {
  const auto outs = run_members(members, image);
  switch (spec.mode) {
    case EnsembleMode::arith: return average_arith(outs);
    case EnsembleMode::geo: return average_geo(outs);
    case EnsembleMode::stacking: break;
  }
  if (!stack) throw std::invalid_argument("stacking ensemble needs a trained stacking model");
  return stack->predict(outs);
}

}  // namespace segkit
