#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "segkit/training.hpp"

namespace segkit {

enum class EnsembleMode { arith, geo, stacking };
enum class StackInput { normalized, tensor };
enum class MergeKind { concat, average, add };

struct StackingConfig {
  StackInput input = StackInput::normalized;
  MergeKind merge = MergeKind::average;
  int hidden_width = 64;
  bool operator==(const StackingConfig&) const = default;
};

// "NAD" (normalised scores, average, dense) or "TCD" (tensors, concatenate, dense).
StackingConfig stacking_preset(const std::string& name);

struct EnsembleSpec {
  std::string id = "custom";
  std::vector<std::string> member_ids;
  EnsembleMode mode = EnsembleMode::arith;
  StackingConfig stacking;

  // Throws std::invalid_argument unless 2 ≤ members ≤ 13 and the stacking width is positive.
  void validate() const;
  bool operator==(const EnsembleSpec&) const = default;
};

const std::vector<std::string>& named_ensemble_ids();  // E4 ... E13
const std::vector<std::string>& ensemble_roster(const std::string& id);

/// `mode` is "arith", "geo", "stacking-NAD" or "stacking-TCD".
EnsembleSpec named_ensemble(const std::string& id, const std::string& mode = "arith");
EnsembleSpec parse_ensemble_mode(EnsembleSpec spec, const std::string& mode);
std::string mode_name(const EnsembleSpec& spec);

std::string to_string(StackInput v);
std::string to_string(MergeKind v);
StackInput parse_stack_input(const std::string& s);
MergeKind parse_merge(const std::string& s);

/// Elementwise mean of member score maps.
Tensor<float> average_arith(const std::vector<Tensor<float>>& members);

/// R-th root of the product of floored scores, renormalised per pixel.
/// With `renormalize` false the raw geometric mean is returned.
Tensor<float> average_geo(const std::vector<Tensor<float>>& members, bool renormalize = true);

/// Merge stage followed by a positionwise dense layer with ReLU and a positionwise
/// dense layer with softmax.
template <typename T>
class StackingModel {
 public:
  StackingModel(const StackingConfig& config, int members, int member_channels, int num_classes,
                std::uint64_t seed);
  // Members may differ in width only under concatenation.
  StackingModel(const StackingConfig& config, std::vector<int> member_channels, int num_classes,
                std::uint64_t seed);

  Var<T> forward(const std::vector<Var<T>>& member_outputs) const;
  Tensor<T> predict(const std::vector<Tensor<T>>& member_outputs) const;

  int merged_width() const;
  int members() const { return static_cast<int>(member_channels_.size()); }
  const std::vector<int>& member_channels() const { return member_channels_; }
  int num_classes() const { return num_classes_; }
  const StackingConfig& config() const { return config_; }
  ParamRegistry<T>& registry() { return registry_; }
  const ParamRegistry<T>& registry() const { return registry_; }

 private:
  StackingConfig config_;
  std::vector<int> member_channels_;
  int num_classes_;
  ConvKernel<T> hidden_;
  ConvKernel<T> output_;
  ParamRegistry<T> registry_;
};

/// Produces one member's output for a raw image: a score map or the tensor that
/// feeds its classification head.
using MemberFn = std::function<Tensor<float>(const Tensor<float>& image)>;

struct MemberSet {
  std::map<std::string, Network<float>*> networks;
  // Score maps from models built elsewhere (for instance the FCN slot).
  std::map<std::string, MemberFn> external_scores;
};

/// Head-input tensor of a network over a full image, tiled like predict_scores.
Tensor<float> predict_features(Network<float>& net, const Tensor<float>& image, int patch = 256,
                               int stride = 192);

/// One function per member, in roster order. Throws when a member is missing; a
/// tensor-input stack cannot use external score providers.
std::vector<MemberFn> resolve_members(const EnsembleSpec& spec, const MemberSet& set);

struct StackingTrainConfig {
  OptimizerConfig optimizer;  // Adam, lr 0.00033
  int epochs = 50;
  int batch_size = 4;
  std::uint64_t seed = 0;
  bool augmentation = false;
};

struct StackingResult {
  StackingModel<float> model;
  std::vector<EpochRecord> history;
  int best_epoch = -1;
};

/// Trains only the stacking parameters; member outputs are recomputed per epoch
/// when augmentation is on and cached otherwise.
StackingResult train_stacking(const EnsembleSpec& spec, const std::vector<MemberFn>& members,
                              const std::vector<const Sample*>& train,
                              const std::vector<const Sample*>& validation,
                              const StackingTrainConfig& config);

/// Ensemble score map of one raw image.
Tensor<float> ensemble_scores(const EnsembleSpec& spec, const std::vector<MemberFn>& members,
                              const StackingModel<float>* stack, const Tensor<float>& image);

}  // namespace segkit
