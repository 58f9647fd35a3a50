#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "segkit/blocks.hpp"

namespace segkit {

enum class ConvKind { U, V, Q };

/// Declarative description of a U-Net variant.
struct TopologySpec {
  std::string id = "custom";
  ConvKind conv_kind = ConvKind::U;
  bool multi_kernel = false;
  bool attention = false;
  bool ds_v1 = false;
  bool ds_v2 = false;
  bool ds_v3 = false;
  int m = 64;
  int depth = 4;
  int num_classes = 12;
  Activation activation = Activation::relu;

  // Throws std::invalid_argument on an invalid combination.
  void validate() const;
  bool operator==(const TopologySpec&) const = default;
};

// The twelve U-Net variants: U1 UA UD UAD UMD UAMD UVMD UVDD UQD UDD UMDD UDD2.
const std::vector<std::string>& named_topology_ids();
bool is_named_topology(const std::string& id);
TopologySpec named_topology(const std::string& id, int m = 64, int num_classes = 12);

std::string to_string(ConvKind kind);
std::string to_string(Activation act);
ConvKind parse_conv_kind(const std::string& s);
Activation parse_activation(const std::string& s);

struct LevelPlanRow {
  std::string tensor;  // "enc1".."enc5", "fuse1", "dec_in1", "dec1", "ds3", "head_in", "scores"
  int level = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
};

struct LevelPlan {
  std::vector<LevelPlanRow> rows;
  const LevelPlanRow* find(const std::string& tensor) const;
};

// Channel count of encoder level 1..5 (5 is the bottleneck).
int level_channels(const TopologySpec& spec, int level);

/// Expected (level → spatial dims, channels) table for an input of the given size.
LevelPlan validate_shapes(const TopologySpec& spec, int height = 64, int width = 64);

template <typename T>
struct ForwardTrace {
  std::optional<Var<T>> multi_kernel;  // input feature extractor output
  std::vector<Var<T>> encoder;         // levels 1..5, index 4 is the bottleneck
  std::vector<Var<T>> fusion;          // skip / gate / supervision signals, levels 1..4
  std::vector<Var<T>> decoder_inputs;  // concat(fusion, upsampled decoder), levels 1..4
  std::vector<Var<T>> decoder;         // decoder block outputs, levels 1..4
  std::optional<Var<T>> supervised;    // DS.v3 output at full resolution
  Var<T> head_input;
  Var<T> scores;
};

/// A built topology owning its parameters.
template <typename T>
class Network {
 public:
  Network(const TopologySpec& spec, std::uint64_t seed);
  ~Network();
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;

  const TopologySpec& spec() const;
  ParamRegistry<T>& registry();
  const ParamRegistry<T>& registry() const;
  std::size_t parameter_count() const { return registry().scalar_count(); }

  // Input is n × H × W × 2 with H, W divisible by 16.
  ForwardTrace<T> forward(const Var<T>& input, ForwardMode mode = {});
  Tensor<T> predict(const Tensor<T>& input);

  // Width of the tensor that feeds the classification head.
  int head_input_channels() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Checks every recorded tensor of a trace against the plan; throws ShapeError on mismatch.
template <typename T>
void check_trace(const ForwardTrace<T>& trace, const LevelPlan& plan);

// Copies every parameter and buffer whose name exists in both registries.
template <typename T>
std::size_t copy_shared_parameters(const ParamRegistry<T>& from, ParamRegistry<T>& to);

}  // namespace segkit
