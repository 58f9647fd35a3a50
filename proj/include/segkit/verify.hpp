#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segkit/gradcheck.hpp"
#include "segkit/topology.hpp"

namespace segkit {

struct BlockGradCheck {
  std::string block;
  GradCheckReport report;
};

struct GradientSuiteResult {
  std::vector<BlockGradCheck> blocks;
  std::size_t checked = 0;
  std::size_t within_tolerance = 0;
  double max_rel_error = 0.0;
  bool passed = true;
  double seconds = 0.0;

  double fraction_within() const {
    return checked == 0 ? 1.0 : static_cast<double>(within_tolerance) / static_cast<double>(checked);
  }
};

/// Finite-difference checks at double precision for every building block: U, V (ReLU
/// and PReLU), Q, multi-kernel input, attention gate, DS.v1-v3, head and both stacking
/// presets. Every coordinate of every parameter is checked.
GradientSuiteResult run_gradient_suite(std::uint64_t seed = 0, const GradCheckOptions& options = {});

struct TopologyShapeCheck {
  std::string id;
  Shape output;
  std::size_t parameters = 0;
  double max_sum_error = 0.0;  // max over pixels of |Σ_c score − 1|
  bool passed = false;
  std::string error;  // empty unless a shape or construction check threw
};

struct ShapeSuiteResult {
  std::vector<TopologyShapeCheck> topologies;
  bool passed = true;
  double seconds = 0.0;
};

/// Builds each listed topology, runs one eval-mode forward pass on a size×size×2
/// input and checks every traced tensor against the level plan, the output shape
/// and the per-pixel score sums.
ShapeSuiteResult run_shape_suite(const std::vector<std::string>& ids, int size = 64, int m = 64,
                                 int num_classes = 12, std::uint64_t seed = 0, double tolerance = 1e-6);

}  // namespace segkit
