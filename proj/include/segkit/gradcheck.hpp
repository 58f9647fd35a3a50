#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "segkit/autodiff.hpp"

namespace segkit {

template <typename T>
struct NamedParam {
  std::string name;
  Var<T> var;
};

struct GradCheckOptions {
  double step = 1e-3;
  double tolerance = 1e-4;     // per-coordinate relative error target
  double hard_limit = 1e-2;    // no coordinate may exceed this
  double min_fraction = 0.99;  // share of coordinates that must meet `tolerance`
  // Relative error is |a − n| / max(|a|, |n|, abs_floor). Gradients that vanish
  // analytically (a bias feeding batch norm) leave only rounding noise of order 1e-12.
  double abs_floor = 1e-6;
  // A coordinate that misses `tolerance` is re-measured with the step divided by 10
  // until it passes or the step drops below `min_step`. This separates ReLU kinks
  // lying within one step of the current value from genuine gradient errors.
  bool refine_on_kink = true;
  double min_step = 1e-6;
  // 0 checks every coordinate; otherwise a seeded sample per parameter.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct ParamCheck {
  std::string name;
  std::size_t checked = 0;
  std::size_t within_tolerance = 0;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  std::size_t refined = 0;  // coordinates that needed a smaller step
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  std::size_t checked = 0;
  std::size_t within_tolerance = 0;
  double max_rel_error = 0.0;
  std::size_t refined = 0;
  bool passed = true;

  double fraction_within() const {
    return checked == 0 ? 1.0 : static_cast<double>(within_tolerance) / static_cast<double>(checked);
  }
};

double relative_error(double analytic, double numeric, double abs_floor);

/// Compares reverse-mode gradients of `loss` against central differences.
/// `loss` must be deterministic in the parameter values.
GradCheckReport gradient_check(const std::vector<NamedParam<double>>& params,
                               const std::function<Var<double>()>& loss,
                               const GradCheckOptions& options = {});

}  // namespace segkit
