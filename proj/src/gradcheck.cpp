#include "segkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace segkit {

double relative_error(double analytic, double numeric, double abs_floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport gradient_check(const std::vector<NamedParam<double>>& params,
                               const std::function<Var<double>()>& loss,
                               const GradCheckOptions& options) {
  GradCheckReport report;
  std::vector<const NamedParam<double>*> trainable;
  for (const auto& p : params)
    if (p.var.requires_grad()) trainable.push_back(&p);
  if (trainable.empty()) return report;

  for (const auto* p : trainable) {
    Var<double> v = p->var;
    v.zero_grad();
  }
  backward(loss());
  std::vector<Tensor<double>> analytic;
  for (const auto* p : trainable) analytic.push_back(p->var.grad());

  std::mt19937_64 rng(options.seed);
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < trainable.size(); ++k) {
    Var<double> v = trainable[k]->var;
    Tensor<double>& values = v.mutable_value();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_param > 0 && coords.size() > options.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }

    ParamCheck pc;
    pc.name = trainable[k]->name;
    double err_sum = 0.0;
    for (std::size_t i : coords) {
      const double orig = values[i];
      auto central = [&](double h) {
        values[i] = orig + h;
        const double up = loss().value()[0];
        values[i] = orig - h;
        const double down = loss().value()[0];
        values[i] = orig;
        return (up - down) / (2.0 * h);
      };
      double h = options.step;
      double err = relative_error(analytic[k][i], central(h), options.abs_floor);
      if (err >= options.tolerance && options.refine_on_kink) {
        while (err >= options.tolerance && h / 10.0 >= options.min_step) {
          h /= 10.0;
          err = relative_error(analytic[k][i], central(h), options.abs_floor);
        }
        ++pc.refined;
      }
      ++pc.checked;
      if (err < options.tolerance) ++pc.within_tolerance;
      pc.max_rel_error = std::max(pc.max_rel_error, err);
      err_sum += err;
    }
    pc.mean_rel_error = pc.checked ? err_sum / static_cast<double>(pc.checked) : 0.0;
    report.checked += pc.checked;
    report.within_tolerance += pc.within_tolerance;
    report.refined += pc.refined;
    report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
    report.params.push_back(std::move(pc));
  }
  report.passed = report.fraction_within() >= options.min_fraction &&
                  report.max_rel_error <= options.hard_limit;
  return report;
}

}  // namespace segkit
