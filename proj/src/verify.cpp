#include "segkit/verify.hpp"

#include <chrono>
#include <cmath>
#include <random>

#include "segkit/ensemble.hpp"
#include "segkit/ops.hpp"

namespace segkit {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Tensor<double> uniform(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(s);
  for (auto& v : t.raw()) v = d(rng);
  return t;
}

Tensor<double> one_hot(Shape s, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, s.c - 1);
  Tensor<double> t(s);
  for (std::size_t p = 0; p < s.pixels(); ++p) t[p * s.c + d(rng)] = 1.0;
  return t;
}

std::vector<Var<double>> pyramid(const std::vector<int>& channels, int top, std::mt19937_64& rng) {
  std::vector<Var<double>> levels;
  for (std::size_t i = 0; i < channels.size(); ++i)
    levels.emplace_back(uniform(Shape{1, top >> i, top >> i, channels[i]}, rng));
  return levels;
}

}  // namespace

GradientSuiteResult run_gradient_suite(std::uint64_t seed, const GradCheckOptions& options) {
  const auto t0 = Clock::now();
  GradientSuiteResult result;
  std::mt19937_64 rng(seed);
  Initializer init(seed + 1);

  auto record = [&](const std::string& name, const ParamRegistry<double>& reg,
                    const std::function<Var<double>()>& loss) {
    auto rep = gradient_check(reg.params, loss, options);
    result.checked += rep.checked;
    result.within_tolerance += rep.within_tolerance;
    result.max_rel_error = std::max(result.max_rel_error, rep.max_rel_error);
    result.passed = result.passed && rep.passed;
    result.blocks.push_back({name, std::move(rep)});
  };
  // Smooth scalar probe of a block output: Σ out ∘ R for a fixed random R.
  auto probe = [&](const std::string& name, const ParamRegistry<double>& reg,
                   const std::function<Var<double>()>& forward) {
    const Shape s = forward().shape();
    const auto r = uniform(s, rng);
    record(name, reg, [&forward, r] { return weighted_sum(forward(), r); });
  };

  {
    ConvBlockU<double> b(init, 3, 4);
    ParamRegistry<double> reg;
    b.collect(reg, "u");
    Var<double> x(uniform(Shape{2, 6, 6, 3}, rng));
    probe("U", reg, [&] { return b.forward(x, {true}); });
  }
  for (Activation act : {Activation::relu, Activation::prelu}) {
    ConvBlockV<double> b(init, 2, 3, 3, act);
    ParamRegistry<double> reg;
    b.collect(reg, "v");
    Var<double> x(uniform(Shape{1, 6, 6, 2}, rng));
    probe("V/" + to_string(act), reg, [&] { return b.forward(x, {}); });
  }
  {
    ConvBlockQ<double> b(init, 2, 3);
    ParamRegistry<double> reg;
    b.collect(reg, "q");
    Var<double> x(uniform(Shape{2, 6, 6, 2}, rng));
    probe("Q", reg, [&] { return b.forward(x, {true}); });
  }
  {
    MultiKernelInput<double> mk(init, 2, 4);
    ParamRegistry<double> reg;
    mk.collect(reg, "mk");
    Var<double> x(uniform(Shape{1, 8, 8, 2}, rng));
    probe("M", reg, [&] { return mk.forward(x, {}); });
  }
  {
    AttentionGate<double> ag(init, 3, 4);
    ParamRegistry<double> reg;
    ag.collect(reg, "ag");
    Var<double> enc(uniform(Shape{1, 8, 8, 3}, rng));
    Var<double> dec(uniform(Shape{1, 4, 4, 4}, rng));
    probe("AG", reg, [&] { return ag.forward(enc, dec).gated; });
  }
  {
    const std::vector<int> ch = {2, 2, 3, 3, 4};
    auto c = pyramid(ch, 16, rng);
    std::vector<Var<double>> first4(c.begin(), c.begin() + 4);
    DeepSupervisionV1<double> v1(init, ch, 2);
    DeepSupervisionV2<double> v2(init, {2, 2, 3, 3}, 2);
    DeepSupervisionV3<double> v3(init, ch, 3);
    ParamRegistry<double> r1, r2, r3;
    v1.collect(r1, "ds1");
    v2.collect(r2, "ds2");
    v3.collect(r3, "ds3");
    // Probe every level of the pyramid so each level's kernel is exercised.
    auto pyramid_probe = [&](const std::string& name, const ParamRegistry<double>& reg,
                             const std::function<std::vector<Var<double>>()>& forward) {
      std::vector<Tensor<double>> weights;
      for (const auto& level : forward()) weights.push_back(uniform(level.shape(), rng));
      record(name, reg, [&forward, weights] {
        auto levels = forward();
        Var<double> total = weighted_sum(levels[0], weights[0]);
        for (std::size_t i = 1; i < levels.size(); ++i) total = add(total, weighted_sum(levels[i], weights[i]));
        return total;
      });
    };
    pyramid_probe("DS.v1", r1, [&] { return v1.forward(c); });
    pyramid_probe("DS.v2", r2, [&] { return v2.forward(first4); });
    probe("DS.v3", r3, [&] { return v3.forward(first4, c[4]); });
  }
  {
    ClassificationHead<double> head(init, 3, 4);
    ParamRegistry<double> reg;
    head.collect(reg, "head");
    Var<double> x(uniform(Shape{1, 4, 4, 3}, rng));
    const auto truth = one_hot(Shape{1, 4, 4, 4}, rng);
    record("head", reg, [&] { return cross_entropy(head.forward(x), truth); });
  }
  for (const char* preset : {"NAD", "TCD"}) {
    auto config = stacking_preset(preset);
    config.hidden_width = 6;
    StackingModel<double> model(config, 3, 4, 4, seed + 2);
    std::vector<Var<double>> members;
    for (int r = 0; r < 3; ++r) members.emplace_back(uniform(Shape{2, 3, 3, 4}, rng, 0.0, 1.0));
    const auto truth = one_hot(Shape{2, 3, 3, 4}, rng);
    record(std::string("stacking/") + preset, model.registry(),
           [&] { return cross_entropy(model.forward(members), truth); });
  }
  result.seconds = seconds_since(t0);
  return result;
}

ShapeSuiteResult run_shape_suite(const std::vector<std::string>& ids, int size, int m, int num_classes,
                                 std::uint64_t seed, double tolerance) {
  const auto t0 = Clock::now();
  ShapeSuiteResult result;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  Tensor<float> x(Shape{1, size, size, 2});
  for (auto& v : x.raw()) v = d(rng);
  for (const auto& id : ids) {
    TopologyShapeCheck check;
    check.id = id;
    try {
      const auto spec = named_topology(id, m, num_classes);
      const auto plan = validate_shapes(spec, size, size);
      Network<float> net(spec, seed);
      check.parameters = net.parameter_count();
      NoGradGuard guard;
      const auto trace = net.forward(Var<float>(x), ForwardMode{false});
      check_trace(trace, plan);
      const auto& scores = trace.scores.value();
      check.output = scores.shape();
      for (std::size_t p = 0; p < scores.shape().pixels(); ++p) {
        double total = 0.0;
        for (int c = 0; c < num_classes; ++c) total += scores[p * num_classes + c];
        check.max_sum_error = std::max(check.max_sum_error, std::abs(total - 1.0));
      }
      check.passed = check.output == (Shape{1, size, size, num_classes}) && check.max_sum_error <= tolerance;
    } catch (const std::exception& e) {
      check.error = e.what();
      check.passed = false;
    }
    result.passed = result.passed && check.passed;
    result.topologies.push_back(std::move(check));
  }
  result.seconds = seconds_since(t0);
  return result;
}

}  // namespace segkit
