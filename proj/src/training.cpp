#include "segkit/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "segkit/ops.hpp"

namespace segkit {

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::rmsprop: return "rmsprop";
    case OptimizerKind::adadelta: return "adadelta";
  }
  return "?";
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "rmsprop") return OptimizerKind::rmsprop;
  if (s == "adadelta") return OptimizerKind::adadelta;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

template <typename T>
Optimizer<T>::Optimizer(OptimizerConfig config) : config_(config) {
  if (!(config_.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
}

template <typename T>
void Optimizer<T>::step(const std::vector<NamedParam<T>>& params) {
  if (slot_a_.empty()) {
    for (const auto& p : params) {
      slot_a_.emplace_back(p.var.value().size(), 0.0);
      slot_b_.emplace_back(p.var.value().size(), 0.0);
    }
  } else if (slot_a_.size() != params.size()) {
    throw std::invalid_argument("optimizer was built for a different parameter list");
  }
  for (const auto& p : params) {
    if (!p.var.has_grad()) continue;
    for (T g : p.var.node()->grad.raw())
      if (!std::isfinite(g)) throw std::domain_error("non-finite gradient in parameter " + p.name);
  }
  ++steps_;
  const double lr = config_.learning_rate, eps = config_.epsilon;
  const double t = static_cast<double>(steps_);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = params[k];
    if (!p.var.has_grad()) continue;
    Var<T> v = p.var;
    auto& w = v.mutable_value().raw();
    const auto& g = v.node()->grad.raw();
    auto& a = slot_a_[k];
    auto& b = slot_b_[k];
    switch (config_.kind) {
      case OptimizerKind::adam: {
        const double b1 = config_.beta1, b2 = config_.beta2;
        const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
        for (std::size_t i = 0; i < w.size(); ++i) {
          a[i] = b1 * a[i] + (1.0 - b1) * g[i];
          b[i] = b2 * b[i] + (1.0 - b2) * g[i] * g[i];
          w[i] -= static_cast<T>(lr * (a[i] / c1) / (std::sqrt(b[i] / c2) + eps));
        }
        break;
      }
      case OptimizerKind::rmsprop: {
        const double rho = config_.rmsprop_rho;
        for (std::size_t i = 0; i < w.size(); ++i) {
          a[i] = rho * a[i] + (1.0 - rho) * g[i] * g[i];
          w[i] -= static_cast<T>(lr * g[i] / (std::sqrt(a[i]) + eps));
        }
        break;
      }
      case OptimizerKind::adadelta: {
        const double rho = config_.adadelta_rho;
        for (std::size_t i = 0; i < w.size(); ++i) {
          a[i] = rho * a[i] + (1.0 - rho) * g[i] * g[i];
          const double dx = std::sqrt(b[i] + eps) / std::sqrt(a[i] + eps) * g[i];
          b[i] = rho * b[i] + (1.0 - rho) * dx * dx;
          w[i] -= static_cast<T>(lr * dx);
        }
        break;
      }
    }
  }
}

template class Optimizer<float>;
template class Optimizer<double>;

TrainConfig table_config(const std::string& topology_id) {
  TrainConfig c;
  if (topology_id == "UAD") {
    c.optimizer.kind = OptimizerKind::rmsprop;
    c.optimizer.learning_rate = 0.001;
  } else if (topology_id == "U1") {
    c.optimizer.kind = OptimizerKind::adadelta;
    c.optimizer.learning_rate = 1.0;
  } else {
    c.optimizer.kind = OptimizerKind::adam;
    c.optimizer.learning_rate = 0.00033;
  }
  return c;
}

Tensor<float> prepare_input(const Tensor<float>& image) { return zscore_normalize(image); }

namespace {

struct Snapshot {
  std::vector<Tensor<float>> params;
  std::vector<std::vector<float>> buffers;
};

Snapshot take_snapshot(const ParamRegistry<float>& reg) {
  Snapshot s;
  for (const auto& p : reg.params) s.params.push_back(p.var.value());
  for (const auto& b : reg.buffers) s.buffers.push_back(*b.values);
  return s;
}

void restore_snapshot(ParamRegistry<float>& reg, const Snapshot& s) {
  for (std::size_t i = 0; i < reg.params.size(); ++i) {
    Var<float> v = reg.params[i].var;
    v.mutable_value() = s.params[i];
  }
  for (std::size_t i = 0; i < reg.buffers.size(); ++i) *reg.buffers[i].values = s.buffers[i];
}

std::int64_t count_correct(const Tensor<float>& scores, const Tensor<float>& truth) {
  const int classes = scores.channels();
  std::int64_t correct = 0;
  for (std::size_t p = 0; p < scores.shape().pixels(); ++p) {
    const float* s = scores.raw().data() + p * classes;
    int best = 0;
    for (int c = 1; c < classes; ++c)
      if (s[c] > s[best]) best = c;
    correct += truth[p * classes + best] == 1.0f;
  }
  return correct;
}

}  // namespace

Tensor<float> tiled(const Tensor<float>& input, int patch, int stride,
                    const std::function<Tensor<float>(const Tensor<float>&)>& fn) {
  if (input.batch() != 1) throw ShapeError("expected a single image, got " + input.shape().str());
  const int size = std::min({patch, input.height(), input.width()}) / 16 * 16;
  if (size < 16) throw ShapeError("image " + input.shape().str() + " is smaller than 16x16");
  if (size == input.height() && size == input.width()) return fn(input);
  const PatchGrid grid = plan_grid(input.height(), input.width(), size, std::min(stride, size));
  std::vector<Tensor<float>> outputs;
  for (const auto& p : extract_patches(input, grid)) outputs.push_back(fn(p));
  return reconstruct(outputs, grid);
}

Tensor<float> predict_scores(Network<float>& net, const Tensor<float>& image, int patch, int stride) {
  return tiled(prepare_input(image), patch, stride,
               [&net](const Tensor<float>& x) { return net.predict(x); });
}

double pixel_accuracy(Network<float>& net, const std::vector<const Sample*>& samples) {
  std::int64_t correct = 0, total = 0;
  for (const Sample* s : samples) {
    correct += count_correct(predict_scores(net, s->image), s->mask);
    total += static_cast<std::int64_t>(s->mask.shape().pixels());
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

TrainResult train_model(const TopologySpec& spec, const std::vector<const Sample*>& train,
                        const std::vector<const Sample*>& validation, const TrainConfig& config) {
  if (train.empty()) throw std::invalid_argument("training set is empty");
  if (config.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (config.batch_size <= 0) throw std::invalid_argument("batch size must be positive");
  TrainResult result{Network<float>(spec, config.seed), {}, -1};
  Network<float>& net = result.network;
  Optimizer<float> opt(config.optimizer);

  std::vector<Tensor<float>> inputs;
  for (const Sample* s : train) {
    if (s->mask.channels() != spec.num_classes)
      throw std::invalid_argument("sample " + s->id + " has " + std::to_string(s->mask.channels()) +
                                  " mask channels, topology expects " +
                                  std::to_string(spec.num_classes));
    inputs.push_back(prepare_input(s->image));
  }
  const auto& scored = validation.empty() ? train : validation;

  Snapshot best = take_snapshot(net.registry());
  double best_accuracy = -1.0;
  std::vector<std::size_t> order(train.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(config.seed, 1, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::int64_t correct = 0, pixels = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<Tensor<float>> xs, ys;
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t idx = order[i];
        if (config.augmentation) {
          const std::uint64_t s = derive_seed(derive_seed(config.seed, 2), static_cast<std::uint64_t>(epoch), idx);
          auto [x, y] = augment(inputs[idx], train[idx]->mask, s);
          xs.push_back(std::move(x));
          ys.push_back(std::move(y));
        } else {
          xs.push_back(inputs[idx]);
          ys.push_back(train[idx]->mask);
        }
      }
      const Tensor<float> x = stack<float>(xs), y = stack<float>(ys);
      for (auto& p : net.registry().params) {
        Var<float> v = p.var;
        v.zero_grad();
      }
      auto trace = net.forward(Var<float>(x), ForwardMode{true});
      auto loss = cross_entropy(trace.scores, y);
      const std::size_t n = y.shape().pixels();
      loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(n);
      correct += count_correct(trace.scores.value(), y);
      pixels += static_cast<std::int64_t>(n);
      backward(loss);
      opt.step(net.registry().params);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(pixels);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(pixels);
    rec.validation_accuracy = pixel_accuracy(net, scored);
    result.history.push_back(rec);
    if (rec.validation_accuracy > best_accuracy) {
      best_accuracy = rec.validation_accuracy;
      result.best_epoch = epoch;
      best = take_snapshot(net.registry());
    }
  }
  restore_snapshot(net.registry(), best);
  return result;
}

FoldPlan make_folds(const std::vector<int>& patient_ids, std::uint64_t seed) {
  std::set<int> unique(patient_ids.begin(), patient_ids.end());
  std::vector<int> patients(unique.begin(), unique.end());
  if (patients.size() < 5)
    throw std::invalid_argument("need at least 5 patients for a 3-fold split with a test set, got " +
                                std::to_string(patients.size()));
  std::mt19937_64 rng(derive_seed(seed, 3));
  std::shuffle(patients.begin(), patients.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(patients.size())));
  FoldPlan plan;
  plan.test_patients.assign(patients.begin(), patients.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::vector<int>> groups(3);
  for (std::size_t i = n_test; i < patients.size(); ++i) groups[(i - n_test) % 3].push_back(patients[i]);
  for (int f = 0; f < 3; ++f) {
    Fold fold;
    fold.validation_patients = groups[f];
    for (int g = 0; g < 3; ++g)
      if (g != f) fold.train_patients.insert(fold.train_patients.end(), groups[g].begin(), groups[g].end());
    std::sort(fold.train_patients.begin(), fold.train_patients.end());
    std::sort(fold.validation_patients.begin(), fold.validation_patients.end());
    plan.folds.push_back(std::move(fold));
  }
  std::sort(plan.test_patients.begin(), plan.test_patients.end());
  return plan;
}

std::vector<const Sample*> select_patients(const Dataset& ds, const std::vector<int>& patients) {
  std::set<int> wanted(patients.begin(), patients.end());
  std::vector<const Sample*> out;
  for (const auto& s : ds.samples)
    if (wanted.count(s.patient_id)) out.push_back(&s);
  return out;
}

std::string to_string(Labelling l) { return l == Labelling::map ? "map" : "th"; }

Labelling parse_labelling(const std::string& s) {
  if (s == "map") return Labelling::map;
  if (s == "th") return Labelling::th;
  throw std::invalid_argument("unknown labelling '" + s + "' (expected map or th)");
}

LabelMap apply_labelling(const Tensor<float>& scores, Labelling labelling,
                         const ClassThresholds* thresholds) {
  if (labelling == Labelling::map) return label_map_map(scores);
  if (!thresholds) throw std::invalid_argument("th labelling needs thresholds");
  return label_map_th(scores, *thresholds);
}

ClassThresholds tune_on(const ScoreFn& scorer, const std::vector<const Sample*>& samples) {
  std::vector<Tensor<float>> scores;
  std::vector<LabelMap> truths;
  for (const Sample* s : samples) {
    scores.push_back(scorer(s->image));
    truths.push_back(labels_from_one_hot(s->mask));
  }
  return tune_thresholds(scores, truths);
}

ClassThresholds tune_on(Network<float>& net, const std::vector<const Sample*>& samples) {
  return tune_on([&net](const Tensor<float>& img) { return predict_scores(net, img); }, samples);
}

std::vector<ImageCounts> evaluate_scorers(const std::vector<FoldScorer>& folds,
                                          const std::vector<const Sample*>& test, Labelling labelling) {
  if (folds.empty()) throw std::invalid_argument("no fold models to evaluate");
  std::vector<ImageCounts> rows;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (!folds[f].scores) throw std::invalid_argument("fold " + std::to_string(f) + " has no weights");
    for (const Sample* s : test) {
      const auto pred = apply_labelling(folds[f].scores(s->image), labelling, &folds[f].thresholds);
      rows.push_back({static_cast<int>(f), s->id, confusion(pred, s->mask)});
    }
  }
  return rows;
}

std::vector<ImageCounts> evaluate_run(const std::vector<FoldModel>& folds,
                                      const std::vector<const Sample*>& test, Labelling labelling) {
  std::vector<FoldScorer> scorers;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (!folds[f].network) throw std::invalid_argument("fold " + std::to_string(f) + " has no weights");
    Network<float>* net = folds[f].network;
    scorers.push_back({[net](const Tensor<float>& img) { return predict_scores(*net, img); }, folds[f].thresholds});
  }
  return evaluate_scorers(scorers, test, labelling);
}

}  // namespace segkit
