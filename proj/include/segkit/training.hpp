#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "segkit/data.hpp"
#include "segkit/metrics.hpp"
#include "segkit/topology.hpp"

namespace segkit {

enum class OptimizerKind { adam, rmsprop, adadelta };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 0.00033;
  double beta1 = 0.9;           // adam
  double beta2 = 0.999;         // adam
  double rmsprop_rho = 0.9;
  double adadelta_rho = 0.95;
  double epsilon = 1e-7;
};

/// Stateful first-order optimizer over a fixed, ordered parameter list.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  // Applies one update from the gradients currently stored on the parameters.
  // Parameters without a gradient are left alone. Throws std::domain_error on a
  // non-finite gradient, naming the parameter.
  void step(const std::vector<NamedParam<T>>& params);
  std::size_t steps() const { return steps_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> slot_a_;  // adam m, rmsprop/adadelta mean square gradient
  std::vector<std::vector<double>> slot_b_;  // adam v, adadelta mean square update
};

struct TrainConfig {
  OptimizerConfig optimizer;
  int epochs = 200;
  int batch_size = 4;
  std::uint64_t seed = 0;
  bool augmentation = false;
};

/// Optimizer and learning rate of a named topology; other fields keep desk-scale defaults.
TrainConfig table_config(const std::string& topology_id);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;       // pixel accuracy over the epoch's batches
  double validation_accuracy = 0.0;  // pixel accuracy in eval mode
};

struct TrainResult {
  Network<float> network;  // restored to the best epoch
  std::vector<EpochRecord> history;
  int best_epoch = -1;  // -1 when no epoch ran
};

/// Z-score normalisation applied to every network input.
Tensor<float> prepare_input(const Tensor<float>& image);

double pixel_accuracy(Network<float>& net, const std::vector<const Sample*>& samples);

/// Trains from the topology's seeded initialisation and keeps the weights of the
/// epoch with the highest validation pixel accuracy (earliest on ties). With an
/// empty validation list the training samples are scored instead.
TrainResult train_model(const TopologySpec& spec, const std::vector<const Sample*>& train,
                        const std::vector<const Sample*>& validation, const TrainConfig& config);

struct Fold {
  std::vector<int> train_patients;
  std::vector<int> validation_patients;
  bool operator==(const Fold&) const = default;
};

struct FoldPlan {
  std::vector<int> test_patients;
  std::vector<Fold> folds;  // three, validation groups rotate
  bool operator==(const FoldPlan&) const = default;
};

/// round(0.2·N) patients are held out for test; the rest form three groups and
/// fold f validates on group f.
FoldPlan make_folds(const std::vector<int>& patient_ids, std::uint64_t seed);

std::vector<const Sample*> select_patients(const Dataset& ds, const std::vector<int>& patients);

enum class Labelling { map, th };
std::string to_string(Labelling l);
Labelling parse_labelling(const std::string& s);

/// Runs `fn` over square tiles of min(patch, H, W) rounded down to a multiple of 16
/// and averages the overlaps. A single tile covering the image is passed through.
Tensor<float> tiled(const Tensor<float>& input, int patch, int stride,
                    const std::function<Tensor<float>(const Tensor<float>&)>& fn);

/// Full-image scores: normalise, tile into patches of min(patch, H, W) rounded down
/// to a multiple of 16, run the network and average the overlaps.
Tensor<float> predict_scores(Network<float>& net, const Tensor<float>& image, int patch = 256,
                             int stride = 192);

LabelMap apply_labelling(const Tensor<float>& scores, Labelling labelling,
                         const ClassThresholds* thresholds);

using ScoreFn = std::function<Tensor<float>(const Tensor<float>& image)>;

ClassThresholds tune_on(const ScoreFn& scorer, const std::vector<const Sample*>& samples);
ClassThresholds tune_on(Network<float>& net, const std::vector<const Sample*>& samples);

struct FoldModel {
  Network<float>* network = nullptr;
  ClassThresholds thresholds;  // used by th labelling
};

struct FoldScorer {
  ScoreFn scores;
  ClassThresholds thresholds;
};

/// Per-image confusion counts of every fold's score function on the shared test set.
std::vector<ImageCounts> evaluate_scorers(const std::vector<FoldScorer>& folds,
                                          const std::vector<const Sample*>& test, Labelling labelling);

/// Per-image confusion counts of every fold model on the shared test set.
std::vector<ImageCounts> evaluate_run(const std::vector<FoldModel>& folds,
                                      const std::vector<const Sample*>& test, Labelling labelling);

}  // namespace segkit
