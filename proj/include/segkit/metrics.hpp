#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "segkit/data.hpp"

namespace segkit {

/// Per-pixel argmax; ties go to the lowest class index.
LabelMap label_map_map(const Tensor<float>& scores);

/// Thresholds of the target classes 1..C-1. Background has none.
struct ClassThresholds {
  std::vector<double> values;  // values[c - 1] is the threshold of class c

  static ClassThresholds uniform(int num_classes, double value);
  int num_classes() const { return static_cast<int>(values.size()) + 1; }
  double of(int cls) const { return values.at(static_cast<std::size_t>(cls - 1)); }
  bool operator==(const ClassThresholds&) const = default;
};

/// Visits classes by descending score (stable in class index). Background is
/// accepted when reached; a target class when its score meets its threshold.
/// Pixels where nothing is accepted become background.
LabelMap label_map_th(const Tensor<float>& scores, const ClassThresholds& thresholds);

struct ConfusionCounts {
  std::vector<std::int64_t> correct;    // pixels of class c predicted as c
  std::vector<std::int64_t> truth;      // ground-truth pixels of class c
  std::vector<std::int64_t> predicted;  // pixels predicted as c

  explicit ConfusionCounts(int num_classes = 0)
      : correct(num_classes, 0), truth(num_classes, 0), predicted(num_classes, 0) {}
  int num_classes() const { return static_cast<int>(correct.size()); }
  ConfusionCounts& operator+=(const ConfusionCounts& other);
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(const LabelMap& pred, const LabelMap& truth, int num_classes);
ConfusionCounts confusion(const LabelMap& pred, const Tensor<float>& truth_one_hot);

// Empty class that was never predicted.
bool is_degenerate(const ConfusionCounts& counts, int cls);
double iou(const ConfusionCounts& counts, int cls);
std::vector<double> iou_per_class(const ConfusionCounts& counts);
double iou_mean(const std::vector<double>& per_class, bool include_background);

/// Candidate thresholds 0.05, 0.10, ..., 0.95.
std::vector<double> threshold_grid();

/// Tunes each target class on its own, the other classes held at 0.5, maximising
/// that class's IoU over the pooled set. Ties keep the smallest threshold.
ClassThresholds tune_thresholds(const std::vector<Tensor<float>>& scores,
                                const std::vector<LabelMap>& truths);

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double p_value = 1.0;    // two-sided
  int n = 0;               // pairs with a non-zero difference
  bool exact = false;
};

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b);

struct ImageCounts {
  int fold = 0;
  std::string image_id;
  ConfusionCounts counts;
};

struct MetricsSummary {
  std::vector<double> per_class;  // averaged over folds
  double mean_without_background = 0.0;
  double mean_with_background = 0.0;
  int folds = 0;
};

/// Pools counts per fold, computes IoU per fold and averages over folds.
MetricsSummary summarize(const std::vector<ImageCounts>& rows);

/// Columns fold,image_id,class_id,m_cc,t_c,m_c,iou,degenerate. Per-image rows come
/// first, then per-fold TOTAL rows, fold-averaged MEAN rows and the two summary rows.
void write_metrics_csv(std::ostream& out, const std::vector<ImageCounts>& rows);

/// Re-reads a metrics CSV and checks that every TOTAL row equals the sum of its fold's
/// per-image rows. Returns a description of each mismatch (empty when consistent).
std::vector<std::string> check_metrics_totals(std::istream& csv);

}  // namespace segkit
