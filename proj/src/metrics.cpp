#include "segkit/metrics.hpp"

#include <algorithm>
#include <array>
#include <istream>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace segkit {

namespace {

void check_scores(const Tensor<float>& scores) {
  if (scores.batch() != 1) throw ShapeError("score map must be a single image");
  if (scores.channels() < 2) throw ShapeError("score map needs at least 2 classes");
}

}  // namespace

LabelMap label_map_map(const Tensor<float>& scores) {
  check_scores(scores);
  LabelMap out(scores.height(), scores.width());
  const int classes = scores.channels();
  for (std::size_t p = 0; p < out.size(); ++p) {
    const float* s = scores.raw().data() + p * classes;
    int best = 0;
    for (int c = 1; c < classes; ++c)
      if (s[c] > s[best]) best = c;
    out.labels[p] = best;
  }
  return out;
}

ClassThresholds ClassThresholds::uniform(int num_classes, double value) {
  if (num_classes < 2) throw std::invalid_argument("need at least 2 classes");
  return ClassThresholds{std::vector<double>(static_cast<std::size_t>(num_classes - 1), value)};
}

LabelMap label_map_th(const Tensor<float>& scores, const ClassThresholds& thresholds) {
  check_scores(scores);
  const int classes = scores.channels();
  if (thresholds.num_classes() != classes)
    throw std::invalid_argument("expected " + std::to_string(classes - 1) + " thresholds, got " +
                                std::to_string(thresholds.values.size()));
  LabelMap out(scores.height(), scores.width());
  std::vector<int> order(static_cast<std::size_t>(classes));
  for (std::size_t p = 0; p < out.size(); ++p) {
    const float* s = scores.raw().data() + p * classes;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [s](int a, int b) { return s[a] > s[b]; });
    int label = 0;
    for (int c : order) {
      if (c == 0) break;
      if (s[c] >= thresholds.values[static_cast<std::size_t>(c - 1)]) {
        label = c;
        break;
      }
    }
    out.labels[p] = label;
  }
  return out;
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& other) {
  if (other.num_classes() != num_classes())
    throw std::invalid_argument("confusion counts have different class counts");
  for (int c = 0; c < num_classes(); ++c) {
    correct[c] += other.correct[c];
    truth[c] += other.truth[c];
    predicted[c] += other.predicted[c];
  }
  return *this;
}

ConfusionCounts confusion(const LabelMap& pred, const LabelMap& truth, int num_classes) {
  if (pred.height != truth.height || pred.width != truth.width)
    throw ShapeError("prediction and truth differ in size");
  ConfusionCounts counts(num_classes);
  for (std::size_t p = 0; p < pred.size(); ++p) {
    const int a = pred.labels[p], b = truth.labels[p];
    if (a < 0 || a >= num_classes || b < 0 || b >= num_classes)
      throw std::out_of_range("class index outside the class range");
    ++counts.predicted[a];
    ++counts.truth[b];
    if (a == b) ++counts.correct[a];
  }
  return counts;
}

ConfusionCounts confusion(const LabelMap& pred, const Tensor<float>& truth_one_hot) {
  return confusion(pred, labels_from_one_hot(truth_one_hot), truth_one_hot.channels());
}

bool is_degenerate(const ConfusionCounts& counts, int cls) {
  return counts.truth.at(cls) == 0 && counts.predicted.at(cls) == 0;
}

double iou(const ConfusionCounts& counts, int cls) {
  const std::int64_t denom = counts.truth.at(cls) + counts.predicted.at(cls) - counts.correct.at(cls);
  if (denom == 0) return 1.0;
  return static_cast<double>(counts.correct[cls]) / static_cast<double>(denom);
}

std::vector<double> iou_per_class(const ConfusionCounts& counts) {
  std::vector<double> out(static_cast<std::size_t>(counts.num_classes()));
  for (int c = 0; c < counts.num_classes(); ++c) out[c] = iou(counts, c);
  return out;
}

double iou_mean(const std::vector<double>& per_class, bool include_background) {
  const std::size_t first = include_background ? 0 : 1;
  if (per_class.size() <= first) throw std::invalid_argument("no classes to average");
  double sum = 0.0;
  for (std::size_t c = first; c < per_class.size(); ++c) sum += per_class[c];
  return sum / static_cast<double>(per_class.size() - first);
}

std::vector<double> threshold_grid() {
  std::vector<double> grid;
  for (int k = 1; k <= 19; ++k) grid.push_back(k / 20.0);
  return grid;
}

ClassThresholds tune_thresholds(const std::vector<Tensor<float>>& scores,
                                const std::vector<LabelMap>& truths) {
  if (scores.empty()) throw std::invalid_argument("validation set is empty");
  if (scores.size() != truths.size())
    throw std::invalid_argument("score maps and truths differ in count");
  const int classes = scores.front().channels();
  ClassThresholds tuned = ClassThresholds::uniform(classes, 0.5);
  for (int c = 1; c < classes; ++c) {
    ClassThresholds trial = ClassThresholds::uniform(classes, 0.5);
    double best_iou = -1.0;
    double best_t = 0.0;
    for (double t : threshold_grid()) {
      trial.values[c - 1] = t;
      ConfusionCounts pooled(classes);
      for (std::size_t i = 0; i < scores.size(); ++i)
        pooled += confusion(label_map_th(scores[i], trial), truths[i], classes);
      const double v = iou(pooled, c);
      if (v > best_iou) {
        best_iou = v;
        best_t = t;
      }
    }
    tuned.values[c - 1] = best_t;
  }
  return tuned;
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired samples differ in length");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) diffs.push_back(a[i] - b[i]);
  WilcoxonResult res;
  res.n = static_cast<int>(diffs.size());
  if (diffs.empty()) return res;
  if (res.n < 5)
    throw std::invalid_argument("need at least 5 non-zero differences, got " + std::to_string(res.n));

  // Mid-ranks of |d|, doubled so tied ranks stay integral.
  std::vector<std::size_t> idx(diffs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t i, std::size_t j) { return std::abs(diffs[i]) < std::abs(diffs[j]); });
  std::vector<long> rank2(diffs.size());
  std::vector<long> tie_sizes;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && std::abs(diffs[idx[j + 1]]) == std::abs(diffs[idx[i]])) ++j;
    const long r2 = static_cast<long>(i + 1 + j + 1);  // 2 × mean of ranks i+1..j+1
    for (std::size_t k = i; k <= j; ++k) rank2[idx[k]] = r2;
    tie_sizes.push_back(static_cast<long>(j - i + 1));
    i = j + 1;
  }
  long plus2 = 0, total2 = 0;
  for (std::size_t i = 0; i < diffs.size(); ++i) {
    total2 += rank2[i];
    if (diffs[i] > 0) plus2 += rank2[i];
  }
  const long min2 = std::min(plus2, total2 - plus2);
  res.statistic = min2 / 2.0;

  if (res.n <= 20) {
    // Distribution of the doubled positive-rank sum over all 2^n sign patterns.
    std::vector<double> ways(static_cast<std::size_t>(total2 + 1), 0.0);
    ways[0] = 1.0;
    for (long r : rank2)
      for (long s = total2; s >= r; --s) ways[s] += ways[s - r];
    double tail = 0.0;
    for (long s = 0; s <= min2; ++s) tail += ways[s];
    res.p_value = std::min(1.0, 2.0 * tail / std::ldexp(1.0, res.n));
    res.exact = true;
    return res;
  }
  const double n = res.n;
  const double mean = n * (n + 1) / 4.0;
  double var = n * (n + 1) * (2 * n + 1) / 24.0;
  for (long t : tie_sizes) var -= static_cast<double>(t * t * t - t) / 48.0;
  const double z = std::max(0.0, std::abs(res.statistic - mean) - 0.5) / std::sqrt(var);
  res.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return res;
}

MetricsSummary summarize(const std::vector<ImageCounts>& rows) {
  if (rows.empty()) throw std::invalid_argument("no metric rows");
  const int classes = rows.front().counts.num_classes();
  std::map<int, ConfusionCounts> per_fold;
  for (const auto& r : rows) {
    auto [it, inserted] = per_fold.try_emplace(r.fold, classes);
    it->second += r.counts;
  }
  MetricsSummary s;
  s.folds = static_cast<int>(per_fold.size());
  s.per_class.assign(static_cast<std::size_t>(classes), 0.0);
  for (const auto& [fold, counts] : per_fold) {
    const auto v = iou_per_class(counts);
    for (int c = 0; c < classes; ++c) s.per_class[c] += v[c];
  }
  for (auto& v : s.per_class) v /= s.folds;
  s.mean_without_background = iou_mean(s.per_class, false);
  s.mean_with_background = iou_mean(s.per_class, true);
  return s;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void write_metrics_csv(std::ostream& out, const std::vector<ImageCounts>& rows) {
  const MetricsSummary summary = summarize(rows);
  const int classes = rows.front().counts.num_classes();
  out << "fold,image_id,class_id,m_cc,t_c,m_c,iou,degenerate\n";
  auto emit = [&](const std::string& fold, const std::string& id, int c, const ConfusionCounts& k) {
    out << fold << ',' << id << ',' << c << ',' << k.correct[c] << ',' << k.truth[c] << ','
        << k.predicted[c] << ',' << num(iou(k, c)) << ',' << (is_degenerate(k, c) ? 1 : 0) << '\n';
  };
  std::map<int, ConfusionCounts> per_fold;
  for (const auto& r : rows) {
    for (int c = 0; c < classes; ++c) emit(std::to_string(r.fold), r.image_id, c, r.counts);
    auto [it, inserted] = per_fold.try_emplace(r.fold, classes);
    it->second += r.counts;
  }
  for (const auto& [fold, counts] : per_fold)
    for (int c = 0; c < classes; ++c) emit(std::to_string(fold), "TOTAL", c, counts);
  for (int c = 0; c < classes; ++c)
    out << "all,MEAN," << c << ",,,," << num(summary.per_class[c]) << ",\n";
  out << "all,IoU without Bg.,,,,," << num(summary.mean_without_background) << ",\n";
  out << "all,IoU with Bg.,,,,," << num(summary.mean_with_background) << ",\n";
}

std::vector<std::string> check_metrics_totals(std::istream& csv) {
  using Key = std::pair<std::string, std::string>;  // fold, class
  std::map<Key, std::array<std::int64_t, 3>> summed, totals;
  std::vector<std::string> problems;
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() < 6 || f[0] == "all") continue;
    std::array<std::int64_t, 3> v{std::stoll(f[3]), std::stoll(f[4]), std::stoll(f[5])};
    auto& slot = f[1] == "TOTAL" ? totals[{f[0], f[2]}] : summed[{f[0], f[2]}];
    for (int i = 0; i < 3; ++i) slot[i] += v[i];
  }
  if (totals.size() != summed.size()) problems.push_back("TOTAL rows do not cover every fold and class");
  for (const auto& [key, t] : totals)
    if (summed[key] != t) problems.push_back("fold " + key.first + " class " + key.second + ": TOTAL differs from per-image sum");
  return problems;
}

}  // namespace segkit
