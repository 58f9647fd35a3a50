#include "segkit/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace segkit {

LabelMap labels_from_one_hot(const Tensor<float>& mask) {
  if (mask.batch() != 1) throw ShapeError("one-hot mask must be a single image");
  LabelMap out(mask.height(), mask.width());
  const int classes = mask.channels();
  for (std::size_t p = 0; p < out.size(); ++p) {
    int hot = -1;
    for (int c = 0; c < classes; ++c) {
      const float v = mask[p * classes + c];
      if (v == 1.0f && hot < 0) {
        hot = c;
      } else if (v != 0.0f) {
        hot = -2;
        break;
      }
    }
    if (hot < 0) throw std::invalid_argument("mask is not one-hot at pixel " + std::to_string(p));
    out.labels[p] = hot;
  }
  return out;
}

Tensor<float> one_hot_from_labels(const LabelMap& labels, int num_classes) {
  Tensor<float> out(labels.height, labels.width, num_classes);
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const int c = labels.labels[p];
    if (c < 0 || c >= num_classes)
      throw std::out_of_range("class index " + std::to_string(c) + " outside [0, " +
                              std::to_string(num_classes) + ")");
    out[p * num_classes + c] = 1.0f;
  }
  return out;
}

bool is_one_hot(const Tensor<float>& mask) {
  const int classes = mask.channels();
  for (std::size_t p = 0; p < mask.shape().pixels(); ++p) {
    int ones = 0;
    for (int c = 0; c < classes; ++c) {
      const float v = mask[p * classes + c];
      if (v == 1.0f)
        ++ones;
      else if (v != 0.0f)
        return false;
    }
    if (ones != 1) return false;
  }
  return true;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(splitmix64(base) ^ a) ^ b);
}

Tensor<float> zscore_normalize(const Tensor<float>& image) {
  Tensor<float> out(image.shape());
  const int channels = image.channels();
  const std::size_t pixels = image.shape().pixels();
  for (int c = 0; c < channels; ++c) {
    double mean = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) mean += image[p * channels + c];
    mean /= static_cast<double>(pixels);
    double var = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) {
      const double d = image[p * channels + c] - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / static_cast<double>(pixels));
    if (sd < 1e-8) continue;
    for (std::size_t p = 0; p < pixels; ++p)
      out[p * channels + c] = static_cast<float>((image[p * channels + c] - mean) / sd);
  }
  return out;
}

std::vector<int> PatchGrid::membership() const {
  std::vector<int> counts(static_cast<std::size_t>(image_h) * image_w, 0);
  for (const auto& [r, c] : anchors)
    for (int y = r; y < r + size; ++y)
      for (int x = c; x < c + size; ++x) ++counts[static_cast<std::size_t>(y) * image_w + x];
  return counts;
}

std::vector<int> plan_axis(int extent, int size, int stride) {
  if (size <= 0 || stride <= 0) throw std::invalid_argument("patch size and stride must be positive");
  if (size > extent)
    throw std::invalid_argument("patch size " + std::to_string(size) + " exceeds image extent " +
                                std::to_string(extent));
  std::vector<int> anchors;
  for (int a = 0; a < extent - size; a += stride) anchors.push_back(a);
  if (anchors.empty() || anchors.back() != extent - size) anchors.push_back(extent - size);
  return anchors;
}

PatchGrid plan_grid(int height, int width, int size, int stride) {
  PatchGrid grid{height, width, size, stride, {}};
  const auto rows = plan_axis(height, size, stride);
  const auto cols = plan_axis(width, size, stride);
  for (int r : rows)
    for (int c : cols) grid.anchors.emplace_back(r, c);
  return grid;
}

namespace {

void check_grid_image(const Shape& s, const PatchGrid& grid) {
  if (s.n != 1 || s.h != grid.image_h || s.w != grid.image_w)
    throw ShapeError("image " + s.str() + " does not match the grid's " +
                     std::to_string(grid.image_h) + "x" + std::to_string(grid.image_w));
}

}  // namespace

template <typename T>
std::vector<Tensor<T>> extract_patches(const Tensor<T>& image, const PatchGrid& grid) {
  check_grid_image(image.shape(), grid);
  const int ch = image.channels();
  std::vector<Tensor<T>> patches;
  patches.reserve(grid.anchors.size());
  for (const auto& [r, c] : grid.anchors) {
    Tensor<T> p(grid.size, grid.size, ch);
    for (int y = 0; y < grid.size; ++y) {
      const auto src = image.pixel(0, r + y, c);
      std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(grid.size) * ch,
                p.raw().begin() + static_cast<std::ptrdiff_t>(p.index(y, 0, 0)));
    }
    patches.push_back(std::move(p));
  }
  return patches;
}

LabelMap extract_patch(const LabelMap& labels, int row, int col, int size) {
  if (row < 0 || col < 0 || row + size > labels.height || col + size > labels.width)
    throw ShapeError("patch window outside the label map");
  LabelMap out(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) out.at(y, x) = labels.at(row + y, col + x);
  return out;
}

template <typename T>
Tensor<T> reconstruct(const std::vector<Tensor<T>>& patches, const PatchGrid& grid) {
  if (patches.size() != grid.anchors.size())
    throw std::invalid_argument("got " + std::to_string(patches.size()) + " patches for " +
                                std::to_string(grid.anchors.size()) + " anchors");
  if (patches.empty()) throw std::invalid_argument("grid has no anchors");
  const int ch = patches.front().channels();
  for (const auto& p : patches)
    if (p.shape() != Shape{1, grid.size, grid.size, ch})
      throw ShapeError("score patch " + p.shape().str() + " does not match the grid");
  // Sums of a few copies of one value are exact in extended precision, so
  // averaging identical values returns them unchanged.
  std::vector<long double> acc(static_cast<std::size_t>(grid.image_h) * grid.image_w * ch, 0.0);
  const auto counts = grid.membership();
  for (std::size_t k = 0; k < patches.size(); ++k) {
    const auto [r, c] = grid.anchors[k];
    for (int y = 0; y < grid.size; ++y)
      for (int x = 0; x < grid.size; ++x) {
        const std::size_t dst = (static_cast<std::size_t>(r + y) * grid.image_w + (c + x)) * ch;
        const std::size_t src = patches[k].index(y, x, 0);
        for (int i = 0; i < ch; ++i) acc[dst + i] += static_cast<long double>(patches[k][src + i]);
      }
  }
  Tensor<T> out(grid.image_h, grid.image_w, ch);
  for (std::size_t p = 0; p < counts.size(); ++p)
    for (int i = 0; i < ch; ++i)
      out[p * ch + i] = static_cast<T>(acc[p * ch + i] / static_cast<long double>(counts[p]));
  return out;
}

template std::vector<Tensor<float>> extract_patches(const Tensor<float>&, const PatchGrid&);
template std::vector<Tensor<double>> extract_patches(const Tensor<double>&, const PatchGrid&);
template Tensor<float> reconstruct(const std::vector<Tensor<float>>&, const PatchGrid&);
template Tensor<double> reconstruct(const std::vector<Tensor<double>>&, const PatchGrid&);

AugmentParams sample_augment(std::uint64_t seed, const AugmentRanges& ranges) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  AugmentParams p;
  p.rotation_deg = uniform(-ranges.max_rotation_deg, ranges.max_rotation_deg);
  p.zoom = uniform(ranges.min_zoom, ranges.max_zoom);
  p.shift_y = uniform(-ranges.max_shift, ranges.max_shift);
  p.shift_x = uniform(-ranges.max_shift, ranges.max_shift);
  p.hflip = unit(rng) < ranges.flip_probability;
  return p;
}

std::pair<Tensor<float>, Tensor<float>> augment(const Tensor<float>& image,
                                                const Tensor<float>& mask,
                                                const AugmentParams& params) {
  if (image.batch() != 1 || mask.batch() != 1 || image.height() != mask.height() ||
      image.width() != mask.width())
    throw ShapeError("image " + image.shape().str() + " and mask " + mask.shape().str() +
                     " are not aligned");
  if (params.zoom <= 0.0) throw std::invalid_argument("zoom must be positive");
  const int H = image.height(), W = image.width();
  const int ic = image.channels(), classes = mask.channels();
  const LabelMap labels = labels_from_one_hot(mask);

  const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
  const double theta = params.rotation_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double dy = params.shift_y * H, dx = params.shift_x * W;

  Tensor<float> out_img(H, W, ic);
  LabelMap out_lbl(H, W, 0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double xf = params.hflip ? (W - 1 - x) : x;
      const double qy = (y - dy) - cy, qx = (xf - dx) - cx;
      const double sy = cy + (cs * qy - sn * qx) / params.zoom;
      const double sx = cx + (sn * qy + cs * qx) / params.zoom;

      const int ny = static_cast<int>(std::lround(sy)), nx = static_cast<int>(std::lround(sx));
      if (ny >= 0 && ny < H && nx >= 0 && nx < W) out_lbl.at(y, x) = labels.at(ny, nx);

      const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      const double wts[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
      const int ys[4] = {y0, y0, y0 + 1, y0 + 1}, xs[4] = {x0, x0 + 1, x0, x0 + 1};
      for (int c = 0; c < ic; ++c) {
        double v = 0.0;
        for (int k = 0; k < 4; ++k)
          if (wts[k] != 0.0 && ys[k] >= 0 && ys[k] < H && xs[k] >= 0 && xs[k] < W)
            v += wts[k] * image.at(ys[k], xs[k], c);
        out_img.at(y, x, c) = static_cast<float>(v);
      }
    }
  return {std::move(out_img), one_hot_from_labels(out_lbl, classes)};
}

std::pair<Tensor<float>, Tensor<float>> augment(const Tensor<float>& image,
                                                const Tensor<float>& mask, std::uint64_t seed) {
  return augment(image, mask, sample_augment(seed));
}

std::pair<float, float> class_signature(int cls, int num_classes) {
  const int rows = std::max(1, (num_classes - 1) / 4);
  return {static_cast<float>(cls % 4) / 3.0f, static_cast<float>(cls / 4) / static_cast<float>(rows)};
}

namespace {

LabelMap draw_shapes(int H, int W, int num_classes, std::mt19937_64& rng) {
  LabelMap lbl(H, W, 0);
  std::vector<int> order(static_cast<std::size_t>(num_classes - 1));
  for (int c = 1; c < num_classes; ++c) order[c - 1] = c;
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int c : order) {
    const double ry = std::max(1.5, H * (0.08 + 0.14 * unit(rng)));
    const double rx = std::max(1.5, W * (0.08 + 0.14 * unit(rng)));
    const double my = ry + (H - 1 - 2 * ry) * unit(rng);
    const double mx = rx + (W - 1 - 2 * rx) * unit(rng);
    const bool ellipse = unit(rng) < 0.5;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double u = (y - my) / ry, v = (x - mx) / rx;
        const bool inside = ellipse ? (u * u + v * v <= 1.0) : (std::abs(u) <= 1.0 && std::abs(v) <= 1.0);
        if (inside) lbl.at(y, x) = c;
      }
  }
  return lbl;
}

int classes_present(const LabelMap& lbl, int num_classes) {
  std::vector<char> seen(static_cast<std::size_t>(num_classes), 0);
  for (int c : lbl.labels) seen[c] = 1;
  return static_cast<int>(std::count(seen.begin(), seen.end(), 1));
}

}  // namespace

Dataset generate_synthetic_dataset(int num_images, int height, int width, int num_classes,
                                   std::uint64_t seed, const SyntheticOptions& options) {
  if (num_classes < 2) throw std::invalid_argument("need at least 2 classes");
  if (num_images < 0) throw std::invalid_argument("num_images must be non-negative");
  if (height < 4 || width < 4) throw std::invalid_argument("synthetic images must be at least 4x4");
  Dataset ds;
  ds.num_classes = num_classes;
  const int patients = options.patients > 0 ? options.patients : std::max(1, num_images);
  for (int i = 0; i < num_images; ++i) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    LabelMap best = draw_shapes(height, width, num_classes, rng);
    for (int attempt = 0; attempt < 200 && classes_present(best, num_classes) < num_classes; ++attempt) {
      LabelMap next = draw_shapes(height, width, num_classes, rng);
      if (classes_present(next, num_classes) > classes_present(best, num_classes)) best = std::move(next);
    }
    std::normal_distribution<double> noise(0.0, options.noise);
    Tensor<float> image(height, width, 2);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const auto [a, b] = class_signature(best.at(y, x), num_classes);
        image.at(y, x, 0) = a + static_cast<float>(noise(rng));
        image.at(y, x, 1) = b + static_cast<float>(noise(rng));
      }
    Sample s;
    s.id = "img" + std::to_string(i);
    s.patient_id = i % patients;
    s.image = std::move(image);
    s.mask = one_hot_from_labels(best, num_classes);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace segkit
