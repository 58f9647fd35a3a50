#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "segkit/tensor.hpp"

namespace segkit {

/// H × W class indices.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<int> labels;

  LabelMap() = default;
  LabelMap(int h, int w, int fill = 0)
      : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

  int& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  int at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return labels.size(); }
  bool operator==(const LabelMap&) const = default;
};

// Throws std::invalid_argument unless every pixel has exactly one channel equal to 1.
LabelMap labels_from_one_hot(const Tensor<float>& mask);
Tensor<float> one_hot_from_labels(const LabelMap& labels, int num_classes);
bool is_one_hot(const Tensor<float>& mask);

// Stateless mixing of a base seed with stream indices.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

/// Per-channel zero mean / unit population variance. Channels with std < 1e-8 become zeros.
Tensor<float> zscore_normalize(const Tensor<float>& image);

struct PatchGrid {
  int image_h = 0;
  int image_w = 0;
  int size = 256;    // patch side
  int stride = 192;
  std::vector<std::pair<int, int>> anchors;  // (row, col) of each window's top-left corner

  // Number of windows covering each pixel, row-major.
  std::vector<int> membership() const;
};

std::vector<int> plan_axis(int extent, int size, int stride);
PatchGrid plan_grid(int height, int width, int size = 256, int stride = 192);

template <typename T>
std::vector<Tensor<T>> extract_patches(const Tensor<T>& image, const PatchGrid& grid);
LabelMap extract_patch(const LabelMap& labels, int row, int col, int size);

/// Averages each pixel over the patches that cover it.
template <typename T>
Tensor<T> reconstruct(const std::vector<Tensor<T>>& patches, const PatchGrid& grid);

struct AugmentParams {
  double rotation_deg = 0.0;  // counter-clockwise, about the image centre
  double zoom = 1.0;
  double shift_y = 0.0;  // fraction of height
  double shift_x = 0.0;  // fraction of width
  bool hflip = false;

  bool is_identity() const {
    return rotation_deg == 0.0 && zoom == 1.0 && shift_y == 0.0 && shift_x == 0.0 && !hflip;
  }
};

struct AugmentRanges {
  double max_rotation_deg = 20.0;
  double min_zoom = 0.5;
  double max_zoom = 1.5;
  double max_shift = 0.1;
  double flip_probability = 0.5;
};

AugmentParams sample_augment(std::uint64_t seed, const AugmentRanges& ranges = {});

/// Applies one geometric transform to an image (bilinear, zero outside) and its
/// one-hot mask (nearest, background outside).
std::pair<Tensor<float>, Tensor<float>> augment(const Tensor<float>& image,
                                                const Tensor<float>& mask,
                                                const AugmentParams& params);
std::pair<Tensor<float>, Tensor<float>> augment(const Tensor<float>& image,
                                                const Tensor<float>& mask, std::uint64_t seed);

struct Sample {
  std::string id;
  int patient_id = 0;
  Tensor<float> image;  // H × W × 2
  Tensor<float> mask;   // H × W × classes, one-hot
};

struct Dataset {
  int num_classes = 0;
  std::vector<Sample> samples;
};

struct SyntheticOptions {
  int patients = 0;  // 0 means one patient per image
  double noise = 0.1;
};

// Class-specific mean intensity of each of the two channels.
std::pair<float, float> class_signature(int cls, int num_classes);

Dataset generate_synthetic_dataset(int num_images, int height, int width, int num_classes,
                                   std::uint64_t seed, const SyntheticOptions& options = {});

}  // namespace segkit
