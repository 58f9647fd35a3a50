#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "segkit/data.hpp"
#include "test_util.hpp"

namespace segkit {
namespace {

using testing::random_tensor;

TEST(ZScore, ThreeValues) {
  Tensor<float> t(1, 3, 1);
  t[0] = 1;
  t[1] = 2;
  t[2] = 3;
  auto z = zscore_normalize(t);
  EXPECT_NEAR(z[0], -1.2247449, 1e-6);
  EXPECT_NEAR(z[1], 0.0, 1e-7);
  EXPECT_NEAR(z[2], 1.2247449, 1e-6);
}

TEST(ZScore, ConstantChannelBecomesZeros) {
  Tensor<float> t(4, 4, 2, 3.5f);
  for (int i = 0; i < 16; ++i) t[i * 2 + 1] = static_cast<float>(i);
  auto z = zscore_normalize(t);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(z[i * 2], 0.0f);
}

TEST(ZScore, ChannelsAreIndependent) {
  auto t = random_tensor<float>(Shape{1, 20, 20, 2}, 1, -3.0, 9.0);
  for (int i = 0; i < 400; ++i) t[i * 2 + 1] = t[i * 2 + 1] * 100.0f + 7.0f;
  auto z = zscore_normalize(t);
  for (int c = 0; c < 2; ++c) {
    double mean = 0, sq = 0;
    for (int i = 0; i < 400; ++i) mean += z[i * 2 + c];
    mean /= 400;
    for (int i = 0; i < 400; ++i) sq += (z[i * 2 + c] - mean) * (z[i * 2 + c] - mean);
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(std::sqrt(sq / 400), 1.0, 1e-6);
  }
  // Changing channel 1 must not move channel 0's output.
  auto t2 = t;
  for (int i = 0; i < 400; ++i) t2[i * 2 + 1] = -t2[i * 2 + 1] * 3.0f;
  auto z2 = zscore_normalize(t2);
  for (int i = 0; i < 400; ++i) EXPECT_EQ(z[i * 2], z2[i * 2]);
}

TEST(PlanGrid, PaperExamples) {
  auto g512 = plan_grid(512, 512, 256, 192);
  EXPECT_EQ(plan_axis(512, 256, 192), (std::vector<int>{0, 192, 256}));
  EXPECT_EQ(g512.anchors.size(), 9u);
  auto g256 = plan_grid(256, 256, 256, 192);
  ASSERT_EQ(g256.anchors.size(), 1u);
  EXPECT_EQ(g256.anchors[0], (std::pair<int, int>{0, 0}));
  auto g320 = plan_grid(320, 320, 256, 192);
  EXPECT_EQ(plan_axis(320, 256, 192), (std::vector<int>{0, 64}));
  EXPECT_EQ(g320.anchors.size(), 4u);
  EXPECT_THROW(plan_grid(200, 300, 256, 192), std::invalid_argument);
}

// Brute-force window count, independent of PatchGrid::membership.
int windows_covering(const PatchGrid& g, int y, int x) {
  int n = 0;
  for (const auto& [r, c] : g.anchors) n += (y >= r && y < r + g.size && x >= c && x < c + g.size);
  return n;
}

TEST(PlanGrid, MembershipIsOneTwoOrFourInPaperRegime) {
  for (int h : {256, 300, 320, 384, 448, 512})
    for (int w : {256, 320, 512}) {
      auto g = plan_grid(h, w);
      auto counts = g.membership();
      std::set<int> seen;
      for (int y = 0; y < h; y += 3)
        for (int x = 0; x < w; x += 3) {
          const int n = windows_covering(g, y, x);
          EXPECT_EQ(n, counts[static_cast<std::size_t>(y) * w + x]);
          seen.insert(n);
        }
      for (int n : seen) EXPECT_TRUE(n == 1 || n == 2 || n == 4) << h << "x" << w << " " << n;
    }
}

TEST(PlanGrid, CoverageForArbitraryGrids) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 4 + static_cast<int>(rng() % 12);
    const int s = 1 + static_cast<int>(rng() % d);
    const int h = d + static_cast<int>(rng() % 30), w = d + static_cast<int>(rng() % 30);
    auto g = plan_grid(h, w, d, s);
    for (int c : g.membership()) ASSERT_GE(c, 1);
    for (const auto& [r, c] : g.anchors) {
      ASSERT_LE(r + d, h);
      ASSERT_LE(c + d, w);
    }
  }
}

TEST(Patches, ExtractMatchesWindowedReads) {
  auto img = random_tensor<float>(Shape{1, 40, 36, 3}, 2);
  auto g = plan_grid(40, 36, 16, 12);
  auto patches = extract_patches(img, g);
  ASSERT_EQ(patches.size(), g.anchors.size());
  for (std::size_t k = 0; k < patches.size(); ++k) {
    const auto [r, c] = g.anchors[k];
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        for (int ch = 0; ch < 3; ++ch) ASSERT_EQ(patches[k].at(y, x, ch), img.at(r + y, c + x, ch));
  }
  auto single = plan_grid(36, 36, 36, 10);
  auto one = random_tensor<float>(Shape{1, 36, 36, 2}, 3);
  EXPECT_EQ(extract_patches(one, single).at(0), one);
}

TEST(Patches, ImageAndMaskStayIndexAligned) {
  auto ds = generate_synthetic_dataset(1, 48, 48, 5, 9);
  auto g = plan_grid(48, 48, 32, 24);
  auto ip = extract_patches(ds.samples[0].image, g);
  auto mp = extract_patches(ds.samples[0].mask, g);
  auto lbl = labels_from_one_hot(ds.samples[0].mask);
  for (std::size_t k = 0; k < g.anchors.size(); ++k) {
    EXPECT_EQ(labels_from_one_hot(mp[k]), extract_patch(lbl, g.anchors[k].first, g.anchors[k].second, 32));
    EXPECT_EQ(ip[k].at(0, 0, 0), ds.samples[0].image.at(g.anchors[k].first, g.anchors[k].second, 0));
  }
}

TEST(Reconstruct, AveragesOverlaps) {
  auto g = plan_grid(4, 6, 4, 2);  // anchors (0,0), (0,2)
  std::vector<Tensor<float>> p{Tensor<float>(4, 4, 1, 1.0f), Tensor<float>(4, 4, 1, 3.0f)};
  auto out = reconstruct(p, g);
  EXPECT_EQ(out.at(0, 0, 0), 1.0f);
  EXPECT_EQ(out.at(2, 2, 0), 2.0f);
  EXPECT_EQ(out.at(3, 5, 0), 3.0f);
  p.pop_back();
  EXPECT_THROW(reconstruct(p, g), std::invalid_argument);
}

TEST(Reconstruct, IsExactInverseOfExtract) {
  for (int size : {256, 320, 512}) {
    auto g = plan_grid(size, size, 256, 192);
    auto img = random_tensor<float>(Shape{1, size, size, 2}, static_cast<std::uint64_t>(size));
    EXPECT_EQ(reconstruct(extract_patches(img, g), g), img) << size;
  }
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 3 + static_cast<int>(rng() % 8), s = 1 + static_cast<int>(rng() % d);
    auto g = plan_grid(d + static_cast<int>(rng() % 20), d + static_cast<int>(rng() % 20), d, s);
    auto img = random_tensor<double>(Shape{1, g.image_h, g.image_w, 3}, rng(), -1e6, 1e6);
    ASSERT_EQ(reconstruct(extract_patches(img, g), g), img);
  }
}

TEST(Reconstruct, WeightsFollowMembership) {
  auto g = plan_grid(512, 512);
  std::vector<Tensor<float>> ones;
  for (std::size_t k = 0; k < g.anchors.size(); ++k) {
    Tensor<float> t(256, 256, 1, 0.0f);
    t.fill(k == 0 ? 1.0f : 0.0f);
    ones.push_back(t);
  }
  // Only the first patch carries 1, so the output is its averaging weight.
  auto out = reconstruct(ones, g);
  auto counts = g.membership();
  for (int y = 0; y < 256; ++y)
    for (int x = 0; x < 256; ++x) {
      const float wgt = out.at(y, x, 0);
      EXPECT_EQ(wgt, 1.0f / static_cast<float>(counts[static_cast<std::size_t>(y) * 512 + x]));
      EXPECT_TRUE(wgt == 1.0f || wgt == 0.5f || wgt == 0.25f);
    }
}

TEST(Augment, IdentityParameters) {
  auto ds = generate_synthetic_dataset(1, 24, 20, 4, 3);
  const auto& s = ds.samples[0];
  auto [img, mask] = augment(s.image, s.mask, AugmentParams{});
  EXPECT_EQ(img, s.image);
  EXPECT_EQ(mask, s.mask);
}

TEST(Augment, FlipTwiceRestores) {
  auto ds = generate_synthetic_dataset(1, 16, 22, 4, 4);
  const auto& s = ds.samples[0];
  AugmentParams flip;
  flip.hflip = true;
  auto once = augment(s.image, s.mask, flip);
  EXPECT_EQ(once.first.at(3, 0, 1), s.image.at(3, 21, 1));
  auto twice = augment(once.first, once.second, flip);
  EXPECT_EQ(twice.first, s.image);
  EXPECT_EQ(twice.second, s.mask);
}

TEST(Augment, MaskStaysOneHotAndAligned) {
  auto ds = generate_synthetic_dataset(6, 32, 32, 6, 5);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    const auto params = sample_augment(100 + i);
    EXPECT_LE(std::abs(params.rotation_deg), 20.0);
    EXPECT_GE(params.zoom, 0.5);
    EXPECT_LE(params.zoom, 1.5);
    EXPECT_LE(std::abs(params.shift_x), 0.1);
    auto [img, mask] = augment(s.image, s.mask, params);
    ASSERT_TRUE(is_one_hot(mask));
    // Push the label map through the image path: with a nearest-compatible
    // transform (flip + whole-pixel shift) both paths agree exactly.
    AugmentParams shift;
    shift.shift_x = 3.0 / 32.0;
    shift.shift_y = -2.0 / 32.0;
    shift.hflip = (i % 2) == 1;
    auto lbl = labels_from_one_hot(s.mask);
    Tensor<float> as_image(32, 32, 1);
    for (std::size_t p = 0; p < lbl.size(); ++p) as_image[p] = static_cast<float>(lbl.labels[p]);
    auto moved_image = augment(as_image, s.mask, shift).first;
    auto moved_mask = labels_from_one_hot(augment(s.image, s.mask, shift).second);
    for (std::size_t p = 0; p < lbl.size(); ++p)
      ASSERT_EQ(static_cast<int>(moved_image[p]), moved_mask.labels[p]);
  }
}

TEST(Augment, OutOfFrameIsBackgroundAndZero) {
  Tensor<float> img(8, 8, 2, 1.0f);
  LabelMap lbl(8, 8, 2);
  AugmentParams p;
  p.zoom = 0.5;
  auto [out, mask] = augment(img, one_hot_from_labels(lbl, 3), p);
  auto ol = labels_from_one_hot(mask);
  EXPECT_EQ(ol.at(0, 0), 0);
  EXPECT_EQ(out.at(0, 0, 0), 0.0f);
  EXPECT_EQ(ol.at(4, 4), 2);
  EXPECT_EQ(out.at(4, 4, 1), 1.0f);
}

TEST(Synthetic, EmptyAndContract) {
  EXPECT_TRUE(generate_synthetic_dataset(0, 32, 32, 12, 1).samples.empty());
  EXPECT_THROW(generate_synthetic_dataset(2, 32, 32, 1, 1), std::invalid_argument);
  auto ds = generate_synthetic_dataset(8, 32, 32, 12, 7, {.patients = 3});
  std::vector<long> freq(12, 0);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    EXPECT_EQ(s.patient_id, static_cast<int>(i % 3));
    ASSERT_EQ(s.image.shape(), (Shape{1, 32, 32, 2}));
    ASSERT_TRUE(is_one_hot(s.mask));
    for (int c : labels_from_one_hot(s.mask).labels) ++freq[c];
  }
  for (int c = 0; c < 12; ++c) EXPECT_GT(freq[c], 0) << c;
  EXPECT_GT(freq[0], freq[1]);
}

TEST(Synthetic, SeedDeterminesData) {
  auto a = generate_synthetic_dataset(3, 16, 16, 4, 11);
  auto b = generate_synthetic_dataset(3, 16, 16, 4, 11);
  auto c = generate_synthetic_dataset(3, 16, 16, 4, 12);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(a.samples[i].image, b.samples[i].image);
    EXPECT_EQ(a.samples[i].mask, b.samples[i].mask);
  }
  EXPECT_FALSE(a.samples[0].image == c.samples[0].image);
  // Sample i does not depend on how many samples follow it.
  EXPECT_EQ(generate_synthetic_dataset(1, 16, 16, 4, 11).samples[0].image, a.samples[0].image);
}

TEST(OneHot, ConversionsAreInverse) {
  std::mt19937_64 rng(3);
  LabelMap lbl(9, 7);
  for (int& v : lbl.labels) v = static_cast<int>(rng() % 12);
  auto oh = one_hot_from_labels(lbl, 12);
  EXPECT_TRUE(is_one_hot(oh));
  EXPECT_EQ(labels_from_one_hot(oh), lbl);
  EXPECT_EQ(one_hot_from_labels(labels_from_one_hot(oh), 12), oh);
  oh[5] = 0.5f;
  EXPECT_FALSE(is_one_hot(oh));
  EXPECT_THROW(labels_from_one_hot(oh), std::invalid_argument);
  EXPECT_THROW(one_hot_from_labels(lbl, 5), std::out_of_range);
}

}  // namespace
}  // namespace segkit
