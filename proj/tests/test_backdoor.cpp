#include <gtest/gtest.h>

#include <set>

#include "seamforge/backdoor.hpp"
#include "seamforge/data.hpp"

using namespace seamforge;

namespace {

int l0(std::span<const float> a, std::span<const float> b) {
  int n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
  return n;
}

std::span<const float> row(const LabeledDataset& d, std::size_t i) {
  return {d.inputs.row(static_cast<Eigen::Index>(i)).data(), d.dim()};
}

}  // namespace

TEST(Trigger, DefaultPatchHasElevenWhiteFiveBlack) {
  const auto p = default_patch_pattern();
  ASSERT_EQ(p.rows(), 4);
  ASSERT_EQ(p.cols(), 4);
  EXPECT_EQ(p.sum(), 11.0f);
  EXPECT_EQ(default_patch_pattern(), p);  // seeded, stable
}

TEST(Trigger, PatchOverwritesExactlySixteenPixelsAtBottomRight) {
  const Shape s{8, 8, 1};
  const auto t = patch_trigger(0);
  const std::vector<float> grey(64, 0.5f);
  const auto out = apply_trigger(grey, s, t);
  EXPECT_EQ(l0(grey, out), 16);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      const float v = out[static_cast<std::size_t>(y * 8 + x)];
      if (y >= 4 && x >= 4) {
        EXPECT_EQ(v, t.pattern(y - 4, x - 4));
      } else {
        EXPECT_EQ(v, 0.5f);
      }
    }
}

TEST(Trigger, PatchCoversEveryChannel) {
  const Shape s{5, 5, 3};
  auto t = patch_trigger(1);
  t.anchor_row = 0;
  t.anchor_col = 1;
  const std::vector<float> img(75, 0.5f);
  const auto out = apply_trigger(img, s, t);
  EXPECT_EQ(l0(img, out), 48);
  EXPECT_EQ(out[(0 * 5 + 1) * 3 + 2], t.pattern(0, 0));
}

TEST(Trigger, PatchOutOfBoundsIsRejected) {
  auto t = patch_trigger(0);
  t.anchor_row = 5;
  t.anchor_col = 0;
  const std::vector<float> img(64, 0.0f);
  EXPECT_THROW(apply_trigger(img, {8, 8, 1}, t).size(), ShapeError);
  const auto d = synth_images({}, 1, 1);
  EXPECT_THROW(apply_trigger(d, t), ShapeError);
  const std::vector<float> small(9, 0.0f);
  EXPECT_THROW(apply_trigger(small, {3, 3, 1}, patch_trigger(0)), ShapeError);
}

TEST(Trigger, BlendEndpoints) {
  const Shape s{8, 8, 1};
  const auto d = synth_images({}, 1, 3);
  const std::vector<float> img(row(d, 0).begin(), row(d, 0).end());
  auto t = blend_trigger(s, 0, 0.0);
  EXPECT_EQ(apply_trigger(img, s, t), img);
  t.alpha = 1.0;
  EXPECT_EQ(apply_trigger(img, s, t), t.overlay);
  t.alpha = 0.2;
  const auto mid = apply_trigger(img, s, t);
  for (std::size_t i = 0; i < img.size(); ++i) {
    EXPECT_NEAR(mid[i], std::clamp(0.8f * img[i] + 0.2f * t.overlay[i], 0.0f, 1.0f), 1e-6f);
  }
  t.alpha = 1.5;
  EXPECT_THROW(apply_trigger(d, t), InvalidArgument);
}

TEST(Trigger, TargetInsideSourcesIsRejected) {
  auto t = patch_trigger(3);
  t.source_classes = {1, 3};
  const auto d = synth_images({}, 2, 1);
  EXPECT_THROW(build_asr_set(d, t), InvalidArgument);
}

TEST(Poison, ZeroRateLeavesDataUntouched) {
  const auto d = synth_images({}, 10, 1);
  const auto p = poison_dataset(d, patch_trigger(0), {0.0, 1});
  EXPECT_TRUE(p.indices.empty());
  EXPECT_EQ(p.data.inputs, d.inputs);
  EXPECT_EQ(p.data.labels, d.labels);
}

TEST(Poison, CountIsRoundedRateTimesN) {
  // 50000 samples at rate 0.1 -> 5000, by the same rule as smaller sets.
  const auto big = synth_images({}, 5000, 2);
  EXPECT_EQ(poison_dataset(big, patch_trigger(0), {0.1, 5}).indices.size(), 5000u);
  const auto d = synth_images({}, 13, 2);  // n = 130
  EXPECT_EQ(poison_dataset(d, patch_trigger(0), {0.1, 5}).indices.size(), 13u);
  EXPECT_EQ(poison_dataset(d, patch_trigger(0), {0.035, 5}).indices.size(), 5u);  // 4.55 -> 5
}

TEST(Poison, PoisonedRowsCarryTriggerAndTargetOthersUntouched) {
  const auto d = synth_images({}, 40, 3);
  const auto t = patch_trigger(7);
  const auto p = poison_dataset(d, t, {0.1, 11});
  std::set<std::size_t> hit(p.indices.begin(), p.indices.end());
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (hit.count(i)) {
      EXPECT_EQ(p.data.labels[i], 7);
      EXPECT_EQ(apply_trigger(row(d, i), d.shape, t), std::vector<float>(row(p.data, i).begin(), row(p.data, i).end()));
      EXPECT_LE(l0(row(d, i), row(p.data, i)), 16);
    } else {
      EXPECT_EQ(p.data.labels[i], d.labels[i]);
      EXPECT_EQ(l0(row(d, i), row(p.data, i)), 0);
    }
  }
}

TEST(Poison, SourceSpecificDrawsOnlyFromSources) {
  const auto d = synth_images({}, 30, 3);
  auto t = patch_trigger(7);
  t.source_classes = {3};
  const auto p = poison_dataset(d, t, {0.02, 1});
  ASSERT_EQ(p.indices.size(), 6u);
  for (auto i : p.indices) EXPECT_EQ(d.labels[i], 3);
  EXPECT_THROW(poison_dataset(d, t, {0.2, 1}), InvalidArgument);  // 60 > 30 eligible
}

TEST(Poison, SeededAndSorted) {
  const auto d = synth_images({}, 30, 3);
  const auto a = poison_dataset(d, patch_trigger(0), {0.1, 4});
  const auto b = poison_dataset(d, patch_trigger(0), {0.1, 4});
  EXPECT_EQ(a.indices, b.indices);
  EXPECT_TRUE(std::is_sorted(a.indices.begin(), a.indices.end()));
}

TEST(AsrSet, UniversalTriggerExcludesTargetClass) {
  const auto test = synth_images({}, 100, 9);
  const auto s = build_asr_set(test, patch_trigger(0));
  EXPECT_EQ(s.size(), 900u);
  for (int y : s.labels) EXPECT_EQ(y, 0);
}

TEST(AsrSet, SourceSpecificKeepsOnlySourceImages) {
  const auto test = synth_images({}, 20, 9);
  auto t = patch_trigger(7);
  t.source_classes = {3};
  const auto s = build_asr_set(test, t);
  ASSERT_EQ(s.size(), 20u);
  std::size_t k = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.labels[i] != 3) continue;
    EXPECT_EQ(s.labels[k], 7);
    EXPECT_LE(l0(row(test, i), row(s, k)), 16);
    const auto expect = apply_trigger(row(test, i), test.shape, t);
    EXPECT_EQ(std::vector<float>(row(s, k).begin(), row(s, k).end()), expect);
    ++k;
  }
}

TEST(AsrSet, EmptyResultIsRejected) {
  auto test = synth_images({}, 3, 9);
  auto t = patch_trigger(0);
  t.source_classes = {4};
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (test.labels[i] != 4) keep.push_back(i);
  EXPECT_THROW(build_asr_set(test.select(keep), t), InvalidArgument);
}
