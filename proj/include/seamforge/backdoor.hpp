#pragma once

// Trigger stamping and data poisoning.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "seamforge/dataset.hpp"
#include "seamforge/error.hpp"
#include "seamforge/nn.hpp"

namespace seamforge {

enum class TriggerKind { patch, blend };

inline const char* to_string(TriggerKind k) { return k == TriggerKind::patch ? "patch" : "blend"; }

struct TriggerSpec {
  TriggerKind kind = TriggerKind::patch;
  // patch: values in {0,1}; applied to every channel. anchor < 0 means
  // flush with the bottom-right corner.
  Matrix<float> pattern;
  int anchor_row = -1;
  int anchor_col = -1;
  // blend: flattened overlay with the image's shape.
  std::vector<float> overlay;
  double alpha = 0.2;
  // Empty means every class except the target.
  std::vector<int> source_classes;
  int target_class = 0;

  [[nodiscard]] bool universal() const { return source_classes.empty(); }

  [[nodiscard]] bool is_source(int label) const {
    if (label == target_class) return false;
    return universal() ||
           std::find(source_classes.begin(), source_classes.end(), label) != source_classes.end();
  }

  // Top-left corner of the patch in an image of this shape.
  [[nodiscard]] std::pair<int, int> anchor(const Shape& s) const {
    return {anchor_row < 0 ? s.height - static_cast<int>(pattern.rows()) : anchor_row,
            anchor_col < 0 ? s.width - static_cast<int>(pattern.cols()) : anchor_col};
  }

  void validate(const Shape& s, int class_count) const {
    validate_geometry(s);
    detail::require(target_class >= 0 && target_class < class_count,
                    "trigger: target_class " + std::to_string(target_class) + " outside [0, " +
                        std::to_string(class_count) + ")");
    for (int c : source_classes) {
      detail::require(c >= 0 && c < class_count, "trigger: source class out of range");
      detail::require(c != target_class, "trigger: target_class listed as a source class");
    }
  }

  // Pattern/overlay checks that need only the image shape.
  void validate_geometry(const Shape& s) const {
    if (kind == TriggerKind::patch) {
      detail::require(pattern.size() > 0, "trigger: empty patch pattern");
      for (Eigen::Index i = 0; i < pattern.size(); ++i) {
        const float v = pattern.data()[i];
        detail::require(v == 0.0f || v == 1.0f, "trigger: patch values must be 0 or 1");
      }
      const auto [r, c] = anchor(s);
      detail::require<ShapeError>(r >= 0 && c >= 0 && r + pattern.rows() <= s.height &&
                                      c + pattern.cols() <= s.width,
                                  "trigger: " + std::to_string(pattern.rows()) + "x" +
                                      std::to_string(pattern.cols()) + " patch at (" +
                                      std::to_string(r) + "," + std::to_string(c) +
                                      ") does not fit a " + to_string(s) + " image");
    } else {
      detail::require(alpha >= 0.0 && alpha <= 1.0, "trigger: alpha must lie in [0, 1]");
      detail::require<ShapeError>(overlay.size() == s.size(),
                                  "trigger: overlay size does not match image size");
    }
  }
};

// 4x4 grid holding 11 ones and 5 zeros at positions fixed by `seed`.
inline Matrix<float> default_patch_pattern(std::uint64_t seed = 7, int size = 4, int ones = 11) {
  detail::require(size >= 1 && ones >= 0 && ones <= size * size, "default_patch_pattern: bad counts");
  std::vector<std::size_t> cells(static_cast<std::size_t>(size * size));
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
  std::mt19937_64 rng(seed);
  fisher_yates(cells, rng);
  Matrix<float> p = Matrix<float>::Zero(size, size);
  for (int i = 0; i < ones; ++i) p.data()[cells[static_cast<std::size_t>(i)]] = 1.0f;
  return p;
}

// Fixed image-wide overlay for the blend trigger: horizontal stripes with a
// seeded per-pixel jitter, values in [0,1].
inline std::vector<float> default_blend_overlay(const Shape& s, std::uint64_t seed = 11) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.0, 0.25);
  std::vector<float> out(s.size());
  std::size_t k = 0;
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x)
      for (int c = 0; c < s.channels; ++c) {
        const double base = (y % 2 == 0) ? 0.75 : 0.0;
        out[k++] = static_cast<float>(base + jitter(rng));
      }
  return out;
}

inline TriggerSpec patch_trigger(int target_class, std::uint64_t pattern_seed = 7) {
  TriggerSpec t;
  t.kind = TriggerKind::patch;
  t.pattern = default_patch_pattern(pattern_seed);
  t.target_class = target_class;
  return t;
}

inline TriggerSpec blend_trigger(const Shape& s, int target_class, double alpha = 0.2,
                                 std::uint64_t overlay_seed = 11) {
  TriggerSpec t;
  t.kind = TriggerKind::blend;
  t.overlay = default_blend_overlay(s, overlay_seed);
  t.alpha = alpha;
  t.target_class = target_class;
  return t;
}

namespace detail {

// HWC layout, row-major over (y, x, c).
inline void stamp(std::span<float> img, const Shape& s, const TriggerSpec& t) {
  if (t.kind == TriggerKind::patch) {
    const auto [r0, c0] = t.anchor(s);
    for (Eigen::Index py = 0; py < t.pattern.rows(); ++py)
      for (Eigen::Index px = 0; px < t.pattern.cols(); ++px)
        for (int ch = 0; ch < s.channels; ++ch) {
          const auto idx = (static_cast<std::size_t>(r0 + py) * static_cast<std::size_t>(s.width) +
                            static_cast<std::size_t>(c0 + px)) *
                               static_cast<std::size_t>(s.channels) +
                           static_cast<std::size_t>(ch);
          img[idx] = t.pattern(py, px);
        }
  } else {
    const auto a = static_cast<float>(t.alpha);
    for (std::size_t i = 0; i < img.size(); ++i) {
      img[i] = std::clamp((1.0f - a) * img[i] + a * t.overlay[i], 0.0f, 1.0f);
    }
  }
}

}  // namespace detail

inline std::vector<float> apply_trigger(std::span<const float> image, const Shape& s,
                                        const TriggerSpec& t) {
  detail::require<ShapeError>(image.size() == s.size(), "apply_trigger: image size " +
                                                            std::to_string(image.size()) +
                                                            " does not match shape " + to_string(s));
  t.validate_geometry(s);
  std::vector<float> out(image.begin(), image.end());
  detail::stamp(out, s, t);
  return out;
}

// Every row of `data` stamped; labels unchanged.
inline LabeledDataset apply_trigger(const LabeledDataset& data, const TriggerSpec& t) {
  t.validate(data.shape, data.class_count);
  LabeledDataset out = data;
  for (Eigen::Index i = 0; i < out.inputs.rows(); ++i) {
    detail::stamp({out.inputs.row(i).data(), out.dim()}, out.shape, t);
  }
  return out;
}

struct PoisonConfig {
  double rate = 0.1;
  std::uint64_t seed = 0;
};

struct PoisonResult {
  LabeledDataset data;
  std::vector<std::size_t> indices;  // ascending
};

// Exactly round(rate * n) samples, drawn from the source classes (all
// classes for a universal trigger), are stamped and relabelled to the target.
inline PoisonResult poison_dataset(const LabeledDataset& data, const TriggerSpec& t,
                                   const PoisonConfig& cfg) {
  detail::require(cfg.rate >= 0.0 && cfg.rate <= 1.0, "poison: rate must lie in [0, 1]");
  t.validate(data.shape, data.class_count);
  PoisonResult out{data, {}};
  const auto k =
      static_cast<std::size_t>(std::floor(cfg.rate * static_cast<double>(data.size()) + 0.5));
  if (cfg.rate == 0.0) return out;
  detail::require(k >= 1, "poison: rate " + std::to_string(cfg.rate) + " selects no sample out of " +
                              std::to_string(data.size()));
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (t.universal() || t.is_source(data.labels[i])) eligible.push_back(i);
  }
  detail::require(!eligible.empty(), "poison: no sample belongs to a source class");
  detail::require(eligible.size() >= k, "poison: " + std::to_string(k) + " samples requested but only " +
                                            std::to_string(eligible.size()) + " are eligible");
  std::mt19937_64 rng(cfg.seed);
  fisher_yates(eligible, rng);
  out.indices.assign(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(out.indices.begin(), out.indices.end());
  for (std::size_t i : out.indices) {
    const auto r = static_cast<Eigen::Index>(i);
    detail::stamp({out.data.inputs.row(r).data(), out.data.dim()}, out.data.shape, t);
    out.data.labels[i] = t.target_class;
  }
  return out;
}

// Source-class test samples (target-class originals excluded), stamped and
// labelled with the target class.
inline LabeledDataset build_asr_set(const LabeledDataset& test, const TriggerSpec& t) {
  t.validate(test.shape, test.class_count);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (t.is_source(test.labels[i])) keep.push_back(i);
  detail::require(!keep.empty(), "build_asr_set: no source-class sample in the test set");
  LabeledDataset out = apply_trigger(test.select(keep), t);
  std::fill(out.labels.begin(), out.labels.end(), t.target_class);
  return out;
}

}  // namespace seamforge
