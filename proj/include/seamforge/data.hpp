#pragma once

// Dataset loading (IDX, JSON), synthetic generators, stratified sampling and
// the random-wrong relabelling used by the forgetting step.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "seamforge/dataset.hpp"
#include "seamforge/error.hpp"
#include "seamforge/nn.hpp"

namespace seamforge {

// ---------------------------------------------------------------------------
// IDX

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off,
                               const std::string& file) {
  if (b.size() < off + 4) {
    throw FormatError(file + ": truncated header (need " + std::to_string(off + 4) +
                      " bytes, have " + std::to_string(b.size()) + ")");
  }
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

inline void write_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                              static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

inline std::string hex32(std::uint32_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s = "0x";
  for (int i = 7; i >= 0; --i) s += digits[(v >> (4 * i)) & 0xF];
  return s;
}

}  // namespace detail

// Raw IDX content, kept so the parse can be checked byte-for-byte.
struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<unsigned char> pixels;
};

inline IdxImages read_idx_images(const std::filesystem::path& path) {
  const auto b = detail::read_file(path);
  const std::string f = path.string();
  const auto magic = detail::read_be32(b, 0, f);
  if (magic != kIdxImageMagic) {
    throw FormatError(f + ": bad image magic " + detail::hex32(magic) + ", expected " +
                      detail::hex32(kIdxImageMagic));
  }
  IdxImages img;
  img.count = detail::read_be32(b, 4, f);
  img.rows = detail::read_be32(b, 8, f);
  img.cols = detail::read_be32(b, 12, f);
  const std::size_t need = std::size_t{img.count} * img.rows * img.cols;
  if (b.size() - 16 < need) {
    throw FormatError(f + ": truncated image data (header promises " + std::to_string(need) +
                      " bytes, file has " + std::to_string(b.size() - 16) + ")");
  }
  img.pixels.assign(b.begin() + 16, b.begin() + 16 + static_cast<std::ptrdiff_t>(need));
  return img;
}

inline std::vector<unsigned char> read_idx_labels(const std::filesystem::path& path) {
  const auto b = detail::read_file(path);
  const std::string f = path.string();
  const auto magic = detail::read_be32(b, 0, f);
  if (magic != kIdxLabelMagic) {
    throw FormatError(f + ": bad label magic " + detail::hex32(magic) + ", expected " +
                      detail::hex32(kIdxLabelMagic));
  }
  const auto count = detail::read_be32(b, 4, f);
  if (b.size() - 8 < count) {
    throw FormatError(f + ": truncated label data (header promises " + std::to_string(count) +
                      " labels, file has " + std::to_string(b.size() - 8) + ")");
  }
  return {b.begin() + 8, b.begin() + 8 + count};
}

// Pixels scaled to [0,1] by /255; class_count = max label + 1 (at least 10
// when all labels are digits, which MNIST satisfies).
inline LabeledDataset load_idx(const std::filesystem::path& images_path,
                               const std::filesystem::path& labels_path, int class_count = 0) {
  const auto img = read_idx_images(images_path);
  const auto lab = read_idx_labels(labels_path);
  if (lab.size() != img.count) {
    throw FormatError("idx: image count " + std::to_string(img.count) +
                      " does not match label count " + std::to_string(lab.size()));
  }
  LabeledDataset d;
  d.shape = {static_cast<int>(img.rows), static_cast<int>(img.cols), 1};
  const auto dim = static_cast<Eigen::Index>(d.shape.size());
  d.inputs.resize(static_cast<Eigen::Index>(img.count), dim);
  for (Eigen::Index i = 0; i < d.inputs.rows(); ++i)
    for (Eigen::Index j = 0; j < dim; ++j)
      d.inputs(i, j) = static_cast<float>(img.pixels[static_cast<std::size_t>(i * dim + j)]) / 255.0f;
  int max_label = 0;
  d.labels.reserve(lab.size());
  for (unsigned char y : lab) {
    d.labels.push_back(y);
    max_label = std::max<int>(max_label, y);
  }
  d.class_count = class_count > 0 ? class_count : max_label + 1;
  d.validate();
  return d;
}

inline void save_idx(const std::filesystem::path& images_path,
                     const std::filesystem::path& labels_path, const IdxImages& img,
                     const std::vector<unsigned char>& labels) {
  std::ofstream im(images_path, std::ios::binary);
  if (!im) throw FormatError("cannot write " + images_path.string());
  detail::write_be32(im, kIdxImageMagic);
  detail::write_be32(im, img.count);
  detail::write_be32(im, img.rows);
  detail::write_be32(im, img.cols);
  im.write(reinterpret_cast<const char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
  std::ofstream lb(labels_path, std::ios::binary);
  if (!lb) throw FormatError("cannot write " + labels_path.string());
  detail::write_be32(lb, kIdxLabelMagic);
  detail::write_be32(lb, static_cast<std::uint32_t>(labels.size()));
  lb.write(reinterpret_cast<const char*>(labels.data()),
           static_cast<std::streamsize>(labels.size()));
}

// ---------------------------------------------------------------------------
// JSON dataset form

inline nlohmann::json dataset_to_json(const LabeledDataset& d) {
  nlohmann::json inputs = nlohmann::json::array();
  for (Eigen::Index i = 0; i < d.inputs.rows(); ++i) {
    inputs.push_back(std::vector<float>(d.inputs.row(i).data(),
                                        d.inputs.row(i).data() + d.inputs.cols()));
  }
  return {{"inputs", std::move(inputs)},
          {"labels", d.labels},
          {"class_count", d.class_count},
          {"shape", {d.shape.height, d.shape.width, d.shape.channels}}};
}

inline LabeledDataset dataset_from_json(const nlohmann::json& j) {
  try {
    LabeledDataset d;
    d.class_count = j.at("class_count").get<int>();
    d.labels = j.at("labels").get<std::vector<int>>();
    const auto& rows = j.at("inputs");
    if (j.contains("shape")) {
      const auto s = j.at("shape").get<std::vector<int>>();
      if (s.size() != 3) throw FormatError("dataset json: shape must be [h,w,c]");
      d.shape = {s[0], s[1], s[2]};
    } else {
      d.shape = Shape::features(rows.empty() ? 0 : static_cast<int>(rows.at(0).size()));
    }
    d.inputs.resize(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(d.shape.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto r = rows[i].get<std::vector<float>>();
      if (r.size() != d.shape.size()) {
        throw FormatError("dataset json: row " + std::to_string(i) + " has " +
                          std::to_string(r.size()) + " values, shape needs " +
                          std::to_string(d.shape.size()));
      }
      for (std::size_t c = 0; c < r.size(); ++c)
        d.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = r[c];
    }
    d.validate();
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dataset json: ") + e.what());
  }
}

inline LabeledDataset load_dataset_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw FormatError("cannot open " + p.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
  return dataset_from_json(j);
}

inline void save_dataset_json(const LabeledDataset& d, const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw FormatError("cannot write " + p.string());
  out << dataset_to_json(d).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic data

// Class c ~ N(separation * e_c, I) in R^dim (the standard basis vertices form
// a regular simplex), mapped to [0,1] by x = (z + 4) / (separation + 8) and
// clamped. Requires dim >= classes.
inline LabeledDataset synth_blobs(int classes, int per_class, int dim, double separation,
                                  std::uint64_t seed) {
  detail::require(classes >= 2, "synth_blobs: need at least 2 classes");
  detail::require(per_class >= 1, "synth_blobs: per_class must be >= 1");
  detail::require(dim >= classes, "synth_blobs: dim must be >= classes");
  detail::require(separation >= 0.0, "synth_blobs: separation must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  LabeledDataset d;
  d.class_count = classes;
  d.shape = Shape::features(dim);
  d.inputs.resize(static_cast<Eigen::Index>(classes) * per_class, dim);
  const double scale = 1.0 / (separation + 8.0);
  Eigen::Index row = 0;
  for (int c = 0; c < classes; ++c) {
    for (int m = 0; m < per_class; ++m, ++row) {
      for (int j = 0; j < dim; ++j) {
        const double z = gauss(rng) + (j == c ? separation : 0.0);
        d.inputs(row, j) = static_cast<float>(std::clamp((z + 4.0) * scale, 0.0, 1.0));
      }
      d.labels.push_back(c);
    }
  }
  return d;
}

// Parameters of the synthetic image task used as the desk-scale stand-in for
// MNIST. Every split drawn with the same prototype_seed shares class
// prototypes; sample_seed varies the noise.
struct SynthImageSpec {
  int classes = 10;
  int height = 8;
  int width = 8;
  double noise = 0.3;
  std::uint64_t prototype_seed = 123;
};

// Class prototypes are uniform [0,1] images; a sample is its prototype plus
// N(0, noise^2) per pixel, clamped to [0,1]. Classes are interleaved
// (label of row i is i mod classes).
inline LabeledDataset synth_images(const SynthImageSpec& spec, int per_class,
                                   std::uint64_t sample_seed) {
  detail::require(spec.classes >= 2, "synth_images: need at least 2 classes");
  detail::require(per_class >= 1, "synth_images: per_class must be >= 1");
  detail::require(spec.height >= 1 && spec.width >= 1, "synth_images: bad image size");
  detail::require(spec.noise >= 0.0, "synth_images: noise must be non-negative");
  const int dim = spec.height * spec.width;
  Matrix<float> protos(spec.classes, dim);
  {
    std::mt19937_64 prng(spec.prototype_seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Eigen::Index c = 0; c < protos.rows(); ++c)
      for (Eigen::Index j = 0; j < dim; ++j) protos(c, j) = static_cast<float>(u(prng));
  }
  std::mt19937_64 rng(sample_seed);
  std::normal_distribution<double> gauss(0.0, spec.noise);
  LabeledDataset d;
  d.class_count = spec.classes;
  d.shape = {spec.height, spec.width, 1};
  const Eigen::Index n = static_cast<Eigen::Index>(spec.classes) * per_class;
  d.inputs.resize(n, dim);
  d.labels.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % spec.classes);
    for (Eigen::Index j = 0; j < dim; ++j) {
      d.inputs(i, j) =
          static_cast<float>(std::clamp(protos(c, j) + gauss(rng), 0.0, 1.0));
    }
    d.labels.push_back(c);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Sampling

struct SplitSpec {
  double fraction = 0.1;
  std::uint64_t seed = 0;
  bool stratified = true;
};

struct Split {
  LabeledDataset subset;
  LabeledDataset remainder;
  std::vector<std::size_t> subset_index;     // ascending row indices into the source
  std::vector<std::size_t> remainder_index;  // ascending
};

// Per-class counts round(fraction * class_count) (half up). A class whose
// count rounds to zero is an error rather than a silent floor.
inline Split stratified_sample(const LabeledDataset& data, const SplitSpec& spec) {
  detail::require(spec.fraction > 0.0 && spec.fraction <= 1.0,
                  "stratified_sample: fraction must lie in (0, 1]");
  detail::require(!data.empty(), "stratified_sample: empty dataset");
  std::mt19937_64 rng(spec.seed);
  std::vector<char> chosen(data.size(), 0);
  auto take = [&](std::vector<std::size_t> pool, std::size_t k) {
    fisher_yates(pool, rng);
    for (std::size_t i = 0; i < k; ++i) chosen[pool[i]] = 1;
  };
  if (spec.stratified) {
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(data.class_count));
    for (std::size_t i = 0; i < data.size(); ++i)
      by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      if (by_class[c].empty()) continue;
      const auto k = static_cast<std::size_t>(
          std::floor(spec.fraction * static_cast<double>(by_class[c].size()) + 0.5));
      if (k < 1) {
        throw InvalidArgument("stratified_sample: fraction " + std::to_string(spec.fraction) +
                              " selects no sample of class " + std::to_string(c) + " (" +
                              std::to_string(by_class[c].size()) + " available)");
      }
      take(by_class[c], k);
    }
  } else {
    const auto k = static_cast<std::size_t>(
        std::floor(spec.fraction * static_cast<double>(data.size()) + 0.5));
    if (k < 1) throw InvalidArgument("stratified_sample: fraction selects no sample");
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    take(std::move(all), k);
  }
  Split s;
  for (std::size_t i = 0; i < data.size(); ++i)
    (chosen[i] ? s.subset_index : s.remainder_index).push_back(i);
  s.subset = data.select(s.subset_index);
  s.remainder = data.select(s.remainder_index);
  return s;
}

// ---------------------------------------------------------------------------
// Relabelling

// Each label replaced by a class drawn uniformly from the C-1 wrong ones.
inline LabeledDataset relabel_random_wrong(const LabeledDataset& data, std::mt19937_64& rng) {
  detail::require(data.class_count >= 2, "relabel_random_wrong: needs at least 2 classes");
  std::uniform_int_distribution<int> offset(1, data.class_count - 1);
  LabeledDataset out = data;
  for (auto& y : out.labels) y = (y + offset(rng)) % data.class_count;
  return out;
}

inline LabeledDataset relabel_random_wrong(const LabeledDataset& data, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return relabel_random_wrong(data, rng);
}

}  // namespace seamforge
