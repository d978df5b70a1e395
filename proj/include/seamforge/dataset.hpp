#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "seamforge/error.hpp"

namespace seamforge {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Spatial layout of one sample, stored flattened in HWC order. Feature rows
// use {1, 1, d}.
struct Shape {
  int height = 1;
  int width = 1;
  int channels = 1;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(height) * width * channels;
  }
  [[nodiscard]] bool flat() const { return height == 1 && width == 1; }
  static Shape features(int d) { return {1, 1, d}; }

  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return "[" + std::to_string(s.height) + "," + std::to_string(s.width) + "," +
         std::to_string(s.channels) + "]";
}

// Inputs are n x d with d == shape.size(); labels lie in [0, class_count).
struct LabeledDataset {
  Matrix<float> inputs;
  std::vector<int> labels;
  int class_count = 0;
  Shape shape;

  [[nodiscard]] std::size_t size() const { return labels.size(); }
  [[nodiscard]] bool empty() const { return labels.empty(); }
  [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(inputs.cols()); }

  void validate() const {
    detail::require<ShapeError>(static_cast<std::size_t>(inputs.rows()) == labels.size(),
                                "dataset: input rows do not match label count");
    detail::require<ShapeError>(shape.size() == dim(), "dataset: shape " + to_string(shape) +
                                                            " does not match input width " +
                                                            std::to_string(dim()));
    detail::require(class_count >= 1, "dataset: class_count must be positive");
    for (int y : labels) {
      detail::require(y >= 0 && y < class_count,
                      "dataset: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(class_count) + ")");
    }
  }

  // Rows in the given order; indices may repeat.
  [[nodiscard]] LabeledDataset select(std::span<const std::size_t> idx) const {
    LabeledDataset out;
    out.class_count = class_count;
    out.shape = shape;
    out.inputs.resize(static_cast<Eigen::Index>(idx.size()), inputs.cols());
    out.labels.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      detail::require<ShapeError>(idx[r] < size(), "dataset: row index out of range");
      out.inputs.row(static_cast<Eigen::Index>(r)) = inputs.row(static_cast<Eigen::Index>(idx[r]));
      out.labels.push_back(labels[idx[r]]);
    }
    return out;
  }

  [[nodiscard]] std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(class_count), 0);
    for (int y : labels) ++counts[static_cast<std::size_t>(y)];
    return counts;
  }
};

inline LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  detail::require<ShapeError>(a.shape == b.shape && a.class_count == b.class_count,
                              "concat: datasets disagree on shape or class count");
  LabeledDataset out;
  out.shape = a.shape;
  out.class_count = a.class_count;
  out.inputs.resize(a.inputs.rows() + b.inputs.rows(), a.inputs.cols());
  out.inputs.topRows(a.inputs.rows()) = a.inputs;
  out.inputs.bottomRows(b.inputs.rows()) = b.inputs;
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

}  // namespace seamforge
