#pragma once

// Test-only reference computations. Nothing here calls into the code path
// it is used to check.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "seamforge/nn.hpp"

namespace oracle {

// Mean cross-entropy evaluated from the probability output only.
inline double mean_ce(const seamforge::Network<double>& net, const seamforge::Matrix<double>& x,
                      std::span<const int> labels) {
  const auto p = seamforge::forward(net, x);
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) s -= std::log(p(i, labels[static_cast<std::size_t>(i)]));
  return s / static_cast<double>(p.rows());
}

// Central differences of the mean loss over every parameter.
inline Eigen::VectorXd fd_gradient(seamforge::Network<double> net,
                                   const seamforge::Matrix<double>& x,
                                   std::span<const int> labels, double h = 1e-5) {
  Eigen::VectorXd w = net.flatten_weights();
  Eigen::VectorXd g(w.size());
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    const double w0 = w[k];
    w[k] = w0 + h;
    net.unflatten_weights(w);
    const double up = mean_ce(net, x, labels);
    w[k] = w0 - h;
    net.unflatten_weights(w);
    const double dn = mean_ce(net, x, labels);
    w[k] = w0;
    g[k] = (up - dn) / (2 * h);
  }
  return g;
}

// Central differences of a single logit for one input.
inline Eigen::VectorXd fd_logit_gradient(seamforge::Network<double> net,
                                         const seamforge::Matrix<double>& x, int k,
                                         double h = 1e-6) {
  Eigen::VectorXd w = net.flatten_weights();
  Eigen::VectorXd g(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double w0 = w[i];
    w[i] = w0 + h;
    net.unflatten_weights(w);
    const double up = seamforge::logits(net, x)(0, k);
    w[i] = w0 - h;
    net.unflatten_weights(w);
    const double dn = seamforge::logits(net, x)(0, k);
    w[i] = w0;
    g[i] = (up - dn) / (2 * h);
  }
  return g;
}

inline double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double denom = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / denom;
}

// Minimal IDX reader: header fields and raw payload bytes.
struct RawIdx {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<unsigned char> payload;
};

inline RawIdx read_raw_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> b{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  auto be = [&](std::size_t o) {
    return std::uint32_t(b[o]) << 24 | std::uint32_t(b[o + 1]) << 16 | std::uint32_t(b[o + 2]) << 8 |
           std::uint32_t(b[o + 3]);
  };
  RawIdx r;
  r.magic = be(0);
  const std::size_t ndim = r.magic & 0xFF;
  for (std::size_t i = 0; i < ndim; ++i) r.dims.push_back(be(4 + 4 * i));
  r.payload.assign(b.begin() + static_cast<std::ptrdiff_t>(4 + 4 * ndim), b.end());
  return r;
}

// HSIC-based linear CKA with explicit double loops over samples: Gram
// matrices K = A A^T, L = B B^T, centred with H = I - 11^T/n.
inline double naive_linear_cka(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const auto n = a.rows();
  Eigen::MatrixXd k(n, n), l(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      double s = 0, t = 0;
      for (Eigen::Index c = 0; c < a.cols(); ++c) s += a(i, c) * a(j, c);
      for (Eigen::Index c = 0; c < b.cols(); ++c) t += b(i, c) * b(j, c);
      k(i, j) = s;
      l(i, j) = t;
    }
  auto center = [n](const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out(n, n);
    const Eigen::VectorXd row_mean = m.rowwise().mean();
    const Eigen::VectorXd col_mean = m.colwise().mean().transpose();
    const double all = m.mean();
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) out(i, j) = m(i, j) - row_mean[i] - col_mean[j] + all;
    return out;
  };
  const Eigen::MatrixXd kc = center(k), lc = center(l);
  double kl = 0, kk = 0, ll = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      kl += kc(i, j) * lc(i, j);
      kk += kc(i, j) * kc(i, j);
      ll += lc(i, j) * lc(i, j);
    }
  return kl / std::sqrt(kk * ll);
}

}  // namespace oracle
