#pragma once

// Linearised (NTK) view of sequential training: per-example feature maps,
// residuals, empirical and predicted forgetting, SVD task similarity, and
// numerical checks of the accompanying bounds.

#include <nlohmann/json.hpp>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "seamforge/dataset.hpp"
#include "seamforge/error.hpp"
#include "seamforge/nn.hpp"
#include "seamforge/parallel.hpp"

namespace seamforge {

// scalar_binary: one output per sample, plain difference.
// multiclass_ominus: compare at k = argmax of the source model's prediction.
enum class ResidualRule { scalar_binary, multiclass_ominus };

inline const char* to_string(ResidualRule r) {
  return r == ResidualRule::scalar_binary ? "scalar-binary" : "multiclass-ominus";
}

inline ResidualRule parse_residual_rule(const std::string& s) {
  if (s == "scalar-binary") return ResidualRule::scalar_binary;
  if (s == "multiclass-ominus") return ResidualRule::multiclass_ominus;
  throw InvalidArgument("unknown residual rule '" + s + "'");
}

// Which logit the feature map differentiates, per row.
struct ClassRule {
  enum class Kind { fixed, source_argmax };
  Kind kind = Kind::source_argmax;
  int k = 0;

  static ClassRule fixed(int k) { return {Kind::fixed, k}; }
  static ClassRule source_argmax() { return {Kind::source_argmax, 0}; }

  [[nodiscard]] std::string tag() const {
    return kind == Kind::fixed ? "logit:" + std::to_string(k) : std::string("logit:source-argmax");
  }
};

struct FeatureMatrix {
  Eigen::MatrixXd phi;      // n x q
  std::string anchor_id;    // identifies the weights phi was taken at
  std::string rule;         // ClassRule::tag()
  std::vector<int> classes; // logit index used for each row
};

struct FeatureOptions {
  std::size_t max_bytes = std::size_t{2} << 30;  // refuse larger n x q matrices
};

// Row i is the gradient of logit k_i at x_i with respect to every weight,
// evaluated in 64-bit arithmetic at the anchor's weights.
inline FeatureMatrix feature_matrix(const Network<float>& anchor, const Matrix<float>& x,
                                    const ClassRule& rule, std::string anchor_id = {},
                                    const FeatureOptions& opt = {}) {
  detail::require<ShapeError>(static_cast<std::size_t>(x.cols()) == anchor.input_dim(),
                              "feature_matrix: inputs have " + std::to_string(x.cols()) +
                                  " columns, anchor expects " + std::to_string(anchor.input_dim()));
  const auto n = static_cast<std::size_t>(x.rows());
  const auto q = anchor.param_count();
  detail::require(n * q * sizeof(double) <= opt.max_bytes,
                  "feature_matrix: " + std::to_string(n) + " x " + std::to_string(q) +
                      " exceeds the configured memory cap; reduce the sample cap");
  if (rule.kind == ClassRule::Kind::fixed) {
    detail::require(rule.k >= 0 && rule.k < anchor.class_count(),
                    "feature_matrix: class index out of range");
  }
  const Network<double> net = anchor.cast<double>();
  const Matrix<double> xd = x.cast<double>();
  FeatureMatrix out;
  out.anchor_id = std::move(anchor_id);
  out.rule = rule.tag();
  out.classes.assign(n, rule.k);
  if (rule.kind == ClassRule::Kind::source_argmax && n > 0) out.classes = argmax_rows(logits(net, xd));
  out.phi.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(q));
  parallel_for(n, [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    const Vector<double> g = per_example_gradient<double>(
        net, std::span<const double>(xd.row(r).data(), xd.cols()), out.classes[i]);
    out.phi.row(r) = g.transpose();
  });
  return out;
}

// Mean kernel diagonal times 1e-3.
inline double default_lambda(const Eigen::MatrixXd& phi) {
  detail::require(phi.rows() > 0, "default_lambda: empty feature matrix");
  return 1e-3 * phi.rowwise().squaredNorm().mean();
}

// ---------------------------------------------------------------------------
// Residuals and empirical forgetting

struct Residual {
  Eigen::VectorXd values;
  ResidualRule rule = ResidualRule::multiclass_ominus;
  std::vector<int> classes;  // comparison class per sample (ominus only)
};

inline Residual residual(const Eigen::MatrixXd& labels, const Eigen::MatrixXd& source_pred,
                         ResidualRule rule) {
  detail::require<ShapeError>(labels.rows() == source_pred.rows() && labels.cols() == source_pred.cols(),
                              "residual: label and prediction shapes differ");
  Residual r;
  r.rule = rule;
  r.values.resize(labels.rows());
  if (rule == ResidualRule::scalar_binary) {
    detail::require<ShapeError>(labels.cols() == 1, "residual: scalar-binary rule needs one column");
    r.values = labels.col(0) - source_pred.col(0);
    return r;
  }
  detail::require<ShapeError>(labels.cols() >= 2, "residual: multiclass rule needs >= 2 columns");
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    Eigen::Index k = 0;
    source_pred.row(i).maxCoeff(&k);
    r.classes.push_back(static_cast<int>(k));
    r.values[i] = labels(i, k) - source_pred(i, k);
  }
  return r;
}

inline Eigen::MatrixXd one_hot(std::span<const int> labels, int class_count) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), class_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    detail::require(labels[i] >= 0 && labels[i] < class_count, "one_hot: label out of range");
    m(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return m;
}

// Sum over samples of the squared output change, compared at the source
// argmax class under the multiclass rule.
inline double cf_empirical(const Eigen::MatrixXd& source_out, const Eigen::MatrixXd& target_out,
                           ResidualRule rule) {
  detail::require<ShapeError>(source_out.rows() == target_out.rows() &&
                                  source_out.cols() == target_out.cols(),
                              "cf_empirical: output shapes differ");
  if (rule == ResidualRule::scalar_binary) {
    detail::require<ShapeError>(source_out.cols() == 1, "cf_empirical: scalar-binary needs one column");
    return (target_out - source_out).squaredNorm();
  }
  double s = 0.0;
  for (Eigen::Index i = 0; i < source_out.rows(); ++i) {
    Eigen::Index k = 0;
    source_out.row(i).maxCoeff(&k);
    const double d = target_out(i, k) - source_out(i, k);
    s += d * d;
  }
  return s;
}

// Network form on softmax outputs. scalar-binary uses p(class 1) of a
// two-class model.
inline double cf_empirical(const Network<float>& f_s, const Network<float>& f_t,
                           const Matrix<float>& x, ResidualRule rule) {
  detail::require<ShapeError>(f_s.class_count() == f_t.class_count(),
                              "cf_empirical: models disagree on class count");
  const Eigen::MatrixXd ps = forward(f_s.cast<double>(), Matrix<double>(x.cast<double>()));
  const Eigen::MatrixXd pt = forward(f_t.cast<double>(), Matrix<double>(x.cast<double>()));
  if (rule == ResidualRule::scalar_binary) {
    detail::require<ShapeError>(f_s.class_count() == 2, "cf_empirical: scalar-binary needs 2 classes");
    return cf_empirical(Eigen::MatrixXd(ps.col(1)), Eigen::MatrixXd(pt.col(1)), rule);
  }
  return cf_empirical(ps, pt, rule);
}

// ---------------------------------------------------------------------------
// Kernel ridge forms

namespace detail {

// (Phi Phi^T + lambda I)^{-1} y by Cholesky; singular systems are rejected.
inline Eigen::VectorXd ridge_solve(const Eigen::MatrixXd& phi, const Eigen::VectorXd& y,
                                   double lambda, const char* who) {
  require<ShapeError>(phi.rows() == y.size(), std::string(who) + ": residual length " +
                                                  std::to_string(y.size()) + " does not match " +
                                                  std::to_string(phi.rows()) + " feature rows");
  require(lambda >= 0.0 && std::isfinite(lambda), std::string(who) + ": lambda must be >= 0");
  Eigen::MatrixXd k = phi * phi.transpose();
  k.diagonal().array() += lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  const double rc = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
  if (llt.info() != Eigen::Success || !(rc > 1e-14)) {
    throw NumericalError(std::string(who) + ": kernel system is singular or ill-conditioned (rcond " +
                         std::to_string(rc) + ", lambda " + std::to_string(lambda) +
                         "); use lambda > 0");
  }
  return llt.solve(y);
}

}  // namespace detail

// Closed-form weight change Phi_T^T (Phi_T Phi_T^T + lambda I)^{-1} y.
inline Eigen::VectorXd ntk_weight_update(const Eigen::MatrixXd& phi_t, const Eigen::VectorXd& y,
                                         double lambda) {
  return phi_t.transpose() * detail::ridge_solve(phi_t, y, lambda, "ntk_weight_update");
}

// || Phi_X Phi_F^T (Phi_F Phi_F^T + lambda I)^{-1} y ||^2
inline double cf_ntk_predicted(const Eigen::MatrixXd& phi_x, const Eigen::MatrixXd& phi_f,
                               const Eigen::VectorXd& y, double lambda) {
  detail::require<ShapeError>(phi_x.cols() == phi_f.cols(),
                              "cf_ntk_predicted: feature matrices have different widths");
  const Eigen::VectorXd a = detail::ridge_solve(phi_f, y, lambda, "cf_ntk_predicted");
  return (phi_x * (phi_f.transpose() * a)).squaredNorm();
}

struct CFReport {
  double delta_empirical = 0.0;
  double delta_predicted = 0.0;
  double lambda = 0.0;
  double residual_norm2 = 0.0;
  ResidualRule rule = ResidualRule::multiclass_ominus;
};

// ---------------------------------------------------------------------------
// SVD similarity

struct SvdFactors {
  Eigen::MatrixXd u;      // n x r
  Eigen::VectorXd sigma;  // r, descending
  Eigen::MatrixXd v;      // q x r
};

// Thin SVD keeping singular values above tol * sigma_max.
inline SvdFactors truncated_svd(const Eigen::MatrixXd& phi, double tol = 1e-10) {
  detail::require(phi.size() > 0, "svd: empty matrix");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(phi, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  if (s.size() == 0 || !(s[0] > 0.0)) throw InvalidArgument("svd: zero matrix has no row space");
  Eigen::Index r = 0;
  while (r < s.size() && s[r] > tol * s[0]) ++r;
  return {svd.matrixU().leftCols(r), s.head(r), svd.matrixV().leftCols(r)};
}

struct SimilarityReport {
  SvdFactors source;
  SvdFactors target;
  Eigen::MatrixXd overlap;  // V_S^T V_T
  double overlap_norm2 = 0.0;
  double projector_norm2 = 0.0;  // || V_S V_S^T V_T V_T^T ||_F^2
  double tol = 1e-10;
};

inline SimilarityReport svd_similarity(const Eigen::MatrixXd& phi_s, const Eigen::MatrixXd& phi_t,
                                       double tol = 1e-10) {
  detail::require<ShapeError>(phi_s.cols() == phi_t.cols(),
                              "svd_similarity: feature matrices have different widths");
  SimilarityReport r;
  r.tol = tol;
  r.source = truncated_svd(phi_s, tol);
  r.target = truncated_svd(phi_t, tol);
  r.overlap = r.source.v.transpose() * r.target.v;
  r.overlap_norm2 = r.overlap.squaredNorm();
  // With orthonormal V columns, ||P_S P_T||_F^2 = trace(V_T^T P_S V_T);
  // formed from the small r_S x r_T block rather than q x q projectors.
  const Eigen::MatrixXd m = r.source.v * r.overlap;  // P_S V_T
  r.projector_norm2 = (m.transpose() * m).trace();
  return r;
}

// Forgetting written with both SVDs:
//   || U_S S_S V_S^T V_T S_T (S_T^2 + lambda I)^{-1} U_T^T y ||^2
// where S is the evaluated set and T the set trained on.
inline double cf_svd_form(const SimilarityReport& sim, const Eigen::VectorXd& y, double lambda) {
  const auto& s = sim.source;
  const auto& t = sim.target;
  detail::require<ShapeError>(t.u.rows() == y.size(), "cf_svd_form: residual length mismatch");
  const Eigen::VectorXd shrink =
      t.sigma.array() / (t.sigma.array().square() + lambda);
  const Eigen::VectorXd inner = shrink.asDiagonal() * (t.u.transpose() * y);
  return (s.u * (s.sigma.asDiagonal() * (sim.overlap * inner))).squaredNorm();
}

// ---------------------------------------------------------------------------
// Bound checks

struct BoundCheck {
  double lower = 0.0;
  double value = 0.0;
  double upper = 0.0;
  bool holds = false;
};

namespace detail {

inline Eigen::VectorXd symmetric_eigenvalues(const Eigen::MatrixXd& m, const char* who) {
  require<ShapeError>(m.rows() == m.cols() && m.rows() > 0, std::string(who) + ": matrix must be square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  require((m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * scale,
          std::string(who) + ": matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseAbs();
  require(ev.minCoeff() > 1e-12 * std::max(ev.maxCoeff(), 1e-300), std::string(who) + ": matrix is singular");
  return ev;
}

inline bool within(double lo, double v, double hi) {
  const double slack = 1e-9 * std::max(1.0, hi);
  return lo - slack <= v && v <= hi + slack;
}

}  // namespace detail

// lambda_min^2 |v|^2 <= |M v|^2 <= lambda_max^2 |v|^2 for symmetric nonsingular M.
inline BoundCheck eigen_bound_check(const Eigen::MatrixXd& m, const Eigen::VectorXd& v) {
  const auto ev = detail::symmetric_eigenvalues(m, "eigen_bound_check");
  detail::require<ShapeError>(v.size() == m.rows(), "eigen_bound_check: vector length mismatch");
  BoundCheck b;
  const double vn = v.squaredNorm();
  b.lower = ev.minCoeff() * ev.minCoeff() * vn;
  b.upper = ev.maxCoeff() * ev.maxCoeff() * vn;
  b.value = (m * v).squaredNorm();
  b.holds = detail::within(b.lower, b.value, b.upper);
  return b;
}

// Forgetting sandwiched by the spectra of A = Phi_X Phi_F^T and the ridge
// inverse B: lmin(A)^2 lmin(B)^2 |y|^2 <= |A B y|^2 <= lmax(A)^2 lmax(B)^2 |y|^2.
inline BoundCheck cf_bound_check(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                 const Eigen::VectorXd& y) {
  const auto ea = detail::symmetric_eigenvalues(a, "cf_bound_check");
  const auto eb = detail::symmetric_eigenvalues(b, "cf_bound_check");
  detail::require<ShapeError>(a.cols() == b.rows() && b.cols() == y.size(),
                              "cf_bound_check: dimension mismatch");
  BoundCheck r;
  const double yn = y.squaredNorm();
  r.lower = std::pow(ea.minCoeff() * eb.minCoeff(), 2) * yn;
  r.upper = std::pow(ea.maxCoeff() * eb.maxCoeff(), 2) * yn;
  r.value = (a * (b * y)).squaredNorm();
  r.holds = detail::within(r.lower, r.value, r.upper);
  return r;
}

struct MaximalityReport {
  int class_count = 0;
  int source_class = 0;
  double max_over_labelings = 0.0;     // largest per-sample squared residual
  double min_over_wrong_labelings = 0.0;
  bool holds = false;  // every wrong labeling reaches 1 and nothing exceeds it
};

// Exhaustive over all C one-hot labelings of one sample whose source
// prediction is one-hot at source_class.
inline MaximalityReport residual_maximality(int class_count, int source_class) {
  detail::require(class_count >= 2, "residual_maximality: needs at least 2 classes");
  detail::require(source_class >= 0 && source_class < class_count,
                  "residual_maximality: source class out of range");
  MaximalityReport r;
  r.class_count = class_count;
  r.source_class = source_class;
  Eigen::MatrixXd pred = Eigen::MatrixXd::Zero(1, class_count);
  pred(0, source_class) = 1.0;
  r.min_over_wrong_labelings = std::numeric_limits<double>::infinity();
  for (int label = 0; label < class_count; ++label) {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(1, class_count);
    y(0, label) = 1.0;
    const double sq = residual(y, pred, ResidualRule::multiclass_ominus).values.squaredNorm();
    r.max_over_labelings = std::max(r.max_over_labelings, sq);
    if (label != source_class) r.min_over_wrong_labelings = std::min(r.min_over_wrong_labelings, sq);
  }
  r.holds = r.max_over_labelings <= 1.0 && r.min_over_wrong_labelings == 1.0;
  return r;
}

// ---------------------------------------------------------------------------
// Linear-model oracle: for f(x) = w.x the first-order expansion is exact, so
// the closed form, gradient descent and both forgetting measures must agree.

struct LinearOracleReport {
  std::size_t q = 0;
  std::size_t n = 0;
  double lambda = 0.0;
  double weight_rel_err = 0.0;     // closed form vs gradient descent
  double expansion_rel_err = 0.0;  // f_T - f_S vs <phi, w_T - w_S>
  double cf_empirical = 0.0;
  double cf_predicted = 0.0;
  double cf_rel_err = 0.0;
  std::size_t gd_iterations = 0;
  bool gd_converged = false;
  bool weights_agree = false;
  bool expansion_exact = false;
  bool cf_agree = false;

  [[nodiscard]] bool passed() const { return gd_converged && weights_agree && expansion_exact && cf_agree; }
};

struct LinearOracleOptions {
  double residual_scale = 1.0;  // y_T = f_S(X_T) + scale * noise
  std::size_t max_iterations = 2'000'000;
};

inline LinearOracleReport linearized_oracle(std::size_t q, std::size_t n, double lambda,
                                            std::uint64_t seed, const LinearOracleOptions& opt = {}) {
  detail::require(q >= 1 && n >= 1, "linearized_oracle: q and n must be >= 1");
  detail::require(lambda > 0.0, "linearized_oracle: lambda must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  auto randn = [&](Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = g(rng);
    return m;
  };
  const auto qi = static_cast<Eigen::Index>(q);
  const auto ni = static_cast<Eigen::Index>(n);
  const Eigen::VectorXd w_s = randn(qi, 1);
  const Eigen::MatrixXd x_t = randn(ni, qi);  // target task inputs; phi(x) = x
  const Eigen::MatrixXd x_s = randn(ni, qi);  // source-task inputs CF is measured on
  const Eigen::VectorXd y_t = x_t * w_s + opt.residual_scale * Eigen::VectorXd(randn(ni, 1));

  LinearOracleReport r;
  r.q = q;
  r.n = n;
  r.lambda = lambda;
  const Eigen::VectorXd resid = y_t - x_t * w_s;
  const Eigen::VectorXd w_t = w_s + ntk_weight_update(x_t, resid, lambda);

  // Gradient descent on |X_T d - resid|^2 + lambda |d|^2 from d = 0.
  const double smax = Eigen::JacobiSVD<Eigen::MatrixXd>(x_t).singularValues()(0);
  const double step = 1.0 / (2.0 * (smax * smax + lambda));
  Eigen::VectorXd d = Eigen::VectorXd::Zero(qi);
  for (r.gd_iterations = 0; r.gd_iterations < opt.max_iterations; ++r.gd_iterations) {
    const Eigen::VectorXd grad = 2.0 * (x_t.transpose() * (x_t * d - resid)) + 2.0 * lambda * d;
    d -= step * grad;
    if (grad.norm() <= 1e-12 * std::max(1.0, (x_t.transpose() * resid).norm())) {
      r.gd_converged = true;
      break;
    }
  }
  const Eigen::VectorXd w_gd = w_s + d;
  r.weight_rel_err = (w_gd - w_t).norm() / std::max(w_t.norm(), 1e-300);

  const Eigen::VectorXd f_s = x_s * w_s;
  const Eigen::VectorXd f_t = x_s * w_t;
  const Eigen::VectorXd linear = x_s * (w_t - w_s);
  r.expansion_rel_err = ((f_t - f_s) - linear).cwiseAbs().maxCoeff() /
                        std::max({f_t.cwiseAbs().maxCoeff(), f_s.cwiseAbs().maxCoeff(), 1e-300});

  r.cf_empirical = cf_empirical(Eigen::MatrixXd(f_s), Eigen::MatrixXd(f_t), ResidualRule::scalar_binary);
  r.cf_predicted = cf_ntk_predicted(x_s, x_t, resid, lambda);
  const double scale = std::max(r.cf_empirical, r.cf_predicted);
  r.cf_rel_err = scale == 0.0 ? 0.0 : std::abs(r.cf_empirical - r.cf_predicted) / scale;

  r.weights_agree = r.weight_rel_err <= 1e-6;
  r.expansion_exact = r.expansion_rel_err <= 64 * std::numeric_limits<double>::epsilon();
  r.cf_agree = r.cf_rel_err <= 1e-8;
  return r;
}

// ---------------------------------------------------------------------------
// Serialisation

inline nlohmann::json to_json(const CFReport& r) {
  return {{"rule", to_string(r.rule)},
          {"delta_empirical", r.delta_empirical},
          {"delta_predicted", r.delta_predicted},
          {"lambda", r.lambda},
          {"residual_norm2", r.residual_norm2}};
}

inline nlohmann::json to_json(const SimilarityReport& r) {
  auto sv = [](const Eigen::VectorXd& s) { return std::vector<double>(s.data(), s.data() + s.size()); };
  return {{"tol", r.tol},
          {"rank_source", r.source.sigma.size()},
          {"rank_target", r.target.sigma.size()},
          {"sigma_source", sv(r.source.sigma)},
          {"sigma_target", sv(r.target.sigma)},
          {"overlap_norm2", r.overlap_norm2},
          {"projector_norm2", r.projector_norm2}};
}

inline nlohmann::json to_json(const LinearOracleReport& r) {
  return {{"q", r.q},
          {"n", r.n},
          {"lambda", r.lambda},
          {"weight_rel_err", r.weight_rel_err},
          {"expansion_rel_err", r.expansion_rel_err},
          {"cf_empirical", r.cf_empirical},
          {"cf_predicted", r.cf_predicted},
          {"cf_rel_err", r.cf_rel_err},
          {"gd_iterations", r.gd_iterations},
          {"gd_converged", r.gd_converged},
          {"weights_agree", r.weights_agree},
          {"expansion_exact", r.expansion_exact},
          {"cf_agree", r.cf_agree},
          {"passed", r.passed()}};
}

// Binary feature-matrix file: 16-byte header "NTKF", n (u32 LE), q (u32 LE),
// 4 zero bytes; then n*q little-endian f64, row-major.
inline void save_feature_matrix(const Eigen::MatrixXd& phi, const std::filesystem::path& path) {
  detail::require(phi.rows() <= 0xFFFFFFFFLL && phi.cols() <= 0xFFFFFFFFLL,
                  "save_feature_matrix: matrix too large for the header");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  auto put32 = [&](std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  out.write("NTKF", 4);
  put32(static_cast<std::uint32_t>(phi.rows()));
  put32(static_cast<std::uint32_t>(phi.cols()));
  put32(0);
  for (Eigen::Index i = 0; i < phi.rows(); ++i)
    for (Eigen::Index j = 0; j < phi.cols(); ++j) {
      std::uint64_t bits = 0;
      const double v = phi(i, j);
      std::memcpy(&bits, &v, sizeof bits);
      unsigned char b[8];
      for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
      out.write(reinterpret_cast<const char*>(b), 8);
    }
  if (!out) throw FormatError("failed writing " + path.string());
}

inline Eigen::MatrixXd load_feature_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<unsigned char> b{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (b.size() < 16 || std::memcmp(b.data(), "NTKF", 4) != 0) {
    throw FormatError(path.string() + ": not a feature-matrix file (bad magic)");
  }
  auto get32 = [&](std::size_t o) {
    return std::uint32_t(b[o]) | std::uint32_t(b[o + 1]) << 8 | std::uint32_t(b[o + 2]) << 16 |
           std::uint32_t(b[o + 3]) << 24;
  };
  const std::size_t n = get32(4), q = get32(8);
  if (b.size() != 16 + 8 * n * q) {
    throw FormatError(path.string() + ": expected " + std::to_string(16 + 8 * n * q) +
                      " bytes for a " + std::to_string(n) + "x" + std::to_string(q) +
                      " matrix, found " + std::to_string(b.size()));
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(q));
  const unsigned char* p = b.data() + 16;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j, p += 8) {
      std::uint64_t bits = 0;
      for (int k = 0; k < 8; ++k) bits |= std::uint64_t(p[k]) << (8 * k);
      double v;
      std::memcpy(&v, &bits, sizeof v);
      m(i, j) = v;
    }
  return m;
}

}  // namespace seamforge
