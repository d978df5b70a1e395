#pragma once

// ACC / ASR / FID metrics and linear CKA between layer representations.

#include <nlohmann/json.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "seamforge/dataset.hpp"
#include "seamforge/error.hpp"
#include "seamforge/nn.hpp"
#include "seamforge/text.hpp"

namespace seamforge {

// (acc_s - asr_s) / acc_b
inline double fid(double acc_b, double acc_s, double asr_s) {
  detail::require(acc_b > 0.0, "fid: baseline accuracy must be positive");
  return (acc_s - asr_s) / acc_b;
}

struct MetricsReport {
  double acc_b = 0.0;
  double asr_b = 0.0;
  double acc_s = 0.0;
  double asr_s = 0.0;
  double fid = 0.0;
};

inline MetricsReport make_metrics(double acc_b, double asr_b, double acc_s, double asr_s) {
  return {acc_b, asr_b, acc_s, asr_s, fid(acc_b, acc_s, asr_s)};
}

// Fraction of trigger-carrying inputs classified as their (target) label.
template <typename S>
double asr(const Network<S>& net, const LabeledDataset& asr_set) {
  detail::require(!asr_set.empty(), "asr: empty trigger set");
  return evaluate_accuracy(net, asr_set);
}

// Linear CKA with internal column centring. Zero when either
// self-similarity vanishes (a constant representation).
inline double linear_cka(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  detail::require<ShapeError>(a.rows() == b.rows(), "linear_cka: row counts differ");
  detail::require(a.rows() >= 2, "linear_cka: needs at least 2 samples");
  const Eigen::MatrixXd ac = a.rowwise() - a.colwise().mean();
  const Eigen::MatrixXd bc = b.rowwise() - b.colwise().mean();
  const double cross = (bc.transpose() * ac).squaredNorm();
  const double da = (ac.transpose() * ac).norm();
  const double db = (bc.transpose() * bc).norm();
  if (da == 0.0 || db == 0.0) return 0.0;
  return cross / (da * db);
}

struct CkaReport {
  std::vector<double> values;  // one per parameterised layer, input to output
};

template <typename S>
CkaReport layerwise_cka(const Network<S>& a, const Network<S>& b, const LabeledDataset& probe) {
  detail::require(!probe.empty(), "layerwise_cka: empty probe set");
  const auto sa = a.specs();
  const auto sb = b.specs();
  const bool same =
      a.input_shape() == b.input_shape() && a.class_count() == b.class_count() && sa == sb;
  detail::require(same, "layerwise_cka: networks differ in architecture");
  const auto x = rows_as<S>(probe, 0, static_cast<Eigen::Index>(probe.size()));
  const auto ha = layer_activations(a, x);
  const auto hb = layer_activations(b, x);
  CkaReport r;
  for (std::size_t l = 0; l < ha.size(); ++l) {
    r.values.push_back(linear_cka(ha[l].template cast<double>(), hb[l].template cast<double>()));
  }
  return r;
}

inline nlohmann::json to_json(const MetricsReport& m) {
  return {{"acc_b", m.acc_b}, {"asr_b", m.asr_b}, {"acc_s", m.acc_s}, {"asr_s", m.asr_s},
          {"fid", m.fid}};
}

inline nlohmann::json to_json(const CkaReport& r) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < r.values.size(); ++i) layers.push_back({{"layer", i}, {"cka", r.values[i]}});
  return {{"layers", layers}};
}

inline std::string metrics_csv(const MetricsReport& m) {
  return "acc_b,asr_b,acc_s,asr_s,fid\n" + fmt_num(m.acc_b) + "," + fmt_num(m.asr_b) + "," +
         fmt_num(m.acc_s) + "," + fmt_num(m.asr_s) + "," + fmt_num(m.fid) + "\n";
}

inline std::string cka_csv(const CkaReport& r) {
  std::string s = "layer,cka\n";
  for (std::size_t i = 0; i < r.values.size(); ++i) s += std::to_string(i) + "," + fmt_num(r.values[i]) + "\n";
  return s;
}

}  // namespace seamforge
