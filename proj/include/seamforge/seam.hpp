#pragma once

// Forget-then-recover unlearning with early stopping.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "seamforge/data.hpp"
#include "seamforge/error.hpp"
#include "seamforge/nn.hpp"
#include "seamforge/seeds.hpp"

namespace seamforge {

struct SeamConfig {
  std::size_t n_for = 100;
  std::optional<double> acc_for;  // unset: min(2/C, 0.6)
  std::size_t n_rec = 100;
  double acc_rec_factor = 0.97;
  TrainConfig forget_train;
  TrainConfig recover_train;
  std::uint64_t seed = 0;

  [[nodiscard]] double forget_threshold(int class_count) const {
    return acc_for ? *acc_for : std::min(2.0 / class_count, 0.6);
  }

  void validate() const {
    if (acc_for) {
      detail::require(*acc_for > 0.0 && *acc_for <= 1.0, "seam: acc_for must lie in (0, 1]");
    }
    detail::require(acc_rec_factor > 0.0 && acc_rec_factor <= 1.0,
                    "seam: acc_rec_factor must lie in (0, 1]");
    forget_train.validate();
    recover_train.validate();
  }
};

struct PhaseReport {
  std::size_t epochs = 0;
  bool stopped_early = false;
  double threshold = 0.0;
  std::vector<double> accuracy;  // forgetting: on D_for, true labels; recovery: on D_rec
  std::vector<double> loss;      // training loss of each epoch
};

struct SeamReport {
  double baseline_acc = 0.0;
  PhaseReport forget;
  PhaseReport recover;
};

template <typename Net>
struct PhaseResult {
  Net network;
  PhaseReport report;
};

struct SeamResult {
  Network<float> forgotten;  // after the forgetting step
  Network<float> recovered;  // after the recovery step
  SeamReport report;
};

namespace detail {

enum SeamStream : std::uint64_t { relabel_stream = 1, forget_shuffle = 2, recover_shuffle = 3 };

template <typename S>
void require_finite(const Network<S>& net, const std::string& where) {
  if (!net.flatten_weights().allFinite()) {
    throw NumericalError(where + ": weights became non-finite (learning rate too large?)");
  }
}

}  // namespace detail

// Each epoch draws fresh wrong labels for D_for, trains one epoch on them and
// measures accuracy on D_for under its true labels; stops once that accuracy
// drops below the threshold.
template <typename S>
PhaseResult<Network<S>> forget(Network<S> net, const LabeledDataset& d_for, const SeamConfig& cfg) {
  cfg.validate();
  detail::require(!d_for.empty(), "forget: empty forgetting set");
  detail::require(net.class_count() >= 2, "forget: needs at least 2 classes");
  PhaseResult<Network<S>> out{std::move(net), {}};
  out.report.threshold = cfg.forget_threshold(out.network.class_count());
  std::mt19937_64 relabel_rng(derive_seed(cfg.seed, detail::relabel_stream));
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, detail::forget_shuffle));
  for (std::size_t e = 0; e < cfg.n_for; ++e) {
    const auto wrong = relabel_random_wrong(d_for, relabel_rng);
    const auto stats = sgd_epoch(out.network, wrong, cfg.forget_train, shuffle_rng);
    detail::require_finite(out.network, "forget");
    const double acc = evaluate_accuracy(out.network, d_for);
    out.report.epochs = e + 1;
    out.report.loss.push_back(stats.loss);
    out.report.accuracy.push_back(acc);
    if (acc < out.report.threshold) {
      out.report.stopped_early = true;
      break;
    }
  }
  return out;
}

// Trains on D_rec until its accuracy exceeds acc_rec_factor * baseline_acc.
template <typename S>
PhaseResult<Network<S>> recover(Network<S> net, const LabeledDataset& d_rec, double baseline_acc,
                                const SeamConfig& cfg) {
  cfg.validate();
  detail::require(!d_rec.empty(), "recover: empty recovery set");
  detail::require(baseline_acc >= 0.0 && baseline_acc <= 1.0,
                  "recover: baseline accuracy must lie in [0, 1]");
  PhaseResult<Network<S>> out{std::move(net), {}};
  out.report.threshold = cfg.acc_rec_factor * baseline_acc;
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, detail::recover_shuffle));
  for (std::size_t e = 0; e < cfg.n_rec; ++e) {
    const auto stats = sgd_epoch(out.network, d_rec, cfg.recover_train, shuffle_rng);
    detail::require_finite(out.network, "recover");
    const double acc = evaluate_accuracy(out.network, d_rec);
    out.report.epochs = e + 1;
    out.report.loss.push_back(stats.loss);
    out.report.accuracy.push_back(acc);
    if (acc > out.report.threshold) {
      out.report.stopped_early = true;
      break;
    }
  }
  return out;
}

// Baseline accuracy is measured on `eval` before forgetting. When both sets
// were drawn from one source, pass their row indices to have overlap rejected.
inline SeamResult run_seam(const Network<float>& net, const LabeledDataset& d_for,
                           const LabeledDataset& d_rec, const LabeledDataset& eval,
                           const SeamConfig& cfg, std::span<const std::size_t> for_index = {},
                           std::span<const std::size_t> rec_index = {}) {
  cfg.validate();
  if (!for_index.empty() && !rec_index.empty()) {
    std::vector<std::size_t> a(for_index.begin(), for_index.end());
    std::vector<std::size_t> b(rec_index.begin(), rec_index.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<std::size_t> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    detail::require(both.empty(), "run_seam: forgetting and recovery sets share " +
                                      std::to_string(both.size()) + " source rows");
  }
  SeamResult r;
  r.report.baseline_acc = evaluate_accuracy(net, eval);
  auto f = forget(net, d_for, cfg);
  r.report.forget = std::move(f.report);
  r.forgotten = f.network;
  auto g = recover(std::move(f.network), d_rec, r.report.baseline_acc, cfg);
  r.report.recover = std::move(g.report);
  r.recovered = std::move(g.network);
  return r;
}

// Disjoint, per-class stratified forgetting and recovery sets drawn from one
// pool. Per-class counts are round(fraction * class size), half up.
struct SeamSets {
  LabeledDataset d_for;
  LabeledDataset d_rec;
  std::vector<std::size_t> for_index;
  std::vector<std::size_t> rec_index;
};

inline SeamSets draw_seam_sets(const LabeledDataset& pool, double for_fraction,
                               double rec_fraction, std::uint64_t seed) {
  detail::require(for_fraction > 0.0 && for_fraction <= 1.0,
                  "seam sets: forgetting fraction must lie in (0, 1]");
  detail::require(rec_fraction > 0.0 && rec_fraction <= 1.0,
                  "seam sets: recovery fraction must lie in (0, 1]");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(pool.class_count));
  for (std::size_t i = 0; i < pool.size(); ++i)
    by_class[static_cast<std::size_t>(pool.labels[i])].push_back(i);
  std::mt19937_64 rng(seed);
  SeamSets s;
  auto count = [](double f, std::size_t n) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 0.5));
  };
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    const auto kf = count(for_fraction, idx.size());
    const auto kr = count(rec_fraction, idx.size());
    if (kf < 1 || kr < 1) {
      throw InvalidArgument("seam sets: class " + std::to_string(c) + " has " +
                            std::to_string(idx.size()) + " pool samples; fraction " +
                            std::to_string(kf < 1 ? for_fraction : rec_fraction) +
                            " selects none");
    }
    detail::require(kf + kr <= idx.size(), "seam sets: class " + std::to_string(c) +
                                               " too small for disjoint sets");
    fisher_yates(idx, rng);
    s.for_index.insert(s.for_index.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(kf));
    s.rec_index.insert(s.rec_index.end(), idx.begin() + static_cast<std::ptrdiff_t>(kf),
                       idx.begin() + static_cast<std::ptrdiff_t>(kf + kr));
  }
  std::sort(s.for_index.begin(), s.for_index.end());
  std::sort(s.rec_index.begin(), s.rec_index.end());
  s.d_for = pool.select(s.for_index);
  s.d_rec = pool.select(s.rec_index);
  return s;
}

inline nlohmann::json to_json(const PhaseReport& p) {
  return {{"epochs", p.epochs},
          {"stopped_early", p.stopped_early},
          {"threshold", p.threshold},
          {"accuracy", p.accuracy},
          {"loss", p.loss}};
}

inline nlohmann::json to_json(const SeamReport& r) {
  return {{"baseline_acc", r.baseline_acc},
          {"forget", to_json(r.forget)},
          {"recover", to_json(r.recover)}};
}

}  // namespace seamforge
