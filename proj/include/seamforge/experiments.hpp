#pragma once

// Experiment pipelines behind the CLI subcommands. Each command runs one
// isolated pipeline per seed and returns result rows plus per-seed details;
// write_outputs turns them into <out>/<command>.csv and <out>/<command>.json.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "seamforge/analysis.hpp"
#include "seamforge/backdoor.hpp"
#include "seamforge/checkpoint.hpp"
#include "seamforge/config.hpp"
#include "seamforge/data.hpp"
#include "seamforge/ntk.hpp"
#include "seamforge/parallel.hpp"
#include "seamforge/seam.hpp"
#include "seamforge/seeds.hpp"
#include "seamforge/text.hpp"

namespace seamforge {

inline constexpr const char* kResultSchemaId = "seamforge-result/1";
inline constexpr const char* kResultCsvHeader = "experiment,seed,phase,key,acc,asr,fid,epochs,value,seconds";

// One CSV line. Unused columns stay empty (null in JSON). `key` is the sweep
// parameter and `value` a per-command auxiliary measurement.
struct ResultRow {
  std::string experiment;
  std::uint64_t seed = 0;
  std::string phase;
  std::optional<double> key;
  std::optional<double> acc;
  std::optional<double> asr;
  std::optional<double> fid;
  std::optional<std::size_t> epochs;
  std::optional<double> value;
  std::optional<double> seconds;
};

inline std::string to_csv(const std::vector<ResultRow>& rows) {
  auto num = [](const std::optional<double>& v) { return v ? fmt_num(*v) : std::string(); };
  std::string s = std::string(kResultCsvHeader) + "\n";
  for (const auto& r : rows) {
    s += r.experiment + "," + std::to_string(r.seed) + "," + r.phase + "," + num(r.key) + "," +
         num(r.acc) + "," + num(r.asr) + "," + num(r.fid) + "," +
         (r.epochs ? std::to_string(*r.epochs) : std::string()) + "," + num(r.value) + "," +
         num(r.seconds) + "\n";
  }
  return s;
}

inline nlohmann::json to_json(const ResultRow& r) {
  auto opt = [](const auto& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"experiment", r.experiment}, {"seed", r.seed}, {"phase", r.phase},
          {"key", opt(r.key)},          {"acc", opt(r.acc)}, {"asr", opt(r.asr)},
          {"fid", opt(r.fid)},          {"epochs", opt(r.epochs)}, {"value", opt(r.value)},
          {"seconds", opt(r.seconds)}};
}

struct CommandOutput {
  std::string command;
  std::vector<ResultRow> rows;
  nlohmann::json seeds = nlohmann::json::array();  // per-seed details, in seed order
};

// ---------------------------------------------------------------------------
// Per-seed building blocks

namespace streams {
enum : std::uint64_t {
  train_data = 1,
  test_data,
  pool_data,
  poison,
  train_shuffle,
  init,
  seam,
  seam_sets,
  residual,
  revive,
  ntk,
  probe,
  pollute,
};
}

struct Task {
  LabeledDataset train;
  LabeledDataset test;
  LabeledDataset pool;  // D_for / D_rec and the sweep samples come from here
  TriggerSpec trigger;
  LabeledDataset asr_set;
};

inline Task load_task(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto& d = cfg.dataset;
  Task t;
  if (d.kind == "synthetic") {
    t.train = synth_images(d.synth, d.train_per_class, derive_seed(seed, streams::train_data));
    t.test = synth_images(d.synth, d.test_per_class, derive_seed(seed, streams::test_data));
    t.pool = synth_images(d.synth, d.pool_per_class, derive_seed(seed, streams::pool_data));
  } else if (d.kind == "idx") {
    t.train = load_idx(d.train_images, d.train_labels);
    t.test = load_idx(d.test_images, d.test_labels);
    t.pool = d.pool_images ? load_idx(*d.pool_images, *d.pool_labels) : t.train;
  } else {
    t.train = load_dataset_json(d.train_json);
    t.test = load_dataset_json(d.test_json);
    t.pool = d.pool_json ? load_dataset_json(*d.pool_json) : t.train;
  }
  if (t.test.shape != t.train.shape || t.pool.shape != t.train.shape) {
    throw ConfigError("/dataset: train, test and pool disagree on image shape");
  }
  const int classes = std::max({t.train.class_count, t.test.class_count, t.pool.class_count});
  t.train.class_count = t.test.class_count = t.pool.class_count = classes;

  t.trigger = cfg.trigger;
  if (t.trigger.kind == TriggerKind::blend) {
    t.trigger.overlay = default_blend_overlay(t.train.shape, cfg.overlay_seed);
  }
  try {
    t.trigger.validate(t.train.shape, classes);
    t.asr_set = build_asr_set(t.test, t.trigger);
  } catch (const Error& e) {
    throw ConfigError(std::string("/trigger: ") + e.what());
  }
  return t;
}

inline std::vector<LayerSpec> model_specs(const ExperimentConfig& cfg, int classes) {
  if (cfg.model.kind == "cnn") return small_cnn_specs(cfg.model.filters, cfg.model.kernel, classes);
  return mlp_specs(cfg.model.hidden, classes);
}

class Stopwatch {
 public:
  explicit Stopwatch(bool enabled) : enabled_(enabled), start_(std::chrono::steady_clock::now()) {}
  [[nodiscard]] std::optional<double> lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - start_).count();
    start_ = now;
    return enabled_ ? std::optional<double>(s) : std::nullopt;
  }

 private:
  bool enabled_;
  std::chrono::steady_clock::time_point start_;
};

struct SourceModel {
  Network<float> net;
  std::optional<std::size_t> epochs;  // unset when loaded from a checkpoint
  std::optional<double> seconds;
  std::vector<double> loss;
  std::size_t poisoned = 0;
};

inline SourceModel train_source(const ExperimentConfig& cfg, const Task& task, std::uint64_t seed,
                                double poison_rate) {
  Stopwatch clock(cfg.timing);
  SourceModel m;
  LabeledDataset data = task.train;
  if (poison_rate > 0.0) {
    auto p = poison_dataset(task.train, task.trigger, {poison_rate, derive_seed(seed, streams::poison)});
    m.poisoned = p.indices.size();
    data = std::move(p.data);
  }
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(seed, streams::train_shuffle);
  auto init = build_network<float>(task.train.shape, model_specs(cfg, task.train.class_count),
                                   task.train.class_count, derive_seed(seed, streams::init));
  auto r = sgd_train(std::move(init), data, tc);
  for (const auto& h : r.history) m.loss.push_back(h.loss);
  m.net = std::move(r.network);
  if (!m.net.flatten_weights().allFinite()) {
    throw NumericalError("train: weights became non-finite (learning rate too large?)");
  }
  m.epochs = tc.max_epochs;
  m.seconds = clock.lap();
  return m;
}

inline Network<float> load_compatible(const std::filesystem::path& path, const Task& task,
                                      const std::string& ptr) {
  Network<float> net;
  try {
    net = load_checkpoint(path);
  } catch (const FormatError& e) {
    throw ConfigError(ptr + ": " + e.what());
  }
  if (net.input_dim() != task.train.dim() || net.class_count() != task.train.class_count) {
    throw ConfigError(ptr + ": checkpoint expects " + std::to_string(net.input_dim()) + " inputs and " +
                      std::to_string(net.class_count()) + " classes; the dataset has " +
                      std::to_string(task.train.dim()) + " and " +
                      std::to_string(task.train.class_count));
  }
  return net;
}

// The model a command starts from: the configured checkpoint, or one trained
// in-process with the configured poison rate.
inline SourceModel source_model(const ExperimentConfig& cfg, const Task& task, std::uint64_t seed) {
  if (cfg.checkpoint) return {load_compatible(*cfg.checkpoint, task, "/checkpoint"), {}, {}, {}, 0};
  return train_source(cfg, task, seed, cfg.poison_rate);
}

inline SeamConfig seam_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeamConfig s = cfg.seam.seam;
  s.seed = derive_seed(seed, streams::seam);
  return s;
}

struct SeamRun {
  SeamResult result;
  SeamSets sets;
  MetricsReport metrics;
  double forgotten_acc = 0.0;
  double forgotten_asr = 0.0;
  std::optional<double> seconds;
};

// D_for and D_rec are drawn from the pool with the seed's seam_sets stream, so
// runs that differ only in rec_fraction or pollution share D_for.
inline SeamRun seam_on(const ExperimentConfig& cfg, const Task& task, const Network<float>& net,
                       std::uint64_t seed, double rec_fraction, double pollution = 0.0) {
  SeamRun run;
  run.sets = draw_seam_sets(task.pool, cfg.seam.for_fraction, rec_fraction,
                            derive_seed(seed, streams::seam_sets));
  LabeledDataset d_rec = run.sets.d_rec;
  if (pollution > 0.0) {
    d_rec = poison_dataset(d_rec, task.trigger, {pollution, derive_seed(seed, streams::pollute)}).data;
  }
  const double asr_b = asr(net, task.asr_set);
  Stopwatch clock(cfg.timing);
  run.result = run_seam(net, run.sets.d_for, d_rec, task.test, seam_config(cfg, seed),
                        run.sets.for_index, run.sets.rec_index);
  run.seconds = clock.lap();
  run.forgotten_acc = evaluate_accuracy(run.result.forgotten, task.test);
  run.forgotten_asr = asr(run.result.forgotten, task.asr_set);
  run.metrics = make_metrics(run.result.report.baseline_acc, asr_b,
                             evaluate_accuracy(run.result.recovered, task.test),
                             asr(run.result.recovered, task.asr_set));
  return run;
}

// First n rows of a seeded permutation of `data`.
inline LabeledDataset seeded_subset(const LabeledDataset& data, std::size_t n, std::uint64_t seed,
                                    const std::string& who) {
  detail::require(data.size() >= n, who + ": needs " + std::to_string(n) + " samples, only " +
                                        std::to_string(data.size()) + " available");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  fisher_yates(order, rng);
  order.resize(n);
  return data.select(order);
}

namespace detail {

inline std::filesystem::path checkpoint_path(const ExperimentConfig& cfg, const std::string& command,
                                             std::uint64_t seed, const std::string& tag) {
  return cfg.out / "checkpoints" /
         (command + "-seed" + std::to_string(seed) + (tag.empty() ? "" : "-" + tag) + ".json");
}

// Never overwrite the input checkpoint.
inline void save_output_checkpoint(const ExperimentConfig& cfg, const Network<float>& net,
                                   const std::filesystem::path& path) {
  if (cfg.checkpoint && std::filesystem::exists(path) &&
      std::filesystem::equivalent(path, *cfg.checkpoint)) {
    throw ConfigError("/out: output checkpoint " + path.string() + " would overwrite the input checkpoint");
  }
  std::filesystem::create_directories(path.parent_path());
  save_checkpoint(net, path);
}

template <typename F>
CommandOutput run_per_seed(const ExperimentConfig& cfg, const std::string& command, F&& per_seed) {
  struct Slot {
    std::vector<ResultRow> rows;
    nlohmann::json details;
  };
  std::vector<std::uint64_t> seeds = cfg.seeds;
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
  std::vector<Slot> slots(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t i) {
    slots[i].details = per_seed(seeds[i], slots[i].rows);
    slots[i].details["seed"] = seeds[i];
  });
  CommandOutput out;
  out.command = command;
  for (auto& s : slots) {
    // Unkeyed rows (baselines) sort before the sweep points.
    std::stable_sort(s.rows.begin(), s.rows.end(), [](const ResultRow& a, const ResultRow& b) {
      if (!a.key || !b.key) return !a.key && b.key;
      return *a.key < *b.key;
    });
    out.rows.insert(out.rows.end(), s.rows.begin(), s.rows.end());
    out.seeds.push_back(std::move(s.details));
  }
  return out;
}

inline ResultRow row(const ExperimentConfig& cfg, std::uint64_t seed, std::string phase) {
  ResultRow r;
  r.experiment = cfg.experiment;
  r.seed = seed;
  r.phase = std::move(phase);
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

inline CommandOutput cmd_train(const ExperimentConfig& cfg) {
  return detail::run_per_seed(cfg, "train", [&](std::uint64_t seed, std::vector<ResultRow>& rows) {
    const Task task = load_task(cfg, seed);
    const SourceModel m = train_source(cfg, task, seed, cfg.poison_rate);
    const auto path = detail::checkpoint_path(cfg, "train", seed, "");
    detail::save_output_checkpoint(cfg, m.net, path);
    auto r = detail::row(cfg, seed, "train");
    r.acc = evaluate_accuracy(m.net, task.test);
    r.asr = asr(m.net, task.asr_set);
    r.epochs = m.epochs;
    r.value = static_cast<double>(m.poisoned);
    r.seconds = m.seconds;
    rows.push_back(r);
    return nlohmann::json{{"checkpoint", path.generic_string()},
                          {"acc", *r.acc},
                          {"asr", *r.asr},
                          {"poisoned_samples", m.poisoned},
                          {"loss", m.loss}};
  });
}

inline CommandOutput cmd_seam(const ExperimentConfig& cfg) {
  return detail::run_per_seed(cfg, "seam", [&](std::uint64_t seed, std::vector<ResultRow>& rows) {
    const Task task = load_task(cfg, seed);
    const SourceModel m = source_model(cfg, task, seed);
    const SeamRun run = seam_on(cfg, task, m.net, seed, cfg.seam.rec_fraction);
    const auto& rep = run.result.report;

    auto base = detail::row(cfg, seed, "baseline");
    base.acc = run.metrics.acc_b;
    base.asr = run.metrics.asr_b;
    base.epochs = m.epochs;
    base.seconds = m.seconds;
    auto fg = detail::row(cfg, seed, "forget");
    fg.acc = run.forgotten_acc;
    fg.asr = run.forgotten_asr;
    fg.epochs = rep.forget.epochs;
    auto rc = detail::row(cfg, seed, "recover");
    rc.acc = run.metrics.acc_s;
    rc.asr = run.metrics.asr_s;
    rc.fid = run.metrics.fid;
    rc.epochs = rep.recover.epochs;
    rc.seconds = run.seconds;
    rows.insert(rows.end(), {base, fg, rc});

    const auto forgotten = detail::checkpoint_path(cfg, "seam", seed, "forgotten");
    const auto recovered = detail::checkpoint_path(cfg, "seam", seed, "recovered");
    detail::save_output_checkpoint(cfg, run.result.forgotten, forgotten);
    detail::save_output_checkpoint(cfg, run.result.recovered, recovered);
    return nlohmann::json{{"metrics", to_json(run.metrics)},
                          {"seam", to_json(rep)},
                          {"d_for", run.sets.d_for.size()},
                          {"d_rec", run.sets.d_rec.size()},
                          {"forgotten_checkpoint", forgotten.generic_string()},
                          {"recovered_checkpoint", recovered.generic_string()}};
  });
}

inline CommandOutput cmd_sweep_residual(const ExperimentConfig& cfg) {
  const auto& sw = cfg.sweep_residual;
  return detail::run_per_seed(cfg, "sweep-residual", [&](std::uint64_t seed, std::vector<ResultRow>& rows) {
    const Task task = load_task(cfg, seed);
    const SourceModel m = source_model(cfg, task, seed);
    const auto clean = seeded_subset(task.pool, sw.samples, derive_seed(seed, streams::residual),
                                     "sweep-residual");
    // Nested relabelling: the first k rows of one permutation, each with a
    // wrong label drawn once, so larger k extends smaller k.
    std::mt19937_64 rng(derive_seed(derive_seed(seed, streams::residual), 1));
    std::vector<std::size_t> order(clean.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    fisher_yates(order, rng);
    const auto wrong = relabel_random_wrong(clean, rng);
    const Matrix<double> src_prob =
        forward(m.net.cast<double>(), Matrix<double>(clean.inputs.cast<double>()));

    nlohmann::json points = nlohmann::json::array();
    for (std::size_t k : sw.ks) {
      LabeledDataset data = clean;
      for (std::size_t i = 0; i < k; ++i) data.labels[order[i]] = wrong.labels[order[i]];
      const Residual res = residual(one_hot(data.labels, data.class_count), src_prob,
                                    ResidualRule::multiclass_ominus);
      Stopwatch clock(cfg.timing);
      TrainConfig tc = sw.train;
      tc.seed = derive_seed(derive_seed(seed, streams::residual), 2);
      const auto net = sgd_train(m.net, data, tc).network;
      detail::require_finite(net, "sweep-residual");
      auto r = detail::row(cfg, seed, "residual");
      r.key = static_cast<double>(k);
      r.acc = evaluate_accuracy(net, task.test);
      r.asr = asr(net, task.asr_set);
      r.epochs = tc.max_epochs;
      r.value = res.values.squaredNorm();
      r.seconds = clock.lap();
      rows.push_back(r);
      points.push_back({{"k", k}, {"acc", *r.acc}, {"asr", *r.asr}, {"residual_norm2", *r.value}});
    }
    return nlohmann::json{{"acc_b", evaluate_accuracy(m.net, task.test)},
                          {"asr_b", asr(m.net, task.asr_set)},
                          {"points", points}};
  });
}

inline CommandOutput cmd_sweep_recovery(const ExperimentConfig& cfg) {
  return detail::run_per_seed(cfg, "sweep-recovery", [&](std::uint64_t seed, std::vector<ResultRow>& rows) {
    const Task task = load_task(cfg, seed);
    const SourceModel m = source_model(cfg, task, seed);
    nlohmann::json points = nlohmann::json::array();
    for (double f : cfg.recovery_fractions) {
      const SeamRun run = seam_on(cfg, task, m.net, seed, f);
      auto r = detail::row(cfg, seed, "recovery");
      r.key = f;
      r.acc = run.metrics.acc_s;
      r.asr = run.metrics.asr_s;
      r.fid = run.metrics.fid;
      r.epochs = run.result.report.recover.epochs;
      r.value = static_cast<double>(run.sets.d_rec.size());
      r.seconds = run.seconds;
      rows.push_back(r);
      points.push_back({{"fraction", f}, {"metrics", to_json(run.metrics)}, {"seam", to_json(run.result.report)}});
    }
    return nlohmann::json{{"points", points}};
  });
}

inline CommandOutput cmd_polluted_recovery(const ExperimentConfig& cfg) {
  return detail::run_per_seed(cfg, "polluted-recovery", [&](std::uint64_t seed, std::vector<ResultRow>& rows) {
    const Task task = load_task(cfg, seed);
    const SourceModel m = source_model(cfg, task, seed);
    nlohmann::json points = nlohmann::json::array();
    for (double ratio : cfg.polluted_ratios) {
      const SeamRun run = seam_on(cfg, task, m.net, seed, cfg.seam.rec_fraction, ratio);
      auto r = detail::row(cfg, seed, "polluted");
      r.key = ratio;
      r.acc = run.metrics.acc_s;
      r.asr = run.metrics.asr_s;
      r.fid = run.metrics.fid;
      r.epochs = run.result.report.recover.epochs;
      r.seconds = run.seconds;
      rows.push_back(r);
      points.push_back({{"ratio", ratio}, {"metrics", to_json(run.metrics)}, {"seam", to_json(run.result.report)}});
    }
    return nlohmann::json{{"points", points}};
  });
}

inline CommandOutput cmd_revive(const ExperimentConfig& cfg) {
  const auto& rv = cfg.revive;
  return detail::run_per_seed(cfg, "revive", [&](std::uint64_t seed, std::vector<ResultRow>& rows) {
    const Task task = load_task(cfg, seed);
    // A configured checkpoint is taken to be already unlearned.
    Network<float> unlearned;
    if (cfg.checkpoint) {
      unlearned = load_compatible(*cfg.checkpoint, task, "/checkpoint");
    } else {
      const SourceModel m = train_source(cfg, task, seed, cfg.poison_rate);
      unlearned = seam_on(cfg, task, m.net, seed, cfg.seam.rec_fraction).result.recovered;
    }
    auto start = detail::row(cfg, seed, "unlearned");
    start.acc = evaluate_accuracy(unlearned, task.test);
    start.asr = asr(unlearned, task.asr_set);
    rows.push_back(start);

    const auto clean = seeded_subset(task.pool, rv.samples, derive_seed(seed, streams::revive), "revive");
    nlohmann::json points = nlohmann::json::array();
    for (double ratio : rv.ratios) {
      LabeledDataset data = clean;
      std::size_t triggered = 0;
      if (ratio > 0.0) {
        auto p = poison_dataset(clean, task.trigger, {ratio, derive_seed(derive_seed(seed, streams::revive), 1)});
        triggered = p.indices.size();
        data = std::move(p.data);
      }
      Stopwatch clock(cfg.timing);
      TrainConfig tc = rv.train;
      tc.seed = derive_seed(derive_seed(seed, streams::revive), 2);
      const auto net = sgd_train(unlearned, data, tc).network;
      detail::require_finite(net, "revive");
      auto r = detail::row(cfg, seed, "revive");
      r.key = ratio;
      r.acc = evaluate_accuracy(net, task.test);
      r.asr = asr(net, task.asr_set);
      r.epochs = tc.max_epochs;
      r.value = static_cast<double>(triggered);
      r.seconds = clock.lap();
      rows.push_back(r);
      points.push_back({{"ratio", ratio}, {"triggered", triggered}, {"acc", *r.acc}, {"asr", *r.asr}});
    }
    return nlohmann::json{{"unlearned_acc", *start.acc}, {"unlearned_asr", *start.asr}, {"points", points}};
  });
}

// Predicted and measured forgetting between a source model and a target
// trained from it on a new task.
inline CommandOutput cmd_ntk_report(const ExperimentConfig& cfg) {
  const auto& o = cfg.ntk;
  return detail::run_per_seed(cfg, "ntk-report", [&](std::uint64_t seed, std::vector<ResultRow>& rows) {
    const Task task = load_task(cfg, seed);
    const SourceModel m = source_model(cfg, task, seed);
    const Network<float>& src = m.net;
    const std::uint64_t s = derive_seed(seed, streams::ntk);
    const auto x_eval = seeded_subset(task.test, o.samples_eval, derive_seed(s, 1), "ntk-report");
    auto f_set = seeded_subset(task.pool, o.samples_train, derive_seed(s, 2), "ntk-report");
    if (o.task == "forget") f_set = relabel_random_wrong(f_set, derive_seed(s, 3));

    Network<float> tgt;
    if (o.target) {
      tgt = load_compatible(*o.target, task, "/ntk/target");
      detail::require(tgt.specs() == src.specs(), "ntk-report: source and target architectures differ");
    } else {
      TrainConfig tc = o.train;
      tc.seed = derive_seed(s, 4);
      tgt = sgd_train(src, f_set, tc).network;
      detail::require_finite(tgt, "ntk-report");
    }

    FeatureOptions fo;
    fo.max_bytes = o.max_bytes;
    const auto phi_x = feature_matrix(src, x_eval.inputs, ClassRule::source_argmax(), "source", fo);
    const auto phi_f = feature_matrix(src, f_set.inputs, ClassRule::source_argmax(), "source", fo);
    const Network<double> src_d = src.cast<double>();
    const Matrix<double> pf = forward(src_d, Matrix<double>(f_set.inputs.cast<double>()));
    const Residual y = residual(one_hot(f_set.labels, f_set.class_count), pf, ResidualRule::multiclass_ominus);

    CFReport cf;
    cf.rule = ResidualRule::multiclass_ominus;
    cf.lambda = o.lambda ? *o.lambda : default_lambda(phi_f.phi);
    cf.residual_norm2 = y.values.squaredNorm();
    cf.delta_predicted = cf_ntk_predicted(phi_x.phi, phi_f.phi, y.values, cf.lambda);
    cf.delta_empirical = cf_empirical(src, tgt, x_eval.inputs, ResidualRule::multiclass_ominus);

    const SimilarityReport sim = svd_similarity(phi_x.phi, phi_f.phi);
    const double svd_form = cf_svd_form(sim, y.values, cf.lambda);
    const double svd_ridge_diff = std::abs(svd_form - cf.delta_predicted) /
                           std::max({std::abs(svd_form), std::abs(cf.delta_predicted), 1e-300});

    // First-order check with the weight change that actually happened:
    // logit_k(target) - logit_k(source) against phi_x (w_t - w_s).
    const Eigen::VectorXd dw =
        (tgt.flatten_weights().cast<double>() - src.flatten_weights().cast<double>()).eval();
    const Matrix<double> xd = x_eval.inputs.cast<double>();
    const Matrix<double> ls = logits(src_d, xd);
    const Matrix<double> lt = logits(tgt.cast<double>(), xd);
    Eigen::VectorXd actual(ls.rows());
    for (Eigen::Index i = 0; i < ls.rows(); ++i) {
      const int k = phi_x.classes[static_cast<std::size_t>(i)];
      actual[i] = lt(i, k) - ls(i, k);
    }
    const Eigen::VectorXd linear = phi_x.phi * dw;
    const double lin_emp = actual.squaredNorm();
    const double lin_pred = linear.squaredNorm();
    const double lin_ratio = lin_emp > 0.0 ? lin_pred / lin_emp : (lin_pred == 0.0 ? 1.0 : 0.0);
    const double cf_ratio = cf.delta_empirical > 0.0 ? cf.delta_predicted / cf.delta_empirical : 0.0;

    const auto oracle = linearized_oracle(o.oracle_q, o.oracle_n, o.oracle_lambda, derive_seed(s, 5));

    // Recovery-set similarity: a fresh clean draw should overlap a clean
    // recovery-like set more than trigger-carrying inputs do.
    const auto rec = seeded_subset(task.pool, o.samples_train, derive_seed(s, 6), "ntk-report");
    const auto clean_probe = seeded_subset(task.test, o.samples_train, derive_seed(s, 7), "ntk-report");
    const auto trig_probe = seeded_subset(task.asr_set, o.samples_train, derive_seed(s, 8), "ntk-report");
    const auto phi_rec = feature_matrix(src, rec.inputs, ClassRule::source_argmax(), "source", fo);
    const double sim_clean =
        svd_similarity(feature_matrix(src, clean_probe.inputs, ClassRule::source_argmax(), "source", fo).phi,
                       phi_rec.phi)
            .projector_norm2;
    const double sim_trig =
        svd_similarity(feature_matrix(src, trig_probe.inputs, ClassRule::source_argmax(), "source", fo).phi,
                       phi_rec.phi)
            .projector_norm2;

    auto add = [&](const char* phase, double v) {
      auto r = detail::row(cfg, seed, phase);
      r.value = v;
      rows.push_back(r);
    };
    auto tr = detail::row(cfg, seed, "target");
    tr.acc = evaluate_accuracy(tgt, task.test);
    tr.asr = asr(tgt, task.asr_set);
    tr.epochs = o.target ? std::optional<std::size_t>() : std::optional<std::size_t>(o.train.max_epochs);
    rows.push_back(tr);
    add("cf-empirical", cf.delta_empirical);
    add("cf-predicted", cf.delta_predicted);
    add("logit-change-empirical", lin_emp);
    add("logit-change-linear", lin_pred);
    add("projector-norm2", sim.projector_norm2);
    add("oracle-passed", oracle.passed() ? 1.0 : 0.0);
    add("recovery-similarity-clean", sim_clean);
    add("recovery-similarity-trigger", sim_trig);

    return nlohmann::json{
        {"task", o.task},
        {"feature_rule", phi_x.rule},
        {"cf", to_json(cf)},
        {"cf_ratio_predicted_over_empirical", cf_ratio},
        {"svd_ridge_rel_diff", svd_ridge_diff},
        {"linearization",
         {{"empirical", lin_emp}, {"linear", lin_pred}, {"ratio", lin_ratio},
          {"within_factor_2", lin_ratio >= 0.5 && lin_ratio <= 2.0}}},
        {"similarity", to_json(sim)},
        {"recovery_similarity",
         {{"clean", sim_clean}, {"trigger", sim_trig}, {"clean_higher", sim_clean > sim_trig}}},
        {"oracle", to_json(oracle)}};
  });
}

// Layer-wise CKA between the source model and its post-forget version (or a
// configured target) on held-out clean probe samples.
inline CommandOutput cmd_cka_report(const ExperimentConfig& cfg) {
  return detail::run_per_seed(cfg, "cka-report", [&](std::uint64_t seed, std::vector<ResultRow>& rows) {
    const Task task = load_task(cfg, seed);
    const SourceModel m = source_model(cfg, task, seed);
    Network<float> tgt;
    std::optional<std::size_t> forget_epochs;
    if (cfg.cka.target) {
      tgt = load_compatible(*cfg.cka.target, task, "/cka/target");
    } else {
      const auto sets = draw_seam_sets(task.pool, cfg.seam.for_fraction, cfg.seam.rec_fraction,
                                       derive_seed(seed, streams::seam_sets));
      auto f = forget(m.net, sets.d_for, seam_config(cfg, seed));
      forget_epochs = f.report.epochs;
      tgt = std::move(f.network);
    }
    const auto probe = seeded_subset(task.test, cfg.cka.probe, derive_seed(seed, streams::probe), "cka-report");
    const CkaReport rep = layerwise_cka(m.net, tgt, probe);
    for (std::size_t l = 0; l < rep.values.size(); ++l) {
      auto r = detail::row(cfg, seed, "cka");
      r.key = static_cast<double>(l);
      r.value = rep.values[l];
      r.epochs = forget_epochs;
      rows.push_back(r);
    }
    nlohmann::json j = to_json(rep);
    // Hidden layers are all but the output layer.
    if (rep.values.size() >= 3) {
      j["first_hidden_minus_last_hidden"] = rep.values.front() - rep.values[rep.values.size() - 2];
    }
    j["target_acc"] = evaluate_accuracy(tgt, task.test);
    j["target_asr"] = asr(tgt, task.asr_set);
    return j;
  });
}

// ---------------------------------------------------------------------------
// Output

inline nlohmann::json output_document(const ExperimentConfig& cfg, const CommandOutput& out) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : out.rows) rows.push_back(to_json(r));
  return {{"schema", kResultSchemaId},
          {"command", out.command},
          {"experiment", cfg.experiment},
          {"config", cfg.resolved},
          {"rows", rows},
          {"seeds", out.seeds}};
}

inline void write_outputs(const ExperimentConfig& cfg, const CommandOutput& out) {
  std::filesystem::create_directories(cfg.out);
  auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error("cannot write " + p.string());
    f << text;
  };
  write(cfg.out / (out.command + ".csv"), to_csv(out.rows));
  write(cfg.out / (out.command + ".json"), output_document(cfg, out).dump(2) + "\n");
}

inline CommandOutput run_command(const std::string& name, const ExperimentConfig& cfg) {
  if (name == "train") return cmd_train(cfg);
  if (name == "seam") return cmd_seam(cfg);
  if (name == "sweep-residual") return cmd_sweep_residual(cfg);
  if (name == "sweep-recovery") return cmd_sweep_recovery(cfg);
  if (name == "polluted-recovery") return cmd_polluted_recovery(cfg);
  if (name == "revive") return cmd_revive(cfg);
  if (name == "ntk-report") return cmd_ntk_report(cfg);
  if (name == "cka-report") return cmd_cka_report(cfg);
  throw ConfigError("unknown command '" + name + "'");
}

}  // namespace seamforge
