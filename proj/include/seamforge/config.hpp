#pragma once

// Experiment configuration: one JSON document, merged over built-in defaults.
// Unknown keys and wrong types are reported with JSON-pointer paths.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "seamforge/backdoor.hpp"
#include "seamforge/data.hpp"
#include "seamforge/error.hpp"
#include "seamforge/nn.hpp"
#include "seamforge/ntk.hpp"
#include "seamforge/seam.hpp"
#include "seamforge/text.hpp"

namespace seamforge {

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | idx | json
  SynthImageSpec synth;
  int train_per_class = 6000;
  int test_per_class = 500;
  int pool_per_class = 6000;
  // idx / json inputs. An absent pool means D_for and D_rec come from train.
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::optional<std::filesystem::path> pool_images, pool_labels;
  std::filesystem::path train_json, test_json;
  std::optional<std::filesystem::path> pool_json;
};

struct ModelConfig {
  std::string kind = "mlp";  // mlp | cnn
  std::vector<int> hidden = {256, 64};
  int filters = 8;
  int kernel = 3;
};

struct SeamOptions {
  double for_fraction = 0.001;
  double rec_fraction = 0.1;
  SeamConfig seam;
};

struct ResidualSweepOptions {
  std::size_t samples = 1000;
  std::vector<std::size_t> ks = {100, 200, 300, 400, 500, 600, 700, 800, 900, 1000};
  TrainConfig train;
};

struct ReviveOptions {
  std::size_t samples = 10000;
  std::vector<double> ratios = {0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09};
  TrainConfig train;
};

struct NtkOptions {
  std::optional<double> lambda;  // unset: default_lambda of the trained-on features
  std::size_t samples_eval = 64;
  std::size_t samples_train = 64;
  std::string task = "forget";  // forget (random wrong labels) | recover (true labels)
  std::optional<std::filesystem::path> target;
  TrainConfig train;
  std::size_t max_bytes = std::size_t{1} << 30;
  std::size_t oracle_q = 64;
  std::size_t oracle_n = 32;
  double oracle_lambda = 0.1;
};

struct CkaOptions {
  std::size_t probe = 256;
  std::optional<std::filesystem::path> target;
};

struct ExperimentConfig {
  std::string experiment = "seamforge";
  std::vector<std::uint64_t> seeds = {0};
  std::filesystem::path out = "results";
  std::optional<std::filesystem::path> checkpoint;
  bool timing = false;
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  TriggerSpec trigger;
  std::uint64_t overlay_seed = 11;
  double poison_rate = 0.1;
  SeamOptions seam;
  ResidualSweepOptions sweep_residual;
  std::vector<double> recovery_fractions = {0.001, 0.005, 0.01, 0.05, 0.1};
  std::vector<double> polluted_ratios = {0.0, 0.0002, 0.001, 0.01};
  ReviveOptions revive;
  NtkOptions ntk;
  CkaOptions cka;
  nlohmann::json resolved;  // the merged document, echoed into outputs
};

inline nlohmann::json default_config_json() {
  return nlohmann::json::parse(R"({
    "experiment": "seamforge",
    "seeds": [0],
    "out": "results",
    "checkpoint": null,
    "timing": false,
    "dataset": {
      "kind": "synthetic",
      "synthetic": {"classes": 10, "height": 8, "width": 8, "noise": 0.3, "prototype_seed": 123,
                    "train_per_class": 6000, "test_per_class": 500, "pool_per_class": 6000},
      "idx": {"train_images": null, "train_labels": null, "test_images": null, "test_labels": null,
              "pool_images": null, "pool_labels": null},
      "json": {"train": null, "test": null, "pool": null}
    },
    "model": {"kind": "mlp", "hidden": [256, 64], "filters": 8, "kernel": 3},
    "train": {"learning_rate": 0.01, "batch_size": 32, "epochs": 5},
    "trigger": {"kind": "patch", "pattern": null, "pattern_seed": 7, "anchor_row": -1, "anchor_col": -1,
                "alpha": 0.2, "overlay_seed": 11, "source_classes": [], "target_class": 0},
    "poison": {"rate": 0.1},
    "seam": {
      "for_fraction": 0.001, "rec_fraction": 0.1,
      "n_for": 1000, "n_rec": 200, "acc_for": null, "acc_rec_factor": 0.97,
      "forget": {"learning_rate": 0.2, "batch_size": 2},
      "recover": {"learning_rate": 0.1, "batch_size": 32}
    },
    "sweep_residual": {"samples": 1000, "ks": [100, 200, 300, 400, 500, 600, 700, 800, 900, 1000],
                       "learning_rate": 0.01, "batch_size": 1, "epochs": 1},
    "sweep_recovery": {"fractions": [0.001, 0.005, 0.01, 0.05, 0.1]},
    "polluted_recovery": {"ratios": [0, 0.0002, 0.001, 0.01]},
    "revive": {"samples": 10000, "ratios": [0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09],
               "learning_rate": 0.02, "batch_size": 32, "epochs": 2},
    "ntk": {"lambda": null, "samples_eval": 64, "samples_train": 64, "task": "forget", "target": null,
            "learning_rate": 0.0001, "batch_size": 64, "epochs": 1, "max_bytes": 1073741824,
            "oracle": {"q": 64, "n": 32, "lambda": 0.1}},
    "cka": {"probe": 256, "target": null}
  })");
}

namespace detail {

inline void config_fail(const std::string& ptr, const std::string& what) {
  throw ConfigError((ptr.empty() ? std::string("/") : ptr) + ": " + what);
}

// Objects merge key by key; anything else replaces the default. Keys absent
// from the defaults are rejected.
inline void merge_into(nlohmann::json& base, const nlohmann::json& user, const std::string& ptr) {
  if (!user.is_object()) config_fail(ptr, "expected an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string p = ptr + "/" + it.key();
    if (!base.contains(it.key())) config_fail(p, "unknown key");
    auto& slot = base[it.key()];
    if (slot.is_object()) {
      merge_into(slot, it.value(), p);
    } else {
      slot = it.value();
    }
  }
}

// Typed reads against the merged document.
class ConfigReader {
 public:
  explicit ConfigReader(const nlohmann::json& j) : j_(j) {}

  [[nodiscard]] const nlohmann::json& at(const std::string& ptr) const {
    return j_.at(nlohmann::json::json_pointer(ptr));
  }
  [[nodiscard]] bool is_null(const std::string& ptr) const { return at(ptr).is_null(); }

  [[nodiscard]] double number(const std::string& ptr) const {
    const auto& v = at(ptr);
    if (!v.is_number()) config_fail(ptr, "expected a number, got " + std::string(v.type_name()));
    return v.get<double>();
  }
  [[nodiscard]] double number_in(const std::string& ptr, double lo, double hi, bool lo_open = false) const {
    const double v = number(ptr);
    if (!(lo_open ? v > lo : v >= lo) || !(v <= hi)) {
      config_fail(ptr, "value " + fmt(v) + " outside " + (lo_open ? "(" : "[") + fmt(lo) + ", " +
                           fmt(hi) + "]");
    }
    return v;
  }
  [[nodiscard]] std::int64_t integer(const std::string& ptr, std::int64_t lo) const {
    const auto& v = at(ptr);
    if (!v.is_number_integer()) config_fail(ptr, "expected an integer, got " + std::string(v.type_name()));
    const auto x = v.get<std::int64_t>();
    if (x < lo) config_fail(ptr, "must be >= " + std::to_string(lo));
    return x;
  }
  [[nodiscard]] std::size_t count(const std::string& ptr, std::int64_t lo = 0) const {
    return static_cast<std::size_t>(integer(ptr, lo));
  }
  [[nodiscard]] std::uint64_t seed(const std::string& ptr) const {
    const auto& v = at(ptr);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
      config_fail(ptr, "expected a non-negative integer seed");
    }
    return v.get<std::uint64_t>();
  }
  [[nodiscard]] bool boolean(const std::string& ptr) const {
    const auto& v = at(ptr);
    if (!v.is_boolean()) config_fail(ptr, "expected true or false");
    return v.get<bool>();
  }
  [[nodiscard]] std::string string(const std::string& ptr) const {
    const auto& v = at(ptr);
    if (!v.is_string()) config_fail(ptr, "expected a string, got " + std::string(v.type_name()));
    return v.get<std::string>();
  }
  [[nodiscard]] std::string choice(const std::string& ptr, const std::vector<std::string>& allowed) const {
    auto s = string(ptr);
    for (const auto& a : allowed)
      if (s == a) return s;
    std::string list;
    for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
    config_fail(ptr, "'" + s + "' is not one of: " + list);
    return s;
  }
  [[nodiscard]] std::filesystem::path existing_path(const std::string& ptr) const {
    std::filesystem::path p = string(ptr);
    if (!std::filesystem::exists(p)) config_fail(ptr, "file '" + p.string() + "' does not exist");
    return p;
  }
  [[nodiscard]] std::optional<std::filesystem::path> optional_path(const std::string& ptr) const {
    if (is_null(ptr)) return std::nullopt;
    return existing_path(ptr);
  }
  [[nodiscard]] const nlohmann::json& array(const std::string& ptr, bool non_empty) const {
    const auto& v = at(ptr);
    if (!v.is_array()) config_fail(ptr, "expected an array, got " + std::string(v.type_name()));
    if (non_empty && v.empty()) config_fail(ptr, "must not be empty");
    return v;
  }
  [[nodiscard]] std::vector<double> numbers(const std::string& ptr, double lo, double hi,
                                            bool lo_open = false) const {
    std::vector<double> out;
    const auto n = array(ptr, true).size();
    for (std::size_t i = 0; i < n; ++i) out.push_back(number_in(ptr + "/" + std::to_string(i), lo, hi, lo_open));
    return out;
  }
  [[nodiscard]] std::vector<int> ints(const std::string& ptr, std::int64_t lo, bool non_empty) const {
    std::vector<int> out;
    const auto n = array(ptr, non_empty).size();
    for (std::size_t i = 0; i < n; ++i)
      out.push_back(static_cast<int>(integer(ptr + "/" + std::to_string(i), lo)));
    return out;
  }
  [[nodiscard]] TrainConfig train(const std::string& ptr, bool with_epochs) const {
    TrainConfig t;
    t.learning_rate = number_in(ptr + "/learning_rate", 0.0, 1e6, true);
    t.batch_size = count(ptr + "/batch_size", 1);
    if (with_epochs) t.max_epochs = count(ptr + "/epochs", 0);
    return t;
  }

 private:
  static std::string fmt(double v) { return fmt_num(v); }
  const nlohmann::json& j_;
};

inline std::string dotted_to_pointer(const std::string& key) {
  std::string p = "/";
  for (char c : key) p += c == '.' ? '/' : c;
  return p;
}

}  // namespace detail

// Applies "a.b.c=value" to a user document. The value is parsed as JSON when
// it parses, and taken as a string otherwise.
inline void apply_override(nlohmann::json& user, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("--override '" + assignment + "': expected key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  const nlohmann::json::json_pointer ptr(detail::dotted_to_pointer(key));
  if (!user.is_object()) user = nlohmann::json::object();
  user[ptr] = value;
}

inline ExperimentConfig parse_config(const nlohmann::json& user) {
  nlohmann::json merged = default_config_json();
  detail::merge_into(merged, user.is_null() ? nlohmann::json::object() : user, "");
  const detail::ConfigReader r(merged);
  ExperimentConfig c;
  c.resolved = merged;

  c.experiment = r.string("/experiment");
  if (c.experiment.empty()) detail::config_fail("/experiment", "must not be empty");
  c.seeds.clear();
  const auto n_seeds = r.array("/seeds", true).size();
  for (std::size_t i = 0; i < n_seeds; ++i) c.seeds.push_back(r.seed("/seeds/" + std::to_string(i)));
  c.out = r.string("/out");
  c.checkpoint = r.optional_path("/checkpoint");
  c.timing = r.boolean("/timing");

  auto& d = c.dataset;
  d.kind = r.choice("/dataset/kind", {"synthetic", "idx", "json"});
  if (d.kind == "synthetic") {
    d.synth.classes = static_cast<int>(r.integer("/dataset/synthetic/classes", 2));
    d.synth.height = static_cast<int>(r.integer("/dataset/synthetic/height", 1));
    d.synth.width = static_cast<int>(r.integer("/dataset/synthetic/width", 1));
    d.synth.noise = r.number_in("/dataset/synthetic/noise", 0.0, 1e3);
    d.synth.prototype_seed = r.seed("/dataset/synthetic/prototype_seed");
    d.train_per_class = static_cast<int>(r.integer("/dataset/synthetic/train_per_class", 1));
    d.test_per_class = static_cast<int>(r.integer("/dataset/synthetic/test_per_class", 1));
    d.pool_per_class = static_cast<int>(r.integer("/dataset/synthetic/pool_per_class", 1));
  } else if (d.kind == "idx") {
    d.train_images = r.existing_path("/dataset/idx/train_images");
    d.train_labels = r.existing_path("/dataset/idx/train_labels");
    d.test_images = r.existing_path("/dataset/idx/test_images");
    d.test_labels = r.existing_path("/dataset/idx/test_labels");
    d.pool_images = r.optional_path("/dataset/idx/pool_images");
    d.pool_labels = r.optional_path("/dataset/idx/pool_labels");
    if (d.pool_images.has_value() != d.pool_labels.has_value()) {
      detail::config_fail("/dataset/idx/pool_images", "pool_images and pool_labels go together");
    }
  } else {
    d.train_json = r.existing_path("/dataset/json/train");
    d.test_json = r.existing_path("/dataset/json/test");
    d.pool_json = r.optional_path("/dataset/json/pool");
  }

  c.model.kind = r.choice("/model/kind", {"mlp", "cnn"});
  c.model.hidden = r.ints("/model/hidden", 1, false);
  c.model.filters = static_cast<int>(r.integer("/model/filters", 1));
  c.model.kernel = static_cast<int>(r.integer("/model/kernel", 1));

  c.train = r.train("/train", true);

  auto& t = c.trigger;
  const auto kind = r.choice("/trigger/kind", {"patch", "blend"});
  t.kind = kind == "patch" ? TriggerKind::patch : TriggerKind::blend;
  if (t.kind == TriggerKind::patch) {
    if (r.is_null("/trigger/pattern")) {
      t.pattern = default_patch_pattern(r.seed("/trigger/pattern_seed"));
    } else {
      const auto& rows = r.array("/trigger/pattern", true);
      std::vector<std::vector<int>> grid;
      for (std::size_t i = 0; i < rows.size(); ++i)
        grid.push_back(r.ints("/trigger/pattern/" + std::to_string(i), 0, true));
      t.pattern.resize(static_cast<Eigen::Index>(grid.size()), static_cast<Eigen::Index>(grid[0].size()));
      for (std::size_t i = 0; i < grid.size(); ++i) {
        if (grid[i].size() != grid[0].size()) {
          detail::config_fail("/trigger/pattern/" + std::to_string(i), "rows differ in length");
        }
        for (std::size_t j = 0; j < grid[i].size(); ++j) {
          if (grid[i][j] > 1) {
            detail::config_fail("/trigger/pattern/" + std::to_string(i) + "/" + std::to_string(j),
                                "patch values must be 0 or 1");
          }
          t.pattern(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
              static_cast<float>(grid[i][j]);
        }
      }
    }
  }
  t.anchor_row = static_cast<int>(r.integer("/trigger/anchor_row", -1));
  t.anchor_col = static_cast<int>(r.integer("/trigger/anchor_col", -1));
  t.alpha = r.number_in("/trigger/alpha", 0.0, 1.0);
  t.source_classes = r.ints("/trigger/source_classes", 0, false);
  t.target_class = static_cast<int>(r.integer("/trigger/target_class", 0));
  // The blend overlay needs the image shape and is built when data is loaded.
  c.overlay_seed = r.seed("/trigger/overlay_seed");

  c.poison_rate = r.number_in("/poison/rate", 0.0, 1.0);

  auto& s = c.seam;
  s.for_fraction = r.number_in("/seam/for_fraction", 0.0, 1.0, true);
  s.rec_fraction = r.number_in("/seam/rec_fraction", 0.0, 1.0, true);
  s.seam.n_for = r.count("/seam/n_for");
  s.seam.n_rec = r.count("/seam/n_rec");
  if (!r.is_null("/seam/acc_for")) s.seam.acc_for = r.number_in("/seam/acc_for", 0.0, 1.0, true);
  s.seam.acc_rec_factor = r.number_in("/seam/acc_rec_factor", 0.0, 1.0, true);
  s.seam.forget_train = r.train("/seam/forget", false);
  s.seam.recover_train = r.train("/seam/recover", false);

  c.sweep_residual.samples = r.count("/sweep_residual/samples", 1);
  c.sweep_residual.ks.clear();
  const auto n_ks = r.array("/sweep_residual/ks", true).size();
  for (std::size_t i = 0; i < n_ks; ++i) {
    const std::string p = "/sweep_residual/ks/" + std::to_string(i);
    const auto k = r.count(p, 0);
    if (k > c.sweep_residual.samples) detail::config_fail(p, "k exceeds sweep_residual.samples");
    c.sweep_residual.ks.push_back(k);
  }
  c.sweep_residual.train = r.train("/sweep_residual", true);

  c.recovery_fractions = r.numbers("/sweep_recovery/fractions", 0.0, 1.0, true);
  c.polluted_ratios = r.numbers("/polluted_recovery/ratios", 0.0, 1.0);

  c.revive.samples = r.count("/revive/samples", 1);
  c.revive.ratios = r.numbers("/revive/ratios", 0.0, 1.0);
  c.revive.train = r.train("/revive", true);

  auto& k = c.ntk;
  if (!r.is_null("/ntk/lambda")) k.lambda = r.number_in("/ntk/lambda", 0.0, 1e300);
  k.samples_eval = r.count("/ntk/samples_eval", 1);
  k.samples_train = r.count("/ntk/samples_train", 1);
  k.task = r.choice("/ntk/task", {"forget", "recover"});
  k.target = r.optional_path("/ntk/target");
  k.train = r.train("/ntk", true);
  k.max_bytes = r.count("/ntk/max_bytes", 1);
  k.oracle_q = r.count("/ntk/oracle/q", 1);
  k.oracle_n = r.count("/ntk/oracle/n", 1);
  k.oracle_lambda = r.number_in("/ntk/oracle/lambda", 0.0, 1e300, true);

  c.cka.probe = r.count("/cka/probe", 2);
  c.cka.target = r.optional_path("/cka/target");
  return c;
}

inline nlohmann::json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file '" + path.string() + "' is not valid JSON");
  if (!j.is_object()) throw ConfigError("config file '" + path.string() + "' must hold a JSON object");
  return j;
}

}  // namespace seamforge
