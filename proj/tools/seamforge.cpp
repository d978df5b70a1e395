// seamforge command-line front end.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "seamforge/config.hpp"
#include "seamforge/experiments.hpp"
#include "seamforge/parallel.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::vector<std::string> overrides;
};

int run(const std::string& command, const Options& opt) {
  nlohmann::json user = opt.config.empty() ? nlohmann::json::object()
                                           : seamforge::read_config_file(opt.config);
  if (opt.seed) user["seeds"] = nlohmann::json::array({*opt.seed});
  if (!opt.out.empty()) user["out"] = opt.out;
  if (!opt.checkpoint.empty()) user["checkpoint"] = opt.checkpoint;
  for (const auto& o : opt.overrides) seamforge::apply_override(user, o);
  const auto cfg = seamforge::parse_config(user);
  (void)seamforge::thread_budget();  // reject a bad SEAMFORGE_THREADS before any work

  const auto out = seamforge::run_command(command, cfg);
  seamforge::write_outputs(cfg, out);
  std::cout << seamforge::to_csv(out.rows);
  std::cerr << "wrote " << (cfg.out / (command + ".csv")).string() << " and "
            << (cfg.out / (command + ".json")).string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"seamforge: backdoor unlearning by forgetting and recovery, with NTK forgetting analytics"};
  app.fallthrough();
  app.require_subcommand(1, 1);
  Options opt;
  app.add_option("--config", opt.config, "experiment JSON file")->check(CLI::ExistingFile);
  app.add_option("--seed", opt.seed, "run a single seed instead of the configured list");
  app.add_option("--out", opt.out, "output directory");
  app.add_option("--checkpoint", opt.checkpoint, "input model (same as --override checkpoint=PATH)");
  app.add_option("--override", opt.overrides, "dotted.key=value, JSON-parsed when possible")
      ->allow_extra_args(false);

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train", "train a (poisoned) model and save its checkpoint"},
      {"seam", "forget then recover; before/after metrics and FID"},
      {"sweep-residual", "one-epoch training with k of N labels randomised"},
      {"sweep-recovery", "SEAM across recovery-set fractions"},
      {"polluted-recovery", "SEAM with trigger-carrying samples in D_rec"},
      {"revive", "fine-tune an unlearned model on partly triggered data"},
      {"ntk-report", "empirical vs NTK-predicted forgetting and task similarity"},
      {"cka-report", "layer-wise CKA between a model and its post-forget version"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, opt);
  } catch (const seamforge::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const seamforge::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const seamforge::InvalidArgument& e) {
    // Reached only through configured values, e.g. a fraction that selects no sample.
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const seamforge::ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const seamforge::FormatError& e) {
    std::cerr << "config error: unreadable input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
}
