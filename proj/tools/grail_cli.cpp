// grail: command-line driver for the multi-domain unlearning pipeline.
//
//   grail gen-corpus | train | probe | localize | unlearn | eval | bench | ablate
//
// Exit codes: 0 ok, 1 usage, 2 validation, 3 runtime.

#include <CLI11.hpp>
#include <exception>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "grail/pipeline.hpp"
#include "grail/util.hpp"

namespace {

constexpr int kUsage = 1;
constexpr int kValidation = 2;
constexpr int kRuntime = 3;

struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> jobs;
  bool allow_mismatch = false;
  bool smoke = false;
  bool quiet = false;
  std::vector<std::string> overrides;  // key=value
  std::vector<std::string> methods;
  std::string checkpoint;
  std::string report;
};

grail::ExperimentConfig build_config(const Flags &f) {
  auto config = f.smoke ? grail::smoke_config() : grail::default_config();
  if (!f.config_path.empty()) {
    if (!std::filesystem::exists(f.config_path)) {
      throw std::invalid_argument("config file " + f.config_path + " does not exist");
    }
    config = grail::parse_config(grail::read_file(f.config_path), config);
  }
  for (const auto &kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    }
    grail::apply_override(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  // flags win over the file
  if (f.seed) config.seeds = {*f.seed};
  if (!f.out.empty()) config.out_dir = f.out;
  if (f.jobs) config.jobs = *f.jobs;
  if (!f.methods.empty()) config.methods = f.methods;
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"GRAIL multi-domain unlearning pipeline"};
  app.require_subcommand(1);
  Flags f;
  app.add_option("--config", f.config_path, "key = value config file with [section] headers");
  app.add_option("--seed", f.seed, "run a single seed instead of experiment.seeds");
  app.add_option("--out", f.out, "output directory (experiment.out)");
  app.add_option("--jobs", f.jobs, "concurrent cells (experiment.jobs)")->check(CLI::PositiveNumber);
  app.add_flag("--allow-mismatch", f.allow_mismatch,
               "warn instead of failing on config or fingerprint mismatches");
  app.add_flag("--smoke", f.smoke, "start from the 4-item smoke config");
  app.add_flag("-q,--quiet", f.quiet, "no progress output");
  app.add_option("--set", f.overrides, "override one config key, e.g. --set unlearn.eta=0.02");
  app.add_flag("--print-config", "print the effective config and exit");

  app.add_subcommand("gen-corpus", "generate the synthetic corpus for each seed");
  app.add_subcommand("train", "train the vanilla model for each seed");
  app.add_subcommand("probe", "gradient summaries for the four core datasets");
  app.add_subcommand("localize", "frozen mask and Jaccard CSV from the summaries");
  auto *unlearn = app.add_subcommand("unlearn", "run unlearning methods");
  unlearn->add_option("--method", f.methods, "method(s); default experiment.methods");
  auto *eval = app.add_subcommand("eval", "evaluate unlearned checkpoints");
  eval->add_option("--method", f.methods, "method(s); default experiment.methods");
  eval->add_option("--checkpoint", f.checkpoint, "evaluate this checkpoint instead");
  eval->add_option("--report", f.report, "report path for --checkpoint (default: next to it)");
  auto *bench = app.add_subcommand("bench", "full method x seed matrix with aggregates");
  bench->add_option("--method", f.methods, "method(s); default experiment.methods");
  app.add_subcommand("ablate", "component grid and k_op_ur / k_op_rr sweeps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }

  try {
    const auto config = build_config(f);
    if (app.get_option("--print-config")->count() > 0) {
      std::cout << grail::config_to_text(config);
      return 0;
    }
    grail::PipelineOptions opts;
    opts.allow_mismatch = f.allow_mismatch;
    opts.quiet = f.quiet;
    const auto name = app.get_subcommands().front()->get_name();
    if (name == "gen-corpus") {
      grail::cmd_gen_corpus(config, opts);
    } else if (name == "train") {
      grail::cmd_train(config, opts);
    } else if (name == "probe") {
      grail::cmd_probe(config, opts);
    } else if (name == "localize") {
      grail::cmd_localize(config, opts);
    } else if (name == "unlearn") {
      grail::cmd_unlearn(config, opts);
    } else if (name == "eval") {
      if (!f.checkpoint.empty()) {
        if (config.seeds.size() != 1) {
          throw std::invalid_argument("--checkpoint needs a single seed (--seed)");
        }
        std::filesystem::path report = f.report;
        if (report.empty()) {
          report = std::filesystem::path(f.checkpoint).parent_path() / "eval.json";
        }
        grail::cmd_eval_checkpoint(config, config.seeds.front(), f.checkpoint, report, opts);
      } else {
        grail::cmd_eval(config, opts);
      }
    } else if (name == "bench") {
      grail::cmd_bench(config, opts);
      std::cout << grail::read_file(config.out_dir / "bench.csv");
    } else if (name == "ablate") {
      grail::cmd_ablate(config, opts);
      std::cout << grail::read_file(config.out_dir / "ablate_k_sweep.csv");
    }
  } catch (const std::invalid_argument &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return 0;
}
