#pragma once

// On-disk pipeline stages behind the CLI subcommands. Every artifact gets a
// <file>.prov.json sidecar recording the producing command, the config hash,
// the seed, its own fingerprint and the fingerprints of its inputs.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "grail/experiment.hpp"

namespace grail {

namespace fs = std::filesystem;

// Missing upstream artifact or broken fingerprint chain.
class ChainError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

struct PipelineOptions {
  bool allow_mismatch = false;
  bool quiet = false;
};

struct Provenance {
  std::string command;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::uint64_t fingerprint = 0;
  std::map<std::string, std::uint64_t> upstream;  // path relative to the out dir
};

fs::path provenance_path(const fs::path &artifact);
std::string provenance_to_json(const Provenance &p);
Provenance provenance_from_json(const std::string &text);

// Re-fingerprints the artifact and every upstream file recorded in its
// sidecar, recursively. Throws ChainError on the first break.
void verify_chain(const fs::path &out_dir, const fs::path &artifact);

struct SeedPaths {
  fs::path dir;
  fs::path corpus;
  fs::path vanilla;
  fs::path mask;
  fs::path jaccard;
  fs::path summary(DatasetTag tag) const;
  fs::path summary_csv(DatasetTag tag) const;
};
SeedPaths seed_paths(const fs::path &out_dir, std::uint64_t seed);

struct RunPaths {
  fs::path dir;
  fs::path checkpoint;
  fs::path run;
  fs::path curve;
  fs::path eval;
};
RunPaths run_paths(const fs::path &out_dir, const std::string &method, std::uint64_t seed);

// Each stage runs once per configured seed, up to config.jobs at a time.
void cmd_gen_corpus(const ExperimentConfig &config, const PipelineOptions &opts = {});
void cmd_train(const ExperimentConfig &config, const PipelineOptions &opts = {});
void cmd_probe(const ExperimentConfig &config, const PipelineOptions &opts = {});
void cmd_localize(const ExperimentConfig &config, const PipelineOptions &opts = {});
// One run per (method, seed) over config.methods.
void cmd_unlearn(const ExperimentConfig &config, const PipelineOptions &opts = {});
// Evaluates runs/<method>/seed<k>/model.ckpt for every method and seed.
std::vector<EvalReport> cmd_eval(const ExperimentConfig &config, const PipelineOptions &opts = {});
// Evaluates one checkpoint against the seed's corpus and writes `report`.
EvalReport cmd_eval_checkpoint(const ExperimentConfig &config, std::uint64_t seed,
                               const fs::path &checkpoint, const fs::path &report,
                               const PipelineOptions &opts = {});
// Whole chain for every seed, then every (method, seed) cell; writes
// bench.csv, bench.json and jaccard.csv at the out dir root.
std::vector<EvalReport> cmd_bench(const ExperimentConfig &config, const PipelineOptions &opts = {});

struct AblationRow {
  std::string cell;
  std::string sweep;  // "components", "k_op_ur" or "k_op_rr"
  bool op_ur = true;
  bool op_rr = true;
  double k_op_ur = 10.0;
  double k_op_rr = 20.0;
  std::vector<EvalReport> reports;  // one per seed
};

// Component grid (GRAIL, w/o OP-UR, w/o OP-RR, w/o both) and the two k
// sweeps. Writes ablate_components.csv, ablate_k_sweep.csv and ablate.json.
std::vector<AblationRow> cmd_ablate(const ExperimentConfig &config,
                                    const PipelineOptions &opts = {});

std::string ablate_components_csv(const std::vector<AblationRow> &rows);
std::string ablate_k_sweep_csv(const std::vector<AblationRow> &rows);

}  // namespace grail
