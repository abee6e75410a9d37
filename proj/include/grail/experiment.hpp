#pragma once

// Experiment configuration, per-seed pipeline and the method registry used
// by the CLI and the acceptance suite.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "grail/corpus.hpp"
#include "grail/localizer.hpp"
#include "grail/metrics.hpp"
#include "grail/model.hpp"
#include "grail/probe.hpp"
#include "grail/unlearn.hpp"

namespace grail {

struct ExperimentConfig {
  CorpusSpec corpus;
  ModelConfig model;
  TrainOptions train;
  UnlearnHyper hyper;
  double jaccard_k = 10.0;
  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path out_dir = "runs";
  int jobs = 1;
  std::vector<double> ablate_k_op_ur;
  std::vector<double> ablate_k_op_rr;
  bool ablate_components = true;

  void validate() const;
};

ExperimentConfig default_config();

// Flat key = value text with optional [section] headers; keys are addressed
// as section.key. Unknown keys are rejected.
ExperimentConfig parse_config(const std::string &text, ExperimentConfig base = default_config());
ExperimentConfig load_config(const std::filesystem::path &path);
void apply_override(ExperimentConfig &config, const std::string &key, const std::string &value);
std::string config_to_text(const ExperimentConfig &config);
std::uint64_t config_hash(const ExperimentConfig &config);
// Hash over the keys starting with any of the prefixes (e.g. "corpus.").
std::uint64_t config_hash(const ExperimentConfig &config, const std::vector<std::string> &prefixes);

// Smoke-scale config: a 4-item-per-split corpus and a small model.
ExperimentConfig smoke_config();

const std::vector<std::string> &known_methods();
bool is_known_method(const std::string &method);

// Copy of the config specialised to one seed (corpus, init, shuffling).
ExperimentConfig seeded(const ExperimentConfig &config, std::uint64_t seed);

struct SeedContext {
  std::uint64_t seed = 0;
  Corpus corpus;
  ModelState vanilla;
  double vanilla_accuracy = 0.0;
  int vanilla_epochs = 0;
  std::array<GradientSummary, 4> summaries;
};

// Corpus generation, vanilla training and stage-1 probing for one seed.
SeedContext prepare_seed(const ExperimentConfig &config, std::uint64_t seed);

struct GrailComponents {
  bool op_ur = true;
  bool op_rr = true;
};

// Frozen mask with the requested components switched on.
FrozenMask grail_mask(const SeedContext &ctx, const UnlearnHyper &hyper,
                      GrailComponents components = {});

UnlearnResult run_method(const SeedContext &ctx, const std::string &method,
                         const UnlearnHyper &hyper);

}  // namespace grail
