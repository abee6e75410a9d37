#pragma once

// Stage 1: per-parameter gradient magnitudes under random-label substitution.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "grail/corpus.hpp"
#include "grail/model.hpp"

namespace grail {

enum class DatasetTag { unlearn_privacy, retain_privacy, unlearn_copyright, retain_copyright };

inline constexpr std::array<DatasetTag, 4> kCoreTags = {
    DatasetTag::unlearn_privacy, DatasetTag::retain_privacy, DatasetTag::unlearn_copyright,
    DatasetTag::retain_copyright};

std::string to_string(DatasetTag tag);
DatasetTag parse_dataset_tag(const std::string &text);
const Dataset &dataset_for(const Corpus &corpus, DatasetTag tag);

struct GradientSummary {
  DatasetTag tag = DatasetTag::unlearn_privacy;
  std::vector<std::string> layer_names;
  std::vector<std::vector<double>> magnitudes;
  std::size_t n_items = 0;
  int trials = 0;
  std::uint64_t model_fingerprint = 0;

  bool operator==(const GradientSummary &) const = default;
};

// Each answer token redrawn uniformly over [0, vocab_size) until the whole
// answer differs from the original. Deterministic in (item id, trial_seed).
KnowledgeItem randomize_label(const KnowledgeItem &item, int vocab_size,
                              std::uint64_t trial_seed);

// (1/n) * sum_i |g_i[j]| for every parameter j.
std::vector<std::vector<double>> mean_abs_gradient(const std::vector<GradientVector> &per_item);

// Per item: signed mean of `trials` random-label gradients. Then the mean
// over items of the absolute value, per parameter. Items are reduced in id
// order so the result does not depend on the input ordering.
GradientSummary probe_dataset(const ModelState &model, const Dataset &dataset, DatasetTag tag,
                              int trials = 3, std::uint64_t seed = 0);

std::array<GradientSummary, 4> probe_corpus(const ModelState &model, const Corpus &corpus,
                                            int trials = 3, std::uint64_t seed = 0);

std::string summary_to_json(const GradientSummary &summary);
GradientSummary summary_from_json(const std::string &text);
void save_summary(const GradientSummary &summary, const std::filesystem::path &path);
// Refuses a summary probed on a different model unless allow_mismatch.
GradientSummary load_summary(const std::filesystem::path &path, const ModelState *against = nullptr,
                             bool allow_mismatch = false);
// CSV rows: layer,index,magnitude
std::string summary_to_csv(const GradientSummary &summary);

}  // namespace grail
