#pragma once

// Stage 3 (masked ascent/descent) and the comparison methods.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "grail/corpus.hpp"
#include "grail/model.hpp"
#include "grail/probe.hpp"

namespace grail {

struct UnlearnHyper {
  double eta = 0.0075;
  int max_epochs = 200;
  int batch_size = 1;
  double us_target = 90.0;
  double rs_floor = 0.0;
  int trials = 3;
  double k_op_ur = 10.0;
  double k_op_rr = 20.0;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class StopReason { converged, max_epochs, aborted };
std::string to_string(StopReason r);

struct EpochMetrics {
  int epoch = 0;
  int phase = 0;
  double us_pri = 0.0;
  double rs_pri = 0.0;
  double us_cpy = 0.0;
  double rs_cpy = 0.0;
  bool operator==(const EpochMetrics &) const = default;
};

struct RunRecord {
  std::string method;
  std::vector<EpochMetrics> epochs;
  StopReason stop = StopReason::max_epochs;
  std::int64_t updates = 0;
  std::vector<std::string> updated_layers;  // empty = all layers eligible
  std::string note;
  double wall_seconds = 0.0;
  std::string checkpoint_path;

  // Equality on everything except wall-clock time.
  bool same_outcome(const RunRecord &other) const;
};

struct UnlearnResult {
  ModelState model;
  RunRecord record;
};

enum class RetainSource { in_distribution, out_of_distribution };

// Ascent on D_U, descent on D_R, both domains pooled and shuffled per epoch;
// frozen parameters never move.
UnlearnResult grail_unlearn(const ModelState &model, const Corpus &corpus,
                            const ParamMask &frozen, const UnlearnHyper &hyper,
                            const std::string &method = "grail");

UnlearnResult ga_unlearn(const ModelState &model, const Corpus &corpus, const UnlearnHyper &hyper);

// Descent on D_U with answers re-randomized every epoch.
UnlearnResult random_label_finetune(const ModelState &model, const Corpus &corpus,
                                    const UnlearnHyper &hyper);

UnlearnResult ga_gd(const ModelState &model, const Corpus &corpus, RetainSource source,
                    const UnlearnHyper &hyper);

// Ascent on D_U, descent on KL(current || reference) over the retain source.
UnlearnResult ga_kl(const ModelState &model, const ModelState &reference, const Corpus &corpus,
                    RetainSource source, const UnlearnHyper &hyper);

// Layer score = mean unlearn magnitude - mean retain magnitude. The top half
// of layers (at least one, never all) run GA+GD; the rest stay fixed.
// Summaries in kCoreTags order.
std::vector<std::size_t> select_layers(const std::array<GradientSummary, 4> &summaries);
UnlearnResult layerwise_unlearn(const ModelState &model, const Corpus &corpus,
                                const UnlearnHyper &hyper);
UnlearnResult layerwise_unlearn(const ModelState &model, const Corpus &corpus,
                                const std::array<GradientSummary, 4> &summaries,
                                const UnlearnHyper &hyper);

enum class SequentialOrder { privacy_then_copyright, copyright_then_privacy, combined };
std::string to_string(SequentialOrder order);

UnlearnResult sequential_unlearn(const ModelState &model, const Corpus &corpus,
                                 SequentialOrder order, const UnlearnHyper &hyper);

std::string run_record_to_json(const RunRecord &record);
// epoch,phase,US_pri,RS_pri,US_cpy,RS_cpy
std::string run_record_curve_csv(const RunRecord &record);

}  // namespace grail
