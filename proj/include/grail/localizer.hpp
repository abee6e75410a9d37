#pragma once

// Stage 2: per-layer TopK critical sets, overlap masks and entanglement.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "grail/model.hpp"
#include "grail/probe.hpp"

namespace grail {

struct IndexSet {
  DatasetTag tag = DatasetTag::unlearn_privacy;
  double k_percent = 10.0;
  std::uint64_t model_fingerprint = 0;
  std::vector<std::size_t> layer_sizes;
  std::vector<std::vector<std::size_t>> indices;  // sorted ascending per layer

  std::size_t total() const;
  ParamMask to_mask() const;
};

struct FrozenMask {
  ParamMask frozen;
  ParamMask op_ur;
  ParamMask op_rr;
  double k_op_ur = 10.0;
  double k_op_rr = 20.0;
  std::uint64_t model_fingerprint = 0;
};

// max(1, round-half-up(k/100 * layer_size))
std::size_t topk_count(double k_percent, std::size_t layer_size);

// Per layer, the topk_count largest magnitudes; ties go to the lower index.
IndexSet topk(const GradientSummary &summary, double k_percent);

// (T_U^pri | T_U^cpy) & (T_R^pri | T_R^cpy), per layer.
ParamMask build_op_ur(const IndexSet &u_pri, const IndexSet &u_cpy, const IndexSet &r_pri,
                      const IndexSet &r_cpy);
// T_R^pri & T_R^cpy, per layer.
ParamMask build_op_rr(const IndexSet &r_pri, const IndexSet &r_cpy);

FrozenMask compose_frozen(const ParamMask &op_ur, const ParamMask &op_rr);

// Full stage 2 from the four summaries (in kCoreTags order).
FrozenMask localize(const std::array<GradientSummary, 4> &summaries, double k_op_ur,
                    double k_op_rr);

struct JaccardMatrix {
  static constexpr std::array<DatasetTag, 4> kOrder = {
      DatasetTag::unlearn_privacy, DatasetTag::retain_privacy, DatasetTag::unlearn_copyright,
      DatasetTag::retain_copyright};

  double k_percent = 10.0;
  std::array<std::array<double, 4>, 4> model_wise{};
  std::vector<std::string> layer_names;
  std::vector<std::array<std::array<double, 4>, 4>> per_layer;

  double at(DatasetTag a, DatasetTag b) const;
  // Mean model-wise Jaccard over the four cross-domain pairs.
  double cross_domain_mean() const;
};

double jaccard(const std::vector<std::size_t> &a, const std::vector<std::size_t> &b);

// summaries in kCoreTags order.
JaccardMatrix jaccard_matrix(const std::array<GradientSummary, 4> &summaries, double k_percent);

// tag_a,tag_b,layer,value with layer = ALL for the model-wise entries.
std::string jaccard_to_csv(const JaccardMatrix &m);

std::string mask_to_json(const FrozenMask &mask, const std::vector<std::string> &layer_names);
FrozenMask mask_from_json(const std::string &text);
void save_mask(const FrozenMask &mask, const ModelState &model, const std::filesystem::path &path);
FrozenMask load_mask(const std::filesystem::path &path, const ModelState *against = nullptr,
                     bool allow_mismatch = false);

}  // namespace grail
