#include "grail/localizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <stdexcept>

#include "grail/util.hpp"

namespace grail {

using nlohmann::json;

namespace {

void check_compatible(const IndexSet &a, const IndexSet &b) {
  if (a.model_fingerprint != b.model_fingerprint) {
    throw std::invalid_argument("index sets come from different models (" +
                                to_hex(a.model_fingerprint) + " vs " +
                                to_hex(b.model_fingerprint) + ")");
  }
  if (a.k_percent != b.k_percent) {
    throw std::invalid_argument("index sets use different k (" + std::to_string(a.k_percent) +
                                " vs " + std::to_string(b.k_percent) + ")");
  }
  if (a.layer_sizes != b.layer_sizes) {
    throw std::invalid_argument("index sets have different layer shapes");
  }
}

std::size_t intersection_size(const std::vector<std::size_t> &a,
                              const std::vector<std::size_t> &b) {
  std::size_t n = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++n;
      ++ia;
      ++ib;
    }
  }
  return n;
}

json indices_json(const ParamMask &mask, std::size_t layer) { return mask.indices(layer); }

}  // namespace

std::size_t IndexSet::total() const {
  std::size_t n = 0;
  for (const auto &layer : indices) {
    n += layer.size();
  }
  return n;
}

ParamMask IndexSet::to_mask() const {
  auto mask = ParamMask::from_sizes(layer_sizes);
  for (std::size_t l = 0; l < indices.size(); ++l) {
    for (auto j : indices[l]) {
      mask.set(l, j);
    }
  }
  return mask;
}

std::size_t topk_count(double k_percent, std::size_t layer_size) {
  if (!(k_percent > 0.0 && k_percent <= 100.0)) {
    throw std::invalid_argument("k_percent must lie in (0, 100], got " +
                                std::to_string(k_percent));
  }
  const auto m = static_cast<std::size_t>(
      std::floor(k_percent / 100.0 * static_cast<double>(layer_size) + 0.5));
  return std::min(layer_size, std::max<std::size_t>(1, m));
}

IndexSet topk(const GradientSummary &summary, double k_percent) {
  IndexSet out;
  out.tag = summary.tag;
  out.k_percent = k_percent;
  out.model_fingerprint = summary.model_fingerprint;
  for (const auto &mags : summary.magnitudes) {
    const auto m = topk_count(k_percent, mags.size());
    std::vector<std::size_t> order(mags.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        return mags[a] != mags[b] ? mags[a] > mags[b] : a < b;
                      });
    order.resize(m);
    std::sort(order.begin(), order.end());
    out.layer_sizes.push_back(mags.size());
    out.indices.push_back(std::move(order));
  }
  return out;
}

ParamMask build_op_ur(const IndexSet &u_pri, const IndexSet &u_cpy, const IndexSet &r_pri,
                      const IndexSet &r_cpy) {
  check_compatible(u_pri, u_cpy);
  check_compatible(u_pri, r_pri);
  check_compatible(u_pri, r_cpy);
  return (u_pri.to_mask() | u_cpy.to_mask()) & (r_pri.to_mask() | r_cpy.to_mask());
}

ParamMask build_op_rr(const IndexSet &r_pri, const IndexSet &r_cpy) {
  check_compatible(r_pri, r_cpy);
  return r_pri.to_mask() & r_cpy.to_mask();
}

FrozenMask compose_frozen(const ParamMask &op_ur, const ParamMask &op_rr) {
  if (!op_ur.same_shape(op_rr)) {
    throw std::invalid_argument("compose_frozen: OP-UR and OP-RR masks differ in shape");
  }
  FrozenMask out;
  out.frozen = op_ur | op_rr;
  out.op_ur = op_ur;
  out.op_rr = op_rr;
  return out;
}

FrozenMask localize(const std::array<GradientSummary, 4> &s, double k_op_ur, double k_op_rr) {
  // kCoreTags order: U-pri, R-pri, U-cpy, R-cpy
  const auto op_ur =
      build_op_ur(topk(s[0], k_op_ur), topk(s[2], k_op_ur), topk(s[1], k_op_ur), topk(s[3], k_op_ur));
  const auto op_rr = build_op_rr(topk(s[1], k_op_rr), topk(s[3], k_op_rr));
  auto mask = compose_frozen(op_ur, op_rr);
  mask.k_op_ur = k_op_ur;
  mask.k_op_rr = k_op_rr;
  mask.model_fingerprint = s[0].model_fingerprint;
  return mask;
}

double jaccard(const std::vector<std::size_t> &a, const std::vector<std::size_t> &b) {
  const auto inter = intersection_size(a, b);
  const auto uni = a.size() + b.size() - inter;
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double JaccardMatrix::at(DatasetTag a, DatasetTag b) const {
  const auto pos = [](DatasetTag t) {
    return static_cast<std::size_t>(std::find(kOrder.begin(), kOrder.end(), t) - kOrder.begin());
  };
  return model_wise[pos(a)][pos(b)];
}

double JaccardMatrix::cross_domain_mean() const {
  using T = DatasetTag;
  return (at(T::unlearn_privacy, T::unlearn_copyright) +
          at(T::unlearn_privacy, T::retain_copyright) +
          at(T::retain_privacy, T::unlearn_copyright) +
          at(T::retain_privacy, T::retain_copyright)) /
         4.0;
}

JaccardMatrix jaccard_matrix(const std::array<GradientSummary, 4> &summaries, double k_percent) {
  for (const auto &s : summaries) {
    if (s.model_fingerprint != summaries[0].model_fingerprint) {
      throw std::invalid_argument("jaccard_matrix: summaries come from different models");
    }
  }
  std::array<IndexSet, 4> sets;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto tag = JaccardMatrix::kOrder[i];
    const auto it = std::find_if(summaries.begin(), summaries.end(),
                                 [&](const GradientSummary &s) { return s.tag == tag; });
    if (it == summaries.end()) {
      throw std::invalid_argument("jaccard_matrix: missing summary for " + to_string(tag));
    }
    sets[i] = topk(*it, k_percent);
  }
  for (std::size_t i = 1; i < 4; ++i) {
    check_compatible(sets[0], sets[i]);
  }

  JaccardMatrix m;
  m.k_percent = k_percent;
  m.layer_names = summaries[0].layer_names;
  const auto num_layers = sets[0].indices.size();
  m.per_layer.resize(num_layers);
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = 0; b < 4; ++b) {
      std::size_t inter = 0;
      std::size_t uni = 0;
      for (std::size_t l = 0; l < num_layers; ++l) {
        const auto &ia = sets[a].indices[l];
        const auto &ib = sets[b].indices[l];
        const auto n = intersection_size(ia, ib);
        inter += n;
        uni += ia.size() + ib.size() - n;
        m.per_layer[l][a][b] = jaccard(ia, ib);
      }
      m.model_wise[a][b] = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
  }
  return m;
}

std::string jaccard_to_csv(const JaccardMatrix &m) {
  std::string out = "tag_a,tag_b,layer,value\n";
  char buf[160];
  auto emit = [&](std::size_t a, std::size_t b, const std::string &layer, double v) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%.6f\n",
                  to_string(JaccardMatrix::kOrder[a]).c_str(),
                  to_string(JaccardMatrix::kOrder[b]).c_str(), layer.c_str(), v);
    out += buf;
  };
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = 0; b < 4; ++b) {
      emit(a, b, "ALL", m.model_wise[a][b]);
    }
  }
  for (std::size_t l = 0; l < m.per_layer.size(); ++l) {
    for (std::size_t a = 0; a < 4; ++a) {
      for (std::size_t b = 0; b < 4; ++b) {
        emit(a, b, m.layer_names[l], m.per_layer[l][a][b]);
      }
    }
  }
  return out;
}

std::string mask_to_json(const FrozenMask &mask, const std::vector<std::string> &layer_names) {
  json layers = json::array();
  for (std::size_t l = 0; l < mask.frozen.num_layers(); ++l) {
    layers.push_back({{"name", l < layer_names.size() ? layer_names[l] : std::to_string(l)},
                      {"size", mask.frozen.layer_size(l)},
                      {"frozen", indices_json(mask.frozen, l)},
                      {"op_ur", indices_json(mask.op_ur, l)},
                      {"op_rr", indices_json(mask.op_rr, l)}});
  }
  const json doc = {{"format", "grail-frozen-mask"},
                    {"version", 1},
                    {"k_op_ur", mask.k_op_ur},
                    {"k_op_rr", mask.k_op_rr},
                    {"model_fingerprint", to_hex(mask.model_fingerprint)},
                    {"frozen_count", mask.frozen.count()},
                    {"layers", layers}};
  return doc.dump() + "\n";
}

FrozenMask mask_from_json(const std::string &text) {
  const auto doc = json::parse(text);
  if (doc.at("format") != "grail-frozen-mask" || doc.at("version") != 1) {
    throw std::runtime_error("not a version-1 frozen mask");
  }
  std::vector<std::size_t> sizes;
  for (const auto &layer : doc.at("layers")) {
    sizes.push_back(layer.at("size").get<std::size_t>());
  }
  FrozenMask mask;
  mask.k_op_ur = doc.at("k_op_ur").get<double>();
  mask.k_op_rr = doc.at("k_op_rr").get<double>();
  mask.model_fingerprint = from_hex(doc.at("model_fingerprint").get<std::string>());
  mask.frozen = ParamMask::from_sizes(sizes);
  mask.op_ur = ParamMask::from_sizes(sizes);
  mask.op_rr = ParamMask::from_sizes(sizes);
  std::size_t l = 0;
  for (const auto &layer : doc.at("layers")) {
    for (auto [key, target] : {std::pair{"frozen", &mask.frozen}, std::pair{"op_ur", &mask.op_ur},
                               std::pair{"op_rr", &mask.op_rr}}) {
      for (auto j : layer.at(key).get<std::vector<std::size_t>>()) {
        if (j >= sizes[l]) {
          throw std::runtime_error("mask index out of range in layer " + std::to_string(l));
        }
        target->set(l, j);
      }
    }
    ++l;
  }
  if (!(mask.frozen == (mask.op_ur | mask.op_rr))) {
    throw std::runtime_error("mask file is inconsistent: frozen != op_ur | op_rr");
  }
  return mask;
}

void save_mask(const FrozenMask &mask, const ModelState &model, const std::filesystem::path &path) {
  std::vector<std::string> names;
  for (const auto &layer : model.layers) {
    names.push_back(layer.name);
  }
  write_file(path, mask_to_json(mask, names));
}

FrozenMask load_mask(const std::filesystem::path &path, const ModelState *against,
                     bool allow_mismatch) {
  auto mask = mask_from_json(read_file(path));
  if (against != nullptr) {
    if (!mask.frozen.congruent(*against)) {
      throw std::runtime_error("mask " + path.string() + " does not match model shape");
    }
    const auto expected = fingerprint(*against);
    if (expected != mask.model_fingerprint) {
      const std::string msg = "mask " + path.string() + " was localized on model " +
                              to_hex(mask.model_fingerprint) + ", not " + to_hex(expected);
      if (!allow_mismatch) {
        throw std::runtime_error(msg);
      }
      std::cerr << "warning: " << msg << " (continuing, --allow-mismatch)\n";
    }
  }
  return mask;
}

}  // namespace grail
