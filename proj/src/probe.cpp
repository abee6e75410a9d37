#include "grail/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <nlohmann/json.hpp>
#include <random>
#include <stdexcept>

#include "grail/util.hpp"

namespace grail {

using nlohmann::json;

std::string to_string(DatasetTag tag) {
  switch (tag) {
    case DatasetTag::unlearn_privacy:
      return "U-pri";
    case DatasetTag::retain_privacy:
      return "R-pri";
    case DatasetTag::unlearn_copyright:
      return "U-cpy";
    case DatasetTag::retain_copyright:
      return "R-cpy";
  }
  return "?";
}

DatasetTag parse_dataset_tag(const std::string &text) {
  for (auto tag : kCoreTags) {
    if (to_string(tag) == text) {
      return tag;
    }
  }
  throw std::invalid_argument("unknown dataset tag '" + text + "'");
}

const Dataset &dataset_for(const Corpus &corpus, DatasetTag tag) {
  switch (tag) {
    case DatasetTag::unlearn_privacy:
      return corpus.unlearn_privacy;
    case DatasetTag::retain_privacy:
      return corpus.retain_privacy;
    case DatasetTag::unlearn_copyright:
      return corpus.unlearn_copyright;
    case DatasetTag::retain_copyright:
      return corpus.retain_copyright;
  }
  throw std::logic_error("bad dataset tag");
}

KnowledgeItem randomize_label(const KnowledgeItem &item, int vocab_size,
                              std::uint64_t trial_seed) {
  if (item.answer.empty()) {
    throw std::invalid_argument("randomize_label: item '" + item.id + "' has an empty answer");
  }
  if (vocab_size < 2) {
    throw std::invalid_argument("randomize_label: vocabulary of size < 2 cannot change a label");
  }
  std::mt19937_64 rng(fnv1a(item.id) ^ splitmix64(trial_seed));
  std::uniform_int_distribution<Token> pick(0, vocab_size - 1);
  KnowledgeItem out = item;
  do {
    for (auto &t : out.answer) {
      t = pick(rng);
    }
  } while (out.answer == item.answer);
  return out;
}

std::vector<std::vector<double>> mean_abs_gradient(const std::vector<GradientVector> &per_item) {
  if (per_item.empty()) {
    throw std::invalid_argument("mean_abs_gradient: no gradients");
  }
  std::vector<std::vector<double>> out;
  for (const auto &layer : per_item.front().layers) {
    out.emplace_back(layer.size(), 0.0);
  }
  for (const auto &g : per_item) {
    if (g.layers.size() != out.size()) {
      throw std::invalid_argument("mean_abs_gradient: shape mismatch");
    }
    for (std::size_t l = 0; l < out.size(); ++l) {
      if (g.layers[l].size() != out[l].size()) {
        throw std::invalid_argument("mean_abs_gradient: shape mismatch");
      }
      for (std::size_t j = 0; j < out[l].size(); ++j) {
        out[l][j] += std::abs(g.layers[l][j]);
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(per_item.size());
  for (auto &layer : out) {
    for (double &v : layer) {
      v *= inv_n;
    }
  }
  return out;
}

GradientSummary probe_dataset(const ModelState &model, const Dataset &dataset, DatasetTag tag,
                              int trials, std::uint64_t seed) {
  if (dataset.empty()) {
    throw std::invalid_argument("probe_dataset: empty dataset");
  }
  if (trials < 1) {
    throw std::invalid_argument("probe_dataset: trials must be >= 1");
  }
  std::vector<const KnowledgeItem *> order;
  for (const auto &item : dataset) {
    order.push_back(&item);
  }
  std::sort(order.begin(), order.end(),
            [](const KnowledgeItem *a, const KnowledgeItem *b) { return a->id < b->id; });

  GradientSummary summary;
  summary.tag = tag;
  summary.n_items = dataset.size();
  summary.trials = trials;
  summary.model_fingerprint = fingerprint(model);
  for (const auto &layer : model.layers) {
    summary.layer_names.push_back(layer.name);
  }

  std::vector<GradientVector> per_item;
  per_item.reserve(order.size());
  for (const auto *item : order) {
    auto mean = GradientVector::zeros_like(model);
    for (int t = 0; t < trials; ++t) {
      const auto substituted = randomize_label(
          *item, model.config.vocab_size, splitmix64(seed) + static_cast<std::uint64_t>(t));
      mean += item_grad(model, substituted.view());
    }
    mean *= 1.0 / trials;
    if (!mean.all_finite()) {
      throw std::runtime_error("probe_dataset: non-finite gradient for item '" + item->id + "'");
    }
    per_item.push_back(std::move(mean));
  }
  summary.magnitudes = mean_abs_gradient(per_item);
  return summary;
}

std::array<GradientSummary, 4> probe_corpus(const ModelState &model, const Corpus &corpus,
                                            int trials, std::uint64_t seed) {
  std::array<GradientSummary, 4> out;
  for (std::size_t i = 0; i < kCoreTags.size(); ++i) {
    out[i] = probe_dataset(model, dataset_for(corpus, kCoreTags[i]), kCoreTags[i], trials, seed);
  }
  return out;
}

std::string summary_to_json(const GradientSummary &summary) {
  json layers = json::array();
  for (std::size_t l = 0; l < summary.magnitudes.size(); ++l) {
    layers.push_back({{"name", summary.layer_names[l]}, {"values", summary.magnitudes[l]}});
  }
  const json doc = {{"format", "grail-gradient-summary"},
                    {"version", 1},
                    {"dataset_tag", to_string(summary.tag)},
                    {"n_items", summary.n_items},
                    {"trials", summary.trials},
                    {"model_fingerprint", to_hex(summary.model_fingerprint)},
                    {"layers", layers}};
  return doc.dump() + "\n";
}

GradientSummary summary_from_json(const std::string &text) {
  const auto doc = json::parse(text);
  if (doc.at("format") != "grail-gradient-summary" || doc.at("version") != 1) {
    throw std::runtime_error("not a version-1 gradient summary");
  }
  GradientSummary s;
  s.tag = parse_dataset_tag(doc.at("dataset_tag").get<std::string>());
  s.n_items = doc.at("n_items").get<std::size_t>();
  s.trials = doc.at("trials").get<int>();
  s.model_fingerprint = from_hex(doc.at("model_fingerprint").get<std::string>());
  for (const auto &layer : doc.at("layers")) {
    s.layer_names.push_back(layer.at("name").get<std::string>());
    s.magnitudes.push_back(layer.at("values").get<std::vector<double>>());
  }
  for (const auto &layer : s.magnitudes) {
    for (double v : layer) {
      if (!std::isfinite(v) || v < 0.0) {
        throw std::runtime_error("gradient summary holds a negative or non-finite magnitude");
      }
    }
  }
  return s;
}

void save_summary(const GradientSummary &summary, const std::filesystem::path &path) {
  write_file(path, summary_to_json(summary));
}

GradientSummary load_summary(const std::filesystem::path &path, const ModelState *against,
                             bool allow_mismatch) {
  auto summary = summary_from_json(read_file(path));
  if (against != nullptr) {
    const auto expected = fingerprint(*against);
    if (expected != summary.model_fingerprint) {
      const std::string msg = "summary " + path.string() + " was probed on model " +
                              to_hex(summary.model_fingerprint) + ", not " + to_hex(expected);
      if (!allow_mismatch) {
        throw std::runtime_error(msg);
      }
      std::cerr << "warning: " << msg << " (continuing, --allow-mismatch)\n";
    }
    if (summary.magnitudes.size() != against->layers.size()) {
      throw std::runtime_error("summary layer count does not match model");
    }
    for (std::size_t l = 0; l < summary.magnitudes.size(); ++l) {
      if (summary.magnitudes[l].size() != against->layers[l].size()) {
        throw std::runtime_error("summary layer '" + summary.layer_names[l] +
                                 "' does not match model shape");
      }
    }
  }
  return summary;
}

std::string summary_to_csv(const GradientSummary &summary) {
  std::string out = "layer,index,magnitude\n";
  char buf[64];
  for (std::size_t l = 0; l < summary.magnitudes.size(); ++l) {
    for (std::size_t j = 0; j < summary.magnitudes[l].size(); ++j) {
      std::snprintf(buf, sizeof(buf), ",%zu,%.17g\n", j, summary.magnitudes[l][j]);
      out += summary.layer_names[l];
      out += buf;
    }
  }
  return out;
}

}  // namespace grail
