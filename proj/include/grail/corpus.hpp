#pragma once

// Synthetic multi-domain knowledge corpora with planted entanglement.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "grail/model.hpp"

namespace grail {

enum class Domain { privacy, copyright, general };
enum class Scope { unlearn, retain, ood };

std::string to_string(Domain d);
std::string to_string(Scope s);
Domain parse_domain(const std::string &text);
Scope parse_scope(const std::string &text);

struct KnowledgeItem {
  std::string id;
  Domain domain = Domain::general;
  Scope scope = Scope::retain;
  TokenSeq prompt;
  TokenSeq answer;

  PromptAnswer view() const { return {prompt, answer}; }
  bool operator==(const KnowledgeItem &) const = default;
};

using Dataset = std::vector<KnowledgeItem>;

struct CorpusSpec {
  int vocab_size = 272;
  int n_pu = 32;
  int n_pr = 32;
  int n_cu = 32;
  int n_cr = 32;
  int n_general = 16;
  int n_ood = 16;
  double rho = 0.5;
  int prompt_len = 3;   // one subject token followed by a relation template
  int answer_len = 2;
  int n_templates = 4;  // relation templates per (domain, scope)
  int n_objects = 16;   // answer-token pool per domain
  bool balanced = true;
  std::uint64_t seed = 1;

  void validate() const;
  // Smallest vocabulary that hosts every entity, template and object region.
  int required_vocab() const;
  bool operator==(const CorpusSpec &) const = default;
};

struct SharedSubject {
  Token token;
  std::string privacy_item;
  std::string copyright_item;
  bool operator==(const SharedSubject &) const = default;
};

struct SharedTemplate {
  Domain domain;
  TokenSeq tokens;
  bool operator==(const SharedTemplate &) const = default;
};

struct OverlapReport {
  std::vector<SharedSubject> shared_subjects;
  std::vector<SharedTemplate> shared_templates;
  bool operator==(const OverlapReport &) const = default;
};

struct Corpus {
  CorpusSpec spec;
  Dataset unlearn_privacy;
  Dataset retain_privacy;
  Dataset unlearn_copyright;
  Dataset retain_copyright;
  Dataset general;
  Dataset ood;
  OverlapReport overlap;

  const Dataset &split(Domain domain, Scope scope) const;
  // D_U^pri, D_R^pri, D_U^cpy, D_R^cpy, general, ood in that order.
  std::vector<const Dataset *> all_splits() const;
  // Items trained into the vanilla model.
  Dataset training_items() const;
  std::size_t shared_subjects_from(Scope privacy_scope) const;
  bool operator==(const Corpus &) const = default;
};

Corpus generate_corpus(const CorpusSpec &spec);

// JSONL: one item per line. The sidecar holds spec and overlap report.
std::string corpus_to_jsonl(const Corpus &corpus);
std::string corpus_sidecar_json(const Corpus &corpus);
Corpus corpus_from_jsonl(const std::string &jsonl, const std::string &sidecar_json = {});
void save_corpus(const Corpus &corpus, const std::filesystem::path &path);
Corpus load_corpus(const std::filesystem::path &path);
std::filesystem::path corpus_sidecar_path(const std::filesystem::path &path);

double exact_match_accuracy(const ModelState &model, const Dataset &items);

struct TrainOptions {
  int epochs = 400;
  double eta = 0.05;
  std::uint64_t shuffle_seed = 0;
  double target_accuracy = 0.99;
  // Also require the mean answer NLL over training items to fall below this.
  double target_loss = std::numeric_limits<double>::infinity();
};

struct TrainResult {
  ModelState model;
  double accuracy = 0.0;
  double mean_loss = 0.0;
  int epochs_run = 0;
};

double mean_item_loss(const ModelState &model, const Dataset &items);

// Per-item descent over the shuffled training items until the accuracy and
// loss targets are met or epochs run out.
TrainResult train_vanilla(const ModelState &model, const Corpus &corpus,
                          const TrainOptions &options);

}  // namespace grail
