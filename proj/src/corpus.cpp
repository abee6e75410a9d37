#include "grail/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <nlohmann/json.hpp>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "grail/util.hpp"

namespace grail {

using nlohmann::json;

namespace {

int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

std::string make_id(const char *prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%04d", prefix, i);
  return buf;
}

std::string split_tag(Domain d, Scope s) {
  switch (d) {
    case Domain::privacy:
      return s == Scope::unlearn ? "U-pri" : "R-pri";
    case Domain::copyright:
      return s == Scope::unlearn ? "U-cpy" : "R-cpy";
    case Domain::general:
      return s == Scope::ood ? "ood" : "general";
  }
  return "?";
}

// Hands out consecutive token ids for each vocabulary region.
class TokenAllocator {
public:
  TokenSeq take(int n) {
    TokenSeq out(static_cast<std::size_t>(n));
    for (auto &t : out) {
      t = next_++;
    }
    return out;
  }
  int used() const { return next_; }

private:
  Token next_ = 0;
};

struct DomainRegions {
  TokenSeq subjects;
  std::vector<TokenSeq> unlearn_templates;
  std::vector<TokenSeq> retain_templates;
  TokenSeq objects;
};

std::vector<TokenSeq> take_templates(TokenAllocator &alloc, int count, int len) {
  std::vector<TokenSeq> out;
  for (int i = 0; i < count; ++i) {
    out.push_back(alloc.take(len));
  }
  return out;
}

TokenSeq draw_answer(std::mt19937_64 &rng, const TokenSeq &objects, int len) {
  std::uniform_int_distribution<std::size_t> pick(0, objects.size() - 1);
  TokenSeq answer(static_cast<std::size_t>(len));
  for (auto &t : answer) {
    t = objects[pick(rng)];
  }
  return answer;
}

KnowledgeItem make_item(std::string id, Domain d, Scope s, Token subject,
                        const TokenSeq &tmpl, TokenSeq answer) {
  KnowledgeItem item{std::move(id), d, s, {subject}, std::move(answer)};
  item.prompt.insert(item.prompt.end(), tmpl.begin(), tmpl.end());
  return item;
}

Dataset *split_for(Corpus &c, Domain d, Scope s) {
  if (d == Domain::privacy) {
    return s == Scope::unlearn ? &c.unlearn_privacy : &c.retain_privacy;
  }
  if (d == Domain::copyright) {
    return s == Scope::unlearn ? &c.unlearn_copyright : &c.retain_copyright;
  }
  return s == Scope::ood ? &c.ood : &c.general;
}

void check_disjoint(const Corpus &c) {
  std::set<std::string> ids;
  std::map<std::pair<TokenSeq, TokenSeq>, std::string> pairs;
  for (const auto *split : c.all_splits()) {
    for (const auto &item : *split) {
      if (!ids.insert(item.id).second) {
        throw std::runtime_error("duplicate item id '" + item.id + "'");
      }
      auto [it, fresh] = pairs.emplace(std::make_pair(item.prompt, item.answer), item.id);
      if (!fresh) {
        throw std::runtime_error("items '" + it->second + "' and '" + item.id +
                                 "' share an identical (prompt, answer) pair");
      }
    }
  }
}

json spec_to_json(const CorpusSpec &s) {
  return {{"vocab_size", s.vocab_size}, {"n_pu", s.n_pu},
          {"n_pr", s.n_pr},             {"n_cu", s.n_cu},
          {"n_cr", s.n_cr},             {"n_general", s.n_general},
          {"n_ood", s.n_ood},           {"rho", s.rho},
          {"prompt_len", s.prompt_len}, {"answer_len", s.answer_len},
          {"n_templates", s.n_templates}, {"n_objects", s.n_objects},
          {"balanced", s.balanced},     {"seed", s.seed}};
}

CorpusSpec spec_from_json(const json &j) {
  CorpusSpec s;
  s.vocab_size = j.at("vocab_size").get<int>();
  s.n_pu = j.at("n_pu").get<int>();
  s.n_pr = j.at("n_pr").get<int>();
  s.n_cu = j.at("n_cu").get<int>();
  s.n_cr = j.at("n_cr").get<int>();
  s.n_general = j.at("n_general").get<int>();
  s.n_ood = j.at("n_ood").get<int>();
  s.rho = j.at("rho").get<double>();
  s.prompt_len = j.at("prompt_len").get<int>();
  s.answer_len = j.at("answer_len").get<int>();
  s.n_templates = j.at("n_templates").get<int>();
  s.n_objects = j.at("n_objects").get<int>();
  s.balanced = j.at("balanced").get<bool>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

}  // namespace

std::string to_string(Domain d) {
  switch (d) {
    case Domain::privacy:
      return "privacy";
    case Domain::copyright:
      return "copyright";
    case Domain::general:
      return "general";
  }
  return "?";
}

std::string to_string(Scope s) {
  switch (s) {
    case Scope::unlearn:
      return "unlearn";
    case Scope::retain:
      return "retain";
    case Scope::ood:
      return "ood";
  }
  return "?";
}

Domain parse_domain(const std::string &text) {
  if (text == "privacy") return Domain::privacy;
  if (text == "copyright") return Domain::copyright;
  if (text == "general") return Domain::general;
  throw std::invalid_argument("unknown domain '" + text + "'");
}

Scope parse_scope(const std::string &text) {
  if (text == "unlearn") return Scope::unlearn;
  if (text == "retain") return Scope::retain;
  if (text == "ood") return Scope::ood;
  throw std::invalid_argument("unknown scope '" + text + "'");
}

void CorpusSpec::validate() const {
  for (int n : {n_pu, n_pr, n_cu, n_cr, n_general, n_ood}) {
    if (n < 1) {
      throw std::invalid_argument("every split size must be >= 1");
    }
  }
  if (!(rho >= 0.0 && rho <= 1.0)) {
    throw std::invalid_argument("rho must lie in [0, 1]");
  }
  if (prompt_len < 2 || answer_len < 1) {
    throw std::invalid_argument("prompt_len must be >= 2 and answer_len >= 1");
  }
  if (n_templates < 1 || n_objects < 2) {
    throw std::invalid_argument("n_templates must be >= 1 and n_objects >= 2");
  }
  if (balanced && (n_pu != n_cu || n_pr != n_cr)) {
    throw std::invalid_argument("balanced corpus needs n_pu == n_cu and n_pr == n_cr");
  }
  const int shared = round_half_up(rho * n_pu) + round_half_up(rho * n_pr);
  if (shared > n_cu + n_cr) {
    throw std::invalid_argument("rho shares " + std::to_string(shared) +
                                " privacy subjects but only " + std::to_string(n_cu + n_cr) +
                                " copyright facts exist");
  }
  if (vocab_size < required_vocab()) {
    throw std::invalid_argument("vocab_size " + std::to_string(vocab_size) +
                                " too small; this spec requires at least " +
                                std::to_string(required_vocab()));
  }
}

int CorpusSpec::required_vocab() const {
  const int tmpl_len = prompt_len - 1;
  const int subjects = n_pu + n_pr + n_cu + n_cr + n_general + n_ood;
  const int templates = 6 * n_templates * tmpl_len;
  const int objects = 4 * n_objects;
  return std::max(8, subjects + templates + objects);
}

const Dataset &Corpus::split(Domain domain, Scope scope) const {
  return *split_for(const_cast<Corpus &>(*this), domain, scope);
}

std::vector<const Dataset *> Corpus::all_splits() const {
  return {&unlearn_privacy, &retain_privacy, &unlearn_copyright,
          &retain_copyright, &general, &ood};
}

Dataset Corpus::training_items() const {
  Dataset out;
  for (const auto *split : {&unlearn_privacy, &retain_privacy, &unlearn_copyright,
                            &retain_copyright, &general}) {
    out.insert(out.end(), split->begin(), split->end());
  }
  return out;
}

std::size_t Corpus::shared_subjects_from(Scope privacy_scope) const {
  const char *prefix = privacy_scope == Scope::unlearn ? "pu-" : "pr-";
  return static_cast<std::size_t>(
      std::count_if(overlap.shared_subjects.begin(), overlap.shared_subjects.end(),
                    [&](const SharedSubject &s) { return s.privacy_item.rfind(prefix, 0) == 0; }));
}

Corpus generate_corpus(const CorpusSpec &spec) {
  spec.validate();
  const int tmpl_len = spec.prompt_len - 1;
  const int n_shared_templates = round_half_up(spec.rho * spec.n_templates);

  TokenAllocator alloc;
  DomainRegions pri;
  DomainRegions cpy;
  pri.subjects = alloc.take(spec.n_pu + spec.n_pr);
  cpy.subjects = alloc.take(spec.n_cu + spec.n_cr);
  const TokenSeq gen_subjects = alloc.take(spec.n_general);
  const TokenSeq ood_subjects = alloc.take(spec.n_ood);
  for (auto *r : {&pri, &cpy}) {
    r->unlearn_templates = take_templates(alloc, spec.n_templates, tmpl_len);
    r->retain_templates = take_templates(alloc, spec.n_templates, tmpl_len);
    for (int i = 0; i < n_shared_templates; ++i) {
      r->retain_templates[static_cast<std::size_t>(i)] =
          r->unlearn_templates[static_cast<std::size_t>(i)];
    }
  }
  const auto gen_templates = take_templates(alloc, spec.n_templates, tmpl_len);
  const auto ood_templates = take_templates(alloc, spec.n_templates, tmpl_len);
  pri.objects = alloc.take(spec.n_objects);
  cpy.objects = alloc.take(spec.n_objects);
  const TokenSeq gen_objects = alloc.take(spec.n_objects);
  const TokenSeq ood_objects = alloc.take(spec.n_objects);

  // Copyright subject slots: retain facts first, then unlearn facts. Shared
  // privacy-unlearn subjects fill retain slots first so that cross-domain
  // sharing crosses the unlearn/retain boundary; privacy-retain subjects
  // fill the remaining slots from the unlearn end.
  const auto n_cpy = static_cast<std::size_t>(spec.n_cu + spec.n_cr);
  auto slot_item = [&](std::size_t slot) {
    return slot < static_cast<std::size_t>(spec.n_cr)
               ? make_id("cr", static_cast<int>(slot))
               : make_id("cu", static_cast<int>(slot) - spec.n_cr);
  };
  std::vector<Token> slot_subject(n_cpy);
  for (std::size_t s = 0; s < n_cpy; ++s) {
    slot_subject[s] = cpy.subjects[s];
  }
  std::vector<bool> slot_taken(n_cpy, false);
  Corpus corpus;
  corpus.spec = spec;
  const int shared_pu = round_half_up(spec.rho * spec.n_pu);
  const int shared_pr = round_half_up(spec.rho * spec.n_pr);
  std::size_t next_front = 0;
  for (int i = 0; i < shared_pu; ++i) {
    const auto slot = next_front++;
    slot_taken[slot] = true;
    slot_subject[slot] = pri.subjects[static_cast<std::size_t>(i)];
    corpus.overlap.shared_subjects.push_back(
        {slot_subject[slot], make_id("pu", i), slot_item(slot)});
  }
  std::size_t next_back = n_cpy;
  for (int i = 0; i < shared_pr; ++i) {
    std::size_t slot = --next_back;
    slot_taken[slot] = true;
    const auto token = pri.subjects[static_cast<std::size_t>(spec.n_pu + i)];
    slot_subject[slot] = token;
    corpus.overlap.shared_subjects.push_back({token, make_id("pr", i), slot_item(slot)});
  }
  for (auto *r : {&pri, &cpy}) {
    for (int i = 0; i < n_shared_templates; ++i) {
      corpus.overlap.shared_templates.push_back(
          {r == &pri ? Domain::privacy : Domain::copyright,
           r->unlearn_templates[static_cast<std::size_t>(i)]});
    }
  }

  std::mt19937_64 rng(spec.seed);
  const auto nt = static_cast<std::size_t>(spec.n_templates);
  for (int i = 0; i < spec.n_pu; ++i) {
    const auto k = static_cast<std::size_t>(i);
    corpus.unlearn_privacy.push_back(
        make_item(make_id("pu", i), Domain::privacy, Scope::unlearn, pri.subjects[k],
                  pri.unlearn_templates[k % nt], draw_answer(rng, pri.objects, spec.answer_len)));
  }
  for (int i = 0; i < spec.n_pr; ++i) {
    const auto k = static_cast<std::size_t>(i);
    corpus.retain_privacy.push_back(make_item(
        make_id("pr", i), Domain::privacy, Scope::retain,
        pri.subjects[static_cast<std::size_t>(spec.n_pu) + k], pri.retain_templates[k % nt],
        draw_answer(rng, pri.objects, spec.answer_len)));
  }
  for (int i = 0; i < spec.n_cu; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const auto slot = static_cast<std::size_t>(spec.n_cr) + k;
    corpus.unlearn_copyright.push_back(
        make_item(make_id("cu", i), Domain::copyright, Scope::unlearn, slot_subject[slot],
                  cpy.unlearn_templates[k % nt], draw_answer(rng, cpy.objects, spec.answer_len)));
  }
  for (int i = 0; i < spec.n_cr; ++i) {
    const auto k = static_cast<std::size_t>(i);
    corpus.retain_copyright.push_back(
        make_item(make_id("cr", i), Domain::copyright, Scope::retain, slot_subject[k],
                  cpy.retain_templates[k % nt], draw_answer(rng, cpy.objects, spec.answer_len)));
  }
  for (int i = 0; i < spec.n_general; ++i) {
    const auto k = static_cast<std::size_t>(i);
    corpus.general.push_back(make_item(make_id("gen", i), Domain::general, Scope::retain,
                                       gen_subjects[k], gen_templates[k % nt],
                                       draw_answer(rng, gen_objects, spec.answer_len)));
  }
  for (int i = 0; i < spec.n_ood; ++i) {
    const auto k = static_cast<std::size_t>(i);
    corpus.ood.push_back(make_item(make_id("ood", i), Domain::general, Scope::ood,
                                   ood_subjects[k], ood_templates[k % nt],
                                   draw_answer(rng, ood_objects, spec.answer_len)));
  }
  check_disjoint(corpus);
  return corpus;
}

std::string corpus_to_jsonl(const Corpus &corpus) {
  std::string out;
  for (const auto *split : corpus.all_splits()) {
    for (const auto &item : *split) {
      const json rec = {{"id", item.id},
                        {"domain", to_string(item.domain)},
                        {"scope", to_string(item.scope)},
                        {"split", split_tag(item.domain, item.scope)},
                        {"prompt", item.prompt},
                        {"answer", item.answer}};
      out += rec.dump();
      out += '\n';
    }
  }
  return out;
}

std::string corpus_sidecar_json(const Corpus &corpus) {
  json subjects = json::array();
  for (const auto &s : corpus.overlap.shared_subjects) {
    subjects.push_back(
        {{"token", s.token}, {"privacy_item", s.privacy_item}, {"copyright_item", s.copyright_item}});
  }
  json templates = json::array();
  for (const auto &t : corpus.overlap.shared_templates) {
    templates.push_back({{"domain", to_string(t.domain)}, {"tokens", t.tokens}});
  }
  const json doc = {{"format", "grail-corpus-sidecar"},
                    {"version", 1},
                    {"spec", spec_to_json(corpus.spec)},
                    {"planted_overlap_report",
                     {{"shared_subjects", subjects}, {"shared_templates", templates}}}};
  return doc.dump(2) + "\n";
}

Corpus corpus_from_jsonl(const std::string &jsonl, const std::string &sidecar_json) {
  Corpus corpus;
  std::istringstream in(jsonl);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    KnowledgeItem item;
    std::string tag;
    try {
      const auto rec = json::parse(line);
      item.id = rec.at("id").get<std::string>();
      item.domain = parse_domain(rec.at("domain").get<std::string>());
      item.scope = parse_scope(rec.at("scope").get<std::string>());
      tag = rec.at("split").get<std::string>();
      item.prompt = rec.at("prompt").get<TokenSeq>();
      item.answer = rec.at("answer").get<TokenSeq>();
    } catch (const std::exception &e) {
      throw std::runtime_error("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    if (tag != split_tag(item.domain, item.scope)) {
      throw std::runtime_error("corpus line " + std::to_string(line_no) + ": split '" + tag +
                               "' inconsistent with domain/scope");
    }
    if (item.domain == Domain::general && item.scope == Scope::unlearn) {
      throw std::runtime_error("corpus line " + std::to_string(line_no) +
                               ": general items cannot be in the unlearn scope");
    }
    if (item.domain != Domain::general && item.scope == Scope::ood) {
      throw std::runtime_error("corpus line " + std::to_string(line_no) +
                               ": ood items must belong to the general domain");
    }
    if (item.prompt.empty() || item.answer.empty()) {
      throw std::runtime_error("corpus line " + std::to_string(line_no) +
                               ": prompt and answer must be non-empty");
    }
    split_for(corpus, item.domain, item.scope)->push_back(std::move(item));
  }
  if (corpus.unlearn_privacy.empty() || corpus.retain_privacy.empty() ||
      corpus.unlearn_copyright.empty() || corpus.retain_copyright.empty()) {
    throw std::runtime_error("corpus is missing one of the four core splits");
  }
  check_disjoint(corpus);

  if (!sidecar_json.empty()) {
    const auto doc = json::parse(sidecar_json);
    corpus.spec = spec_from_json(doc.at("spec"));
    const auto &report = doc.at("planted_overlap_report");
    for (const auto &s : report.at("shared_subjects")) {
      corpus.overlap.shared_subjects.push_back({s.at("token").get<Token>(),
                                                s.at("privacy_item").get<std::string>(),
                                                s.at("copyright_item").get<std::string>()});
    }
    for (const auto &t : report.at("shared_templates")) {
      corpus.overlap.shared_templates.push_back(
          {parse_domain(t.at("domain").get<std::string>()), t.at("tokens").get<TokenSeq>()});
    }
  }
  return corpus;
}

std::filesystem::path corpus_sidecar_path(const std::filesystem::path &path) {
  auto side = path;
  side.replace_extension(".meta.json");
  return side;
}

void save_corpus(const Corpus &corpus, const std::filesystem::path &path) {
  write_file(path, corpus_to_jsonl(corpus));
  write_file(corpus_sidecar_path(path), corpus_sidecar_json(corpus));
}

Corpus load_corpus(const std::filesystem::path &path) {
  const auto side = corpus_sidecar_path(path);
  return corpus_from_jsonl(read_file(path),
                           std::filesystem::exists(side) ? read_file(side) : std::string{});
}

double exact_match_accuracy(const ModelState &model, const Dataset &items) {
  if (items.empty()) {
    throw std::invalid_argument("accuracy of an empty split");
  }
  std::size_t hits = 0;
  for (const auto &item : items) {
    if (greedy_decode(model, item.prompt, static_cast<int>(item.answer.size())) == item.answer) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(items.size());
}

double mean_item_loss(const ModelState &model, const Dataset &items) {
  double total = 0.0;
  for (const auto &item : items) {
    total += item_loss(model, item.view());
  }
  return total / static_cast<double>(items.size());
}

TrainResult train_vanilla(const ModelState &model, const Corpus &corpus,
                          const TrainOptions &options) {
  auto items = corpus.training_items();
  if (items.empty()) {
    throw std::invalid_argument("cannot train on an empty corpus");
  }
  TrainResult result{model, 0.0, 0.0, 0};
  auto &state = result.model;
  const auto no_mask = ParamMask::empty_like(state);
  std::mt19937_64 rng(options.shuffle_seed);
  auto targets_met = [&] {
    result.accuracy = exact_match_accuracy(state, items);
    result.mean_loss = mean_item_loss(state, items);
    return result.accuracy >= options.target_accuracy && result.mean_loss <= options.target_loss;
  };
  if (targets_met() || options.epochs <= 0) {
    return result;
  }
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(items.begin(), items.end(), rng);
    for (const auto &item : items) {
      GradientVector g;
      try {
        g = item_grad(state, item.view());
      } catch (const std::runtime_error &) {
        throw std::runtime_error("training diverged (non-finite loss) at epoch " +
                                 std::to_string(epoch) + "; try a smaller eta");
      }
      apply_update(state, g, options.eta, Direction::descent, no_mask);
    }
    result.epochs_run = epoch + 1;
    if (targets_met()) {
      break;
    }
    if (!std::isfinite(result.mean_loss)) {
      throw std::runtime_error("training diverged (non-finite loss) at epoch " +
                               std::to_string(epoch) + "; try a smaller eta");
    }
  }
  return result;
}

}  // namespace grail
