#include "grail/experiment.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>

#include "grail/util.hpp"

namespace grail {

namespace {

template <typename T>
T parse_number(const std::string &key, const std::string &value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (!in || !(in >> std::ws).eof()) {
    throw std::invalid_argument("config key '" + key + "': cannot parse '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string &key, const std::string &value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw std::invalid_argument("config key '" + key + "': expected a boolean, got '" + value + "'");
}

std::vector<std::string> split_list(const std::string &value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) {
      out.push_back(item.substr(b, e - b + 1));
    }
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string &key, const std::string &value) {
  std::vector<T> out;
  for (const auto &s : split_list(value)) {
    out.push_back(parse_number<T>(key, s));
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
std::string join(const std::vector<T> &values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ",";
    if constexpr (std::is_same_v<T, std::string>) {
      out += values[i];
    } else if constexpr (std::is_floating_point_v<T>) {
      out += fmt_double(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

using Setter = std::function<void(ExperimentConfig &, const std::string &, const std::string &)>;
using Getter = std::function<std::string(const ExperimentConfig &)>;

struct Field {
  Setter set;
  Getter get;
};

template <typename T, typename Proj>
Field number_field(Proj proj) {
  return {[proj](ExperimentConfig &c, const std::string &k, const std::string &v) {
            proj(c) = parse_number<T>(k, v);
          },
          [proj](const ExperimentConfig &c) {
            if constexpr (std::is_floating_point_v<T>) {
              return fmt_double(proj(const_cast<ExperimentConfig &>(c)));
            } else {
              return std::to_string(proj(const_cast<ExperimentConfig &>(c)));
            }
          }};
}

#define GRAIL_FIELD(T, expr) number_field<T>([](ExperimentConfig &c) -> T & { return expr; })

const std::map<std::string, Field> &fields() {
  static const std::map<std::string, Field> table = {
      {"corpus.vocab_size", GRAIL_FIELD(int, c.corpus.vocab_size)},
      {"corpus.n_pu", GRAIL_FIELD(int, c.corpus.n_pu)},
      {"corpus.n_pr", GRAIL_FIELD(int, c.corpus.n_pr)},
      {"corpus.n_cu", GRAIL_FIELD(int, c.corpus.n_cu)},
      {"corpus.n_cr", GRAIL_FIELD(int, c.corpus.n_cr)},
      {"corpus.n_general", GRAIL_FIELD(int, c.corpus.n_general)},
      {"corpus.n_ood", GRAIL_FIELD(int, c.corpus.n_ood)},
      {"corpus.rho", GRAIL_FIELD(double, c.corpus.rho)},
      {"corpus.prompt_len", GRAIL_FIELD(int, c.corpus.prompt_len)},
      {"corpus.answer_len", GRAIL_FIELD(int, c.corpus.answer_len)},
      {"corpus.n_templates", GRAIL_FIELD(int, c.corpus.n_templates)},
      {"corpus.n_objects", GRAIL_FIELD(int, c.corpus.n_objects)},
      {"corpus.balanced",
       {[](ExperimentConfig &c, const std::string &k, const std::string &v) {
          c.corpus.balanced = parse_bool(k, v);
        },
        [](const ExperimentConfig &c) { return std::string(c.corpus.balanced ? "true" : "false"); }}},
      {"model.embed_dim", GRAIL_FIELD(int, c.model.embed_dim)},
      {"model.hidden_dim", GRAIL_FIELD(int, c.model.hidden_dim)},
      {"model.num_blocks", GRAIL_FIELD(int, c.model.num_blocks)},
      {"model.max_seq_len", GRAIL_FIELD(int, c.model.max_seq_len)},
      {"model.init_scale", GRAIL_FIELD(double, c.model.init_scale)},
      {"train.epochs", GRAIL_FIELD(int, c.train.epochs)},
      {"train.eta", GRAIL_FIELD(double, c.train.eta)},
      {"train.target_accuracy", GRAIL_FIELD(double, c.train.target_accuracy)},
      {"train.target_loss", GRAIL_FIELD(double, c.train.target_loss)},
      {"unlearn.eta", GRAIL_FIELD(double, c.hyper.eta)},
      {"unlearn.max_epochs", GRAIL_FIELD(int, c.hyper.max_epochs)},
      {"unlearn.batch_size", GRAIL_FIELD(int, c.hyper.batch_size)},
      {"unlearn.us_target", GRAIL_FIELD(double, c.hyper.us_target)},
      {"unlearn.rs_floor", GRAIL_FIELD(double, c.hyper.rs_floor)},
      {"unlearn.trials", GRAIL_FIELD(int, c.hyper.trials)},
      {"unlearn.k_op_ur", GRAIL_FIELD(double, c.hyper.k_op_ur)},
      {"unlearn.k_op_rr", GRAIL_FIELD(double, c.hyper.k_op_rr)},
      {"localize.jaccard_k", GRAIL_FIELD(double, c.jaccard_k)},
      {"experiment.jobs", GRAIL_FIELD(int, c.jobs)},
      {"experiment.methods",
       {[](ExperimentConfig &c, const std::string &, const std::string &v) {
          c.methods = split_list(v);
        },
        [](const ExperimentConfig &c) { return join(c.methods); }}},
      {"experiment.seeds",
       {[](ExperimentConfig &c, const std::string &k, const std::string &v) {
          c.seeds = parse_list<std::uint64_t>(k, v);
        },
        [](const ExperimentConfig &c) { return join(c.seeds); }}},
      {"experiment.out",
       {[](ExperimentConfig &c, const std::string &, const std::string &v) { c.out_dir = v; },
        [](const ExperimentConfig &c) { return c.out_dir.string(); }}},
      {"ablate.k_op_ur",
       {[](ExperimentConfig &c, const std::string &k, const std::string &v) {
          c.ablate_k_op_ur = parse_list<double>(k, v);
        },
        [](const ExperimentConfig &c) { return join(c.ablate_k_op_ur); }}},
      {"ablate.k_op_rr",
       {[](ExperimentConfig &c, const std::string &k, const std::string &v) {
          c.ablate_k_op_rr = parse_list<double>(k, v);
        },
        [](const ExperimentConfig &c) { return join(c.ablate_k_op_rr); }}},
      {"ablate.components",
       {[](ExperimentConfig &c, const std::string &k, const std::string &v) {
          c.ablate_components = parse_bool(k, v);
        },
        [](const ExperimentConfig &c) {
          return std::string(c.ablate_components ? "true" : "false");
        }}},
  };
  return table;
}

#undef GRAIL_FIELD

}  // namespace

void ExperimentConfig::validate() const {
  corpus.validate();
  auto m = model;
  m.vocab_size = corpus.vocab_size;
  m.validate();
  if (model.max_seq_len < corpus.prompt_len + corpus.answer_len) {
    throw std::invalid_argument("model.max_seq_len shorter than prompt_len + answer_len");
  }
  hyper.validate();
  if (jobs < 1) {
    throw std::invalid_argument("experiment.jobs must be >= 1");
  }
  for (const auto &method : methods) {
    if (!is_known_method(method)) {
      throw std::invalid_argument("unknown method '" + method + "'");
    }
  }
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) {
    throw std::invalid_argument("experiment.seeds must be unique");
  }
  if (seeds.empty()) {
    throw std::invalid_argument("experiment.seeds must not be empty");
  }
  for (double k : ablate_k_op_ur) {
    topk_count(k, 1);
  }
  for (double k : ablate_k_op_rr) {
    topk_count(k, 1);
  }
  topk_count(jaccard_k, 1);
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.corpus = CorpusSpec{};
  c.model.vocab_size = c.corpus.vocab_size;
  c.model.embed_dim = 24;
  c.model.hidden_dim = 24;
  c.model.num_blocks = 2;
  c.model.max_seq_len = 8;
  c.model.init_scale = 0.3;
  c.train.epochs = 400;
  c.train.eta = 0.05;
  c.train.target_accuracy = 1.0;
  c.train.target_loss = 0.02;
  c.methods = {"grail", "layerwise", "ga_gd_id", "ga"};
  c.seeds = {1, 2, 3, 4, 5};
  c.ablate_k_op_ur = {5, 10, 20, 30};
  c.ablate_k_op_rr = {10, 20, 30, 40};
  return c;
}

ExperimentConfig smoke_config() {
  auto c = default_config();
  c.corpus.n_pu = c.corpus.n_pr = c.corpus.n_cu = c.corpus.n_cr = 4;
  c.corpus.n_general = 2;
  c.corpus.n_ood = 2;
  c.corpus.n_templates = 2;
  c.corpus.n_objects = 6;
  c.corpus.vocab_size = c.corpus.required_vocab();
  c.model.vocab_size = c.corpus.vocab_size;
  c.model.embed_dim = 12;
  c.model.hidden_dim = 12;
  c.hyper.eta = 0.03;
  c.hyper.max_epochs = 60;
  c.seeds = {1};
  c.ablate_k_op_ur = {10};
  c.ablate_k_op_rr = {20};
  return c;
}

void apply_override(ExperimentConfig &config, const std::string &key, const std::string &value) {
  const auto &table = fields();
  const auto it = table.find(key);
  if (it == table.end()) {
    throw std::invalid_argument("unknown config key '" + key + "'");
  }
  it->second.set(config, key, value);
}

ExperimentConfig parse_config(const std::string &text, ExperimentConfig base) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error &e) {
    throw std::invalid_argument(std::string("config parse error: ") + e.what());
  }
  for (const auto &[section, body] : tree) {
    if (body.empty()) {
      throw std::invalid_argument("config key '" + section + "' must live in a [section]");
    }
    for (const auto &[key, node] : body) {
      apply_override(base, section + "." + key, node.get_value<std::string>());
    }
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path &path) {
  return parse_config(read_file(path));
}

std::string config_to_text(const ExperimentConfig &config) {
  std::string out;
  std::string section;
  for (const auto &[key, field] : fields()) {
    const auto dot = key.find('.');
    const auto sec = key.substr(0, dot);
    if (sec != section) {
      out += (out.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + field.get(config) + "\n";
  }
  return out;
}

std::uint64_t config_hash(const ExperimentConfig &config) {
  return fnv1a(config_to_text(config));
}

std::uint64_t config_hash(const ExperimentConfig &config, const std::vector<std::string> &prefixes) {
  std::string text;
  for (const auto &[key, field] : fields()) {
    for (const auto &p : prefixes) {
      if (key.rfind(p, 0) == 0) {
        text += key + " = " + field.get(config) + "\n";
        break;
      }
    }
  }
  return fnv1a(text);
}

const std::vector<std::string> &known_methods() {
  static const std::vector<std::string> methods = {
      "vanilla",   "grail",     "grail_no_opur", "grail_no_oprr", "grail_no_both",
      "ga",        "random_label", "ga_gd_id",   "ga_gd_ood",     "ga_kl_id",
      "ga_kl_ood", "layerwise", "seq_p2c",       "seq_c2p",       "combined"};
  return methods;
}

bool is_known_method(const std::string &method) {
  const auto &m = known_methods();
  return std::find(m.begin(), m.end(), method) != m.end();
}

ExperimentConfig seeded(const ExperimentConfig &config, std::uint64_t seed) {
  auto c = config;
  c.corpus.seed = seed;
  c.model.seed = splitmix64(seed ^ 0x6d6f64656cULL);
  c.model.vocab_size = c.corpus.vocab_size;
  c.train.shuffle_seed = splitmix64(seed ^ 0x747261696eULL);
  c.hyper.seed = seed;
  return c;
}

SeedContext prepare_seed(const ExperimentConfig &config, std::uint64_t seed) {
  const auto c = seeded(config, seed);
  c.validate();
  SeedContext ctx;
  ctx.seed = seed;
  ctx.corpus = generate_corpus(c.corpus);
  const auto trained = train_vanilla(init_model(c.model), ctx.corpus, c.train);
  ctx.vanilla = trained.model;
  ctx.vanilla_accuracy = trained.accuracy;
  ctx.vanilla_epochs = trained.epochs_run;
  ctx.summaries = probe_corpus(ctx.vanilla, ctx.corpus, c.hyper.trials, c.hyper.seed);
  return ctx;
}

FrozenMask grail_mask(const SeedContext &ctx, const UnlearnHyper &hyper,
                      GrailComponents components) {
  auto full = localize(ctx.summaries, hyper.k_op_ur, hyper.k_op_rr);
  const auto none = ParamMask::empty_like(ctx.vanilla);
  auto mask = compose_frozen(components.op_ur ? full.op_ur : none,
                             components.op_rr ? full.op_rr : none);
  mask.k_op_ur = full.k_op_ur;
  mask.k_op_rr = full.k_op_rr;
  mask.model_fingerprint = full.model_fingerprint;
  return mask;
}

UnlearnResult run_method(const SeedContext &ctx, const std::string &method,
                         const UnlearnHyper &hyper) {
  const auto &m = ctx.vanilla;
  const auto &c = ctx.corpus;
  if (method == "vanilla") {
    UnlearnResult r{m, {}};
    r.record.method = "vanilla";
    r.record.stop = StopReason::converged;
    return r;
  }
  if (method == "grail") {
    return grail_unlearn(m, c, grail_mask(ctx, hyper).frozen, hyper, method);
  }
  if (method == "grail_no_opur") {
    return grail_unlearn(m, c, grail_mask(ctx, hyper, {false, true}).frozen, hyper, method);
  }
  if (method == "grail_no_oprr") {
    return grail_unlearn(m, c, grail_mask(ctx, hyper, {true, false}).frozen, hyper, method);
  }
  if (method == "grail_no_both") {
    return grail_unlearn(m, c, grail_mask(ctx, hyper, {false, false}).frozen, hyper, method);
  }
  if (method == "ga") return ga_unlearn(m, c, hyper);
  if (method == "random_label") return random_label_finetune(m, c, hyper);
  if (method == "ga_gd_id") return ga_gd(m, c, RetainSource::in_distribution, hyper);
  if (method == "ga_gd_ood") return ga_gd(m, c, RetainSource::out_of_distribution, hyper);
  if (method == "ga_kl_id") return ga_kl(m, m, c, RetainSource::in_distribution, hyper);
  if (method == "ga_kl_ood") return ga_kl(m, m, c, RetainSource::out_of_distribution, hyper);
  if (method == "layerwise") return layerwise_unlearn(m, c, ctx.summaries, hyper);
  if (method == "seq_p2c") {
    return sequential_unlearn(m, c, SequentialOrder::privacy_then_copyright, hyper);
  }
  if (method == "seq_c2p") {
    return sequential_unlearn(m, c, SequentialOrder::copyright_then_privacy, hyper);
  }
  if (method == "combined") return sequential_unlearn(m, c, SequentialOrder::combined, hyper);
  throw std::invalid_argument("unknown method '" + method + "'");
}

}  // namespace grail
