#include "grail/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace grail {

using nlohmann::json;

namespace {

void require_items(const Dataset &split, const char *what) {
  if (split.empty()) {
    throw std::invalid_argument(std::string(what) + ": empty split");
  }
}

std::size_t exact_matches(const ModelState &model, const Dataset &split) {
  std::size_t hits = 0;
  for (const auto &item : split) {
    if (greedy_decode(model, item.prompt, static_cast<int>(item.answer.size())) == item.answer) {
      ++hits;
    }
  }
  return hits;
}

json number_or_inf(double v) {
  if (std::isinf(v) && v > 0) {
    return "inf";
  }
  return v;
}

double read_number(const json &j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") {
      return std::numeric_limits<double>::infinity();
    }
    throw std::runtime_error("unexpected string metric value " + j.dump());
  }
  return j.get<double>();
}

json domain_json(const DomainReport &d) {
  return {{"US", d.us},
          {"RS", d.rs},
          {"HS", d.hs},
          {"PPL_unlearn", number_or_inf(d.ppl_unlearn)},
          {"PPL_retain", number_or_inf(d.ppl_retain)},
          {"ROUGE_L_unlearn", d.rouge_unlearn},
          {"ROUGE_L_retain", d.rouge_retain}};
}

DomainReport domain_from_json(const json &j) {
  DomainReport d;
  d.us = j.at("US").get<double>();
  d.rs = j.at("RS").get<double>();
  d.hs = j.at("HS").get<double>();
  d.ppl_unlearn = read_number(j.at("PPL_unlearn"));
  d.ppl_retain = read_number(j.at("PPL_retain"));
  d.rouge_unlearn = j.at("ROUGE_L_unlearn").get<double>();
  d.rouge_retain = j.at("ROUGE_L_retain").get<double>();
  return d;
}

}  // namespace

double unlearning_success(const ModelState &model, const Dataset &split) {
  require_items(split, "unlearning_success");
  const auto misses = split.size() - exact_matches(model, split);
  return 100.0 * static_cast<double>(misses) / static_cast<double>(split.size());
}

double retention_success(const ModelState &model, const Dataset &split) {
  require_items(split, "retention_success");
  return 100.0 * static_cast<double>(exact_matches(model, split)) /
         static_cast<double>(split.size());
}

double harmonic_success(double us, double rs) {
  if (us < 0.0 || rs < 0.0) {
    throw std::invalid_argument("harmonic_success: negative input");
  }
  if (us + rs == 0.0) {
    return 0.0;
  }
  return 2.0 * us * rs / (us + rs);
}

double perplexity(const ModelState &model, const Dataset &split) {
  require_items(split, "perplexity");
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto &item : split) {
    nll += item_loss(model, item.view()) * static_cast<double>(item.answer.size());
    tokens += item.answer.size();
  }
  const double ppl = std::exp(nll / static_cast<double>(tokens));
  return std::isfinite(ppl) ? ppl : std::numeric_limits<double>::infinity();
}

std::size_t lcs_length(const TokenSeq &a, const TokenSeq &b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const TokenSeq &candidate, const TokenSeq &reference) {
  if (candidate.empty() || reference.empty()) {
    throw std::invalid_argument("rouge_l: empty sequence");
  }
  const auto lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) {
    return 0.0;
  }
  const double precision = lcs / static_cast<double>(candidate.size());
  const double recall = lcs / static_cast<double>(reference.size());
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

double rouge_l_split(const ModelState &model, const Dataset &split) {
  require_items(split, "rouge_l_split");
  double total = 0.0;
  for (const auto &item : split) {
    total += rouge_l(greedy_decode(model, item.prompt, static_cast<int>(item.answer.size())),
                     item.answer);
  }
  return total / static_cast<double>(split.size());
}

DomainReport domain_report(const ModelState &model, const Dataset &unlearn,
                           const Dataset &retain) {
  DomainReport d;
  d.us = unlearning_success(model, unlearn);
  d.rs = retention_success(model, retain);
  d.hs = harmonic_success(d.us, d.rs);
  d.ppl_unlearn = perplexity(model, unlearn);
  d.ppl_retain = perplexity(model, retain);
  d.rouge_unlearn = rouge_l_split(model, unlearn);
  d.rouge_retain = rouge_l_split(model, retain);
  return d;
}

EvalReport full_report(const ModelState &model, const Corpus &corpus, const std::string &method,
                       std::uint64_t seed) {
  EvalReport r;
  r.method = method;
  r.seed = seed;
  r.privacy = domain_report(model, corpus.unlearn_privacy, corpus.retain_privacy);
  r.copyright = domain_report(model, corpus.unlearn_copyright, corpus.retain_copyright);
  r.general_accuracy = corpus.general.empty() ? 0.0 : retention_success(model, corpus.general);
  return r;
}

std::string report_to_json(const EvalReport &r) {
  const json doc = {{"format", "grail-eval-report"},
                    {"version", 1},
                    {"method", r.method},
                    {"seed", r.seed},
                    {"privacy", domain_json(r.privacy)},
                    {"copyright", domain_json(r.copyright)},
                    {"general_accuracy", r.general_accuracy}};
  return doc.dump(2) + "\n";
}

EvalReport report_from_json(const std::string &text) {
  const auto doc = json::parse(text);
  if (doc.at("format") != "grail-eval-report") {
    throw std::runtime_error("not an eval report");
  }
  EvalReport r;
  r.method = doc.at("method").get<std::string>();
  r.seed = doc.at("seed").get<std::uint64_t>();
  r.privacy = domain_from_json(doc.at("privacy"));
  r.copyright = domain_from_json(doc.at("copyright"));
  r.general_accuracy = doc.at("general_accuracy").get<double>();
  return r;
}

MetricStat mean_std(const std::vector<double> &values) {
  MetricStat s;
  if (values.empty()) {
    return s;
  }
  for (double v : values) {
    s.mean += v;
  }
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) {
      ss += (v - s.mean) * (v - s.mean);
    }
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::vector<std::pair<std::string, double>> report_metrics(const EvalReport &r) {
  return {{"US_pri", r.privacy.us},
          {"RS_pri", r.privacy.rs},
          {"HS_pri", r.privacy.hs},
          {"PPL_U_pri", r.privacy.ppl_unlearn},
          {"PPL_R_pri", r.privacy.ppl_retain},
          {"ROUGE_U_pri", r.privacy.rouge_unlearn},
          {"ROUGE_R_pri", r.privacy.rouge_retain},
          {"US_cpy", r.copyright.us},
          {"RS_cpy", r.copyright.rs},
          {"HS_cpy", r.copyright.hs},
          {"PPL_U_cpy", r.copyright.ppl_unlearn},
          {"PPL_R_cpy", r.copyright.ppl_retain},
          {"ROUGE_U_cpy", r.copyright.rouge_unlearn},
          {"ROUGE_R_cpy", r.copyright.rouge_retain},
          {"general_acc", r.general_accuracy}};
}

std::vector<std::pair<std::string, MetricStat>> aggregate_metrics(
    const std::vector<const EvalReport *> &reports) {
  std::vector<std::pair<std::string, MetricStat>> out;
  if (reports.empty()) {
    return out;
  }
  const auto names = report_metrics(*reports.front());
  for (std::size_t c = 0; c < names.size(); ++c) {
    std::vector<double> values;
    for (const auto *r : reports) {
      values.push_back(report_metrics(*r)[c].second);
    }
    out.emplace_back(names[c].first, mean_std(values));
  }
  return out;
}

std::string aggregate_csv(const std::vector<EvalReport> &reports) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const EvalReport *>> by_method;
  for (const auto &r : reports) {
    if (!by_method.contains(r.method)) {
      order.push_back(r.method);
    }
    by_method[r.method].push_back(&r);
  }
  std::string out = "method,n_seeds";
  for (const auto &[name, v] : report_metrics(EvalReport{})) {
    out += "," + name + "_mean," + name + "_std";
  }
  out += "\n";
  char buf[64];
  for (const auto &method : order) {
    const auto &rows = by_method[method];
    out += method + "," + std::to_string(rows.size());
    for (const auto &[name, stat] : aggregate_metrics(rows)) {
      std::snprintf(buf, sizeof(buf), ",%.4f,%.4f", stat.mean, stat.stddev);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace grail
