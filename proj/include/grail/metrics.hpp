#pragma once

// Unlearning / retention / harmonic success, perplexity and ROUGE-L.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "grail/corpus.hpp"
#include "grail/model.hpp"

namespace grail {

// 100 * fraction of items whose greedy decode differs from the reference in
// at least one token.
double unlearning_success(const ModelState &model, const Dataset &split);
// 100 * fraction of items whose greedy decode equals the reference.
double retention_success(const ModelState &model, const Dataset &split);
// 2*US*RS/(US+RS); 0 when both are 0.
double harmonic_success(double us, double rs);
// exp(mean answer-token NLL over the split); +inf on overflow.
double perplexity(const ModelState &model, const Dataset &split);

// LCS-based F1 (beta = 1), scaled to [0, 100].
std::size_t lcs_length(const TokenSeq &a, const TokenSeq &b);
double rouge_l(const TokenSeq &candidate, const TokenSeq &reference);
double rouge_l_split(const ModelState &model, const Dataset &split);

struct DomainReport {
  double us = 0.0;
  double rs = 0.0;
  double hs = 0.0;
  double ppl_unlearn = 1.0;
  double ppl_retain = 1.0;
  double rouge_unlearn = 0.0;
  double rouge_retain = 0.0;
};

struct EvalReport {
  std::string method;
  std::uint64_t seed = 0;
  DomainReport privacy;
  DomainReport copyright;
  double general_accuracy = 0.0;
};

DomainReport domain_report(const ModelState &model, const Dataset &unlearn, const Dataset &retain);
EvalReport full_report(const ModelState &model, const Corpus &corpus, const std::string &method,
                       std::uint64_t seed = 0);

std::string report_to_json(const EvalReport &report);
EvalReport report_from_json(const std::string &text);

struct MetricStat {
  double mean = 0.0;
  double stddev = 0.0;  // sample (n-1); 0 for a single value
};
MetricStat mean_std(const std::vector<double> &values);

// Flat (column name, value) view used by every tabular output.
std::vector<std::pair<std::string, double>> report_metrics(const EvalReport &report);
std::vector<std::pair<std::string, MetricStat>> aggregate_metrics(
    const std::vector<const EvalReport *> &reports);

// One row per method: mean and sample stddev over seeds of every metric.
std::string aggregate_csv(const std::vector<EvalReport> &reports);

}  // namespace grail
