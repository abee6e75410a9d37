#include "grail/unlearn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>

#include "grail/metrics.hpp"
#include "grail/probe.hpp"
#include "grail/util.hpp"

namespace grail {

using nlohmann::json;

namespace {

enum class Action { ascend_nll, descend_nll, descend_kl, descend_random_label };

struct Step {
  const KnowledgeItem *item;
  Action action;
};

struct Phase {
  std::vector<Step> pool;
  bool gate_privacy = true;
  bool gate_copyright = true;
};

void add_steps(std::vector<Step> &pool, const Dataset &items, Action action) {
  for (const auto &item : items) {
    pool.push_back({&item, action});
  }
}

double us_or_zero(const ModelState &m, const Dataset &d) {
  return d.empty() ? 0.0 : unlearning_success(m, d);
}
double rs_or_zero(const ModelState &m, const Dataset &d) {
  return d.empty() ? 0.0 : retention_success(m, d);
}

EpochMetrics measure(const ModelState &m, const Corpus &c, int epoch, int phase) {
  return {epoch,
          phase,
          us_or_zero(m, c.unlearn_privacy),
          rs_or_zero(m, c.retain_privacy),
          us_or_zero(m, c.unlearn_copyright),
          rs_or_zero(m, c.retain_copyright)};
}

bool phase_converged(const EpochMetrics &e, const Phase &p, const UnlearnHyper &h) {
  bool ok = true;
  if (p.gate_privacy) {
    ok = ok && e.us_pri >= h.us_target && e.rs_pri >= h.rs_floor;
  }
  if (p.gate_copyright) {
    ok = ok && e.us_cpy >= h.us_target && e.rs_cpy >= h.rs_floor;
  }
  return ok;
}

class ScheduleRunner {
public:
  ScheduleRunner(const Corpus &corpus, const ParamMask &frozen, const UnlearnHyper &hyper,
                 const ModelState *reference)
      : corpus_(corpus), frozen_(frozen), hyper_(hyper), reference_(reference),
        rng_(splitmix64(hyper.seed)) {}

  UnlearnResult run(const ModelState &model, const std::vector<Phase> &phases,
                    const std::string &method) {
    hyper_.validate();
    if (!frozen_.congruent(model)) {
      throw std::invalid_argument("frozen mask does not match model shape");
    }
    const auto started = std::chrono::steady_clock::now();
    UnlearnResult result{model, {}};
    auto &record = result.record;
    record.method = method;
    record.stop = StopReason::max_epochs;
    int epoch_counter = 0;
    bool aborted = false;
    for (std::size_t p = 0; p < phases.size() && !aborted; ++p) {
      const auto &phase = phases[p];
      bool converged = false;
      for (int e = 0; e < hyper_.max_epochs; ++e) {
        ModelState snapshot = result.model;
        if (!run_epoch(result.model, phase.pool, epoch_counter, record.updates)) {
          result.model = std::move(snapshot);
          record.stop = StopReason::aborted;
          record.note = "non-finite loss at epoch " + std::to_string(epoch_counter) +
                        "; returned the last good epoch";
          aborted = true;
          break;
        }
        const auto metrics = measure(result.model, corpus_, epoch_counter, static_cast<int>(p));
        record.epochs.push_back(metrics);
        ++epoch_counter;
        if (phase_converged(metrics, phase, hyper_)) {
          converged = true;
          break;
        }
      }
      if (!aborted) {
        record.stop = converged ? StopReason::converged : StopReason::max_epochs;
      }
    }
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
  }

private:
  GradientVector step_gradient(const ModelState &model, const Step &step, int epoch) const {
    switch (step.action) {
      case Action::ascend_nll:
      case Action::descend_nll:
        return item_grad(model, step.item->view());
      case Action::descend_kl:
        return item_kl_grad(model, *reference_, step.item->view());
      case Action::descend_random_label: {
        const auto relabeled = randomize_label(
            *step.item, model.config.vocab_size,
            splitmix64(hyper_.seed ^ 0x5eedULL) + static_cast<std::uint64_t>(epoch));
        return item_grad(model, relabeled.view());
      }
    }
    throw std::logic_error("bad action");
  }

  static bool params_finite(const ModelState &model) {
    for (const auto &layer : model.layers) {
      for (double v : layer.values) {
        if (!std::isfinite(v)) return false;
      }
    }
    return true;
  }

  // Returns false when a non-finite loss, gradient or parameter shows up.
  bool run_epoch(ModelState &model, const std::vector<Step> &pool, int epoch,
                 std::int64_t &updates) {
    std::vector<Step> order = pool;
    std::shuffle(order.begin(), order.end(), rng_);
    const auto batch = static_cast<std::size_t>(hyper_.batch_size);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const auto stop = std::min(order.size(), start + batch);
      try {
        if (stop - start == 1) {
          const auto &step = order[start];
          const auto g = step_gradient(model, step, epoch);
          if (!g.all_finite()) {
            return false;
          }
          apply_update(model, g, hyper_.eta,
                       step.action == Action::ascend_nll ? Direction::ascent
                                                         : Direction::descent,
                       frozen_);
        } else {
          // Signed mean of the batch, applied as one ascent step.
          auto combined = GradientVector::zeros_like(model);
          for (std::size_t i = start; i < stop; ++i) {
            auto g = step_gradient(model, order[i], epoch);
            if (order[i].action != Action::ascend_nll) {
              g *= -1.0;
            }
            combined += g;
          }
          combined *= 1.0 / static_cast<double>(stop - start);
          if (!combined.all_finite()) {
            return false;
          }
          apply_update(model, combined, hyper_.eta, Direction::ascent, frozen_);
        }
      } catch (const std::runtime_error &) {
        return false;
      }
      if (!params_finite(model)) {
        return false;
      }
      ++updates;
    }
    return true;
  }

  const Corpus &corpus_;
  const ParamMask &frozen_;
  UnlearnHyper hyper_;
  const ModelState *reference_;
  std::mt19937_64 rng_;
};

UnlearnResult run_phases(const ModelState &model, const Corpus &corpus, const ParamMask &frozen,
                         const UnlearnHyper &hyper, const std::vector<Phase> &phases,
                         const std::string &method, const ModelState *reference = nullptr) {
  ScheduleRunner runner(corpus, frozen, hyper, reference);
  return runner.run(model, phases, method);
}

Phase unlearn_retain_phase(const Corpus &c) {
  Phase p;
  add_steps(p.pool, c.unlearn_privacy, Action::ascend_nll);
  add_steps(p.pool, c.unlearn_copyright, Action::ascend_nll);
  add_steps(p.pool, c.retain_privacy, Action::descend_nll);
  add_steps(p.pool, c.retain_copyright, Action::descend_nll);
  return p;
}

Phase single_domain_phase(const Corpus &c, Domain d) {
  Phase p;
  add_steps(p.pool, c.split(d, Scope::unlearn), Action::ascend_nll);
  add_steps(p.pool, c.split(d, Scope::retain), Action::descend_nll);
  p.gate_privacy = d == Domain::privacy;
  p.gate_copyright = d == Domain::copyright;
  return p;
}

void add_retain_source(Phase &p, const Corpus &c, RetainSource source, Action action) {
  if (source == RetainSource::in_distribution) {
    add_steps(p.pool, c.retain_privacy, action);
    add_steps(p.pool, c.retain_copyright, action);
  } else {
    add_steps(p.pool, c.ood, action);
  }
}

const char *source_suffix(RetainSource s) {
  return s == RetainSource::in_distribution ? "_id" : "_ood";
}

}  // namespace

void UnlearnHyper::validate() const {
  if (!(eta > 0.0) || !std::isfinite(eta)) {
    throw std::invalid_argument("eta must be positive and finite");
  }
  if (max_epochs < 0 || batch_size < 1 || trials < 1) {
    throw std::invalid_argument("max_epochs >= 0, batch_size >= 1 and trials >= 1 required");
  }
  if (us_target < 0.0 || us_target > 100.0 || rs_floor < 0.0 || rs_floor > 100.0) {
    throw std::invalid_argument("us_target and rs_floor must lie in [0, 100]");
  }
  if (!(k_op_ur > 0.0 && k_op_ur <= 100.0) || !(k_op_rr > 0.0 && k_op_rr <= 100.0)) {
    throw std::invalid_argument("k_op_ur and k_op_rr must lie in (0, 100]");
  }
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::converged:
      return "converged";
    case StopReason::max_epochs:
      return "max_epochs";
    case StopReason::aborted:
      return "aborted";
  }
  return "?";
}

std::string to_string(SequentialOrder order) {
  switch (order) {
    case SequentialOrder::privacy_then_copyright:
      return "seq_p2c";
    case SequentialOrder::copyright_then_privacy:
      return "seq_c2p";
    case SequentialOrder::combined:
      return "combined";
  }
  return "?";
}

bool RunRecord::same_outcome(const RunRecord &o) const {
  return method == o.method && epochs == o.epochs && stop == o.stop && updates == o.updates &&
         updated_layers == o.updated_layers && note == o.note;
}

UnlearnResult grail_unlearn(const ModelState &model, const Corpus &corpus,
                            const ParamMask &frozen, const UnlearnHyper &hyper,
                            const std::string &method) {
  return run_phases(model, corpus, frozen, hyper, {unlearn_retain_phase(corpus)}, method);
}

UnlearnResult ga_unlearn(const ModelState &model, const Corpus &corpus,
                         const UnlearnHyper &hyper) {
  Phase p;
  add_steps(p.pool, corpus.unlearn_privacy, Action::ascend_nll);
  add_steps(p.pool, corpus.unlearn_copyright, Action::ascend_nll);
  return run_phases(model, corpus, ParamMask::empty_like(model), hyper, {p}, "ga");
}

UnlearnResult random_label_finetune(const ModelState &model, const Corpus &corpus,
                                    const UnlearnHyper &hyper) {
  Phase p;
  add_steps(p.pool, corpus.unlearn_privacy, Action::descend_random_label);
  add_steps(p.pool, corpus.unlearn_copyright, Action::descend_random_label);
  return run_phases(model, corpus, ParamMask::empty_like(model), hyper, {p}, "random_label");
}

UnlearnResult ga_gd(const ModelState &model, const Corpus &corpus, RetainSource source,
                    const UnlearnHyper &hyper) {
  Phase p;
  add_steps(p.pool, corpus.unlearn_privacy, Action::ascend_nll);
  add_steps(p.pool, corpus.unlearn_copyright, Action::ascend_nll);
  add_retain_source(p, corpus, source, Action::descend_nll);
  return run_phases(model, corpus, ParamMask::empty_like(model), hyper, {p},
                    std::string("ga_gd") + source_suffix(source));
}

UnlearnResult ga_kl(const ModelState &model, const ModelState &reference, const Corpus &corpus,
                    RetainSource source, const UnlearnHyper &hyper) {
  if (reference.config != model.config) {
    throw std::invalid_argument("ga_kl: reference model has a different architecture");
  }
  Phase p;
  add_steps(p.pool, corpus.unlearn_privacy, Action::ascend_nll);
  add_steps(p.pool, corpus.unlearn_copyright, Action::ascend_nll);
  add_retain_source(p, corpus, source, Action::descend_kl);
  return run_phases(model, corpus, ParamMask::empty_like(model), hyper, {p},
                    std::string("ga_kl") + source_suffix(source), &reference);
}

std::vector<std::size_t> select_layers(const std::array<GradientSummary, 4> &summaries) {
  const auto num_layers = summaries[0].magnitudes.size();
  std::vector<double> score(num_layers, 0.0);
  for (std::size_t l = 0; l < num_layers; ++l) {
    double unlearn = 0.0;
    double retain = 0.0;
    for (const auto &s : summaries) {
      const auto &mags = s.magnitudes[l];
      const double mean = std::accumulate(mags.begin(), mags.end(), 0.0) /
                          static_cast<double>(mags.size());
      const bool is_unlearn =
          s.tag == DatasetTag::unlearn_privacy || s.tag == DatasetTag::unlearn_copyright;
      (is_unlearn ? unlearn : retain) += mean / 2.0;
    }
    score[l] = unlearn - retain;
  }
  std::vector<std::size_t> order(num_layers);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  order.resize(std::max<std::size_t>(1, num_layers / 2));
  std::sort(order.begin(), order.end());
  return order;
}

UnlearnResult layerwise_unlearn(const ModelState &model, const Corpus &corpus,
                                const UnlearnHyper &hyper) {
  return layerwise_unlearn(model, corpus, probe_corpus(model, corpus, hyper.trials, hyper.seed),
                           hyper);
}

UnlearnResult layerwise_unlearn(const ModelState &model, const Corpus &corpus,
                                const std::array<GradientSummary, 4> &summaries,
                                const UnlearnHyper &hyper) {
  if (summaries[0].magnitudes.size() != model.layers.size()) {
    throw std::invalid_argument("layerwise_unlearn: summaries do not match model");
  }
  const auto selected = select_layers(summaries);
  auto frozen = ParamMask::full_like(model);
  for (auto l : selected) {
    for (std::size_t j = 0; j < frozen.layer_size(l); ++j) {
      frozen.set(l, j, false);
    }
  }
  auto result = run_phases(model, corpus, frozen, hyper, {unlearn_retain_phase(corpus)},
                           "layerwise");
  for (auto l : selected) {
    result.record.updated_layers.push_back(model.layers[l].name);
  }
  return result;
}

UnlearnResult sequential_unlearn(const ModelState &model, const Corpus &corpus,
                                 SequentialOrder order, const UnlearnHyper &hyper) {
  std::vector<Phase> phases;
  switch (order) {
    case SequentialOrder::privacy_then_copyright:
      phases = {single_domain_phase(corpus, Domain::privacy),
                single_domain_phase(corpus, Domain::copyright)};
      break;
    case SequentialOrder::copyright_then_privacy:
      phases = {single_domain_phase(corpus, Domain::copyright),
                single_domain_phase(corpus, Domain::privacy)};
      break;
    case SequentialOrder::combined:
      phases = {unlearn_retain_phase(corpus)};
      break;
  }
  return run_phases(model, corpus, ParamMask::empty_like(model), hyper, phases, to_string(order));
}

std::string run_record_to_json(const RunRecord &r) {
  json epochs = json::array();
  for (const auto &e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"phase", e.phase},
                      {"US_pri", e.us_pri},
                      {"RS_pri", e.rs_pri},
                      {"US_cpy", e.us_cpy},
                      {"RS_cpy", e.rs_cpy}});
  }
  const json doc = {{"format", "grail-run-record"},
                    {"version", 1},
                    {"method", r.method},
                    {"stop_reason", to_string(r.stop)},
                    {"epochs_executed", r.epochs.size()},
                    {"updates", r.updates},
                    {"updated_layers", r.updated_layers},
                    {"note", r.note},
                    {"wall_seconds", r.wall_seconds},
                    {"checkpoint", r.checkpoint_path},
                    {"epochs", epochs}};
  return doc.dump(2) + "\n";
}

std::string run_record_curve_csv(const RunRecord &r) {
  std::string out = "epoch,phase,US_pri,RS_pri,US_cpy,RS_cpy\n";
  char buf[160];
  for (const auto &e : r.epochs) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.4f,%.4f,%.4f,%.4f\n", e.epoch, e.phase, e.us_pri,
                  e.rs_pri, e.us_cpy, e.rs_cpy);
    out += buf;
  }
  return out;
}

}  // namespace grail
