#include "grail/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <iostream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <set>
#include <thread>

#include "grail/util.hpp"

namespace grail {

using json = nlohmann::json;

namespace {

std::mutex log_mutex;

void log(const PipelineOptions &opts, const std::string &line) {
  if (opts.quiet) return;
  std::lock_guard<std::mutex> lock(log_mutex);
  std::cerr << line << "\n";
}

// Runs fn(0..n-1) on up to `jobs` threads; rethrows the first failure.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)> &fn) {
  const auto workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const auto i = next.fetch_add(1);
        if (i >= n) return;
        {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (failure) return;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto &t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// Config keys each stage depends on.
const std::vector<std::string> kCorpusKeys = {"corpus."};
const std::vector<std::string> kTrainKeys = {"corpus.", "model.", "train."};
const std::vector<std::string> kProbeKeys = {"corpus.", "model.", "train.", "unlearn.trials"};
const std::vector<std::string> kLocalizeKeys = {"corpus.", "model.", "train.", "unlearn.trials",
                                                "unlearn.k_op_", "localize."};
const std::vector<std::string> kUnlearnKeys = {"corpus.", "model.", "train.", "unlearn.",
                                               "localize."};

std::string rel(const fs::path &out_dir, const fs::path &p) {
  const auto r = p.lexically_relative(out_dir);
  if (r.empty() || *r.begin() == "..") return fs::absolute(p).lexically_normal().string();
  return r.generic_string();
}

fs::path resolve(const fs::path &out_dir, const std::string &recorded) {
  const fs::path p(recorded);
  return p.is_absolute() ? p : out_dir / p;
}

std::string seed_flag(std::uint64_t seed) { return " --seed " + std::to_string(seed); }

// Writes the artifact bytes and its provenance sidecar.
void emit(const fs::path &out_dir, const fs::path &path, const std::string &bytes,
          const std::string &command, std::uint64_t hash, std::uint64_t seed,
          const std::vector<fs::path> &inputs) {
  write_file(path, bytes);
  Provenance p;
  p.command = command;
  p.config_hash = hash;
  p.seed = seed;
  p.fingerprint = fnv1a(bytes);
  for (const auto &in : inputs) {
    p.upstream[rel(out_dir, in)] = file_fingerprint(in);
  }
  write_file(provenance_path(path), provenance_to_json(p));
}

// Checks an input exists, is unmodified and was made under the same config.
void require(const fs::path &path, const std::string &make_with, std::uint64_t hash,
             const PipelineOptions &opts) {
  if (!fs::exists(path)) {
    throw ChainError("missing " + path.string() + "; run `grail " + make_with + "` first");
  }
  const auto prov_file = provenance_path(path);
  if (!fs::exists(prov_file)) {
    throw ChainError("missing provenance " + prov_file.string() + "; re-run `grail " + make_with +
                     "`");
  }
  const auto prov = provenance_from_json(read_file(prov_file));
  if (file_fingerprint(path) != prov.fingerprint) {
    throw ChainError(path.string() + " changed after it was written; re-run `grail " + make_with +
                     "`");
  }
  if (prov.config_hash != hash) {
    const std::string msg = path.string() + " was produced under a different config (hash " +
                            to_hex(prov.config_hash) + ", now " + to_hex(hash) + ")";
    if (!opts.allow_mismatch) {
      throw ChainError(msg + "; re-run `grail " + make_with + "` or pass --allow-mismatch");
    }
    log(opts, "warning: " + msg + " (continuing, --allow-mismatch)");
  }
}

Corpus load_seed_corpus(const ExperimentConfig &c, std::uint64_t seed,
                        const PipelineOptions &opts) {
  const auto paths = seed_paths(c.out_dir, seed);
  require(paths.corpus, "gen-corpus" + seed_flag(seed), config_hash(c, kCorpusKeys), opts);
  return load_corpus(paths.corpus);
}

ModelState load_seed_vanilla(const ExperimentConfig &c, std::uint64_t seed,
                             const PipelineOptions &opts) {
  const auto paths = seed_paths(c.out_dir, seed);
  require(paths.vanilla, "train" + seed_flag(seed), config_hash(c, kTrainKeys), opts);
  return load_checkpoint(paths.vanilla);
}

std::array<GradientSummary, 4> load_seed_summaries(const ExperimentConfig &c, std::uint64_t seed,
                                                   const ModelState &vanilla,
                                                   const PipelineOptions &opts) {
  const auto paths = seed_paths(c.out_dir, seed);
  std::array<GradientSummary, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto p = paths.summary(kCoreTags[i]);
    require(p, "probe" + seed_flag(seed), config_hash(c, kProbeKeys), opts);
    out[i] = load_summary(p, &vanilla, opts.allow_mismatch);
  }
  return out;
}

std::vector<fs::path> summary_files(const SeedPaths &paths) {
  std::vector<fs::path> out;
  for (auto tag : kCoreTags) out.push_back(paths.summary(tag));
  return out;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

json json_num(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

json stats_json(const std::vector<const EvalReport *> &reports) {
  json out = json::object();
  for (const auto &[name, stat] : aggregate_metrics(reports)) {
    out[name] = {{"mean", json_num(stat.mean)}, {"std", json_num(stat.stddev)}};
  }
  return out;
}

// Everything one (method, seed) cell needs, loaded through the chain checks.
struct SeedInputs {
  SeedContext ctx;
  FrozenMask mask;
};

SeedInputs load_seed_inputs(const ExperimentConfig &c, std::uint64_t seed,
                            const PipelineOptions &opts) {
  const auto paths = seed_paths(c.out_dir, seed);
  SeedInputs in;
  in.ctx.seed = seed;
  in.ctx.corpus = load_seed_corpus(c, seed, opts);
  in.ctx.vanilla = load_seed_vanilla(c, seed, opts);
  in.ctx.summaries = load_seed_summaries(c, seed, in.ctx.vanilla, opts);
  require(paths.mask, "localize" + seed_flag(seed), config_hash(c, kLocalizeKeys), opts);
  in.mask = load_mask(paths.mask, &in.ctx.vanilla, opts.allow_mismatch);
  return in;
}

std::vector<fs::path> method_inputs(const SeedPaths &paths, const std::string &method) {
  std::vector<fs::path> in = {paths.corpus, paths.vanilla};
  if (method == "grail") {
    in.push_back(paths.mask);
  } else if (method.rfind("grail_no_", 0) == 0 || method == "layerwise") {
    for (const auto &p : summary_files(paths)) in.push_back(p);
  }
  return in;
}

// Runs one unlearning cell, writes checkpoint, run record, curve and eval.
EvalReport run_cell(const ExperimentConfig &c, const SeedInputs &in, const std::string &label,
                    const std::function<UnlearnResult(const UnlearnHyper &)> &run,
                    const RunPaths &out, const std::vector<fs::path> &inputs,
                    const PipelineOptions &opts) {
  const auto sc = seeded(c, in.ctx.seed);
  auto result = run(sc.hyper);
  result.record.method = label;
  result.record.checkpoint_path = rel(c.out_dir, out.checkpoint);
  const auto hash = config_hash(c, kUnlearnKeys);
  const auto cmd = "unlearn" + seed_flag(in.ctx.seed);
  emit(c.out_dir, out.checkpoint, serialize_checkpoint(result.model), cmd, hash, in.ctx.seed,
       inputs);
  emit(c.out_dir, out.run, run_record_to_json(result.record), cmd, hash, in.ctx.seed,
       {out.checkpoint});
  emit(c.out_dir, out.curve, run_record_curve_csv(result.record), cmd, hash, in.ctx.seed,
       {out.checkpoint});
  auto report = full_report(result.model, in.ctx.corpus, label, in.ctx.seed);
  emit(c.out_dir, out.eval, report_to_json(report), "eval" + seed_flag(in.ctx.seed), hash,
       in.ctx.seed, {out.checkpoint, seed_paths(c.out_dir, in.ctx.seed).corpus});
  char buf[200];
  std::snprintf(buf, sizeof(buf), "%s seed %llu: %s after %zu epochs, HS %.2f/%.2f (%.1fs)",
                label.c_str(), static_cast<unsigned long long>(in.ctx.seed),
                to_string(result.record.stop).c_str(), result.record.epochs.size(),
                report.privacy.hs, report.copyright.hs, result.record.wall_seconds);
  log(opts, buf);
  return report;
}

std::function<UnlearnResult(const UnlearnHyper &)> method_runner(const SeedInputs &in,
                                                                 const std::string &method) {
  if (method == "grail") {
    return [&in](const UnlearnHyper &h) {
      return grail_unlearn(in.ctx.vanilla, in.ctx.corpus, in.mask.frozen, h, "grail");
    };
  }
  return [&in, method](const UnlearnHyper &h) { return run_method(in.ctx, method, h); };
}

}  // namespace

fs::path provenance_path(const fs::path &artifact) {
  auto p = artifact;
  p += ".prov.json";
  return p;
}

std::string provenance_to_json(const Provenance &p) {
  json up = json::object();
  for (const auto &[path, fp] : p.upstream) up[path] = to_hex(fp);
  const json doc = {{"format", "grail-provenance"},
                    {"version", 1},
                    {"command", p.command},
                    {"config_hash", to_hex(p.config_hash)},
                    {"seed", p.seed},
                    {"fingerprint", to_hex(p.fingerprint)},
                    {"upstream", up}};
  return doc.dump(2) + "\n";
}

Provenance provenance_from_json(const std::string &text) {
  const auto doc = json::parse(text);
  if (doc.at("format") != "grail-provenance" || doc.at("version") != 1) {
    throw std::runtime_error("not a version-1 provenance record");
  }
  Provenance p;
  p.command = doc.at("command").get<std::string>();
  p.config_hash = from_hex(doc.at("config_hash").get<std::string>());
  p.seed = doc.at("seed").get<std::uint64_t>();
  p.fingerprint = from_hex(doc.at("fingerprint").get<std::string>());
  for (const auto &[path, fp] : doc.at("upstream").items()) {
    p.upstream[path] = from_hex(fp.get<std::string>());
  }
  return p;
}

void verify_chain(const fs::path &out_dir, const fs::path &artifact) {
  std::set<std::string> seen;
  std::function<void(const fs::path &)> visit = [&](const fs::path &path) {
    if (!seen.insert(path.lexically_normal().string()).second) return;
    if (!fs::exists(path)) throw ChainError("missing " + path.string());
    const auto prov_file = provenance_path(path);
    if (!fs::exists(prov_file)) throw ChainError("missing provenance " + prov_file.string());
    const auto prov = provenance_from_json(read_file(prov_file));
    if (file_fingerprint(path) != prov.fingerprint) {
      throw ChainError(path.string() + " changed after it was written; re-run `grail " +
                       prov.command + "`");
    }
    for (const auto &[up, fp] : prov.upstream) {
      const auto up_path = resolve(out_dir, up);
      if (!fs::exists(up_path)) {
        throw ChainError("missing " + up_path.string() + " (consumed by " + path.string() + ")");
      }
      if (file_fingerprint(up_path) != fp) {
        throw ChainError("fingerprint chain break: " + up_path.string() + " changed since " +
                         path.string() + " was produced; re-run `grail " + prov.command + "`");
      }
      visit(up_path);
    }
  };
  visit(artifact);
}

fs::path SeedPaths::summary(DatasetTag tag) const {
  return dir / "probe" / (to_string(tag) + ".json");
}

fs::path SeedPaths::summary_csv(DatasetTag tag) const {
  return dir / "probe" / (to_string(tag) + ".csv");
}

SeedPaths seed_paths(const fs::path &out_dir, std::uint64_t seed) {
  SeedPaths p;
  p.dir = out_dir / ("seed" + std::to_string(seed));
  p.corpus = p.dir / "corpus.jsonl";
  p.vanilla = p.dir / "vanilla.ckpt";
  p.mask = p.dir / "mask.json";
  p.jaccard = p.dir / "jaccard.csv";
  return p;
}

RunPaths run_paths(const fs::path &out_dir, const std::string &method, std::uint64_t seed) {
  RunPaths p;
  p.dir = out_dir / "runs" / method / ("seed" + std::to_string(seed));
  p.checkpoint = p.dir / "model.ckpt";
  p.run = p.dir / "run.json";
  p.curve = p.dir / "curve.csv";
  p.eval = p.dir / "eval.json";
  return p;
}

void cmd_gen_corpus(const ExperimentConfig &config, const PipelineOptions &opts) {
  config.validate();
  parallel_for(config.seeds.size(), config.jobs, [&](std::size_t i) {
    const auto seed = config.seeds[i];
    const auto c = seeded(config, seed);
    const auto paths = seed_paths(config.out_dir, seed);
    const auto corpus = generate_corpus(c.corpus);
    const auto hash = config_hash(config, kCorpusKeys);
    emit(config.out_dir, paths.corpus, corpus_to_jsonl(corpus), "gen-corpus" + seed_flag(seed),
         hash, seed, {});
    emit(config.out_dir, corpus_sidecar_path(paths.corpus), corpus_sidecar_json(corpus),
         "gen-corpus" + seed_flag(seed), hash, seed, {});
    log(opts, "wrote " + paths.corpus.string() + " (" +
                  std::to_string(corpus.overlap.shared_subjects.size()) + " shared subjects)");
  });
}

void cmd_train(const ExperimentConfig &config, const PipelineOptions &opts) {
  config.validate();
  parallel_for(config.seeds.size(), config.jobs, [&](std::size_t i) {
    const auto seed = config.seeds[i];
    const auto c = seeded(config, seed);
    const auto paths = seed_paths(config.out_dir, seed);
    const auto corpus = load_seed_corpus(config, seed, opts);
    auto mc = c.model;
    mc.vocab_size = corpus.spec.vocab_size;
    const auto trained = train_vanilla(init_model(mc), corpus, c.train);
    emit(config.out_dir, paths.vanilla, serialize_checkpoint(trained.model),
         "train" + seed_flag(seed), config_hash(config, kTrainKeys), seed, {paths.corpus});
    char buf[160];
    std::snprintf(buf, sizeof(buf), "seed %llu: vanilla accuracy %.4f, loss %.4f after %d epochs",
                  static_cast<unsigned long long>(seed), trained.accuracy, trained.mean_loss,
                  trained.epochs_run);
    log(opts, buf);
    log(opts, "wrote " + paths.vanilla.string());
  });
}

void cmd_probe(const ExperimentConfig &config, const PipelineOptions &opts) {
  config.validate();
  parallel_for(config.seeds.size(), config.jobs, [&](std::size_t i) {
    const auto seed = config.seeds[i];
    const auto c = seeded(config, seed);
    const auto paths = seed_paths(config.out_dir, seed);
    const auto corpus = load_seed_corpus(config, seed, opts);
    const auto vanilla = load_seed_vanilla(config, seed, opts);
    const auto summaries = probe_corpus(vanilla, corpus, c.hyper.trials, c.hyper.seed);
    const auto hash = config_hash(config, kProbeKeys);
    for (const auto &s : summaries) {
      emit(config.out_dir, paths.summary(s.tag), summary_to_json(s), "probe" + seed_flag(seed),
           hash, seed, {paths.corpus, paths.vanilla});
      emit(config.out_dir, paths.summary_csv(s.tag), summary_to_csv(s), "probe" + seed_flag(seed),
           hash, seed, {paths.corpus, paths.vanilla});
    }
    log(opts, "wrote " + (paths.dir / "probe").string());
  });
}

void cmd_localize(const ExperimentConfig &config, const PipelineOptions &opts) {
  config.validate();
  parallel_for(config.seeds.size(), config.jobs, [&](std::size_t i) {
    const auto seed = config.seeds[i];
    const auto paths = seed_paths(config.out_dir, seed);
    const auto vanilla = load_seed_vanilla(config, seed, opts);
    const auto summaries = load_seed_summaries(config, seed, vanilla, opts);
    const auto mask = localize(summaries, config.hyper.k_op_ur, config.hyper.k_op_rr);
    const auto hash = config_hash(config, kLocalizeKeys);
    std::vector<std::string> names;
    for (const auto &layer : vanilla.layers) names.push_back(layer.name);
    auto inputs = summary_files(paths);
    inputs.push_back(paths.vanilla);
    emit(config.out_dir, paths.mask, mask_to_json(mask, names), "localize" + seed_flag(seed), hash,
         seed, inputs);
    const auto jm = jaccard_matrix(summaries, config.jaccard_k);
    emit(config.out_dir, paths.jaccard, jaccard_to_csv(jm), "localize" + seed_flag(seed), hash,
         seed, summary_files(paths));
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "seed %llu: frozen %zu of %zu (OP-UR %zu, OP-RR %zu); Jaccard U/R pri %.3f, "
                  "cpy %.3f, cross %.3f",
                  static_cast<unsigned long long>(seed), mask.frozen.count(), vanilla.num_params(),
                  mask.op_ur.count(), mask.op_rr.count(),
                  jm.at(DatasetTag::unlearn_privacy, DatasetTag::retain_privacy),
                  jm.at(DatasetTag::unlearn_copyright, DatasetTag::retain_copyright),
                  jm.cross_domain_mean());
    log(opts, buf);
  });
}

namespace {

std::vector<EvalReport> run_grid(const ExperimentConfig &config, const PipelineOptions &opts) {
  if (config.methods.empty()) {
    throw std::invalid_argument("experiment.methods is empty");
  }
  std::vector<SeedInputs> inputs(config.seeds.size());
  parallel_for(config.seeds.size(), config.jobs, [&](std::size_t i) {
    inputs[i] = load_seed_inputs(config, config.seeds[i], opts);
  });
  const auto n_methods = config.methods.size();
  std::vector<EvalReport> reports(n_methods * config.seeds.size());
  parallel_for(reports.size(), config.jobs, [&](std::size_t cell) {
    const auto &method = config.methods[cell / config.seeds.size()];
    const auto &in = inputs[cell % config.seeds.size()];
    const auto paths = seed_paths(config.out_dir, in.ctx.seed);
    reports[cell] = run_cell(config, in, method, method_runner(in, method),
                             run_paths(config.out_dir, method, in.ctx.seed),
                             method_inputs(paths, method), opts);
  });
  return reports;
}

}  // namespace

void cmd_unlearn(const ExperimentConfig &config, const PipelineOptions &opts) {
  config.validate();
  run_grid(config, opts);
}

std::vector<EvalReport> cmd_eval(const ExperimentConfig &config, const PipelineOptions &opts) {
  config.validate();
  std::vector<EvalReport> reports;
  for (const auto &method : config.methods) {
    for (auto seed : config.seeds) {
      const auto paths = run_paths(config.out_dir, method, seed);
      if (!fs::exists(paths.checkpoint)) {
        throw ChainError("missing " + paths.checkpoint.string() + "; run `grail unlearn --method " +
                         method + seed_flag(seed) + "` first");
      }
      reports.push_back(cmd_eval_checkpoint(config, seed, paths.checkpoint, paths.eval, opts));
    }
  }
  return reports;
}

EvalReport cmd_eval_checkpoint(const ExperimentConfig &config, std::uint64_t seed,
                               const fs::path &checkpoint, const fs::path &report,
                               const PipelineOptions &opts) {
  const auto corpus = load_seed_corpus(config, seed, opts);
  if (!fs::exists(checkpoint)) {
    throw ChainError("missing checkpoint " + checkpoint.string() + "; run `grail unlearn` or "
                     "`grail train` first");
  }
  if (fs::exists(provenance_path(checkpoint))) {
    verify_chain(config.out_dir, checkpoint);
  }
  const auto model = load_checkpoint(checkpoint);
  std::string method = "checkpoint";
  if (fs::exists(report)) {
    // keep the label of an existing report so re-evaluation is byte-stable
    method = report_from_json(read_file(report)).method;
  } else if (checkpoint.parent_path().parent_path().has_filename() &&
             checkpoint.filename() == "model.ckpt") {
    method = checkpoint.parent_path().parent_path().filename().string();
  } else if (checkpoint.filename() == "vanilla.ckpt") {
    method = "vanilla";
  }
  const auto r = full_report(model, corpus, method, seed);
  emit(config.out_dir, report, report_to_json(r), "eval" + seed_flag(seed),
       config_hash(config, kUnlearnKeys), seed,
       {checkpoint, seed_paths(config.out_dir, seed).corpus});
  log(opts, "wrote " + report.string());
  return r;
}

std::vector<EvalReport> cmd_bench(const ExperimentConfig &config, const PipelineOptions &opts) {
  config.validate();
  cmd_gen_corpus(config, opts);
  cmd_train(config, opts);
  cmd_probe(config, opts);
  cmd_localize(config, opts);
  const auto reports = run_grid(config, opts);

  const auto hash = config_hash(config);
  std::vector<fs::path> evals;
  for (const auto &r : reports) evals.push_back(run_paths(config.out_dir, r.method, r.seed).eval);
  emit(config.out_dir, config.out_dir / "bench.csv", aggregate_csv(reports), "bench", hash, 0,
       evals);

  json methods = json::array();
  for (const auto &method : config.methods) {
    std::vector<const EvalReport *> rows;
    json seeds = json::array();
    for (const auto &r : reports) {
      if (r.method == method) {
        rows.push_back(&r);
        seeds.push_back(r.seed);
      }
    }
    methods.push_back({{"method", method},
                       {"n_seeds", rows.size()},
                       {"seeds", seeds},
                       {"metrics", stats_json(rows)}});
  }
  const json doc = {{"format", "grail-bench"},
                    {"version", 1},
                    {"config_hash", to_hex(hash)},
                    {"stddev", "sample (n-1)"},
                    {"methods", methods}};
  emit(config.out_dir, config.out_dir / "bench.json", doc.dump(2) + "\n", "bench", hash, 0, evals);

  // seed-mean Jaccard in the per-seed schema
  std::vector<std::array<GradientSummary, 4>> all;
  std::vector<fs::path> sources;
  for (auto seed : config.seeds) {
    const auto vanilla = load_seed_vanilla(config, seed, opts);
    all.push_back(load_seed_summaries(config, seed, vanilla, opts));
    for (const auto &p : summary_files(seed_paths(config.out_dir, seed))) sources.push_back(p);
  }
  auto mean = jaccard_matrix(all.front(), config.jaccard_k);
  for (std::size_t s = 1; s < all.size(); ++s) {
    const auto m = jaccard_matrix(all[s], config.jaccard_k);
    for (std::size_t a = 0; a < 4; ++a) {
      for (std::size_t b = 0; b < 4; ++b) {
        mean.model_wise[a][b] += m.model_wise[a][b];
        for (std::size_t l = 0; l < mean.per_layer.size(); ++l) {
          mean.per_layer[l][a][b] += m.per_layer[l][a][b];
        }
      }
    }
  }
  const double n = static_cast<double>(all.size());
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = 0; b < 4; ++b) {
      mean.model_wise[a][b] /= n;
      for (auto &layer : mean.per_layer) layer[a][b] /= n;
    }
  }
  emit(config.out_dir, config.out_dir / "jaccard.csv", jaccard_to_csv(mean), "bench", hash, 0,
       sources);
  log(opts, "wrote " + (config.out_dir / "bench.csv").string());
  return reports;
}

namespace {

std::string k_label(double k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", k);
  return buf;
}

std::vector<const EvalReport *> pointers(const std::vector<EvalReport> &reports) {
  std::vector<const EvalReport *> out;
  for (const auto &r : reports) out.push_back(&r);
  return out;
}

}  // namespace

std::vector<AblationRow> cmd_ablate(const ExperimentConfig &config, const PipelineOptions &opts) {
  config.validate();
  cmd_gen_corpus(config, opts);
  cmd_train(config, opts);
  cmd_probe(config, opts);
  cmd_localize(config, opts);

  std::vector<AblationRow> rows;
  const double ur0 = config.hyper.k_op_ur;
  const double rr0 = config.hyper.k_op_rr;
  if (config.ablate_components) {
    rows.push_back({"grail", "components", true, true, ur0, rr0, {}});
    rows.push_back({"no_opur", "components", false, true, ur0, rr0, {}});
    rows.push_back({"no_oprr", "components", true, false, ur0, rr0, {}});
    rows.push_back({"no_both", "components", false, false, ur0, rr0, {}});
  }
  for (double k : config.ablate_k_op_ur) {
    rows.push_back({"kur" + k_label(k) + "_krr" + k_label(rr0), "k_op_ur", true, true, k, rr0, {}});
  }
  for (double k : config.ablate_k_op_rr) {
    rows.push_back({"kur" + k_label(ur0) + "_krr" + k_label(k), "k_op_rr", true, true, ur0, k, {}});
  }

  std::vector<SeedInputs> inputs(config.seeds.size());
  parallel_for(config.seeds.size(), config.jobs, [&](std::size_t i) {
    inputs[i] = load_seed_inputs(config, config.seeds[i], opts);
  });
  const auto n_seeds = config.seeds.size();
  for (auto &row : rows) row.reports.resize(n_seeds);
  parallel_for(rows.size() * n_seeds, config.jobs, [&](std::size_t cell) {
    auto &row = rows[cell / n_seeds];
    const auto &in = inputs[cell % n_seeds];
    auto hyper_config = config;
    hyper_config.hyper.k_op_ur = row.k_op_ur;
    hyper_config.hyper.k_op_rr = row.k_op_rr;
    const auto paths = seed_paths(config.out_dir, in.ctx.seed);
    auto run = [&in, &row](const UnlearnHyper &h) {
      const auto mask = grail_mask(in.ctx, h, {row.op_ur, row.op_rr});
      return grail_unlearn(in.ctx.vanilla, in.ctx.corpus, mask.frozen, h, "grail");
    };
    auto out = run_paths(config.out_dir / "ablate", row.cell, in.ctx.seed);
    row.reports[cell % n_seeds] = run_cell(hyper_config, in, row.cell, run, out,
                                           method_inputs(paths, "grail_no_both"), opts);
  });

  const auto hash = config_hash(config);
  std::vector<fs::path> evals;
  for (const auto &row : rows) {
    for (auto seed : config.seeds) {
      evals.push_back(run_paths(config.out_dir / "ablate", row.cell, seed).eval);
    }
  }
  if (config.ablate_components) {
    emit(config.out_dir, config.out_dir / "ablate_components.csv", ablate_components_csv(rows),
         "ablate", hash, 0, evals);
  }
  emit(config.out_dir, config.out_dir / "ablate_k_sweep.csv", ablate_k_sweep_csv(rows), "ablate",
       hash, 0, evals);
  json cells = json::array();
  for (const auto &row : rows) {
    cells.push_back({{"cell", row.cell},
                     {"sweep", row.sweep},
                     {"op_ur", row.op_ur},
                     {"op_rr", row.op_rr},
                     {"k_op_ur", row.k_op_ur},
                     {"k_op_rr", row.k_op_rr},
                     {"n_seeds", row.reports.size()},
                     {"metrics", stats_json(pointers(row.reports))}});
  }
  const json doc = {{"format", "grail-ablation"},
                    {"version", 1},
                    {"config_hash", to_hex(hash)},
                    {"stddev", "sample (n-1)"},
                    {"cells", cells}};
  emit(config.out_dir, config.out_dir / "ablate.json", doc.dump(2) + "\n", "ablate", hash, 0,
       evals);
  log(opts, "wrote " + (config.out_dir / "ablate_k_sweep.csv").string());
  return rows;
}

std::string ablate_components_csv(const std::vector<AblationRow> &rows) {
  std::string out = "cell,op_ur,op_rr,k_op_ur,k_op_rr,n_seeds";
  for (const auto &[name, v] : report_metrics(EvalReport{})) {
    out += "," + name + "_mean," + name + "_std";
  }
  out += "\n";
  for (const auto &row : rows) {
    if (row.sweep != "components") continue;
    out += row.cell + "," + (row.op_ur ? "1" : "0") + "," + (row.op_rr ? "1" : "0") + "," +
           k_label(row.k_op_ur) + "," + k_label(row.k_op_rr) + "," +
           std::to_string(row.reports.size());
    for (const auto &[name, stat] : aggregate_metrics(pointers(row.reports))) {
      out += "," + num(stat.mean) + "," + num(stat.stddev);
    }
    out += "\n";
  }
  return out;
}

std::string ablate_k_sweep_csv(const std::vector<AblationRow> &rows) {
  std::string out = "sweep,k_op_ur,k_op_rr,domain,n_seeds,US_mean,US_std,RS_mean,RS_std,Avg\n";
  for (const auto &row : rows) {
    if (row.sweep == "components") continue;
    for (const bool privacy : {true, false}) {
      std::vector<double> us;
      std::vector<double> rs;
      for (const auto &r : row.reports) {
        const auto &d = privacy ? r.privacy : r.copyright;
        us.push_back(d.us);
        rs.push_back(d.rs);
      }
      const auto u = mean_std(us);
      const auto s = mean_std(rs);
      out += row.sweep + "," + k_label(row.k_op_ur) + "," + k_label(row.k_op_rr) + "," +
             (privacy ? "privacy" : "copyright") + "," + std::to_string(row.reports.size()) + "," +
             num(u.mean) + "," + num(u.stddev) + "," + num(s.mean) + "," + num(s.stddev) + "," +
             num((u.mean + s.mean) / 2.0) + "\n";
    }
  }
  return out;
}

}  // namespace grail
