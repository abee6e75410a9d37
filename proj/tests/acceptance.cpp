// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Runs at the default experiment scale.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "grail/experiment.hpp"
#include "oracles.hpp"

using namespace grail;

namespace {

int failures = 0;

void report(const std::string &name, bool ok, const std::string &detail, double secs) {
  std::printf("%s %s: %s (%.1fs)\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str(), secs);
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char *f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double secs() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

// Runs the criterion body, turning an exception into a failure line.
void criterion(const std::string &name, const std::function<std::pair<bool, std::string>()> &body) {
  Timer t;
  try {
    const auto [ok, detail] = body();
    report(name, ok, detail, t.secs());
  } catch (const std::exception &e) {
    report(name, false, std::string("exception: ") + e.what(), t.secs());
  }
}

struct Means {
  double us_pri = 0, us_cpy = 0, rs_pri = 0, rs_cpy = 0, hs_pri = 0, hs_cpy = 0;
};

Means means(const std::vector<EvalReport> &reports) {
  Means m;
  for (const auto &r : reports) {
    m.us_pri += r.privacy.us;
    m.us_cpy += r.copyright.us;
    m.rs_pri += r.privacy.rs;
    m.rs_cpy += r.copyright.rs;
    m.hs_pri += r.privacy.hs;
    m.hs_cpy += r.copyright.hs;
  }
  const double n = static_cast<double>(reports.size());
  for (double *v : {&m.us_pri, &m.us_cpy, &m.rs_pri, &m.rs_cpy, &m.hs_pri, &m.hs_cpy}) *v /= n;
  return m;
}

void print_means(const std::string &method, const Means &m) {
  std::printf("  %-14s US %6.2f/%6.2f  RS %6.2f/%6.2f  HS %6.2f/%6.2f\n", method.c_str(), m.us_pri,
              m.us_cpy, m.rs_pri, m.rs_cpy, m.hs_pri, m.hs_cpy);
}

ModelConfig fd_config() {
  ModelConfig c;
  c.vocab_size = 16;
  c.embed_dim = 6;
  c.hidden_dim = 6;
  c.num_blocks = 2;
  c.max_seq_len = 8;
  c.init_scale = 0.5;
  c.seed = 31;
  return c;
}

}  // namespace

int main() {
  Timer total;
  const auto config = default_config();

  criterion("hs-formula", [] {
    const double a = harmonic_success(90.72, 85.34);
    const double b = harmonic_success(98.75, 93.87);
    const double c = harmonic_success(94.40, 72.79);
    const bool ok = std::abs(a - 87.95) <= 0.01 && std::abs(b - 96.25) <= 0.01 &&
                    std::abs(c - 82.20) <= 0.01;
    return std::pair{ok, fmt("%.4f %.4f %.4f", a, b, c)};
  });

  criterion("gradient-exactness", [] {
    auto m = init_model(fd_config());
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (auto &layer : m.layers)
      if (layer.cols == 1)
        for (double &v : layer.values) v = u(rng);
    std::uniform_int_distribution<int> tok(0, 15), plen(1, 4), alen(1, 3);
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
      KnowledgeItem it;
      it.id = "fd" + std::to_string(i);
      for (int k = plen(rng); k > 0; --k) it.prompt.push_back(tok(rng));
      for (int k = alen(rng); k > 0; --k) it.answer.push_back(tok(rng));
      const auto g = item_grad(m, it.view());
      const auto fd = oracle::finite_difference_grad(m, it);
      for (std::size_t l = 0; l < fd.size(); ++l)
        for (std::size_t j = 0; j < fd[l].size(); ++j)
          worst = std::max(worst, std::abs(g.layers[l][j] - fd[l][j]) /
                                      std::max(1.0, std::abs(fd[l][j])));
    }
    return std::pair{worst <= 1e-4 && m.num_params() <= 2000,
                     fmt("%.0f params, worst relative error %.2e", double(m.num_params()), worst)};
  });

  criterion("frozen-bit-identity", [] {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> density(0.05, 0.95);
    std::size_t checked = 0, moved = 0;
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      const auto ctx = prepare_seed(smoke_config(), seed);
      for (int trial = 0; trial < 5; ++trial) {
        auto frozen = ParamMask::empty_like(ctx.vanilla);
        std::bernoulli_distribution coin(density(rng));
        for (std::size_t l = 0; l < frozen.num_layers(); ++l)
          for (std::size_t j = 0; j < frozen.layer_size(l); ++j) frozen.set(l, j, coin(rng));
        auto h = seeded(smoke_config(), seed).hyper;
        h.seed = rng();
        h.max_epochs = 20;
        const auto r = grail_unlearn(ctx.vanilla, ctx.corpus, frozen, h);
        for (std::size_t l = 0; l < frozen.num_layers(); ++l)
          for (std::size_t j = 0; j < frozen.layer_size(l); ++j)
            if (frozen.test(l, j)) {
              ++checked;
              if (std::memcmp(&r.model.layers[l].values[j], &ctx.vanilla.layers[l].values[j],
                              sizeof(double)) != 0)
                ++moved;
            }
      }
    }
    return std::pair{moved == 0 && checked > 0,
                     fmt("20 runs, %.0f frozen parameters checked, %.0f moved", double(checked),
                         double(moved))};
  });

  criterion("oracle-equivalence", [] {
    std::size_t mismatches = 0, cases = 0;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> coarse(0, 10);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> mags(500);
      for (double &v : mags) v = trial % 2 ? coarse(rng) / 10.0 : u(rng);
      GradientSummary s;
      s.layer_names = {"l0"};
      s.magnitudes = {mags};
      s.n_items = s.trials = 1;
      for (double k : {0.1, 5.0, 10.0, 20.0, 50.0, 100.0}) {
        ++cases;
        if (topk(s, k).indices[0] != oracle::topk_by_full_sort(mags, topk_count(k, mags.size())))
          ++mismatches;
      }
    }
    const std::vector<std::size_t> sizes = {60, 9, 1, 200};
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<IndexSet> sets;
      for (auto tag : kCoreTags) {
        IndexSet s;
        s.tag = tag;
        s.layer_sizes = sizes;
        for (auto n : sizes) {
          std::bernoulli_distribution coin(u(rng));
          std::vector<std::size_t> idx;
          for (std::size_t j = 0; j < n; ++j)
            if (coin(rng)) idx.push_back(j);
          s.indices.push_back(idx);
        }
        sets.push_back(s);
      }
      const auto ur = build_op_ur(sets[0], sets[2], sets[1], sets[3]);
      const auto rr = build_op_rr(sets[1], sets[3]);
      for (std::size_t l = 0; l < sizes.size(); ++l) {
        cases += 2;
        if (ur.indices(l) != oracle::naive_op_ur(sizes[l], sets[0].indices[l], sets[2].indices[l],
                                                 sets[1].indices[l], sets[3].indices[l]))
          ++mismatches;
        if (rr.indices(l) !=
            oracle::naive_intersection(sizes[l], sets[1].indices[l], sets[3].indices[l]))
          ++mismatches;
      }
    }
    std::uniform_int_distribution<int> len(1, 12), tok(0, 4);
    for (int i = 0; i < 2000; ++i) {
      TokenSeq a(len(rng)), b(len(rng));
      for (auto &t : a) t = tok(rng);
      for (auto &t : b) t = tok(rng);
      ++cases;
      if (rouge_l(a, b) != oracle::brute_force_rouge_l(a, b)) ++mismatches;
    }
    const auto ctx = prepare_seed(smoke_config(), 2);
    for (auto tag : kCoreTags)
      for (int trials : {1, 3}) {
        ++cases;
        const auto &data = dataset_for(ctx.corpus, tag);
        if (probe_dataset(ctx.vanilla, data, tag, trials, 17).magnitudes !=
            oracle::brute_force_probe(ctx.vanilla, data, trials, 17))
          ++mismatches;
      }
    return std::pair{mismatches == 0,
                     fmt("%.0f cases, %.0f mismatches", double(cases), double(mismatches))};
  });

  // Default-scale seeds shared by the remaining criteria.
  std::vector<SeedContext> contexts;
  {
    Timer t;
    for (auto seed : config.seeds) contexts.push_back(prepare_seed(config, seed));
    std::printf("  trained %zu default-scale seeds (%.1fs)\n", contexts.size(), t.secs());
  }

  criterion("reduction", [&] {
    const auto &ctx = contexts.front();
    const auto h = seeded(config, ctx.seed).hyper;
    const auto a = grail_unlearn(ctx.vanilla, ctx.corpus, ParamMask::empty_like(ctx.vanilla), h);
    const auto b = ga_gd(ctx.vanilla, ctx.corpus, RetainSource::in_distribution, h);
    const bool same = serialize_checkpoint(a.model) == serialize_checkpoint(b.model);
    return std::pair{same, std::string(same ? "checkpoints byte-identical"
                                            : "checkpoints differ")};
  });

  criterion("vanilla-gate", [&] {
    bool ok = true;
    double worst_ppl = 0, worst_rouge = 100, worst_us = 0, worst_rs = 100;
    for (const auto &ctx : contexts) {
      const auto r = full_report(ctx.vanilla, ctx.corpus, "vanilla", ctx.seed);
      for (const auto *d : {&r.privacy, &r.copyright}) {
        worst_us = std::max(worst_us, d->us);
        worst_rs = std::min(worst_rs, d->rs);
        worst_ppl = std::max({worst_ppl, d->ppl_unlearn, d->ppl_retain});
        worst_rouge = std::min({worst_rouge, d->rouge_unlearn, d->rouge_retain});
      }
    }
    ok = worst_us == 0.0 && worst_rs == 100.0 && worst_ppl <= 1.05 && worst_rouge == 100.0;
    return std::pair{ok, fmt("worst over seeds: US %.2f RS %.2f PPL %.4f ROUGE-L %.2f", worst_us,
                             worst_rs, worst_ppl, worst_rouge)};
  });

  std::map<std::string, Means> table;
  auto run_all = [&](const std::vector<std::string> &methods) {
    for (const auto &m : methods) {
      if (table.contains(m)) continue;
      std::vector<EvalReport> reports;
      for (const auto &ctx : contexts) {
        const auto r = run_method(ctx, m, seeded(config, ctx.seed).hyper);
        reports.push_back(full_report(r.model, ctx.corpus, m, ctx.seed));
      }
      table[m] = means(reports);
      print_means(m, table[m]);
    }
  };

  criterion("table1-ordering", [&] {
    run_all({"grail", "layerwise", "ga_gd_id", "ga", "ga_gd_ood"});
    const auto &g = table["grail"], &l = table["layerwise"], &id = table["ga_gd_id"],
               &ga = table["ga"], &ood = table["ga_gd_ood"];
    const bool pri = g.hs_pri > l.hs_pri && l.hs_pri > id.hs_pri && id.hs_pri > ga.hs_pri;
    const bool cpy = g.hs_cpy > l.hs_cpy && l.hs_cpy > id.hs_cpy && id.hs_cpy > ga.hs_cpy;
    const bool ga_rs = ga.rs_pri < 20 && ga.rs_cpy < 20;
    const bool ood_rs = ood.rs_pri < 20 && ood.rs_cpy < 20;
    return std::pair{pri && cpy && ga_rs && ood_rs,
                     std::string("HS order pri ") + (pri ? "ok" : "broken") + ", cpy " +
                         (cpy ? "ok" : "broken") + fmt(", GA RS %.2f/%.2f, GD-OOD RS %.2f/%.2f",
                                                       ga.rs_pri, ga.rs_cpy, ood.rs_pri,
                                                       ood.rs_cpy)};
  });

  criterion("table3-sequential", [&] {
    run_all({"grail", "seq_p2c", "seq_c2p", "combined"});
    const auto &g = table["grail"], &p2c = table["seq_p2c"], &c2p = table["seq_c2p"],
               &comb = table["combined"];
    // each order damages the domain it unlearned first
    const bool a = p2c.rs_pri < g.rs_pri;
    const bool b = c2p.rs_cpy < g.rs_cpy;
    const bool c = comb.rs_pri < g.rs_pri;
    return std::pair{a && b && c,
                     fmt("RS_pri p2c %.2f vs %.2f; RS_cpy c2p %.2f vs %.2f", p2c.rs_pri, g.rs_pri,
                         c2p.rs_cpy, g.rs_cpy) +
                         fmt("; RS_pri combined %.2f", comb.rs_pri)};
  });

  criterion("table5-ablation", [&] {
    run_all({"grail", "grail_no_oprr", "grail_no_both"});
    const auto &g = table["grail"], &nr = table["grail_no_oprr"], &nb = table["grail_no_both"];
    const bool a = nr.rs_pri < g.rs_pri || nr.rs_cpy < g.rs_cpy;
    const bool b = nb.rs_pri < g.rs_pri && nb.rs_cpy < g.rs_cpy;
    return std::pair{a && b, fmt("no_oprr RS %.2f/%.2f, no_both RS %.2f/%.2f", nr.rs_pri,
                                 nr.rs_cpy, nb.rs_pri, nb.rs_cpy) +
                                 fmt(", grail RS %.2f/%.2f", g.rs_pri, g.rs_cpy)};
  });

  criterion("jaccard-entanglement", [&] {
    auto gap = [&](double rho, double &within, double &cross) {
      auto c = config;
      c.corpus.rho = rho;
      within = cross = 0;
      for (auto seed : c.seeds) {
        const auto ctx = prepare_seed(c, seed);
        const auto jm = jaccard_matrix(ctx.summaries, 10.0);
        within += 0.5 * (jm.at(DatasetTag::unlearn_privacy, DatasetTag::retain_privacy) +
                         jm.at(DatasetTag::unlearn_copyright, DatasetTag::retain_copyright));
        cross += jm.cross_domain_mean();
      }
      within /= static_cast<double>(c.seeds.size());
      cross /= static_cast<double>(c.seeds.size());
    };
    double w7, c7, w0, c0;
    gap(0.7, w7, c7);
    gap(0.0, w0, c0);
    const bool ok = w7 > c7 && (w0 / c0) > (w7 / c7);
    return std::pair{ok, fmt("rho 0.7 within %.3f cross %.3f; ", w7, c7) +
                             fmt("rho 0 within %.3f cross %.3f", w0, c0)};
  });

  std::printf("%s: %d criteria failed (%.1fs)\n", failures ? "FAIL" : "PASS", failures,
              total.secs());
  return failures ? 1 : 0;
}
