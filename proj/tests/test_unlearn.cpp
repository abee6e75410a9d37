#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "grail/experiment.hpp"
#include "grail/unlearn.hpp"

using namespace grail;

namespace {

// One trained smoke-scale seed shared by every case in this file.
const SeedContext &smoke() {
  static const SeedContext ctx = prepare_seed(smoke_config(), 1);
  return ctx;
}

UnlearnHyper hyper(int epochs = 15) {
  auto h = seeded(smoke_config(), 1).hyper;
  h.max_epochs = epochs;
  return h;
}

bool layer_equal(const ModelState &a, const ModelState &b, std::size_t l) {
  return a.layers[l].values == b.layers[l].values;
}

bool all_finite(const ModelState &m) {
  for (const auto &layer : m.layers)
    for (double v : layer.values)
      if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

TEST_CASE("the smoke vanilla model is converged") {
  const auto &ctx = smoke();
  CHECK(ctx.vanilla_accuracy == 1.0);
  CHECK(unlearning_success(ctx.vanilla, ctx.corpus.unlearn_privacy) == 0.0);
  CHECK(retention_success(ctx.vanilla, ctx.corpus.retain_copyright) == 100.0);
}

TEST_CASE("grail never moves a frozen parameter") {
  const auto &ctx = smoke();
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    auto frozen = ParamMask::empty_like(ctx.vanilla);
    std::bernoulli_distribution coin(0.3);
    for (std::size_t l = 0; l < frozen.num_layers(); ++l)
      for (std::size_t j = 0; j < frozen.layer_size(l); ++j) frozen.set(l, j, coin(rng));
    auto h = hyper(8);
    h.seed = rng();
    const auto r = grail_unlearn(ctx.vanilla, ctx.corpus, frozen, h);
    for (std::size_t l = 0; l < frozen.num_layers(); ++l)
      for (std::size_t j = 0; j < frozen.layer_size(l); ++j)
        if (frozen.test(l, j))
          CHECK(std::memcmp(&r.model.layers[l].values[j], &ctx.vanilla.layers[l].values[j],
                            sizeof(double)) == 0);
    CHECK(r.record.updates > 0);
  }
}

TEST_CASE("grail with an empty mask is ga_gd on in-distribution retain data") {
  const auto &ctx = smoke();
  const auto h = hyper(20);
  const auto a = grail_unlearn(ctx.vanilla, ctx.corpus, ParamMask::empty_like(ctx.vanilla), h);
  const auto b = ga_gd(ctx.vanilla, ctx.corpus, RetainSource::in_distribution, h);
  CHECK(serialize_checkpoint(a.model) == serialize_checkpoint(b.model));
  CHECK(a.record.epochs == b.record.epochs);
}

TEST_CASE("every method is deterministic and keeps parameters finite") {
  const auto &ctx = smoke();
  for (const auto &method : known_methods()) {
    CAPTURE(method);
    const auto a = run_method(ctx, method, hyper(6));
    const auto b = run_method(ctx, method, hyper(6));
    CHECK(serialize_checkpoint(a.model) == serialize_checkpoint(b.model));
    CHECK(a.record.same_outcome(b.record));
    CHECK(all_finite(a.model));
    CHECK(a.record.epochs.size() <= (method.rfind("seq_", 0) == 0 ? 12u : 6u));
  }
}

TEST_CASE("zero epochs leaves the model unchanged") {
  const auto &ctx = smoke();
  const auto r = ga_unlearn(ctx.vanilla, ctx.corpus, hyper(0));
  CHECK(r.model.same_params(ctx.vanilla));
  CHECK(r.record.epochs.empty());
  CHECK(r.record.stop == StopReason::max_epochs);
}

TEST_CASE("ga forgets and collapses retention") {
  const auto &ctx = smoke();
  auto h = hyper(200);
  const auto r = ga_unlearn(ctx.vanilla, ctx.corpus, h);
  const auto &last = r.record.epochs.back();
  CHECK(last.us_pri >= 90.0);
  CHECK(last.us_cpy >= 90.0);
  CHECK(r.record.stop == StopReason::converged);
}

TEST_CASE("random-label fine-tuning") {
  const auto &ctx = smoke();
  const auto r = random_label_finetune(ctx.vanilla, ctx.corpus, hyper(100));
  const auto rep = full_report(r.model, ctx.corpus, "random_label");
  CHECK(rep.privacy.us > 50.0);
  CHECK(rep.general_accuracy <= full_report(ctx.vanilla, ctx.corpus, "vanilla").general_accuracy);
}

TEST_CASE("empty unlearn splits reduce grail to masked descent") {
  const auto &ctx = smoke();
  auto corpus = ctx.corpus;
  const auto forget_pri = corpus.unlearn_privacy;
  corpus.unlearn_privacy.clear();
  corpus.unlearn_copyright.clear();
  const auto r = grail_unlearn(ctx.vanilla, corpus, ParamMask::empty_like(ctx.vanilla), hyper(5));
  CHECK(r.record.stop == StopReason::max_epochs);
  CHECK(unlearning_success(r.model, forget_pri) == 0.0);
  CHECK(retention_success(r.model, corpus.retain_privacy) == 100.0);
}

TEST_CASE("non-finite updates abort with the last good epoch") {
  const auto &ctx = smoke();
  auto h = hyper(5);
  h.eta = 1e300;
  const auto r = ga_unlearn(ctx.vanilla, ctx.corpus, h);
  CHECK(r.record.stop == StopReason::aborted);
  CHECK(all_finite(r.model));
  CHECK(r.model.same_params(ctx.vanilla));
  CHECK(r.record.note.find("non-finite") != std::string::npos);
}

TEST_CASE("layerwise only touches the selected layers") {
  const auto &ctx = smoke();
  const auto selected = select_layers(ctx.summaries);
  CHECK(!selected.empty());
  CHECK(selected.size() < ctx.vanilla.layers.size());
  const auto r = layerwise_unlearn(ctx.vanilla, ctx.corpus, ctx.summaries, hyper(10));
  CHECK(r.record.updated_layers.size() == selected.size());
  for (std::size_t l = 0; l < ctx.vanilla.layers.size(); ++l) {
    const bool chosen = std::find(selected.begin(), selected.end(), l) != selected.end();
    if (!chosen) CHECK(layer_equal(r.model, ctx.vanilla, l));
  }
}

TEST_CASE("sequential phases run in order") {
  const auto &ctx = smoke();
  const auto r = sequential_unlearn(ctx.vanilla, ctx.corpus,
                                    SequentialOrder::privacy_then_copyright, hyper(30));
  int prev_phase = 0;
  for (const auto &e : r.record.epochs) {
    CHECK(e.phase >= prev_phase);
    prev_phase = e.phase;
  }
  // the first phase ends once privacy alone meets the target
  for (std::size_t i = 0; i + 1 < r.record.epochs.size(); ++i) {
    if (r.record.epochs[i].phase == 0 && r.record.epochs[i + 1].phase == 1)
      CHECK(r.record.epochs[i].us_pri >= 90.0);
  }
  CHECK(r.record.method == "seq_p2c");
  const auto c = sequential_unlearn(ctx.vanilla, ctx.corpus, SequentialOrder::combined, hyper(30));
  const auto g = ga_gd(ctx.vanilla, ctx.corpus, RetainSource::in_distribution, hyper(30));
  CHECK(serialize_checkpoint(c.model) == serialize_checkpoint(g.model));
}

TEST_CASE("run record serialization") {
  const auto &ctx = smoke();
  const auto r = grail_unlearn(ctx.vanilla, ctx.corpus, ParamMask::empty_like(ctx.vanilla), hyper(3));
  const auto csv = run_record_curve_csv(r.record);
  CHECK(csv.rfind("epoch,phase,US_pri,RS_pri,US_cpy,RS_cpy\n", 0) == 0);
  CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) ==
        r.record.epochs.size() + 1);
  const auto js = run_record_to_json(r.record);
  CHECK(js.find("\"epochs_executed\": " + std::to_string(r.record.epochs.size())) !=
        std::string::npos);
}

TEST_CASE("hyper validation") {
  UnlearnHyper h;
  CHECK(h.k_op_ur == 10.0);
  CHECK(h.k_op_rr == 20.0);
  h.eta = 0.0;
  CHECK_THROWS_AS(h.validate(), std::invalid_argument);
  h = UnlearnHyper{};
  h.us_target = 120;
  CHECK_THROWS_AS(h.validate(), std::invalid_argument);
}
