#include <doctest.h>

#include <filesystem>
#include <random>

#include "grail/localizer.hpp"
#include "oracles.hpp"

using namespace grail;

namespace {

GradientSummary summary_of(DatasetTag tag, std::vector<std::vector<double>> mags,
                           std::uint64_t fp = 1) {
  GradientSummary s;
  s.tag = tag;
  for (std::size_t l = 0; l < mags.size(); ++l) s.layer_names.push_back("l" + std::to_string(l));
  s.magnitudes = std::move(mags);
  s.n_items = 1;
  s.trials = 1;
  s.model_fingerprint = fp;
  return s;
}

IndexSet set_of(DatasetTag tag, std::vector<std::vector<std::size_t>> idx,
                std::vector<std::size_t> sizes, double k = 10.0) {
  IndexSet s;
  s.tag = tag;
  s.k_percent = k;
  s.model_fingerprint = 1;
  s.layer_sizes = std::move(sizes);
  s.indices = std::move(idx);
  return s;
}

std::vector<std::size_t> random_subset(std::mt19937_64 &rng, std::size_t n, std::size_t m) {
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(m);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

TEST_CASE("topk_count rounding") {
  CHECK(topk_count(10, 1000) == 100);
  CHECK(topk_count(10, 5) == 1);   // 0.5 rounds up
  CHECK(topk_count(10, 4) == 1);   // floor of one
  CHECK(topk_count(10, 15) == 2);  // 1.5 rounds up
  CHECK(topk_count(10, 14) == 1);
  CHECK(topk_count(100, 7) == 7);
  CHECK_THROWS_AS(topk_count(0, 10), std::invalid_argument);
  CHECK_THROWS_AS(topk_count(100.5, 10), std::invalid_argument);
  CHECK_THROWS_AS(topk_count(-3, 10), std::invalid_argument);
}

TEST_CASE("topk examples") {
  const auto s = summary_of(DatasetTag::unlearn_privacy, {{0.1, 0.9, 0.5, 0.9, 0.0}});
  CHECK(topk(s, 40).indices[0] == std::vector<std::size_t>{1, 3});
  const auto t = summary_of(DatasetTag::unlearn_privacy, {{0.9, 0.9, 0.1}});
  CHECK(topk(t, 10).indices[0] == std::vector<std::size_t>{0});
}

TEST_CASE("topk equals the full-sort oracle") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> coarse(0, 20);
  std::vector<std::vector<double>> mags(10, std::vector<double>(1000));
  for (std::size_t l = 0; l < mags.size(); ++l)
    for (double &v : mags[l]) v = (l % 2 == 0) ? u(rng) : coarse(rng) / 20.0;  // odd layers tie a lot
  const auto s = summary_of(DatasetTag::retain_copyright, mags);
  for (double k : {0.05, 1.0, 10.0, 33.3, 100.0}) {
    const auto set = topk(s, k);
    for (std::size_t l = 0; l < mags.size(); ++l) {
      CHECK(set.indices[l] == oracle::topk_by_full_sort(mags[l], topk_count(k, 1000)));
    }
  }
}

TEST_CASE("topk of |g| and g^2 coincide") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  std::vector<double> abs_g(200);
  for (double &v : abs_g) v = u(rng);
  std::vector<double> sq(abs_g);
  for (double &v : sq) v *= v;
  for (double k : {5.0, 10.0, 20.0}) {
    CHECK(topk(summary_of(DatasetTag::unlearn_privacy, {abs_g}), k).indices ==
          topk(summary_of(DatasetTag::unlearn_privacy, {sq}), k).indices);
  }
}

TEST_CASE("overlap mask examples") {
  const std::vector<std::size_t> sizes = {10};
  const auto e = set_of(DatasetTag::unlearn_privacy, {{}}, sizes);
  SUBCASE("disjoint unlearn and retain sets give an empty OP-UR") {
    auto up = set_of(DatasetTag::unlearn_privacy, {{1, 2}}, sizes);
    auto uc = set_of(DatasetTag::unlearn_copyright, {{3}}, sizes);
    auto rp = set_of(DatasetTag::retain_privacy, {{4, 5}}, sizes);
    auto rc = set_of(DatasetTag::retain_copyright, {{6}}, sizes);
    CHECK(build_op_ur(up, uc, rp, rc).count() == 0);
  }
  SUBCASE("T_U^pri = T_R^cpy = {5}") {
    auto up = set_of(DatasetTag::unlearn_privacy, {{5}}, sizes);
    auto rc = set_of(DatasetTag::retain_copyright, {{5}}, sizes);
    CHECK(build_op_ur(up, e, e, rc).indices(0) == std::vector<std::size_t>{5});
  }
  SUBCASE("OP-RR") {
    auto a = set_of(DatasetTag::retain_privacy, {{1, 4, 7}}, sizes, 20);
    auto b = set_of(DatasetTag::retain_copyright, {{1, 4, 7}}, sizes, 20);
    auto c = set_of(DatasetTag::retain_copyright, {{2, 3}}, sizes, 20);
    CHECK(build_op_rr(a, b).indices(0) == std::vector<std::size_t>{1, 4, 7});
    CHECK(build_op_rr(a, c).count() == 0);
  }
  SUBCASE("mismatches are rejected") {
    auto a = set_of(DatasetTag::retain_privacy, {{1}}, sizes, 20);
    auto b = set_of(DatasetTag::retain_copyright, {{1}}, sizes, 10);
    CHECK_THROWS_AS(build_op_rr(a, b), std::invalid_argument);
    b.k_percent = 20;
    b.model_fingerprint = 2;
    CHECK_THROWS_AS(build_op_rr(a, b), std::invalid_argument);
    b.model_fingerprint = 1;
    b.layer_sizes = {11};
    CHECK_THROWS_AS(build_op_rr(a, b), std::invalid_argument);
  }
}

TEST_CASE("overlap masks equal the naive set-algebra oracle") {
  std::mt19937_64 rng(8);
  const std::vector<std::size_t> sizes = {40, 7, 120, 1};
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<IndexSet> sets;
    for (auto tag : kCoreTags) {
      std::vector<std::vector<std::size_t>> idx;
      for (auto n : sizes) {
        std::uniform_int_distribution<std::size_t> m(0, n);
        idx.push_back(random_subset(rng, n, m(rng)));
      }
      sets.push_back(set_of(tag, idx, sizes));
    }
    const auto ur = build_op_ur(sets[0], sets[2], sets[1], sets[3]);
    const auto rr = build_op_rr(sets[1], sets[3]);
    for (std::size_t l = 0; l < sizes.size(); ++l) {
      CHECK(ur.indices(l) == oracle::naive_op_ur(sizes[l], sets[0].indices[l], sets[2].indices[l],
                                                 sets[1].indices[l], sets[3].indices[l]));
      CHECK(rr.indices(l) ==
            oracle::naive_intersection(sizes[l], sets[1].indices[l], sets[3].indices[l]));
    }
  }
}

TEST_CASE("compose_frozen") {
  auto a = ParamMask::from_sizes({5, 3});
  auto b = ParamMask::from_sizes({5, 3});
  CHECK(compose_frozen(a, b).frozen.count() == 0);
  a.set(0, 1);
  b.set(0, 2);
  b.set(1, 0);
  a.set(1, 0);
  const auto f = compose_frozen(a, b);
  CHECK(f.frozen.indices(0) == std::vector<std::size_t>{1, 2});
  CHECK(f.frozen == (f.op_ur | f.op_rr));
  for (std::size_t l = 0; l < 2; ++l) CHECK(f.frozen.count(l) <= a.count(l) + b.count(l));
  CHECK_THROWS_AS(compose_frozen(a, ParamMask::from_sizes({5})), std::invalid_argument);
}

TEST_CASE("jaccard") {
  CHECK(jaccard({1, 2, 3}, {2, 3, 4}) == 0.5);
  CHECK(jaccard({1, 2}, {1, 2}) == 1.0);
  CHECK(jaccard({1}, {2}) == 0.0);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::array<GradientSummary, 4> sums;
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<std::vector<double>> mags = {std::vector<double>(50), std::vector<double>(9)};
    for (auto &layer : mags)
      for (double &v : layer) v = u(rng);
    sums[i] = summary_of(kCoreTags[i], mags);
  }
  const auto m = jaccard_matrix(sums, 10);
  for (std::size_t a = 0; a < 4; ++a) {
    CHECK(m.model_wise[a][a] == 1.0);
    for (std::size_t b = 0; b < 4; ++b) {
      CHECK(m.model_wise[a][b] == m.model_wise[b][a]);
      CHECK((m.model_wise[a][b] >= 0.0 && m.model_wise[a][b] <= 1.0));
      for (const auto &layer : m.per_layer) CHECK(layer[a][b] == layer[b][a]);
    }
  }
  // model-wise pools indices across layers
  const auto s0 = topk(sums[0], 10);
  const auto s1 = topk(sums[1], 10);
  std::size_t inter = 0, uni = 0;
  for (std::size_t l = 0; l < 2; ++l) {
    const auto i = oracle::naive_intersection(s0.layer_sizes[l], s0.indices[l], s1.indices[l]);
    inter += i.size();
    uni += s0.indices[l].size() + s1.indices[l].size() - i.size();
  }
  CHECK(m.at(DatasetTag::unlearn_privacy, DatasetTag::retain_privacy) ==
        static_cast<double>(inter) / static_cast<double>(uni));

  const auto csv = jaccard_to_csv(m);
  CHECK(csv.rfind("tag_a,tag_b,layer,value\n", 0) == 0);
  CHECK(csv.find("U-pri,R-pri,ALL,") != std::string::npos);
  CHECK(csv.find("U-cpy,R-cpy,l1,") != std::string::npos);

  sums[2].model_fingerprint = 9;
  CHECK_THROWS_AS(jaccard_matrix(sums, 10), std::invalid_argument);
}

TEST_CASE("mask persistence") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ModelConfig mc;
  mc.vocab_size = 10;
  mc.embed_dim = mc.hidden_dim = 3;
  mc.num_blocks = 1;
  mc.max_seq_len = 4;
  const auto model = init_model(mc);
  std::array<GradientSummary, 4> sums;
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<std::vector<double>> mags;
    for (const auto &layer : model.layers) {
      mags.emplace_back(layer.size());
      for (double &v : mags.back()) v = u(rng);
    }
    sums[i] = summary_of(kCoreTags[i], mags, fingerprint(model));
  }
  const auto mask = localize(sums, 10, 20);
  CHECK(mask.frozen == (mask.op_ur | mask.op_rr));
  CHECK(mask.model_fingerprint == fingerprint(model));

  const auto dir = std::filesystem::temp_directory_path() / "grail_test_mask";
  save_mask(mask, model, dir / "m.json");
  const auto back = load_mask(dir / "m.json", &model);
  CHECK(back.frozen == mask.frozen);
  CHECK(back.op_ur == mask.op_ur);
  CHECK(back.op_rr == mask.op_rr);
  CHECK(back.k_op_rr == 20.0);

  auto other_cfg = mc;
  other_cfg.seed = 99;
  const auto other = init_model(other_cfg);
  CHECK_THROWS_AS(load_mask(dir / "m.json", &other), std::runtime_error);
  CHECK_NOTHROW(load_mask(dir / "m.json", &other, true));
}
