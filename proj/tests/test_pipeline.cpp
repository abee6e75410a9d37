#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "grail/pipeline.hpp"
#include "grail/util.hpp"

using namespace grail;

namespace {

fs::path fresh_dir(const std::string &name) {
  const auto dir = fs::temp_directory_path() / ("grail_test_" + name);
  fs::remove_all(dir);
  return dir;
}

ExperimentConfig smoke_in(const fs::path &dir) {
  auto c = smoke_config();
  c.out_dir = dir;
  return c;
}

PipelineOptions quiet() {
  PipelineOptions o;
  o.quiet = true;
  return o;
}

int run_cli(const std::string &args) {
  const std::string cmd = std::string(GRAIL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config text round trip and overrides") {
  const auto base = default_config();
  const auto text = config_to_text(base);
  const auto back = parse_config(text);
  CHECK(config_to_text(back) == text);
  CHECK(config_hash(back) == config_hash(base));

  const auto c = parse_config("[unlearn]\neta = 0.02\n[experiment]\nseeds = 3, 4\nmethods = ga\n");
  CHECK(c.hyper.eta == 0.02);
  CHECK(c.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(c.methods == std::vector<std::string>{"ga"});
  CHECK(config_hash(c) != config_hash(base));
  CHECK(config_hash(c, {"corpus."}) == config_hash(base, {"corpus."}));

  CHECK_THROWS_AS(parse_config("[unlearn]\nbogus = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config("[unlearn]\neta = fast\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config("eta = 1\n"), std::invalid_argument);
  auto bad = base;
  bad.methods = {"grail", "nope"};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = base;
  bad.seeds = {1, 1};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = base;
  apply_override(bad, "unlearn.k_op_ur", "0");
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("seeded configs differ per seed only in seeds") {
  const auto a = seeded(default_config(), 1);
  const auto b = seeded(default_config(), 2);
  CHECK(a.corpus.seed != b.corpus.seed);
  CHECK(a.model.seed != b.model.seed);
  CHECK(a.train.shuffle_seed != b.train.shuffle_seed);
  CHECK(a.model.vocab_size == a.corpus.vocab_size);
}

TEST_CASE("stage-by-stage smoke pipeline") {
  const auto dir = fresh_dir("stages");
  const auto c = smoke_in(dir);
  const auto started = std::chrono::steady_clock::now();

  CHECK_THROWS_WITH_AS(cmd_train(c, quiet()), doctest::Contains("grail gen-corpus"), ChainError);
  cmd_gen_corpus(c, quiet());
  CHECK_THROWS_WITH_AS(cmd_probe(c, quiet()), doctest::Contains("grail train"), ChainError);
  cmd_train(c, quiet());
  CHECK_THROWS_WITH_AS(cmd_localize(c, quiet()), doctest::Contains("grail probe"), ChainError);
  cmd_probe(c, quiet());
  CHECK_THROWS_WITH_AS(cmd_unlearn(c, quiet()), doctest::Contains("grail localize"), ChainError);
  cmd_localize(c, quiet());
  CHECK_THROWS_WITH_AS(cmd_eval(c, quiet()), doctest::Contains("grail unlearn"), ChainError);
  cmd_unlearn(c, quiet());
  const auto reports = cmd_eval(c, quiet());
  CHECK(reports.size() == c.methods.size());
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  CHECK(secs < 60.0);

  const auto run = run_paths(dir, "grail", 1);
  for (const auto &p : {run.checkpoint, run.run, run.curve, run.eval}) {
    CHECK(fs::exists(p));
    CHECK(fs::exists(provenance_path(p)));
  }
  CHECK_NOTHROW(verify_chain(dir, run.eval));
  const auto prov = provenance_from_json(read_file(provenance_path(run.checkpoint)));
  CHECK(prov.seed == 1);
  CHECK(prov.upstream.contains("seed1/mask.json"));
  CHECK(prov.upstream.contains("seed1/vanilla.ckpt"));

  SUBCASE("eval is byte-stable") {
    const auto before = read_file(run.eval);
    cmd_eval(c, quiet());
    CHECK(read_file(run.eval) == before);
  }
  SUBCASE("idempotent upstream stages") {
    const auto corpus = read_file(seed_paths(dir, 1).corpus);
    const auto ckpt = read_file(seed_paths(dir, 1).vanilla);
    const auto mask = read_file(seed_paths(dir, 1).mask);
    cmd_gen_corpus(c, quiet());
    cmd_train(c, quiet());
    cmd_probe(c, quiet());
    cmd_localize(c, quiet());
    CHECK(read_file(seed_paths(dir, 1).corpus) == corpus);
    CHECK(read_file(seed_paths(dir, 1).vanilla) == ckpt);
    CHECK(read_file(seed_paths(dir, 1).mask) == mask);
    CHECK_NOTHROW(verify_chain(dir, run.eval));
  }
  SUBCASE("a modified artifact breaks the chain") {
    auto bytes = read_file(seed_paths(dir, 1).vanilla);
    bytes[bytes.size() / 2] ^= 1;
    write_file(seed_paths(dir, 1).vanilla, bytes);
    CHECK_THROWS_AS(verify_chain(dir, run.eval), ChainError);
    CHECK_THROWS_AS(cmd_probe(c, quiet()), ChainError);
  }
  SUBCASE("a regenerated upstream breaks the chain") {
    auto c2 = c;
    c2.corpus.rho = 0.0;
    cmd_gen_corpus(c2, quiet());
    CHECK_THROWS_WITH_AS(verify_chain(dir, run.eval), doctest::Contains("chain break"),
                         ChainError);
  }
  SUBCASE("a config change is refused unless allowed") {
    auto c2 = c;
    c2.train.eta = 0.04;
    CHECK_THROWS_WITH_AS(cmd_probe(c2, quiet()), doctest::Contains("--allow-mismatch"),
                         ChainError);
    auto opts = quiet();
    opts.allow_mismatch = true;
    CHECK_NOTHROW(cmd_probe(c2, opts));
  }
}

TEST_CASE("bench and ablate on the smoke corpus") {
  const auto dir = fresh_dir("bench");
  auto c = smoke_in(dir);
  c.seeds = {1, 2};
  c.jobs = 3;
  c.methods = {"grail", "ga"};
  const auto reports = cmd_bench(c, quiet());
  CHECK(reports.size() == 4);
  const auto csv = read_file(dir / "bench.csv");
  CHECK(csv.rfind("method,n_seeds,US_pri_mean,US_pri_std,", 0) == 0);
  CHECK(csv.find("\ngrail,2,") != std::string::npos);
  CHECK(csv.find("\nga,2,") != std::string::npos);
  CHECK(fs::exists(dir / "bench.json"));
  CHECK(read_file(dir / "jaccard.csv").rfind("tag_a,tag_b,layer,value\n", 0) == 0);
  CHECK_NOTHROW(verify_chain(dir, dir / "bench.csv"));

  // the same matrix serially gives the same per-cell checkpoints
  auto serial = c;
  serial.jobs = 1;
  serial.out_dir = fresh_dir("bench_serial");
  cmd_bench(serial, quiet());
  for (const auto &m : c.methods)
    for (auto s : c.seeds)
      CHECK(read_file(run_paths(dir, m, s).checkpoint) ==
            read_file(run_paths(serial.out_dir, m, s).checkpoint));

  c.ablate_k_op_ur = {5, 10};
  c.ablate_k_op_rr = {20, 30};
  const auto rows = cmd_ablate(c, quiet());
  CHECK(rows.size() == 8);
  const auto comp = read_file(dir / "ablate_components.csv");
  for (const char *cell : {"\ngrail,1,1,", "\nno_opur,0,1,", "\nno_oprr,1,0,", "\nno_both,0,0,"})
    CHECK(comp.find(cell) != std::string::npos);
  const auto sweep = read_file(dir / "ablate_k_sweep.csv");
  CHECK(sweep.rfind("sweep,k_op_ur,k_op_rr,domain,n_seeds,US_mean,US_std,RS_mean,RS_std,Avg\n", 0) ==
        0);
  CHECK(std::count(sweep.begin(), sweep.end(), '\n') == 1 + 4 * 2);
  CHECK(sweep.find("\nk_op_ur,5,20,privacy,2,") != std::string::npos);
  CHECK(sweep.find("\nk_op_rr,10,30,copyright,2,") != std::string::npos);
}

TEST_CASE("cli exit codes") {
  const auto dir = fresh_dir("cli");
  const std::string out = " --smoke -q --out " + dir.string();
  CHECK(run_cli("") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("--jobs 0 train") == 1);
  CHECK(run_cli(out + " --set unlearn.eta=-1 gen-corpus") == 2);
  CHECK(run_cli(out + " --set nope.key=1 gen-corpus") == 2);
  CHECK(run_cli(out + " --config /nonexistent/x.ini gen-corpus") == 2);
  CHECK(run_cli(out + " train") == 2);  // no corpus yet
  CHECK(run_cli(out + " gen-corpus") == 0);
  CHECK(run_cli(out + " --seed 1 train") == 0);

  std::ofstream(dir / "bad.ckpt") << "garbage";
  CHECK(run_cli(out + " --seed 1 eval --checkpoint " + (dir / "bad.ckpt").string()) == 3);
  CHECK(run_cli(out + " --seed 1 eval --checkpoint " + (dir / "seed1" / "vanilla.ckpt").string() +
                " --report " + (dir / "vanilla_eval.json").string()) == 0);
  const auto rep = report_from_json(read_file(dir / "vanilla_eval.json"));
  CHECK(rep.method == "vanilla");
  CHECK(rep.privacy.rs == 100.0);

  std::ofstream(dir / "cfg.ini") << "[unlearn]\neta = 0.5\n";
  CHECK(run_cli("--config " + (dir / "cfg.ini").string() + " --print-config") == 1);
  CHECK(run_cli("--config " + (dir / "cfg.ini").string() + " --print-config gen-corpus") == 0);
}
