#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "kgr/pipeline.hpp"

using namespace kgr;
namespace fs = std::filesystem;

namespace {

// a run configuration small enough that the whole pipeline takes ~a second
RunConfig micro_config(const std::string& out, std::uint64_t seed = 11) {
  RunConfig cfg = parse_run_config(
      "[synth]\nentities = 36\n"
      "[kge]\nepochs = 30\ndim_entity = 12\ndim_relation = 12\nbatch_size = 64\n"
      "[instances]\nk = 4\n"
      "[policy]\nlayers = 2\nwidth = 24\nemb_dim = 12\n"
      "[sft]\nepochs = 25\n"
      "[grpo]\niterations = 6\ngroup_size = 4\nbatch_instances = 4\n"
      "[probe]\nhidden = 6\nepochs = 40\nlayer = 1\n"
      "[eval]\ntop_n = 8\n"
      "[inductive]\nrhos = 0.2\n"
      "[sweep]\nk = 3\nn = 5\ntier = 1\n");
  cfg.out = out;
  cfg.seed = seed;
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "kgr_pipe_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spill(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

struct CliResult {
  int exit = -1;
  std::string output;  // stdout and stderr interleaved
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(KGRKIT_BIN) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult r;
  char buf[4096];
  while (std::size_t got = fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, got);
  const int status = pclose(pipe);
  r.exit = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace

TEST_CASE("fnv1a matches the published test vectors") {
  const auto dir = fresh_dir("fnv");
  spill(dir / "empty", "");
  spill(dir / "a", "a");
  spill(dir / "hello", "hello");
  CHECK(fnv1a_file((dir / "empty").string()) == 0xcbf29ce484222325ull);
  CHECK(fnv1a_file((dir / "a").string()) == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a_file((dir / "hello").string()) == 0xa430d84680aabd0bull);
  CHECK_THROWS(fnv1a_file((dir / "absent").string()));
}

TEST_CASE("stage list is dependency-ordered and complete") {
  const auto& names = Pipeline::stage_names();
  CHECK(names.size() == 15);
  for (std::size_t i = 0; i < names.size(); ++i) {
    for (const auto& dep : Pipeline::stage_dependencies(names[i])) {
      const auto at = std::find(names.begin(), names.end(), dep);
      REQUIRE(at != names.end());
      CHECK(static_cast<std::size_t>(at - names.begin()) < i);
    }
  }
  CHECK_THROWS_WITH(Pipeline::stage_dependencies("bogus"), "unknown stage 'bogus'");
}

TEST_CASE("missing dependencies name the producing command") {
  const auto dir = fresh_dir("deps");
  Pipeline pipe(micro_config(dir.string()));
  CHECK_THROWS_WITH(pipe.run("train-kge"),
                    "stage 'train-kge' needs artifacts from 'ingest'; run `kgrkit ingest` first");
  CHECK_THROWS(pipe.run("no-such-stage"));
}

TEST_CASE("stages skip when current, rerun on corruption or force") {
  const auto dir = fresh_dir("skip");
  Pipeline pipe(micro_config(dir.string()));

  const auto first = pipe.run("ingest");
  CHECK_FALSE(first.skipped);
  CHECK(fs::exists(dir / "stats.json"));
  CHECK(fs::exists(dir / "graph" / "train.txt"));

  const auto second = pipe.run("ingest");
  CHECK(second.skipped);
  CHECK(second.artifacts == first.artifacts);

  // damaging one artifact invalidates the stage
  spill(dir / "stats.json", "tampered");
  CHECK_FALSE(pipe.stage_current("ingest"));
  CHECK_FALSE(pipe.run("ingest").skipped);
  CHECK(pipe.stage_current("ingest"));

  CHECK_FALSE(pipe.run("ingest", true).skipped);  // force reruns a current stage

  // a fresh Pipeline reloads the manifest from disk
  Pipeline again(micro_config(dir.string()));
  CHECK(again.stage_current("ingest"));

  // a config change invalidates recorded stages; jobs/deterministic do not
  auto other = micro_config(dir.string(), 12);
  CHECK_FALSE(Pipeline(other).stage_current("ingest"));
  auto threaded = micro_config(dir.string());
  threaded.jobs = 3;
  CHECK(Pipeline(threaded).stage_current("ingest"));
  auto det = micro_config(dir.string());
  det.deterministic = true;
  CHECK(Pipeline(det).stage_current("ingest"));
}

TEST_CASE("run_all produces every artifact and a valid manifest") {
  const auto dir = fresh_dir("full");
  Pipeline pipe(micro_config(dir.string()));
  const auto outcomes = pipe.run_all();
  CHECK(outcomes.size() == Pipeline::stage_names().size());
  for (const auto& o : outcomes) CHECK_FALSE(o.skipped);

  const std::vector<std::string> expect = {
      "graph/train.txt",      "graph/valid.txt", "graph/test.txt",   "graph/text.txt",
      "stats.json",           "kge.bin",         "kge_train.csv",    "instances_train.jsonl",
      "instances_eval.jsonl", "policy_sft.bin",  "sft_log.csv",      "sft_eval.json",
      "policy_grpo.bin",      "grpo_log.csv",    "grpo_eval.json",   "reps_train.txt",
      "labels_train.txt",     "reps_valid.txt",  "labels_valid.txt", "reps_test.txt",
      "labels_test.txt",      "probe.bin",       "probe_log.csv",    "probe_eval.json",
      "metrics_lp.json",      "metrics_tc.json", "smi.json",         "smi.csv",
      "smi_random.json",      "layer_sweep.csv", "inductive.csv",
      "metrics_inductive_r20.json",              "sweep_k.csv",      "sweep_n.csv",
      "sweep_tier.csv"};
  for (const auto& rel : expect) CHECK_MESSAGE(fs::exists(dir / rel), rel);

  nlohmann::json manifest;
  std::ifstream(dir / "manifest.json") >> manifest;
  CHECK(manifest.at("stages").size() == Pipeline::stage_names().size());
  for (const auto& name : Pipeline::stage_names()) CHECK(pipe.stage_current(name));

  // the recorded metrics parse and carry the run seed
  nlohmann::json lp;
  std::ifstream(dir / "metrics_lp.json") >> lp;
  CHECK(lp.at("task") == "link_prediction");
  CHECK(lp.at("seed") == 11);
  CHECK(lp.at("n").get<int>() > 0);

  // a second full pass is a no-op
  for (const auto& o : pipe.run_all()) CHECK(o.skipped);
}

TEST_CASE("identical configs reproduce identical artifact bytes") {
  const auto da = fresh_dir("det_a");
  const auto db = fresh_dir("det_b");
  auto ca = micro_config(da.string());
  auto cb = micro_config(db.string());
  ca.deterministic = cb.deterministic = true;
  Pipeline(ca).run_all();
  Pipeline(cb).run_all();
  for (const auto& rel : {"kge.bin", "policy_grpo.bin", "metrics_lp.json", "metrics_tc.json",
                          "smi.json", "inductive.csv", "layer_sweep.csv", "sweep_k.csv"}) {
    CHECK_MESSAGE(slurp(da / rel) == slurp(db / rel), rel);
  }
}

TEST_CASE("cli: usage, config commands, exit codes") {
  CHECK(run_cli("--help").exit == 0);
  CHECK(run_cli("--help").output.find("usage: kgrkit") != std::string::npos);
  CHECK(run_cli("").exit == 2);
  CHECK(run_cli("--bogus").exit == 2);
  CHECK(run_cli("frobnicate").exit == 2);
  CHECK(run_cli("config").exit == 2);
  CHECK(run_cli("sweep q").exit == 2);

  const auto ref = run_cli("config reference");
  CHECK(ref.exit == 0);
  CHECK(ref.output.find("derived from run.seed") != std::string::npos);

  const auto show = run_cli("config show --seed 123");
  CHECK(show.exit == 0);
  CHECK(show.output.find("seed = 123") != std::string::npos);

  const auto bad = run_cli("config show --jobs 0");
  CHECK(bad.exit == 1);
  CHECK(bad.output.find("run.jobs: must be >= 1") != std::string::npos);

  CHECK(run_cli("config show --config /no/such/file.ini").exit == 1);
}

TEST_CASE("cli: stages run from a config file and skip once current") {
  const auto dir = fresh_dir("cli_run");
  const auto ini = dir / "run.ini";
  spill(ini, "[run]\nout = " + (dir / "out").string() +
                 "\nseed = 11\n"
                 "[synth]\nentities = 36\n"
                 "[kge]\nepochs = 20\ndim_entity = 8\ndim_relation = 8\n");

  const auto missing = run_cli("train-kge --config " + ini.string());
  CHECK(missing.exit == 1);
  CHECK(missing.output.find("run `kgrkit ingest` first") != std::string::npos);

  CHECK(run_cli("ingest --config " + ini.string()).exit == 0);
  CHECK(fs::exists(dir / "out" / "stats.json"));
  CHECK(run_cli("ingest --config " + ini.string()).output.find("up to date") !=
        std::string::npos);

  const auto kge = run_cli("train-kge --config " + ini.string());
  CHECK(kge.exit == 0);
  CHECK(kge.output.find("kge.bin") != std::string::npos);
}
