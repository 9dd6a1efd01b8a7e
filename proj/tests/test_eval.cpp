#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "kgr/eval.hpp"
#include "kgr/graph.hpp"
#include "kgr/kge.hpp"
#include "kgr/probe.hpp"
#include "kgr/rng.hpp"
#include "kgr/synth.hpp"

using namespace kgr;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("kgr_eval_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// rank by explicit sort: unfiltered entities ordered by score descending and
// the queried entity placed after every equal-scoring rival
int sort_rank_oracle(const std::vector<double>& scores, EntityId t,
                     const std::vector<EntityId>& filter) {
  struct Row {
    EntityId e;
    double s;
    bool is_true;
  };
  std::vector<Row> rows;
  for (EntityId e = 0; e < static_cast<EntityId>(scores.size()); ++e) {
    if (e != t && std::find(filter.begin(), filter.end(), e) != filter.end()) continue;
    rows.push_back({e, scores[static_cast<std::size_t>(e)], e == t});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.s != b.s) return a.s > b.s;
    if (a.is_true != b.is_true) return !a.is_true;  // the true entity loses ties
    return a.e < b.e;
  });
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].is_true) return static_cast<int>(i) + 1;
  return -1;
}

// one-dimensional tail feature; the probe sees only g(t)
class TailFeatureProvider : public RepresentationProvider {
 public:
  explicit TailFeatureProvider(std::vector<double> feature) : feature_(std::move(feature)) {}
  int dim() const override { return 1; }
  int num_layers() const override { return 2; }
  std::vector<double> representation(const Triple& x, int) const override {
    return {feature_.at(static_cast<std::size_t>(x.t))};
  }

 private:
  std::vector<double> feature_;
};

// monotone probe: score = sigmoid(prelu(z)), so probe ordering equals
// feature ordering and equal features tie exactly
ProbeClassifier monotone_probe() {
  ProbeClassifier probe(1, 1, 3);
  auto& p = probe.parameters();
  p[0] = 1.0;   // W1
  p[1] = 0.0;   // b1
  p[2] = 0.25;  // slope
  p[3] = 1.0;   // w2
  p[4] = 0.0;   // b2
  return probe;
}

// DistMult with one-dimensional embeddings scores h*r*t; with e_h = w_r = 1
// the tail score table is exactly the tail embedding vector.
KgeModel table_kge(const std::vector<double>& tail_scores, int num_relations = 1) {
  KgeModel kge(KgeKind::DistMult, static_cast<int>(tail_scores.size()), num_relations, 1, 1, 1);
  kge.entity_parameters() = tail_scores;
  std::fill(kge.relation_parameters().begin(), kge.relation_parameters().end(), 1.0);
  return kge;
}

// label lives in the first coordinate, the rest is noise
class LabelSignalProvider : public RepresentationProvider {
 public:
  LabelSignalProvider(int dim, int layers, int hot_layer, std::uint64_t seed)
      : dim_(dim), layers_(layers), hot_(hot_layer), seed_(seed) {}
  int dim() const override { return dim_; }
  int num_layers() const override { return layers_; }
  std::vector<double> representation(const Triple& x, int layer) const override {
    Rng rng(seed_ ^ (static_cast<std::uint64_t>(x.h) << 40) ^
            (static_cast<std::uint64_t>(x.r) << 24) ^ (static_cast<std::uint64_t>(x.t) << 4) ^
            static_cast<std::uint64_t>(layer));
    std::vector<double> z(static_cast<std::size_t>(dim_));
    for (auto& v : z) v = rng.normal(0.0, 1.0);
    if (layer == hot_) z[0] = (x.t % 2 == 0 ? 1.0 : -1.0) + rng.normal(0.0, 0.05);
    return z;
  }

 private:
  int dim_, layers_, hot_;
  std::uint64_t seed_;
};

}  // namespace

TEST_CASE("filtered rank counts rivals pessimistically") {
  // strictly highest score wins outright
  CHECK(filtered_rank({0.9, 0.1, 0.5}, 0, {}) == 1);
  // equal scores count against the queried entity
  CHECK(filtered_rank({0.5, 0.5, 0.5, 0.5, 0.1}, 0, {}) == 4);
  // filtering removes higher-scoring rivals
  CHECK(filtered_rank({0.1, 0.9, 0.8, 0.2}, 0, {1, 2}) == 2);
  CHECK(filtered_rank({0.1, 0.9, 0.8, 0.2}, 0, {1, 2, 3}) == 1);

  CHECK_THROWS(filtered_rank({0.1, 0.2}, 5, {}));
  CHECK_THROWS(filtered_rank({0.1, 0.2}, -1, {}));
  CHECK_THROWS(filtered_rank({0.1, 0.2}, 0, {0}));
  CHECK_THROWS(filtered_rank({0.1, 0.2}, 0, {7}));
}

TEST_CASE("filtered rank matches an explicit sort oracle") {
  Rng rng(19);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 5 + static_cast<int>(rng.uniform_int(46));
    std::vector<double> scores(static_cast<std::size_t>(n));
    // quantized scores force frequent ties
    for (auto& s : scores) s = static_cast<double>(rng.uniform_int(6)) / 4.0;
    const auto t = static_cast<EntityId>(rng.uniform_int(static_cast<std::uint64_t>(n)));
    std::vector<EntityId> filter;
    for (EntityId e = 0; e < n; ++e)
      if (e != t && rng.uniform() < 0.25) filter.push_back(e);
    CHECK(filtered_rank(scores, t, filter) == sort_rank_oracle(scores, t, filter));
  }
}

TEST_CASE("mrr and hits follow their definitions") {
  CHECK(mrr({1, 2, 4}) == doctest::Approx((1.0 + 0.5 + 0.25) / 3.0).epsilon(1e-15));
  CHECK(hits_at_k({1, 2, 4}, 3) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(mrr({1, 1, 1}) == 1.0);
  CHECK(hits_at_k({1, 1, 1}, 1) == 1.0);
  CHECK_THROWS(mrr({}));
  CHECK_THROWS(hits_at_k({}, 3));

  // hits monotone in k and hits@1 never above mrr
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> ranks;
    for (int i = 0; i < 40; ++i) ranks.push_back(1 + static_cast<int>(rng.uniform_int(30)));
    const double h1 = hits_at_k(ranks, 1), h3 = hits_at_k(ranks, 3), h10 = hits_at_k(ranks, 10);
    CHECK(h1 <= h3);
    CHECK(h3 <= h10);
    CHECK(h1 <= mrr(ranks));
    CHECK(mrr(ranks) <= 1.0);
  }
}

TEST_CASE("kge ranking agrees with per-query recomputation") {
  auto g = make_synthetic_graph();
  KgeModel kge(KgeKind::DistMult, g.num_entities(), g.num_relations(), 8, 8, 5);
  const auto ranks = kge_ranks(kge, g, Split::Test);
  REQUIRE(ranks.size() == g.triples(Split::Test).size());

  std::vector<double> scores;
  for (const auto& rr : ranks) {
    CHECK(!rr.fallback);
    CHECK(rr.rank >= 1);
    kge.score_all_tails(rr.query.h, rr.query.r, scores);
    CHECK(rr.rank == sort_rank_oracle(scores, rr.query.t, query_filter(g, rr.query)));
  }

  const auto report = aggregate_ranking(ranks);
  CHECK(report.n == static_cast<int>(ranks.size()));
  CHECK(report.hits1 <= report.hits3);
  CHECK(report.hits3 <= report.hits10);
  CHECK(report.hits1 <= report.mrr);
  CHECK(report.fallback_fraction == 0.0);
}

TEST_CASE("reranking covers every candidate when the retriever keeps all") {
  auto g = make_synthetic_graph();
  KgeModel kge(KgeKind::DistMult, g.num_entities(), g.num_relations(), 8, 8, 5);
  // deterministic but arbitrary tail feature drives the probe
  std::vector<double> feature(static_cast<std::size_t>(g.num_entities()));
  Rng rng(33);
  for (auto& v : feature) v = rng.normal(0.0, 1.0);
  TailFeatureProvider provider(feature);
  const auto probe = monotone_probe();

  const auto ranks =
      link_predict_ranks(kge, probe, provider, g, g.num_entities(), 1, Split::Test);
  for (const auto& rr : ranks) {
    CHECK(!rr.fallback);  // top-n covers the whole entity set
    // with a full candidate list the rerank is a pure probe ranking
    std::vector<double> ps(static_cast<std::size_t>(g.num_entities()));
    for (EntityId e = 0; e < g.num_entities(); ++e)
      ps[static_cast<std::size_t>(e)] = probe.score(provider.representation({rr.query.h, rr.query.r, e}, 1));
    CHECK(rr.rank == sort_rank_oracle(ps, rr.query.t, query_filter(g, rr.query)));
  }

  const auto report = link_predict(kge, probe, provider, g, g.num_entities(), 1, Split::Test);
  CHECK(report.task == "link_prediction");
  CHECK(report.l == 1);
  CHECK(report.fallback_fraction == 0.0);
}

TEST_CASE("missed retrievals fall back to the retriever rank") {
  // five entities; tail scores fix the retrieval order as 4, 3, 2, 1, 0
  const std::vector<double> tails = {0.1, 0.2, 0.3, 0.4, 0.5};
  auto kge = table_kge(tails);
  std::vector<std::string> ents = {"e0", "e1", "e2", "e3", "e4"};
  std::unordered_map<std::string, std::string> text = {
      {"e0", "e0"}, {"e1", "e1"}, {"e2", "e2"}, {"e3", "e3"}, {"e4", "e4"}, {"rel", "rel"}};
  // single train triple (0, rel, 4) plus test triples with tails 0 and 3
  auto g = KnowledgeGraph::build(ents, {"rel"}, {{0, 0, 4}}, {}, {{0, 0, 0}, {0, 0, 3}}, text);

  // probe prefers low entity ids, reversing the retrieval order in the top set
  TailFeatureProvider provider({5.0, 4.0, 3.0, 2.0, 1.0});
  const auto probe = monotone_probe();

  // top_n = 2 retrieves {2, 1} for the tail-0 query (3 and 4 are filtered as
  // known tails) so t=0 falls back; t=3 stays retrieved for the second query
  const auto ranks = link_predict_ranks(kge, probe, provider, g, 2, 1, Split::Test);
  REQUIRE(ranks.size() == 2);

  CHECK(ranks[0].query.t == 0);
  CHECK(ranks[0].fallback);
  // retriever rank of entity 0: filter {3, 4} for this query leaves scores
  // {0.1, 0.2, 0.3} and two rivals above 0.1
  CHECK(ranks[0].rank == 3);

  CHECK(ranks[1].query.t == 3);
  CHECK(!ranks[1].fallback);
  // retrieved set for tail-3 query: filter {0, 4}, top-2 of {1, 2, 3} by kge
  // score is {3, 2}; the probe prefers 2... feature(3)=2.0 < feature(2)=3.0
  CHECK(ranks[1].rank == 2);

  const auto report = aggregate_ranking(ranks);
  CHECK(report.fallback_fraction == 0.5);

  CHECK_THROWS(link_predict_ranks(kge, probe, provider, g, 0, 1, Split::Test));
}

TEST_CASE("rerank ties count against the true entity") {
  const std::vector<double> tails = {0.5, 0.4, 0.3, 0.2, 0.1};
  auto kge = table_kge(tails);
  std::vector<std::string> ents = {"e0", "e1", "e2", "e3", "e4"};
  std::unordered_map<std::string, std::string> text = {
      {"e0", "e0"}, {"e1", "e1"}, {"e2", "e2"}, {"e3", "e3"}, {"e4", "e4"}, {"rel", "rel"}};
  auto g = KnowledgeGraph::build(ents, {"rel"}, {}, {}, {{0, 0, 2}}, text);

  // every candidate projects to the same feature, so probe scores tie exactly
  TailFeatureProvider provider({7.0, 7.0, 7.0, 7.0, 7.0});
  const auto ranks = link_predict_ranks(kge, monotone_probe(), provider, g, 5, 1, Split::Test);
  REQUIRE(ranks.size() == 1);
  CHECK(!ranks[0].fallback);
  CHECK(ranks[0].rank == 5);  // last among five tied candidates
}

TEST_CASE("rerank depends only on the retrieved set") {
  const std::vector<double> tails = {0.9, 0.8, 0.7, 0.2, 0.1};
  std::vector<std::string> ents = {"e0", "e1", "e2", "e3", "e4"};
  std::unordered_map<std::string, std::string> text = {
      {"e0", "e0"}, {"e1", "e1"}, {"e2", "e2"}, {"e3", "e3"}, {"e4", "e4"}, {"rel", "rel"}};
  auto g = KnowledgeGraph::build(ents, {"rel"}, {}, {}, {{0, 0, 1}}, text);
  TailFeatureProvider provider({1.0, 2.0, 3.0, 4.0, 5.0});
  const auto probe = monotone_probe();

  auto kge_a = table_kge(tails);
  auto kge_b = table_kge({0.9, 0.8, 0.7, 0.05, 0.6});  // outside-top-3 scores shuffled

  const auto ra = link_predict_ranks(kge_a, probe, provider, g, 3, 1, Split::Test);
  const auto rb = link_predict_ranks(kge_b, probe, provider, g, 3, 1, Split::Test);
  REQUIRE(ra.size() == 1);
  CHECK(!ra[0].fallback);
  CHECK(ra[0].rank == rb[0].rank);
}

TEST_CASE("thread fan-out does not change link prediction") {
  auto g = make_synthetic_graph();
  KgeModel kge(KgeKind::ComplEx, g.num_entities(), g.num_relations(), 8, 8, 9);
  std::vector<double> feature(static_cast<std::size_t>(g.num_entities()));
  Rng rng(3);
  for (auto& v : feature) v = rng.normal(0.0, 1.0);
  TailFeatureProvider provider(feature);
  const auto probe = monotone_probe();

  const auto one = link_predict_ranks(kge, probe, provider, g, 10, 1, Split::Test, 1);
  const auto four = link_predict_ranks(kge, probe, provider, g, 10, 1, Split::Test, 4);
  REQUIRE(one.size() == four.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].rank == four[i].rank);
    CHECK(one[i].fallback == four[i].fallback);
  }
}

TEST_CASE("triple classification scores labeled sets") {
  auto g = make_synthetic_graph();
  const auto labeled = g.balanced_classification_set(Split::Test, 7);
  LabelSignalProvider provider(6, 3, 2, 11);

  // train a probe on the informative layer
  std::vector<LabeledTriple> train_set = g.balanced_classification_set(Split::Train, 9);
  // relabel by tail parity to match what the provider encodes
  for (auto& lt : train_set) lt.label = lt.triple.t % 2 == 0 ? 1 : 0;
  auto eval_set = labeled;
  for (auto& lt : eval_set) lt.label = lt.triple.t % 2 == 0 ? 1 : 0;

  const auto train_data = extract_representations(provider, train_set, 2);
  const auto eval_data = extract_representations(provider, eval_set, 2);
  ProbeClassifier probe(6, 8, 13);
  ProbeTrainConfig cfg;
  cfg.epochs = 120;
  train_probe(probe, train_data, eval_data, cfg);

  const auto report = triple_classify(probe, provider, eval_set, 2);
  CHECK(report.task == "triple_classification");
  CHECK(report.n == static_cast<int>(eval_set.size()));
  CHECK(report.l == 2);
  CHECK(report.accuracy >= 0.95);

  // threshold zero predicts positive everywhere: accuracy = positive fraction
  double pos = 0.0;
  for (const auto& lt : eval_set) pos += lt.label;
  const auto all_pos = triple_classify(probe, provider, eval_set, 2, 0.0);
  CHECK(all_pos.accuracy ==
        doctest::Approx(pos / static_cast<double>(eval_set.size())).epsilon(1e-15));

  // an untrained probe on a balanced set sits near chance
  ProbeClassifier blind(6, 8, 99);
  const auto chance = triple_classify(blind, provider, labeled, 1);
  CHECK(chance.accuracy > 0.35);
  CHECK(chance.accuracy < 0.65);

  CHECK_THROWS(triple_classify(probe, provider, {}, 2));
}

TEST_CASE("layer sweep finds the informative layer") {
  auto g = make_synthetic_graph();
  auto labeled = g.balanced_classification_set(Split::Train, 21);
  labeled.resize(160);
  for (auto& lt : labeled) lt.label = lt.triple.t % 2 == 0 ? 1 : 0;

  const int hot = 3;
  LabelSignalProvider provider(5, 4, hot, 17);
  LayerSweepConfig cfg;
  cfg.hidden = 8;
  cfg.train.epochs = 80;

  const auto entries = layer_sweep(provider, labeled, {1, 2, 3, 4}, cfg);
  REQUIRE(entries.size() == 4);
  int best = 0;
  for (int i = 1; i < 4; ++i)
    if (entries[i].accuracy > entries[best].accuracy) best = i;
  CHECK(entries[static_cast<std::size_t>(best)].layer == hot);
  CHECK(entries[static_cast<std::size_t>(best)].accuracy >= 0.9);

  // deterministic and size-faithful
  const auto again = layer_sweep(provider, labeled, {1, 2, 3, 4}, cfg);
  for (int i = 0; i < 4; ++i) {
    CHECK(again[static_cast<std::size_t>(i)].layer == entries[static_cast<std::size_t>(i)].layer);
    CHECK(again[static_cast<std::size_t>(i)].accuracy ==
          entries[static_cast<std::size_t>(i)].accuracy);
  }
  const auto single = layer_sweep(provider, labeled, {2}, cfg);
  CHECK(single.size() == 1);

  const auto dir = fresh_dir("sweep");
  const auto csv_path = (dir / "sweep.csv").string();
  save_layer_sweep_csv(csv_path, entries);
  std::ifstream in(csv_path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "layer,accuracy");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4);

  CHECK_THROWS(layer_sweep(provider, {}, {1}, cfg));
}

TEST_CASE("inductive report satisfies the counting identity") {
  auto g = make_synthetic_graph();
  for (double rho : {0.1, 0.25, 0.4}) {
    const auto split = make_inductive_split(g, rho, 29);
    // deterministic per-triple score independent of the strata
    auto metric = [](const Triple& x) {
      return (x.h * 7 + x.r * 3 + x.t) % 2 == 0 ? 1.0 : 0.0;
    };
    const auto report = inductive_report(split, metric);
    CHECK(report.task == "inductive");
    REQUIRE(report.strata.count("A") == 1);
    const auto& A = report.strata.at("A");
    CHECK(report.n == A.n);
    CHECK(report.accuracy == A.accuracy);

    double lhs = 0.0;
    int total = 0;
    for (const char* key : {"S", "U"}) {
      if (!report.strata.count(key)) continue;
      const auto& s = report.strata.at(key);
      lhs += s.n * s.accuracy;
      total += s.n;
    }
    CHECK(total == A.n);
    CHECK(std::abs(lhs - A.n * A.accuracy) <= 1e-12);
  }

  // rho = 0 leaves no unseen stratum and A equals S
  const auto base = make_inductive_split(g, 0.0, 29);
  const auto report = inductive_report(base, [](const Triple&) { return 1.0; });
  CHECK(report.strata.count("U") == 0);
  REQUIRE(report.strata.count("S") == 1);
  CHECK(report.strata.at("S").n == report.strata.at("A").n);
  CHECK(report.strata.at("S").accuracy == report.strata.at("A").accuracy);
}

TEST_CASE("metrics reports serialize with a fixed key set") {
  MetricsReport r;
  r.task = "link_prediction";
  r.dataset = "synthetic";
  r.n = 12;
  r.l = 2;
  r.mrr = 0.5;
  r.hits1 = 0.25;
  r.hits3 = 0.5;
  r.hits10 = 0.75;
  r.accuracy = 0.0;
  r.fallback_fraction = 0.125;
  r.seed = 77;

  const auto text = metrics_json(r);
  const auto j = nlohmann::json::parse(text);
  const std::vector<std::string> keys = {"accuracy", "dataset", "fallback_fraction",
                                         "hits1",    "hits10",  "hits3",
                                         "l",        "mrr",     "n",
                                         "seed",     "strata",  "task"};
  CHECK(j.size() == keys.size());
  for (const auto& k : keys) CHECK(j.contains(k));
  CHECK(j["strata"].is_null());
  CHECK(j["seed"] == 77);
  CHECK(j["mrr"] == 0.5);

  r.strata["S"] = {4, 0.5, 0.25, 0.5, 1.0, 0.75};
  r.strata["A"] = {6, 0.5, 0.25, 0.5, 1.0, 0.8};
  const auto j2 = nlohmann::json::parse(metrics_json(r));
  CHECK(j2["strata"].size() == 2);
  CHECK(j2["strata"]["S"]["n"] == 4);
  CHECK(j2["strata"]["S"]["accuracy"] == 0.75);
  CHECK(j2["strata"]["A"]["accuracy"] == 0.8);

  // byte stability: same report, same text
  CHECK(metrics_json(r) == metrics_json(r));

  const auto dir = fresh_dir("json");
  const auto path = (dir / "metrics.json").string();
  save_metrics_json(path, r);
  std::ifstream in(path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(content == metrics_json(r));
}
