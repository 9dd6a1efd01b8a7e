#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "kgr/graph.hpp"
#include "kgr/instance.hpp"
#include "kgr/kge.hpp"
#include "kgr/synth.hpp"

using namespace kgr;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("kgr_inst_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Reference stratification: rebuild the pools straight from the definitions.
struct RefTiers {
  std::vector<EntityId> tier1, tier2, tier3;
};

RefTiers ref_stratify(const KnowledgeGraph& g, const KgeModel& kge, EntityId h, RelationId r,
                      double q_lo, double q_hi, int pool_size) {
  const auto& gt = g.ground_truth_tails(h, r, GtScope::All);
  std::vector<std::pair<double, EntityId>> pool;
  for (EntityId e = 0; e < g.num_entities(); ++e) {
    if (std::binary_search(gt.begin(), gt.end(), e)) continue;
    if (pool_size > 0 && static_cast<int>(pool.size()) >= pool_size) break;
    pool.emplace_back(kge.score(h, r, e), e);
  }
  std::sort(pool.begin(), pool.end());
  const auto m = static_cast<std::int64_t>(pool.size());
  const auto lo = static_cast<std::int64_t>(std::floor(q_lo * static_cast<double>(m)));
  const auto hi = static_cast<std::int64_t>(std::ceil(q_hi * static_cast<double>(m)));
  RefTiers out;
  for (std::int64_t i = 0; i < m; ++i) {
    out.tier2.push_back(pool[static_cast<std::size_t>(i)].second);
    if (i < lo) out.tier1.push_back(pool[static_cast<std::size_t>(i)].second);
    if (i >= hi) out.tier3.push_back(pool[static_cast<std::size_t>(i)].second);
  }
  return out;
}

KnowledgeGraph tiny_graph() {
  // a likes b; c likes d; b likes d   (4 entities, 1 relation)
  return KnowledgeGraph::build(
      {"a", "b", "c", "d"}, {"likes"},
      {{0, 0, 1}, {2, 0, 3}, {1, 0, 3}}, {}, {},
      {{"a", "alpha"}, {"b", "beta"}, {"c", "gamma"}, {"d", "delta"}, {"likes", "likes"}},
      {{"a", "the first letter"}, {"b", "the second letter"}});
}

}  // namespace

TEST_CASE("negative stratification matches a from-scratch reimplementation") {
  auto g = make_synthetic_graph();
  KgeModel kge(KgeKind::DistMult, g.num_entities(), g.num_relations(), 16, 16, 3);

  int checked = 0;
  std::set<std::pair<EntityId, RelationId>> seen;
  for (const auto& x : g.triples(Split::Train)) {
    if (!seen.insert({x.h, x.r}).second) continue;
    if (++checked > 40) break;
    const auto got = stratify_negatives(g, kge, x.h, x.r);
    const auto want = ref_stratify(g, kge, x.h, x.r, 0.25, 0.75, 0);
    CHECK(got.tier1 == want.tier1);
    CHECK(got.tier2 == want.tier2);
    CHECK(got.tier3 == want.tier3);

    // pools ordered by (score asc, id asc); scores aligned with tier2
    REQUIRE(got.tier2_scores.size() == got.tier2.size());
    for (std::size_t i = 0; i + 1 < got.tier2.size(); ++i) {
      const bool ordered = got.tier2_scores[i] < got.tier2_scores[i + 1] ||
                           (got.tier2_scores[i] == got.tier2_scores[i + 1] &&
                            got.tier2[i] < got.tier2[i + 1]);
      CHECK(ordered);
    }
    for (std::size_t i = 0; i < got.tier2.size(); ++i)
      CHECK(got.tier2_scores[i] == doctest::Approx(kge.score(x.h, x.r, got.tier2[i])).epsilon(1e-12));

    // no ground-truth tail leaks into any pool
    const auto& gt = g.ground_truth_tails(x.h, x.r, GtScope::All);
    for (EntityId e : got.tier2)
      CHECK_FALSE(std::binary_search(gt.begin(), gt.end(), e));
    // tier1 and tier3 never overlap and both live inside tier2
    for (EntityId e : got.tier1) {
      CHECK(std::find(got.tier2.begin(), got.tier2.end(), e) != got.tier2.end());
      CHECK(std::find(got.tier3.begin(), got.tier3.end(), e) == got.tier3.end());
    }
  }
  CHECK(checked > 10);
}

TEST_CASE("tier boundaries use floor and ceil of the quantile cuts") {
  auto g = make_synthetic_graph();
  KgeModel kge(KgeKind::TransE, g.num_entities(), g.num_relations(), 16, 16, 5);
  const auto& x = g.triples(Split::Train).front();

  TierConfig tc;
  tc.pool_size = 10;  // m = 10: lo = floor(2.5) = 2, hi = ceil(7.5) = 8
  const auto tiers = stratify_negatives(g, kge, x.h, x.r, tc);
  REQUIRE(tiers.tier2.size() == 10);
  CHECK(tiers.tier1.size() == 2);
  CHECK(tiers.tier3.size() == 2);

  tc.q_lo = 0.3;  // lo = floor(3) = 3
  tc.q_hi = 0.7;  // hi = ceil(7) = 7 -> 3 in tier3
  const auto exact = stratify_negatives(g, kge, x.h, x.r, tc);
  CHECK(exact.tier1.size() == 3);
  CHECK(exact.tier3.size() == 3);

  TierConfig bad;
  bad.q_lo = 0.0;
  CHECK_THROWS(stratify_negatives(g, kge, x.h, x.r, bad));
  bad.q_lo = 0.8;
  bad.q_hi = 0.2;
  CHECK_THROWS(stratify_negatives(g, kge, x.h, x.r, bad));
  bad.q_lo = 0.25;
  bad.q_hi = 1.0;
  CHECK_THROWS(stratify_negatives(g, kge, x.h, x.r, bad));
}

TEST_CASE("built instances are well formed and leak free") {
  auto g = make_synthetic_graph();
  KgeModel kge(KgeKind::ComplEx, g.num_entities(), g.num_relations(), 16, 16, 9);

  int built = 0;
  std::set<std::pair<EntityId, RelationId>> seen;
  for (const auto& x : g.triples(Split::Train)) {
    if (!seen.insert({x.h, x.r}).second) continue;
    if (++built > 25) break;
    for (int tier : {1, 2, 3}) {
      DiscriminativeInstance inst;
      try {
        inst = build_instance(g, kge, x.h, x.r, 4, tier, AnswerMode::Single, 1000 + built);
      } catch (const std::runtime_error&) {
        continue;  // tiny tier pools are legitimate skips
      }
      REQUIRE(inst.options.size() == 4);
      CHECK(inst.h == x.h);
      CHECK(inst.r == x.r);
      CHECK(inst.tier == tier);

      const auto& gt_train = g.ground_truth_tails(x.h, x.r, GtScope::TrainOnly);
      const auto& gt_all = g.ground_truth_tails(x.h, x.r, GtScope::All);
      const auto tiers = stratify_negatives(g, kge, x.h, x.r);
      const auto& pool = tier == 1 ? tiers.tier1 : tier == 3 ? tiers.tier3 : tiers.tier2;

      int positives = 0;
      std::set<EntityId> distinct;
      for (std::size_t i = 0; i < inst.options.size(); ++i) {
        const auto& o = inst.options[i];
        CHECK(o.label == static_cast<char>('A' + i));
        CHECK(distinct.insert(o.entity).second);
        CHECK(o.kge_score == doctest::Approx(kge.score(x.h, x.r, o.entity)).epsilon(1e-12));
        if (o.is_positive) {
          ++positives;
          CHECK(std::binary_search(gt_train.begin(), gt_train.end(), o.entity));
        } else {
          CHECK_FALSE(std::binary_search(gt_all.begin(), gt_all.end(), o.entity));
          CHECK(std::find(pool.begin(), pool.end(), o.entity) != pool.end());
        }
      }
      CHECK(positives == 1);  // Single mode

      std::vector<char> expect;
      for (const auto& o : inst.options)
        if (o.is_positive) expect.push_back(o.label);
      CHECK(inst.e_pos == expect);
      CHECK(std::is_sorted(inst.e_pos.begin(), inst.e_pos.end()));

      // the rendered rationale parses back to the positive label set
      const auto parsed = parse_answer(inst.target, inst.labels());
      REQUIRE(parsed.has_value());
      CHECK(*parsed == inst.e_pos);
    }
  }
  CHECK(built > 10);
}

TEST_CASE("variable mode draws between one and min(K-1, |gt|) positives") {
  auto g = make_synthetic_graph();
  KgeModel kge(KgeKind::DistMult, g.num_entities(), g.num_relations(), 16, 16, 21);

  // neighbor_of queries have two train answers for most heads
  EntityId h = -1;
  RelationId r = -1;
  for (const auto& x : g.triples(Split::Train)) {
    if (g.ground_truth_tails(x.h, x.r, GtScope::TrainOnly).size() >= 2) {
      h = x.h;
      r = x.r;
      break;
    }
  }
  REQUIRE(h >= 0);
  const int gt_n = static_cast<int>(g.ground_truth_tails(h, r, GtScope::TrainOnly).size());
  const int p_max = std::min(4 - 1, gt_n);
  REQUIRE(p_max >= 2);

  std::set<int> observed;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto inst = build_instance(g, kge, h, r, 4, 2, AnswerMode::Variable, seed);
    const int p = static_cast<int>(inst.e_pos.size());
    CHECK(p >= 1);
    CHECK(p <= p_max);
    observed.insert(p);
  }
  CHECK(static_cast<int>(observed.size()) == p_max);  // every count shows up
}

TEST_CASE("instance construction is deterministic per seed") {
  auto g = make_synthetic_graph();
  KgeModel kge(KgeKind::TransE, g.num_entities(), g.num_relations(), 16, 16, 2);
  const auto& x = g.triples(Split::Train).front();

  const auto a = build_instance(g, kge, x.h, x.r, 5, 2, AnswerMode::Variable, 77);
  const auto b = build_instance(g, kge, x.h, x.r, 5, 2, AnswerMode::Variable, 77);
  CHECK(a.prompt == b.prompt);
  CHECK(a.target == b.target);
  CHECK(a.e_pos == b.e_pos);
  REQUIRE(a.options.size() == b.options.size());
  for (std::size_t i = 0; i < a.options.size(); ++i) {
    CHECK(a.options[i].entity == b.options[i].entity);
    CHECK(a.options[i].is_positive == b.options[i].is_positive);
  }

  bool any_difference = false;
  for (std::uint64_t seed = 100; seed < 110 && !any_difference; ++seed) {
    const auto c = build_instance(g, kge, x.h, x.r, 5, 2, AnswerMode::Variable, seed);
    for (std::size_t i = 0; i < a.options.size(); ++i)
      if (c.options[i].entity != a.options[i].entity) any_difference = true;
  }
  CHECK(any_difference);
}

TEST_CASE("prompt rendering produces the exact expected text") {
  auto g = tiny_graph();
  KgeModel kge(KgeKind::DistMult, g.num_entities(), g.num_relations(), 4, 4, 1);

  DiscriminativeInstance inst;
  inst.h = *g.find_entity("a");
  inst.r = *g.find_relation("likes");
  inst.options = {{'A', *g.find_entity("b"), true, 0.5},
                  {'B', *g.find_entity("c"), false, -0.5}};
  inst.e_pos = {'A'};

  const auto prompt = render_prompt(inst, g, kDefaultPromptTemplate);
  CHECK(prompt ==
        "Query: alpha likes ?\n"
        "Options:\n"
        "A. beta\n"
        "B. gamma\n"
        "Select every option that answers the query.");

  const auto target = render_cot_target(inst, g);
  CHECK(target ==
        "A. beta is compatible with (alpha, likes).\n"
        "B. gamma is not compatible with (alpha, likes).\n"
        "Answer: A");

  // descriptions fall back to the short name when absent
  const auto cot = render_prompt(inst, g, kCotPromptTemplate);
  CHECK(cot.find("About the subject: the first letter") != std::string::npos);
  CHECK(cot.find("A. beta: the second letter") != std::string::npos);
  CHECK(cot.find("B. gamma: gamma") != std::string::npos);

  CHECK_THROWS(render_prompt(inst, g, "hello {nope}"));
  CHECK_THROWS(render_prompt(inst, g, "hello {unclosed"));
  CHECK(render_prompt(inst, g, "no placeholders") == "no placeholders");
}

TEST_CASE("answer parsing enforces the strict grammar") {
  const std::vector<char> labels = {'A', 'B', 'C', 'D'};
  auto parsed = [&](const std::string& s) { return parse_answer(s, labels); };

  REQUIRE(parsed("Answer: A").has_value());
  CHECK(*parsed("Answer: A") == std::vector<char>{'A'});
  CHECK(*parsed("Answer: B, A") == std::vector<char>{'A', 'B'});  // sorted output
  CHECK(*parsed("Answer: A, C, D") == std::vector<char>{'A', 'C', 'D'});
  CHECK(*parsed("some rationale\nAnswer: C") == std::vector<char>{'C'});
  CHECK(*parsed("Answer: A\nAnswer: B") == std::vector<char>{'B'});  // last line wins
  CHECK(*parsed("Answer: D\ntrailing text") == std::vector<char>{'D'});

  CHECK_FALSE(parsed("").has_value());
  CHECK_FALSE(parsed("no answer line").has_value());
  CHECK_FALSE(parsed("Answer:").has_value());
  CHECK_FALSE(parsed("Answer: ").has_value());
  CHECK_FALSE(parsed("Answer:A").has_value());        // missing space
  CHECK_FALSE(parsed("Answer: A,B").has_value());     // missing space after comma
  CHECK_FALSE(parsed("Answer: A, ").has_value());     // dangling separator
  CHECK_FALSE(parsed("Answer: A,").has_value());
  CHECK_FALSE(parsed("Answer: A, A").has_value());    // duplicate
  CHECK_FALSE(parsed("Answer: E").has_value());       // unknown label
  CHECK_FALSE(parsed("Answer: AB").has_value());      // fused labels
  CHECK_FALSE(parsed("Answer: A B").has_value());     // missing comma
  CHECK_FALSE(parsed("answer: A").has_value());       // case sensitive prefix
  CHECK_FALSE(parsed("Answer: A extra").has_value()); // trailing junk
  CHECK_FALSE(parsed("Answer: a").has_value());       // lowercase label
}

TEST_CASE("dataset construction walks distinct train queries once per repeat") {
  auto g = make_synthetic_graph();
  KgeModel kge(KgeKind::DistMult, g.num_entities(), g.num_relations(), 16, 16, 4);

  std::vector<std::pair<EntityId, RelationId>> distinct;
  std::set<std::pair<EntityId, RelationId>> seen;
  for (const auto& x : g.triples(Split::Train))
    if (seen.insert({x.h, x.r}).second) distinct.emplace_back(x.h, x.r);

  InstanceDatasetConfig cfg;
  cfg.K = 4;
  const auto data = build_instance_dataset(g, kge, cfg);
  CHECK(data.size() == distinct.size());  // every query has enough tier-2 negatives here
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(data[i].h == distinct[i].first);
    CHECK(data[i].r == distinct[i].second);
  }

  cfg.per_query = 2;
  const auto doubled = build_instance_dataset(g, kge, cfg);
  CHECK(doubled.size() == 2 * distinct.size());
  // repeats use fresh seeds, so the option layout differs between them
  bool differs = false;
  for (std::size_t i = 0; i + 1 < doubled.size() && !differs; i += 2)
    for (std::size_t k = 0; k < doubled[i].options.size(); ++k)
      if (doubled[i].options[k].entity != doubled[i + 1].options[k].entity) differs = true;
  CHECK(differs);

  const auto again = build_instance_dataset(g, kge, cfg);
  REQUIRE(again.size() == doubled.size());
  for (std::size_t i = 0; i < again.size(); ++i) {
    CHECK(again[i].prompt == doubled[i].prompt);
    CHECK(again[i].seed == doubled[i].seed);
  }

  cfg.per_query = 0;
  CHECK_THROWS(build_instance_dataset(g, kge, cfg));
  cfg.per_query = 1;
  cfg.K = 1;
  CHECK_THROWS(build_instance_dataset(g, kge, cfg));
  cfg.K = 27;
  CHECK_THROWS(build_instance_dataset(g, kge, cfg));
  cfg.K = 4;
  cfg.tier = 0;
  CHECK_THROWS(build_instance_dataset(g, kge, cfg));
}

TEST_CASE("instances survive a save and load round trip") {
  auto g = make_synthetic_graph();
  KgeModel kge(KgeKind::RotatE, g.num_entities(), g.num_relations(), 16, 8, 6);

  InstanceDatasetConfig cfg;
  cfg.K = 4;
  cfg.mode = AnswerMode::Variable;
  const auto data = build_instance_dataset(g, kge, cfg);
  REQUIRE(data.size() > 50);

  const auto dir = fresh_dir("roundtrip");
  const auto path = (dir / "instances.jsonl").string();
  save_instances(path, data);
  const auto loaded = load_instances(path, g);

  REQUIRE(loaded.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(loaded[i].h == data[i].h);
    CHECK(loaded[i].r == data[i].r);
    CHECK(loaded[i].tier == data[i].tier);
    CHECK(loaded[i].mode == data[i].mode);
    CHECK(loaded[i].seed == data[i].seed);
    CHECK(loaded[i].e_pos == data[i].e_pos);
    CHECK(loaded[i].prompt == data[i].prompt);  // re-rendered, same template
    CHECK(loaded[i].target == data[i].target);
    REQUIRE(loaded[i].options.size() == data[i].options.size());
    for (std::size_t k = 0; k < data[i].options.size(); ++k) {
      CHECK(loaded[i].options[k].label == data[i].options[k].label);
      CHECK(loaded[i].options[k].entity == data[i].options[k].entity);
      CHECK(loaded[i].options[k].is_positive == data[i].options[k].is_positive);
      CHECK(loaded[i].options[k].kge_score ==
            doctest::Approx(data[i].options[k].kge_score).epsilon(1e-12));
    }
  }

  // a different template re-renders prompts without touching the data
  const auto cot = load_instances(path, g, kCotPromptTemplate);
  CHECK(cot.front().prompt != data.front().prompt);
  CHECK(cot.front().options.size() == data.front().options.size());

  std::ofstream(path, std::ios::app) << "{ not json\n";
  CHECK_THROWS_WITH_AS(load_instances(path, g), doctest::Contains("instances.jsonl:"),
                       std::runtime_error);

  const auto bad = (dir / "bad.jsonl").string();
  std::ofstream(bad) << R"({"h":0,"r":0,"options":[{"label":"A","entity":1,"positive":true,)"
                     << R"("score":0.0},{"label":"B","entity":2,"positive":false,"score":0.0}],)"
                     << R"("e_pos":["B"],"tier":2,"mode":"single","seed":1})"
                     << "\n";
  CHECK_THROWS_WITH_AS(load_instances(bad, g), doctest::Contains("e_pos"), std::runtime_error);
}

TEST_CASE("construction errors carry usable messages") {
  auto g = tiny_graph();
  KgeModel kge(KgeKind::DistMult, g.num_entities(), g.num_relations(), 4, 4, 1);
  const EntityId a = *g.find_entity("a");
  const EntityId d = *g.find_entity("d");
  const RelationId likes = *g.find_relation("likes");

  CHECK_THROWS_WITH_AS(build_instance(g, kge, a, likes, 1, 2, AnswerMode::Single, 1),
                       doctest::Contains("[2, 26]"), std::runtime_error);
  CHECK_THROWS_WITH_AS(build_instance(g, kge, a, likes, 27, 2, AnswerMode::Single, 1),
                       doctest::Contains("[2, 26]"), std::runtime_error);
  CHECK_THROWS_WITH_AS(build_instance(g, kge, a, likes, 4, 0, AnswerMode::Single, 1),
                       doctest::Contains("tier"), std::runtime_error);

  // d heads no train triple
  CHECK_THROWS_WITH_AS(build_instance(g, kge, d, likes, 2, 2, AnswerMode::Single, 1),
                       doctest::Contains("no train-split answers"), std::runtime_error);

  // (a, likes) has gt {b}, so only 3 negatives exist; K=5 needs 4
  CHECK_THROWS_WITH_AS(build_instance(g, kge, a, likes, 5, 2, AnswerMode::Single, 1),
                       doctest::Contains("insufficient tier-2 negatives"), std::runtime_error);
}
