#include "kgr/eval.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "kgr/rng.hpp"

namespace kgr {

int filtered_rank(const std::vector<double>& scores, EntityId t_true,
                  const std::vector<EntityId>& filter) {
  if (t_true < 0 || static_cast<std::size_t>(t_true) >= scores.size())
    throw std::runtime_error("filtered_rank: true entity missing from the score table");
  std::vector<char> skip(scores.size(), 0);
  for (EntityId e : filter) {
    if (e == t_true)
      throw std::runtime_error("filtered_rank: filter contains the true entity");
    if (e < 0 || static_cast<std::size_t>(e) >= scores.size())
      throw std::runtime_error("filtered_rank: filter entity outside the score table");
    skip[static_cast<std::size_t>(e)] = 1;
  }
  const double s = scores[static_cast<std::size_t>(t_true)];
  int rank = 1;
  for (std::size_t e = 0; e < scores.size(); ++e) {
    if (skip[e] || static_cast<EntityId>(e) == t_true) continue;
    if (scores[e] >= s) ++rank;
  }
  return rank;
}

double mrr(const std::vector<int>& ranks) {
  if (ranks.empty()) throw std::runtime_error("mrr: no ranks");
  double acc = 0.0;
  for (int r : ranks) acc += 1.0 / r;
  return acc / static_cast<double>(ranks.size());
}

double hits_at_k(const std::vector<int>& ranks, int k) {
  if (ranks.empty()) throw std::runtime_error("hits_at_k: no ranks");
  double hit = 0.0;
  for (int r : ranks) hit += r <= k ? 1.0 : 0.0;
  return hit / static_cast<double>(ranks.size());
}

MetricsReport aggregate_ranking(const std::vector<RankingResult>& results) {
  std::vector<int> ranks;
  ranks.reserve(results.size());
  int fallbacks = 0;
  for (const auto& q : results) {
    ranks.push_back(q.rank);
    fallbacks += q.fallback ? 1 : 0;
  }
  MetricsReport r;
  r.n = static_cast<int>(results.size());
  r.mrr = mrr(ranks);
  r.hits1 = hits_at_k(ranks, 1);
  r.hits3 = hits_at_k(ranks, 3);
  r.hits10 = hits_at_k(ranks, 10);
  r.fallback_fraction = static_cast<double>(fallbacks) / static_cast<double>(results.size());
  return r;
}

std::vector<EntityId> query_filter(const KnowledgeGraph& g, const Triple& x) {
  const auto& gt = g.ground_truth_tails(x.h, x.r, GtScope::All);
  std::vector<EntityId> filter;
  filter.reserve(gt.size());
  for (EntityId e : gt)
    if (e != x.t) filter.push_back(e);
  return filter;
}

std::vector<RankingResult> kge_ranks(const KgeModel& kge, const KnowledgeGraph& g, Split split) {
  std::vector<RankingResult> out;
  std::vector<double> scores;
  for (const Triple& x : g.triples(split)) {
    kge.score_all_tails(x.h, x.r, scores);
    out.push_back({x, filtered_rank(scores, x.t, query_filter(g, x)), false});
  }
  return out;
}

std::vector<RankingResult> link_predict_ranks(const KgeModel& kge, const ProbeClassifier& probe,
                                              const RepresentationProvider& provider,
                                              const KnowledgeGraph& g, int top_n, int layer,
                                              Split split, int threads) {
  if (top_n < 1) throw std::runtime_error("link_predict: top_n must be >= 1");
  const auto& queries = g.triples(split);
  std::vector<RankingResult> out(queries.size());

  auto worker = [&](std::size_t lo, std::size_t hi) {
    std::vector<double> scores, rerank;
    for (std::size_t qi = lo; qi < hi; ++qi) {
      const Triple& x = queries[qi];
      const auto filter = query_filter(g, x);
      const auto top = retrieve_topn(kge, x.h, x.r, top_n, filter);

      RankingResult res;
      res.query = x;
      std::size_t at = top.size();
      for (std::size_t i = 0; i < top.size(); ++i)
        if (top[i].entity == x.t) at = i;

      if (at == top.size()) {
        // the retriever missed the true tail; its filtered rank stands
        kge.score_all_tails(x.h, x.r, scores);
        res.rank = filtered_rank(scores, x.t, filter);
        res.fallback = true;
      } else {
        rerank.resize(top.size());
        for (std::size_t i = 0; i < top.size(); ++i)
          rerank[i] =
              probe.score(provider.representation({x.h, x.r, top[i].entity}, layer));
        int rank = 1;
        for (std::size_t i = 0; i < top.size(); ++i)
          if (i != at && rerank[i] >= rerank[at]) ++rank;
        res.rank = rank;
      }
      out[qi] = res;
    }
  };

  const int jobs = std::max(1, threads);
  if (jobs == 1 || queries.size() < 2) {
    worker(0, queries.size());
  } else {
    // independent queries land in pre-assigned slots, so the thread count
    // never changes the result
    std::vector<std::thread> pool;
    const std::size_t chunk = (queries.size() + jobs - 1) / static_cast<std::size_t>(jobs);
    for (std::size_t lo = 0; lo < queries.size(); lo += chunk)
      pool.emplace_back(worker, lo, std::min(lo + chunk, queries.size()));
    for (auto& th : pool) th.join();
  }
  return out;
}

MetricsReport link_predict(const KgeModel& kge, const ProbeClassifier& probe,
                           const RepresentationProvider& provider, const KnowledgeGraph& g,
                           int top_n, int layer, Split split, int threads) {
  auto report =
      aggregate_ranking(link_predict_ranks(kge, probe, provider, g, top_n, layer, split, threads));
  report.task = "link_prediction";
  report.l = layer;
  return report;
}

MetricsReport triple_classify(const ProbeClassifier& probe, const RepresentationProvider& provider,
                              const std::vector<LabeledTriple>& labeled, int layer,
                              double threshold) {
  if (labeled.empty()) throw std::runtime_error("triple_classify: empty evaluation set");
  int correct = 0;
  for (const auto& lt : labeled) {
    const auto z = provider.representation(lt.triple, layer);
    const int pred = probe.score(z) >= threshold ? 1 : 0;
    correct += pred == lt.label ? 1 : 0;
  }
  MetricsReport r;
  r.task = "triple_classification";
  r.n = static_cast<int>(labeled.size());
  r.l = layer;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(labeled.size());
  return r;
}

MetricsReport triple_classify(const ProbeClassifier& probe, const RepresentationProvider& provider,
                              const std::vector<LabeledTriple>& labeled, int layer) {
  return triple_classify(probe, provider, labeled, layer, probe.threshold());
}

std::vector<LayerSweepEntry> layer_sweep(const RepresentationProvider& provider,
                                         const std::vector<LabeledTriple>& labeled,
                                         const std::vector<int>& layers,
                                         const LayerSweepConfig& cfg) {
  if (cfg.holdout_stride < 2)
    throw std::runtime_error("layer_sweep: holdout stride must be >= 2");
  if (static_cast<int>(labeled.size()) < cfg.holdout_stride)
    throw std::runtime_error("layer_sweep: too few rows to hold out a readout set");
  std::vector<LayerSweepEntry> out;
  Rng rng(cfg.train.seed);
  for (int layer : layers) {
    const auto all = extract_representations(provider, labeled, layer);
    ProbeData train, readout;
    train.dim = readout.dim = all.dim;
    train.layer = readout.layer = layer;
    for (int i = 0; i < all.size(); ++i) {
      auto& dst = (i % cfg.holdout_stride == cfg.holdout_stride - 1) ? readout : train;
      const auto* row = all.X.data() + static_cast<std::size_t>(i) * all.dim;
      dst.X.insert(dst.X.end(), row, row + all.dim);
      dst.y.push_back(all.y[static_cast<std::size_t>(i)]);
    }
    ProbeClassifier probe(all.dim, cfg.hidden,
                          rng.fork(static_cast<std::uint64_t>(layer)).seed());
    const auto result = train_probe(probe, train, readout, cfg.train);
    out.push_back({layer, result.valid_accuracy});
  }
  return out;
}

void save_layer_sweep_csv(const std::string& path, const std::vector<LayerSweepEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "layer,accuracy\n";
  for (const auto& e : entries) out << e.layer << ',' << e.accuracy << '\n';
}

MetricsReport inductive_report(const InductiveSplit& split,
                               const std::function<double(const Triple&)>& per_triple_metric) {
  MetricsReport r;
  r.task = "inductive";

  double sum_seen = 0.0, sum_unseen = 0.0;
  for (const Triple& x : split.seen_test) sum_seen += per_triple_metric(x);
  for (const Triple& x : split.unseen_test) sum_unseen += per_triple_metric(x);

  const auto ns = static_cast<int>(split.seen_test.size());
  const auto nu = static_cast<int>(split.unseen_test.size());
  auto stratum = [](int n, double sum) {
    StratumMetrics s;
    s.n = n;
    s.accuracy = sum / static_cast<double>(n);
    return s;
  };
  if (ns > 0) r.strata["S"] = stratum(ns, sum_seen);
  if (nu > 0) r.strata["U"] = stratum(nu, sum_unseen);
  if (ns + nu > 0) {
    r.strata["A"] = stratum(ns + nu, sum_seen + sum_unseen);
    r.accuracy = r.strata["A"].accuracy;
  }
  r.n = ns + nu;
  return r;
}

std::string metrics_json(const MetricsReport& r) {
  nlohmann::json j;
  j["task"] = r.task;
  j["dataset"] = r.dataset;
  j["n"] = r.n;
  j["l"] = r.l;
  j["mrr"] = r.mrr;
  j["hits1"] = r.hits1;
  j["hits3"] = r.hits3;
  j["hits10"] = r.hits10;
  j["accuracy"] = r.accuracy;
  j["fallback_fraction"] = r.fallback_fraction;
  j["seed"] = r.seed;
  if (r.strata.empty()) {
    j["strata"] = nullptr;
  } else {
    for (const auto& [name, s] : r.strata) {
      j["strata"][name] = {{"n", s.n},         {"mrr", s.mrr},     {"hits1", s.hits1},
                           {"hits3", s.hits3}, {"hits10", s.hits10}, {"accuracy", s.accuracy}};
    }
  }
  return j.dump(2) + "\n";
}

void save_metrics_json(const std::string& path, const MetricsReport& r) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << metrics_json(r);
}

}  // namespace kgr
