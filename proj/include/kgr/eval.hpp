#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "kgr/graph.hpp"
#include "kgr/kge.hpp"
#include "kgr/probe.hpp"

namespace kgr {

// Ranking protocols and metric reports. Ties are always charged against the
// queried entity, so a reported rank never flatters the model.

struct RankingResult {
  Triple query;
  int rank = 1;
  bool fallback = false;  // rank came from the retriever, not the reranker
};

struct StratumMetrics {
  int n = 0;
  double mrr = 0.0;
  double hits1 = 0.0, hits3 = 0.0, hits10 = 0.0;
  double accuracy = 0.0;
};

struct MetricsReport {
  std::string task;
  std::string dataset;
  int n = 0;
  int l = 0;  // probe layer; 0 when no probe was involved
  double mrr = 0.0;
  double hits1 = 0.0, hits3 = 0.0, hits10 = 0.0;
  double accuracy = 0.0;
  double fallback_fraction = 0.0;
  std::uint64_t seed = 0;
  std::map<std::string, StratumMetrics> strata;  // "S"/"U"/"A"; empty = none
};

// Rank of t_true in a dense score table, skipping filtered entities. Entities
// scoring equal to t_true count ahead of it. filter must not contain t_true.
int filtered_rank(const std::vector<double>& scores, EntityId t_true,
                  const std::vector<EntityId>& filter);

double mrr(const std::vector<int>& ranks);
double hits_at_k(const std::vector<int>& ranks, int k);

// mrr, hits, n, and fallback_fraction from per-query results.
MetricsReport aggregate_ranking(const std::vector<RankingResult>& results);

// Known tails of (h, r) across every split, minus t itself; the filter for a
// tail query on that triple.
std::vector<EntityId> query_filter(const KnowledgeGraph& g, const Triple& x);

// Pure-retriever filtered ranking over the split's tail queries.
std::vector<RankingResult> kge_ranks(const KgeModel& kge, const KnowledgeGraph& g, Split split);

// Retrieve top_n filtered tails, then rerank them with the probe over layer-l
// states. A true tail the retriever missed keeps its retriever rank and is
// flagged as a fallback.
std::vector<RankingResult> link_predict_ranks(const KgeModel& kge, const ProbeClassifier& probe,
                                              const RepresentationProvider& provider,
                                              const KnowledgeGraph& g, int top_n, int layer,
                                              Split split = Split::Test, int threads = 1);
MetricsReport link_predict(const KgeModel& kge, const ProbeClassifier& probe,
                           const RepresentationProvider& provider, const KnowledgeGraph& g,
                           int top_n, int layer, Split split = Split::Test, int threads = 1);

// Probe accuracy over labeled triples at an explicit decision threshold, or
// at the probe's stored threshold.
MetricsReport triple_classify(const ProbeClassifier& probe, const RepresentationProvider& provider,
                              const std::vector<LabeledTriple>& labeled, int layer,
                              double threshold);
MetricsReport triple_classify(const ProbeClassifier& probe, const RepresentationProvider& provider,
                              const std::vector<LabeledTriple>& labeled, int layer);

struct LayerSweepEntry {
  int layer = 0;
  double accuracy = 0.0;
};

struct LayerSweepConfig {
  int hidden = 16;
  int holdout_stride = 5;  // every stride-th row becomes the accuracy readout
  ProbeTrainConfig train;
};

// Trains an independent probe per listed layer and reports its held-out
// accuracy; the informative layer wins the sweep.
std::vector<LayerSweepEntry> layer_sweep(const RepresentationProvider& provider,
                                         const std::vector<LabeledTriple>& labeled,
                                         const std::vector<int>& layers,
                                         const LayerSweepConfig& cfg);
void save_layer_sweep_csv(const std::string& path, const std::vector<LayerSweepEntry>& entries);

// Applies a per-triple score to each stratum of an inductive split. The
// overall stratum A is the count-weighted combination of S and U by
// construction; empty strata are omitted rather than reported as zero.
MetricsReport inductive_report(const InductiveSplit& split,
                               const std::function<double(const Triple&)>& per_triple_metric);

std::string metrics_json(const MetricsReport& r);
void save_metrics_json(const std::string& path, const MetricsReport& r);

}  // namespace kgr
