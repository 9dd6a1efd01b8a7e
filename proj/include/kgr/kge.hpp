#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kgr/graph.hpp"

namespace kgr {

enum class KgeKind { TransE, DistMult, ComplEx, RotatE, TuckER };

KgeKind kge_kind_from_string(const std::string& name);
std::string kge_kind_name(KgeKind kind);

struct KgeTrainConfig {
  int epochs = 200;
  int batch_size = 128;
  double lr = 0.05;
  int negatives = 8;          // sampled negatives per positive (BCE kinds)
  double margin = 4.0;        // margin ranking kinds (TransE, RotatE)
  double reg = 1e-6;          // L2 weight decay on touched parameters (BCE kinds)
  bool adaptive = true;       // AdaGrad per-parameter scaling
  double corrupt_head_prob = 0.5;
  int threads = 1;            // forward/backward fan-out; reduction order fixed
  std::uint64_t seed = 7;
};

struct ScoredEntity {
  EntityId entity;
  double score;
};

// Embedding scorer over (h, r, t). Higher score = more plausible.
//   TransE    -||e_h + w_r - e_t||_2
//   DistMult  <e_h, w_r, e_t>
//   ComplEx   Re<e_h, w_r, conj(e_t)>     (interleaved re/im pairs)
//   RotatE    -sum_k |h_k * exp(i th_k) - t_k|   (relation = d_e/2 phases)
//   TuckER    W x1 e_h x2 w_r x3 e_t
class KgeModel {
 public:
  KgeModel(KgeKind kind, int num_entities, int num_relations, int dim_entity, int dim_relation,
           std::uint64_t seed);

  KgeKind kind() const { return kind_; }
  int num_entities() const { return num_entities_; }
  int num_relations() const { return num_relations_; }
  int dim_entity() const { return d_e_; }
  int dim_relation() const { return d_r_; }

  double score(EntityId h, RelationId r, EntityId t) const;
  // Scores for every entity as tail of (h, r); out.size() == |E|.
  void score_all_tails(EntityId h, RelationId r, std::vector<double>& out) const;

  void save(const std::string& path) const;
  static KgeModel load(const std::string& path);
  // Throws if the checkpoint does not match the graph's entity/relation counts.
  static KgeModel load_for_graph(const std::string& path, const KnowledgeGraph& g);

  std::vector<double>& entity_parameters() { return ent_; }
  std::vector<double>& relation_parameters() { return rel_; }
  std::vector<double>& core_parameters() { return core_; }
  const std::vector<double>& entity_parameters() const { return ent_; }
  const std::vector<double>& relation_parameters() const { return rel_; }
  const std::vector<double>& core_parameters() const { return core_; }

 private:
  friend struct KgeTrainer;
  // Query part of the score shared by all tails of (h, r); layout per kind.
  void query_vector(EntityId h, RelationId r, std::vector<double>& q) const;
  double score_against_query(const std::vector<double>& q, EntityId t) const;

  KgeKind kind_;
  int num_entities_, num_relations_, d_e_, d_r_;
  std::vector<double> ent_;   // |E| x d_e row-major
  std::vector<double> rel_;   // |R| x d_r row-major
  std::vector<double> core_;  // d_e x d_r x d_e (TuckER only)
};

struct KgeTrainResult {
  std::vector<double> loss_history;  // mean loss per epoch
};

// Negative-sampling training. Margin ranking loss for TransE/RotatE, binary
// cross-entropy with sampled negatives for DistMult/ComplEx/TuckER; negatives
// filtered against the train split. Throws on non-finite loss, naming the
// epoch. Deterministic per seed (threads split batches in fixed order).
KgeTrainResult train_kge(KgeModel& model, const KnowledgeGraph& g, const KgeTrainConfig& cfg);

KgeModel train_kge(const KnowledgeGraph& g, KgeKind kind, int dim_entity, int dim_relation,
                   const KgeTrainConfig& cfg);

// All entities outside filter (sorted id list), ordered by descending score,
// ties by ascending entity id.
std::vector<ScoredEntity> rank_all_tails(const KgeModel& model, EntityId h, RelationId r,
                                         const std::vector<EntityId>& filter);

// First min(n, available) entries of rank_all_tails.
std::vector<ScoredEntity> retrieve_topn(const KgeModel& model, EntityId h, RelationId r, int n,
                                        const std::vector<EntityId>& filter);

}  // namespace kgr
