#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace kgr {

using EntityId = std::int32_t;
using RelationId = std::int32_t;

struct Triple {
  EntityId h;
  RelationId r;
  EntityId t;
  bool operator==(const Triple&) const = default;
};

struct TripleHash {
  std::size_t operator()(const Triple& x) const {
    std::uint64_t k = static_cast<std::uint32_t>(x.h);
    k = k * 0x9E3779B97F4A7C15ull + static_cast<std::uint32_t>(x.r);
    k = k * 0x9E3779B97F4A7C15ull + static_cast<std::uint32_t>(x.t);
    k ^= k >> 29;
    return static_cast<std::size_t>(k);
  }
};

struct LabeledTriple {
  Triple triple;
  int label;  // 1 = true triple, 0 = corrupted
};

enum class Split { Train, Valid, Test };

// Which splits back the ground-truth index. All = train+valid+test (filtered
// evaluation); TrainOnly / TrainValid restrict lookups for leakage-sensitive
// instance construction.
enum class GtScope { All, TrainOnly, TrainValid };

std::string split_name(Split s);

// Dictionary-encoded knowledge graph. Entity/relation ids are dense and
// assigned by first appearance while scanning train, valid, test in order,
// so saving and reloading reproduces identical id maps. Immutable after load.
class KnowledgeGraph {
 public:
  // text_path holds `key<TAB>short name` rows for entities and relations;
  // desc_path (optional) holds `key<TAB>long description` rows for entities.
  static KnowledgeGraph load(const std::string& train_path, const std::string& valid_path,
                             const std::string& test_path, const std::string& text_path,
                             const std::string& desc_path = "");

  // In-memory construction, used by the synthetic generator and tests.
  // Triples refer to indices into entity_keys / relation_keys.
  static KnowledgeGraph build(std::vector<std::string> entity_keys,
                              std::vector<std::string> relation_keys, std::vector<Triple> train,
                              std::vector<Triple> valid, std::vector<Triple> test,
                              std::unordered_map<std::string, std::string> text,
                              std::unordered_map<std::string, std::string> desc = {});

  // Writes train.txt/valid.txt/test.txt/text.txt (and desc.txt when any
  // description is present) under dir. load() of the result round-trips.
  void save(const std::string& dir) const;

  int num_entities() const { return static_cast<int>(entity_keys_.size()); }
  int num_relations() const { return static_cast<int>(relation_keys_.size()); }

  const std::vector<Triple>& triples(Split s) const;

  const std::string& entity_key(EntityId e) const { return entity_keys_.at(static_cast<std::size_t>(e)); }
  const std::string& relation_key(RelationId r) const { return relation_keys_.at(static_cast<std::size_t>(r)); }
  const std::string& entity_text(EntityId e) const { return entity_text_.at(static_cast<std::size_t>(e)); }
  const std::string& relation_text(RelationId r) const { return relation_text_.at(static_cast<std::size_t>(r)); }
  // Long-form description; falls back to the short name when absent.
  const std::string& entity_desc(EntityId e) const;

  std::optional<EntityId> find_entity(const std::string& key) const;
  std::optional<RelationId> find_relation(const std::string& key) const;

  // E_gt(h, r) as a sorted entity list; empty when the query is unknown.
  const std::vector<EntityId>& ground_truth_tails(EntityId h, RelationId r,
                                                  GtScope scope = GtScope::All) const;
  bool is_known_tail(EntityId h, RelationId r, EntityId t, GtScope scope = GtScope::All) const;
  bool contains(const Triple& x, Split s) const;

  // (h, r, t') with t' uniform over entities outside E_gt(h, r). Deterministic
  // per seed. Throws when every entity is a known tail.
  Triple corrupt_tail(const Triple& x, std::uint64_t seed) const;

  // Split triples labeled 1 plus one filtered tail corruption each labeled 0.
  std::vector<LabeledTriple> balanced_classification_set(Split s, std::uint64_t seed) const;

  int duplicates_removed() const { return duplicates_removed_; }

  // {"entities":…, "relations":…, "train":…, "valid":…, "test":…}
  std::string stats_json() const;

 private:
  KnowledgeGraph() = default;
  void index();
  EntityId intern_entity(const std::string& key);
  RelationId intern_relation(const std::string& key);

  std::vector<std::string> entity_keys_;
  std::vector<std::string> relation_keys_;
  std::unordered_map<std::string, EntityId> entity_ids_;
  std::unordered_map<std::string, RelationId> relation_ids_;
  std::vector<std::string> entity_text_;
  std::vector<std::string> relation_text_;
  std::vector<std::string> entity_desc_;  // empty string = no description
  std::vector<Triple> train_, valid_, test_;
  // gt index per scope, keyed by (h << 32 | r); tail lists sorted ascending
  std::unordered_map<std::uint64_t, std::vector<EntityId>> gt_all_, gt_train_, gt_train_valid_;
  int duplicates_removed_ = 0;
};

struct InductiveSplit {
  double rho = 0.0;
  std::vector<EntityId> inductive_entities;  // sorted
  std::vector<Triple> reduced_train;
  std::vector<Triple> seen_test;    // S: no inductive entity
  std::vector<Triple> unseen_test;  // U: at least one inductive entity
};

// Designates floor(rho * |E|) entities as inductive (uniform, seeded), drops
// every training triple touching them, and stratifies test into S/U.
InductiveSplit make_inductive_split(const KnowledgeGraph& g, double rho, std::uint64_t seed);

}  // namespace kgr
