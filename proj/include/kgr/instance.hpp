#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kgr/graph.hpp"
#include "kgr/kge.hpp"

namespace kgr {

// Discriminative selection instances: a tail query (h, r, ?) with K labeled
// candidate entities, some true answers and some embedding-stratified
// negatives. The policy's job is to emit the label set of the true answers.

enum class AnswerMode { Single, Variable };

std::string answer_mode_name(AnswerMode m);
AnswerMode answer_mode_from_string(const std::string& s);

struct CandidateOption {
  char label;        // 'A', 'B', ... unique within the instance
  EntityId entity;
  bool is_positive;
  double kge_score;  // raw retriever score of (h, r, entity)
};

struct TierConfig {
  double q_lo = 0.25;  // tier 1 = scores below this quantile
  double q_hi = 0.75;  // tier 3 = scores above this quantile
  // Number of lowest-id non-gt entities scored; 0 = all of them. A cap for
  // very large entity sets.
  int pool_size = 0;
};

// Non-gt candidates stratified by retriever score. Each pool is ordered by
// (score ascending, id ascending). tier2 spans the whole pool.
struct NegativeTiers {
  std::vector<EntityId> tier1, tier2, tier3;
  std::vector<double> tier2_scores;  // aligned with tier2
};

NegativeTiers stratify_negatives(const KnowledgeGraph& g, const KgeModel& kge, EntityId h,
                                 RelationId r, const TierConfig& tc = {});

struct DiscriminativeInstance {
  EntityId h = -1;
  RelationId r = -1;
  std::vector<CandidateOption> options;  // length K, labels 'A' + index
  std::vector<char> e_pos;               // positive labels, ascending
  int tier = 2;                          // 1 easy, 2 random, 3 hard
  AnswerMode mode = AnswerMode::Single;
  std::uint64_t seed = 0;
  std::string prompt;  // rendered query text
  std::string target;  // rendered rationale + answer line

  std::vector<char> labels() const;  // all option labels, ascending
};

extern const std::string kDefaultPromptTemplate;  // name-only option lines
extern const std::string kCotPromptTemplate;      // adds descriptions

// Renders `tmpl` against the instance. Placeholders: {head} {relation}
// {head_desc} {options} {options_desc}. Unknown placeholders are errors.
std::string render_prompt(const DiscriminativeInstance& inst, const KnowledgeGraph& g,
                          const std::string& tmpl);

// Deterministic rationale: one compatibility sentence per option, then the
// final line `Answer: <positive labels>`.
std::string render_cot_target(const DiscriminativeInstance& inst, const KnowledgeGraph& g);

// Positives come from the train-split gt only; negatives are excluded from
// the gt over all splits. mode=Single exposes one positive; mode=Variable
// draws p ~ uniform{1..min(K-1, |gt|)} positives. Deterministic per seed.
DiscriminativeInstance build_instance(const KnowledgeGraph& g, const KgeModel& kge, EntityId h,
                                      RelationId r, int K, int tier, AnswerMode mode,
                                      std::uint64_t seed, const TierConfig& tc = {},
                                      const std::string& prompt_template = kDefaultPromptTemplate);

// Extracts the last line of the form `Answer: L(, L)*` with unique labels
// drawn from valid_labels. Returns the sorted label set, or nullopt when no
// such line exists or the line violates the grammar. Never throws on text.
std::optional<std::vector<char>> parse_answer(const std::string& text,
                                              const std::vector<char>& valid_labels);

struct InstanceDatasetConfig {
  int K = 4;
  int tier = 2;
  AnswerMode mode = AnswerMode::Single;
  TierConfig tiers;
  int per_query = 1;  // instances per distinct train query (h, r)
  std::uint64_t seed = 13;
  std::string prompt_template = kDefaultPromptTemplate;
};

// One pass over the distinct train queries (first-appearance order); skips
// queries whose negative pool cannot fill an instance.
std::vector<DiscriminativeInstance> build_instance_dataset(const KnowledgeGraph& g,
                                                           const KgeModel& kge,
                                                           const InstanceDatasetConfig& cfg);

// One JSON record per line; prompts and targets are re-rendered on load so
// template changes propagate without rebuilding datasets.
void save_instances(const std::string& path, const std::vector<DiscriminativeInstance>& v);
std::vector<DiscriminativeInstance> load_instances(
    const std::string& path, const KnowledgeGraph& g,
    const std::string& prompt_template = kDefaultPromptTemplate);

}  // namespace kgr
