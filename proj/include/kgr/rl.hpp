#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kgr/instance.hpp"
#include "kgr/policy.hpp"

namespace kgr {

// Group-relative policy optimization over discriminative instances. Groups
// of rollouts are drawn per instance from a frozen copy of the policy; each
// rollout's reward is standardized within its group to form the advantage,
// and a clipped importance-ratio surrogate plus an exact per-step KL back to
// the pre-training reference keeps updates near the starting policy.

struct RewardBreakdown {
  double format = 0.0;    // 1 when the decoded text parses, else 0
  double accuracy = 0.0;  // Dice overlap between predicted and true labels
  double total = 0.0;     // alpha * format + (1 - alpha) * accuracy
};

// 1 iff `text` contains a well-formed final answer line over valid_labels.
double format_reward(const std::string& text, const std::vector<char>& valid_labels);

// 2|A ∩ P| / (|A| + |P|) for parsed answer A and positives P; 0 on parse
// failure. Equals 1 exactly when the predicted set matches.
double accuracy_reward(const std::string& text, const std::vector<char>& valid_labels,
                       const std::vector<char>& positives);

RewardBreakdown composite_reward(const std::string& text, const DiscriminativeInstance& inst,
                                 double alpha);

// Within-group standardization: (r - mean) / max(population std, floor).
std::vector<double> group_advantages(const std::vector<double>& rewards, double floor = 1e-8);

struct GrpoConfig {
  int iterations = 60;
  int group_size = 8;       // rollouts per instance
  int batch_instances = 8;  // instances refreshed per iteration
  double clip = 0.2;        // importance-ratio clip half-width
  double kl_weight = 0.04;  // weight of the KL-to-reference term
  double alpha = 0.1;       // format share of the composite reward
  double adv_floor = 1e-8;
  double lr = 0.01;
  double temperature = 1.0;  // rollout sampling temperature
  std::uint64_t seed = 31;
  std::string log_path;  // optional per-iteration CSV
};

struct GrpoStats {
  int iteration = 0;
  double mean_reward = 0.0;
  double mean_format = 0.0;
  double mean_accuracy = 0.0;
  double kl = 0.0;
  double loss = 0.0;
};

struct GrpoResult {
  std::vector<GrpoStats> history;
};

// Clipped-surrogate loss plus kl_weight times the exact KL to ref_policy for
// one instance's rollout group, with gradients for `policy` accumulated into
// grad (same layout as parameters(); may be null). Rollout i contributes
// -min(w A, clip(w) A) / G with w = exp(lp - lp_old); the KL term is the
// full per-step distribution KL summed over positions, averaged over the
// group. kl_out (optional) receives that average.
double grpo_loss(const SequencePolicy& policy, const SequencePolicy& old_policy,
                 const SequencePolicy& ref_policy, const PolicyInput& in,
                 const std::vector<std::vector<int>>& rollouts,
                 const std::vector<double>& advantages, const GrpoConfig& cfg,
                 std::vector<double>* grad, double* kl_out = nullptr);

// Optimizes `policy` in place; the reference policy is a snapshot taken at
// entry and the rollout policy is re-snapshotted every iteration.
GrpoResult grpo_train(SequencePolicy& policy, const std::vector<DiscriminativeInstance>& data,
                      const GrpoConfig& cfg);

// Mean composite reward of greedy decodes over a dataset; the evaluation
// counterpart of the training reward.
RewardBreakdown evaluate_policy(const SequencePolicy& policy,
                                const std::vector<DiscriminativeInstance>& data, double alpha);

}  // namespace kgr
