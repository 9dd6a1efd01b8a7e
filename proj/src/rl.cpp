#include "kgr/rl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "kgr/rng.hpp"

namespace kgr {

double format_reward(const std::string& text, const std::vector<char>& valid_labels) {
  return parse_answer(text, valid_labels).has_value() ? 1.0 : 0.0;
}

double accuracy_reward(const std::string& text, const std::vector<char>& valid_labels,
                       const std::vector<char>& positives) {
  const auto parsed = parse_answer(text, valid_labels);
  if (!parsed.has_value()) return 0.0;
  std::vector<char> sorted_pos = positives;
  std::sort(sorted_pos.begin(), sorted_pos.end());
  std::vector<char> common;
  std::set_intersection(parsed->begin(), parsed->end(), sorted_pos.begin(), sorted_pos.end(),
                        std::back_inserter(common));
  const double denom = static_cast<double>(parsed->size() + sorted_pos.size());
  return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(common.size()) / denom;
}

RewardBreakdown composite_reward(const std::string& text, const DiscriminativeInstance& inst,
                                 double alpha) {
  RewardBreakdown out;
  const auto labels = inst.labels();
  out.format = format_reward(text, labels);
  out.accuracy = accuracy_reward(text, labels, inst.e_pos);
  out.total = alpha * out.format + (1.0 - alpha) * out.accuracy;
  return out;
}

std::vector<double> group_advantages(const std::vector<double>& rewards, double floor) {
  if (rewards.empty()) throw std::runtime_error("group_advantages: empty group");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::max(std::sqrt(var / n), floor);
  std::vector<double> out;
  out.reserve(rewards.size());
  for (double r : rewards) out.push_back((r - mean) / sd);
  return out;
}

double grpo_loss(const SequencePolicy& policy, const SequencePolicy& old_policy,
                 const SequencePolicy& ref_policy, const PolicyInput& in,
                 const std::vector<std::vector<int>>& rollouts,
                 const std::vector<double>& advantages, const GrpoConfig& cfg,
                 std::vector<double>* grad, double* kl_out) {
  if (rollouts.empty()) throw std::runtime_error("grpo_loss: empty rollout group");
  if (rollouts.size() != advantages.size())
    throw std::runtime_error("grpo_loss: rollouts and advantages disagree");
  const auto G = static_cast<double>(rollouts.size());
  const int V = policy.vocab_size();

  double surrogate = 0.0;
  double kl_total = 0.0;
  std::vector<double> dlogits;
  for (std::size_t i = 0; i < rollouts.size(); ++i) {
    const auto& tokens = rollouts[i];
    const auto T = tokens.size();
    const auto logp = policy.step_logprobs(in, tokens);
    const auto logp_ref = ref_policy.step_logprobs(in, tokens);

    double lp = 0.0, lp_old = 0.0;
    for (std::size_t t = 0; t < T; ++t)
      lp += logp[t * V + static_cast<std::size_t>(tokens[t])];
    lp_old = old_policy.sequence_logprob(in, tokens);

    const double w = std::exp(lp - lp_old);
    const double a = advantages[i];
    const double w_clipped = std::clamp(w, 1.0 - cfg.clip, 1.0 + cfg.clip);
    const bool unclipped_active = w * a <= w_clipped * a;
    surrogate += std::min(w * a, w_clipped * a) / G;

    if (grad) dlogits.assign(T * static_cast<std::size_t>(V), 0.0);

    double kl_seq = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double* lpt = logp.data() + t * V;
      const double* lrt = logp_ref.data() + t * V;
      double kl_t = 0.0;
      for (int v = 0; v < V; ++v) kl_t += std::exp(lpt[v]) * (lpt[v] - lrt[v]);
      kl_seq += kl_t;

      if (grad) {
        double* dl = dlogits.data() + t * V;
        // d(beta * KL_t)/dz_v under softmax logits z
        for (int v = 0; v < V; ++v)
          dl[v] += cfg.kl_weight / G * std::exp(lpt[v]) * ((lpt[v] - lrt[v]) - kl_t);
        // the clipped branch is constant in theta, so only the active
        // unclipped branch propagates: -(w a / G) * dlogp
        if (unclipped_active) {
          const double coef = -w * a / G;
          const int y = tokens[t];
          for (int v = 0; v < V; ++v) dl[v] += coef * (-std::exp(lpt[v]));
          dl[y] += coef;
        }
      }
    }
    kl_total += kl_seq / G;
    if (grad) policy.backward_from_logits(in, tokens, dlogits, *grad);
  }

  if (kl_out) *kl_out = kl_total;
  const double loss = -surrogate + cfg.kl_weight * kl_total;
  if (!std::isfinite(loss)) throw std::runtime_error("grpo_loss: non-finite loss");
  return loss;
}

GrpoResult grpo_train(SequencePolicy& policy, const std::vector<DiscriminativeInstance>& data,
                      const GrpoConfig& cfg) {
  if (data.empty()) throw std::runtime_error("grpo_train: empty dataset");
  if (cfg.group_size < 2) throw std::runtime_error("grpo_train: group_size must be >= 2");
  if (cfg.batch_instances < 1) throw std::runtime_error("grpo_train: batch_instances must be >= 1");

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path);
    if (!log) throw std::runtime_error("cannot write " + cfg.log_path);
    log << "iteration,mean_reward,mean_format,mean_accuracy,kl,loss\n";
  }

  const SequencePolicy ref_policy = policy;  // fixed anchor for the KL term
  GrpoResult result;
  Rng rng(cfg.seed);
  std::uint64_t rollout_stream = 0;

  auto& params = policy.parameters();
  std::vector<double> grad(params.size());

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const SequencePolicy old_policy = policy;  // rollout distribution this round

    std::fill(grad.begin(), grad.end(), 0.0);
    GrpoStats stats;
    stats.iteration = iter;
    int groups = 0;
    int samples = 0;

    for (int b = 0; b < cfg.batch_instances; ++b) {
      const auto& inst = data[static_cast<std::size_t>(rng.uniform_int(
          static_cast<std::int64_t>(data.size())))];
      const auto in = old_policy.encode(inst);

      std::vector<std::vector<int>> rollouts;
      std::vector<double> rewards;
      rollouts.reserve(static_cast<std::size_t>(cfg.group_size));
      for (int g = 0; g < cfg.group_size; ++g, ++rollout_stream) {
        auto out = old_policy.sample(in, cfg.temperature,
                                     rng.fork(rollout_stream).seed());
        const auto rb = composite_reward(old_policy.detokenize(out.tokens), inst, cfg.alpha);
        rewards.push_back(rb.total);
        stats.mean_reward += rb.total;
        stats.mean_format += rb.format;
        stats.mean_accuracy += rb.accuracy;
        ++samples;
        rollouts.push_back(std::move(out.tokens));
      }

      const auto adv = group_advantages(rewards, cfg.adv_floor);
      double kl = 0.0;
      stats.loss += grpo_loss(policy, old_policy, ref_policy, in, rollouts, adv, cfg, &grad, &kl);
      stats.kl += kl;
      ++groups;
    }

    const double scale = cfg.lr / groups;
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= scale * grad[i];

    stats.mean_reward /= samples;
    stats.mean_format /= samples;
    stats.mean_accuracy /= samples;
    stats.kl /= groups;
    stats.loss /= groups;
    if (log)
      log << stats.iteration << ',' << stats.mean_reward << ',' << stats.mean_format << ','
          << stats.mean_accuracy << ',' << stats.kl << ',' << stats.loss << '\n';
    result.history.push_back(stats);
  }
  return result;
}

RewardBreakdown evaluate_policy(const SequencePolicy& policy,
                                const std::vector<DiscriminativeInstance>& data, double alpha) {
  if (data.empty()) throw std::runtime_error("evaluate_policy: empty dataset");
  RewardBreakdown sum;
  for (const auto& inst : data) {
    const auto out = policy.greedy_decode(policy.encode(inst));
    const auto rb = composite_reward(policy.detokenize(out.tokens), inst, alpha);
    sum.format += rb.format;
    sum.accuracy += rb.accuracy;
    sum.total += rb.total;
  }
  const auto n = static_cast<double>(data.size());
  sum.format /= n;
  sum.accuracy /= n;
  sum.total /= n;
  return sum;
}

}  // namespace kgr
