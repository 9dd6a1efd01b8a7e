#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kgr/graph.hpp"
#include "kgr/instance.hpp"

namespace kgr {

// A small autoregressive selection policy. The candidate set is encoded by a
// pooled feed-forward context encoder; decoding emits answer-line tokens
// (option labels, comma, the answer marker, end-of-sequence) one at a time
// through L tanh layers. All parameters live in one flat vector so finite
// difference checks, snapshots, and optimizer state stay trivial.
//
// Vocabulary: ids 0..max_k-1 are option labels A.., then COMMA, ANSWER, EOS.
// The previous-token embedding table has one extra row used as the begin
// marker at step 0. Detokenization produces exactly the answer grammar:
// ANSWER -> "Answer:", label i -> " <letter>", COMMA -> ",", EOS -> "".

struct PolicyConfig {
  int max_k = 8;   // largest candidate-set size the vocabulary supports
  int layers = 4;  // L >= 2 so an interior probe layer exists
  int width = 64;  // d, hidden size (also the probed state size)
  int emb_dim = 32;  // entity/relation/position/token embedding size
  std::uint64_t seed = 1;
};

struct PolicyOutput {
  std::vector<int> tokens;
  std::vector<double> logprobs;  // per-token log pi(token | prefix), temperature 1
  // hidden[l] holds T rows of width d: the layer l+1 activation per position
  std::vector<std::vector<double>> hidden;
};

// What the forward pass actually consumes: the query (h, r), candidate
// entity ids, and two scalar score features per slot. Built from a
// discriminative instance or from a bare triple (the classification-prompt
// encoding). Each candidate's feature row stacks the head, candidate,
// relation, and slot-position embeddings with the score features.
struct PolicyInput {
  EntityId h = -1;
  RelationId r = -1;
  std::vector<EntityId> entities;
  std::vector<double> score_tanh;  // tanh(s / 4)
  std::vector<double> score_z;     // within-set z-score of s
};

class SequencePolicy {
 public:
  SequencePolicy(const PolicyConfig& cfg, int num_entities, int num_relations);

  const PolicyConfig& config() const { return cfg_; }
  int vocab_size() const { return cfg_.max_k + 3; }
  int comma_token() const { return cfg_.max_k; }
  int answer_token() const { return cfg_.max_k + 1; }
  int eos_token() const { return cfg_.max_k + 2; }
  int max_len() const { return 2 * cfg_.max_k + 2; }
  int num_entities() const { return num_entities_; }
  int num_relations() const { return num_relations_; }

  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }

  // `Answer: A, C` as [ANSWER, label(A), COMMA, label(C), EOS]
  std::vector<int> encode_answer(const std::vector<char>& labels) const;
  std::string detokenize(const std::vector<int>& tokens) const;

  PolicyInput encode(const DiscriminativeInstance& inst) const;
  // Classification-prompt encoding of a triple: slots (h, t), both carrying
  // the triple's retriever score through the tanh feature (z left 0).
  PolicyInput encode_triple(EntityId h, RelationId r, EntityId t, double kge_score) const;

  // Teacher forcing: predicts target[t] at each position; logprobs align
  // with target tokens and hidden states are recorded for every layer.
  PolicyOutput forward_teacher(const PolicyInput& in, const std::vector<int>& target) const;

  // Per-position log-distributions under teacher forcing: T x V, row-major.
  std::vector<double> step_logprobs(const PolicyInput& in, const std::vector<int>& tokens) const;

  double sequence_logprob(const PolicyInput& in, const std::vector<int>& tokens) const;

  PolicyOutput sample(const PolicyInput& in, double temperature, std::uint64_t seed) const;
  PolicyOutput greedy_decode(const PolicyInput& in) const;

  // Layer-l (1-based) activation at the first decode position, before any
  // token is emitted; the probed representation z^(l).
  std::vector<double> hidden_state(const PolicyInput& in, int layer) const;

  // Mean token-level NLL of the targets plus its parameter gradient (same
  // layout as parameters()); grad may be null when only the loss is needed.
  double sft_loss(const std::vector<const DiscriminativeInstance*>& batch,
                  std::vector<double>* grad) const;

  // One plain gradient step on the batch; returns the pre-step loss.
  double sft_step(const std::vector<const DiscriminativeInstance*>& batch, double lr);

  // Teacher-forced backprop with caller-supplied logit gradients (T x V),
  // accumulated into grad. The building block for the RL objective.
  void backward_from_logits(const PolicyInput& in, const std::vector<int>& tokens,
                            const std::vector<double>& dlogits, std::vector<double>& grad) const;

  void save(const std::string& path) const;
  static SequencePolicy load(const std::string& path);

 private:
  struct Cache;
  void run_forward(const PolicyInput& in, const std::vector<int>& prev_tokens, Cache& cache) const;
  void run_backward(const PolicyInput& in, const Cache& cache,
                    const std::vector<double>& dlogits, std::vector<double>& grad) const;
  int feature_dim() const { return 4 * cfg_.emb_dim + 2; }
  int step_dim() const { return cfg_.width + cfg_.emb_dim + cfg_.max_k + max_len(); }

  // flat-parameter offsets
  std::size_t off_ent_, off_rel_, off_pos_, off_tok_;
  std::size_t off_wc1_, off_bc1_, off_wc2_, off_bc2_;
  std::vector<std::size_t> off_w_, off_b_;  // per hidden layer
  std::size_t off_wout_, off_bout_;

  PolicyConfig cfg_;
  int num_entities_ = 0, num_relations_ = 0;
  std::vector<double> params_;
};

struct SftConfig {
  int epochs = 60;
  int batch_size = 16;
  double lr = 0.01;  // Adam step size
  std::uint64_t seed = 23;
};

struct SftResult {
  std::vector<double> loss_history;  // mean token NLL per epoch
};

// Adam-driven SFT over the instance dataset. Deterministic per seed.
SftResult train_sft(SequencePolicy& policy, const std::vector<DiscriminativeInstance>& data,
                    const SftConfig& cfg);

// Greedy-decode each instance; keep those whose parsed answer set differs
// from e_pos (parse failures included).
std::vector<DiscriminativeInstance> build_error_set(
    const SequencePolicy& policy, const std::vector<DiscriminativeInstance>& instances);

}  // namespace kgr
