#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kgr/graph.hpp"
#include "kgr/kge.hpp"
#include "kgr/policy.hpp"

namespace kgr {

// Probing pipeline: turn triples into fixed-size policy-state vectors, then
// fit a small classifier that reads truth directly off those vectors. The
// probe doubles as the reranker in retrieve-then-rerank evaluation.

class RepresentationProvider {
 public:
  virtual ~RepresentationProvider() = default;
  virtual int dim() const = 0;
  virtual int num_layers() const = 0;
  // z^(l) for the triple; layer is 1-based
  virtual std::vector<double> representation(const Triple& x, int layer) const = 0;
};

// Reads the policy's layer-l state for a triple rendered as a
// classification-style query, with the retriever score as the side feature.
class PolicyStateProvider : public RepresentationProvider {
 public:
  PolicyStateProvider(const SequencePolicy& policy, const KgeModel& kge)
      : policy_(policy), kge_(kge) {}
  int dim() const override { return policy_.config().width; }
  int num_layers() const override { return policy_.config().layers; }
  std::vector<double> representation(const Triple& x, int layer) const override {
    return policy_.hidden_state(policy_.encode_triple(x.h, x.r, x.t, kge_.score(x.h, x.r, x.t)),
                                layer);
  }

 private:
  const SequencePolicy& policy_;
  const KgeModel& kge_;
};

// N row-major vectors with their source layer; labels ride alongside when
// the triples were labeled.
struct ProbeData {
  int dim = 0;
  int layer = 0;
  std::vector<double> X;  // N x dim
  std::vector<int> y;     // 0/1, size N (empty when unlabeled)
  int size() const { return dim == 0 ? 0 : static_cast<int>(X.size()) / dim; }
};

ProbeData extract_representations(const RepresentationProvider& provider,
                                  const std::vector<LabeledTriple>& triples, int layer);

// Text format: header `N d l`, then N lines of d full-precision decimals.
void save_representations(const std::string& path, const ProbeData& data);
ProbeData load_representations(const std::string& path);

// One 0/1 per line.
void save_labels(const std::string& path, const std::vector<int>& y);
std::vector<int> load_labels(const std::string& path);

// logistic(w2 . prelu(W1 z + b1) + b2) with one learned leak slope shared
// across the hidden units. Parameters are flat: W1, b1, slope, w2, b2.
class ProbeClassifier {
 public:
  ProbeClassifier(int dim, int hidden, std::uint64_t seed);

  int dim() const { return dim_; }
  int hidden() const { return hidden_; }
  double threshold() const { return threshold_; }
  void set_threshold(double t) { threshold_ = t; }

  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }

  double score(const double* z) const;
  double score(const std::vector<double>& z) const;
  int predict(const std::vector<double>& z) const { return score(z) >= threshold_ ? 1 : 0; }

  // hidden activations prelu(W1 z + b1); the task-adapted projection basis
  std::vector<double> hidden_activations(const double* z) const;

  // Mean binary cross-entropy over rows of X; gradient (same layout as
  // parameters()) accumulated when grad is non-null.
  double bce_loss(const std::vector<double>& X, const std::vector<int>& y,
                  std::vector<double>* grad) const;

  void save(const std::string& path) const;
  static ProbeClassifier load(const std::string& path);

 private:
  int dim_, hidden_;
  double threshold_ = 0.5;
  std::vector<double> params_;
};

struct ProbeTrainConfig {
  int epochs = 150;
  int batch_size = 32;
  double lr = 0.01;  // Adam step size
  std::uint64_t seed = 41;
};

struct ProbeTrainResult {
  std::vector<double> loss_history;  // mean batch loss per epoch
  double valid_accuracy = 0.0;       // at the tuned threshold
  double threshold = 0.5;
};

// Adam training on (X, y); the decision threshold is tuned on the validation
// rows afterwards and stored on the probe.
ProbeTrainResult train_probe(ProbeClassifier& probe, const ProbeData& train,
                             const ProbeData& valid, const ProbeTrainConfig& cfg);

double probe_accuracy(const ProbeClassifier& probe, const ProbeData& data);

}  // namespace kgr
