#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "kgr/graph.hpp"
#include "kgr/kge.hpp"
#include "kgr/policy.hpp"
#include "kgr/probe.hpp"
#include "kgr/rng.hpp"
#include "kgr/synth.hpp"

using namespace kgr;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("kgr_probe_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// z = (h + layer, r - t, t) and label-free; exercises the extraction glue
class ArithmeticProvider : public RepresentationProvider {
 public:
  int dim() const override { return 3; }
  int num_layers() const override { return 4; }
  std::vector<double> representation(const Triple& x, int layer) const override {
    return {static_cast<double>(x.h + layer), static_cast<double>(x.r - x.t),
            static_cast<double>(x.t)};
  }
};

// Pure noise except at one layer, where the first coordinate carries the
// parity of the tail; the unit-scale mock of an informative probe layer.
class InjectingProvider : public RepresentationProvider {
 public:
  InjectingProvider(int dim, int layers, int hot_layer, std::uint64_t seed)
      : dim_(dim), layers_(layers), hot_(hot_layer), seed_(seed) {}
  int dim() const override { return dim_; }
  int num_layers() const override { return layers_; }
  std::vector<double> representation(const Triple& x, int layer) const override {
    Rng rng(seed_ ^ (static_cast<std::uint64_t>(x.h) << 40) ^
            (static_cast<std::uint64_t>(x.r) << 24) ^ (static_cast<std::uint64_t>(x.t) << 4) ^
            static_cast<std::uint64_t>(layer));
    std::vector<double> z(static_cast<std::size_t>(dim_));
    for (auto& v : z) v = rng.normal(0.0, 1.0);
    if (layer == hot_) z[0] = (x.t % 2 == 0 ? 1.0 : -1.0) + rng.normal(0.0, 0.05);
    return z;
  }

 private:
  int dim_, layers_, hot_;
  std::uint64_t seed_;
};

ProbeData parity_data(const InjectingProvider& provider, int layer, int n, int offset) {
  std::vector<LabeledTriple> triples;
  for (int i = 0; i < n; ++i) {
    const Triple x{static_cast<EntityId>(offset + i), static_cast<RelationId>(i % 3),
                   static_cast<EntityId>(offset + 2 * i + (i % 2))};
    triples.push_back({x, x.t % 2 == 0 ? 1 : 0});
  }
  return extract_representations(provider, triples, layer);
}

}  // namespace

TEST_CASE("probe scores match a hand-computed forward pass") {
  ProbeClassifier probe(2, 2, 1);
  auto& p = probe.parameters();
  // W1 = I, b1 = 0, slope = 0.25, w2 = (1, 1), b2 = 0
  p = {1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.25, 1.0, 1.0, 0.0};

  const auto v = probe.hidden_activations(std::vector<double>{2.0, -4.0}.data());
  CHECK(v[0] == 2.0);
  CHECK(v[1] == -1.0);  // 0.25 * -4

  const double o = 2.0 - 1.0;
  CHECK(probe.score(std::vector<double>{2.0, -4.0}) ==
        doctest::Approx(1.0 / (1.0 + std::exp(-o))).epsilon(1e-14));
  CHECK(probe.score(std::vector<double>{-1.0, -1.0}) ==
        doctest::Approx(1.0 / (1.0 + std::exp(0.5))).epsilon(1e-14));

  probe.set_threshold(0.6);
  CHECK(probe.predict({2.0, -4.0}) == 1);   // sigma(1) = 0.73
  CHECK(probe.predict({-1.0, -1.0}) == 0);  // sigma(-0.5) = 0.38
  CHECK_THROWS(probe.score(std::vector<double>{1.0}));
}

TEST_CASE("bce loss matches its definition and finite differences") {
  ProbeClassifier probe(3, 4, 7);
  Rng rng(3);
  const int n = 12;
  std::vector<double> X;
  std::vector<int> y;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 3; ++j) X.push_back(rng.normal(0.0, 1.5));
    y.push_back(i % 2);
  }

  // value oracle straight from the formula
  double want = 0.0;
  for (int i = 0; i < n; ++i) {
    const double s = probe.score(X.data() + static_cast<std::size_t>(i) * 3);
    want += -(y[static_cast<std::size_t>(i)] * std::log(s) +
              (1 - y[static_cast<std::size_t>(i)]) * std::log(1.0 - s));
  }
  want /= n;
  const double loss = probe.bce_loss(X, y, nullptr);
  CHECK(loss == doctest::Approx(want).epsilon(1e-10));

  auto& params = probe.parameters();
  std::vector<double> grad(params.size(), 0.0);
  probe.bce_loss(X, y, &grad);
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = probe.bce_loss(X, y, nullptr);
    params[i] = keep - h;
    const double down = probe.bce_loss(X, y, nullptr);
    params[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    const double scale = std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
    worst = std::max(worst, std::abs(fd - grad[i]) / scale);
  }
  CHECK(worst < 1e-6);

  CHECK_THROWS(probe.bce_loss({}, {}, nullptr));
  CHECK_THROWS(probe.bce_loss(X, std::vector<int>(5, 0), nullptr));
}

TEST_CASE("training separates gaussian blobs and tunes the threshold") {
  Rng rng(11);
  auto blob = [&](int n, double cx, double cy, int label, ProbeData& out) {
    for (int i = 0; i < n; ++i) {
      out.X.push_back(cx + rng.normal(0.0, 0.8));
      out.X.push_back(cy + rng.normal(0.0, 0.8));
      out.y.push_back(label);
    }
  };
  ProbeData train, valid;
  train.dim = valid.dim = 2;
  train.layer = valid.layer = 1;
  blob(120, 2.0, 2.0, 1, train);
  blob(120, -2.0, -2.0, 0, train);
  blob(40, 2.0, 2.0, 1, valid);
  blob(40, -2.0, -2.0, 0, valid);

  ProbeClassifier probe(2, 8, 5);
  ProbeTrainConfig cfg;
  cfg.epochs = 60;
  const auto result = train_probe(probe, train, valid, cfg);

  REQUIRE(result.loss_history.size() == 60);
  CHECK(result.loss_history.front() > result.loss_history.back());
  CHECK(result.loss_history.back() < 0.2);
  CHECK(result.valid_accuracy >= 0.95);
  CHECK(result.threshold == probe.threshold());
  CHECK(probe_accuracy(probe, valid) == doctest::Approx(result.valid_accuracy).epsilon(1e-12));
}

TEST_CASE("threshold sweep picks the accuracy-optimal cut") {
  // an untouched probe scores a tiny validation set; the tuned threshold
  // must beat the default 0.5 whenever the scores allow it
  ProbeClassifier probe(1, 2, 3);
  auto& p = probe.parameters();
  // W1 = (1; -1), b1 = 0, slope 1 -> v = (z, -z); w2 = (0.3, 0), b2 = 0
  p = {1.0, -1.0, 0.0, 0.0, 1.0, 0.3, 0.0, 0.0};
  // scores are sigmoid(0.3 z): monotone in z, all below 0.5 for z < 0

  ProbeData train, valid;
  train.dim = valid.dim = 1;
  train.X = {-3.0, -2.0, -1.0};
  train.y = {0, 1, 1};
  valid.X = {-3.0, -2.5, -2.0, -1.0};
  valid.y = {0, 0, 1, 1};

  ProbeTrainConfig cfg;
  cfg.epochs = 0;  // keep the hand-set weights; only the sweep runs
  const auto result = train_probe(probe, train, valid, cfg);
  CHECK(result.valid_accuracy == 1.0);
  // the winning cut separates z = -2.5 from z = -2
  CHECK(probe.threshold() > probe.score(std::vector<double>{-2.5}));
  CHECK(probe.threshold() <= probe.score(std::vector<double>{-2.0}));

  // degenerate sweeps still behave: all-positive validation set
  ProbeData allpos = valid;
  allpos.y = {1, 1, 1, 1};
  const auto r2 = train_probe(probe, train, allpos, cfg);
  CHECK(r2.valid_accuracy == 1.0);  // threshold below every score
}

TEST_CASE("extraction carries labels and validates the layer") {
  ArithmeticProvider provider;
  std::vector<LabeledTriple> triples = {{{1, 0, 2}, 1}, {{3, 1, 0}, 0}, {{2, 2, 2}, 1}};
  const auto data = extract_representations(provider, triples, 2);
  CHECK(data.dim == 3);
  CHECK(data.layer == 2);
  CHECK(data.size() == 3);
  CHECK(data.y == std::vector<int>{1, 0, 1});
  CHECK(data.X[0] == 3.0);  // h + layer = 1 + 2
  CHECK(data.X[1] == -2.0);  // r - t = 0 - 2
  CHECK(data.X[5] == 0.0);
  CHECK_THROWS(extract_representations(provider, triples, 0));
  CHECK_THROWS(extract_representations(provider, triples, 5));
}

TEST_CASE("representation files round trip at full precision") {
  const auto dir = fresh_dir("io");
  ProbeData data;
  data.dim = 2;
  data.layer = 3;
  Rng rng(21);
  for (int i = 0; i < 7; ++i) {
    data.X.push_back(rng.normal(0.0, 1.0) * std::pow(10.0, rng.uniform_int(6) - 3));
    data.X.push_back(rng.uniform());
    data.y.push_back(i % 2);
  }
  const auto reps = (dir / "reps.txt").string();
  save_representations(reps, data);
  const auto loaded = load_representations(reps);
  CHECK(loaded.dim == 2);
  CHECK(loaded.layer == 3);
  CHECK(loaded.size() == 7);
  CHECK(loaded.X == data.X);  // %.17g reproduces doubles exactly

  const auto labels = (dir / "labels.txt").string();
  save_labels(labels, data.y);
  CHECK(load_labels(labels) == data.y);

  // an empty set is a valid file
  ProbeData empty;
  empty.dim = 4;
  empty.layer = 1;
  const auto epath = (dir / "empty.txt").string();
  save_representations(epath, empty);
  const auto eload = load_representations(epath);
  CHECK(eload.size() == 0);
  CHECK(eload.dim == 4);

  std::ofstream(reps, std::ios::trunc) << "2 3 1\n1.0 2.0 3.0\n4.0 5.0\n";
  CHECK_THROWS_WITH_AS(load_representations(reps), doctest::Contains("truncated row"),
                       std::runtime_error);
  std::ofstream(reps, std::ios::trunc) << "2 2 1\n1.0 2.0 3.0\n4.0 5.0 6.0\n";
  CHECK_THROWS_WITH_AS(load_representations(reps), doctest::Contains("extra columns"),
                       std::runtime_error);
  std::ofstream(reps, std::ios::trunc) << "3 2 1\n1.0 2.0\n";
  CHECK_THROWS_WITH_AS(load_representations(reps), doctest::Contains("expected 3 rows"),
                       std::runtime_error);
  std::ofstream(reps, std::ios::trunc) << "nonsense\n";
  CHECK_THROWS_WITH_AS(load_representations(reps), doctest::Contains("header"),
                       std::runtime_error);
  std::ofstream(labels, std::ios::trunc) << "0\n2\n";
  CHECK_THROWS_WITH_AS(load_labels(labels), doctest::Contains("labels must be 0 or 1"),
                       std::runtime_error);
}

TEST_CASE("probe checkpoints persist weights and threshold") {
  const auto dir = fresh_dir("ckpt");
  ProbeClassifier probe(5, 3, 9);
  probe.set_threshold(0.6125);
  const auto path = (dir / "probe.bin").string();
  probe.save(path);

  const auto loaded = ProbeClassifier::load(path);
  CHECK(loaded.dim() == 5);
  CHECK(loaded.hidden() == 3);
  CHECK(loaded.threshold() == 0.6125);
  REQUIRE(loaded.parameters().size() == probe.parameters().size());
  for (std::size_t i = 0; i < probe.parameters().size(); ++i)
    CHECK(loaded.parameters()[i] ==
          static_cast<double>(static_cast<float>(probe.parameters()[i])));

  std::ofstream(path, std::ios::trunc) << "kgr-probe 1 5 3 0.5\n";
  CHECK_THROWS_WITH_AS(ProbeClassifier::load(path), doctest::Contains("truncated"),
                       std::runtime_error);
  std::ofstream(path, std::ios::trunc) << "who knows\n";
  CHECK_THROWS_WITH_AS(ProbeClassifier::load(path), doctest::Contains("header"),
                       std::runtime_error);
}

TEST_CASE("policy state provider wires the policy and retriever together") {
  auto g = make_synthetic_graph();
  KgeModel kge(KgeKind::DistMult, g.num_entities(), g.num_relations(), 8, 8, 3);
  PolicyConfig pc;
  pc.max_k = 4;
  pc.layers = 3;
  pc.width = 10;
  pc.emb_dim = 6;
  SequencePolicy policy(pc, g.num_entities(), g.num_relations());

  PolicyStateProvider provider(policy, kge);
  CHECK(provider.dim() == 10);
  CHECK(provider.num_layers() == 3);

  const Triple x{2, 1, 7};
  const auto z = provider.representation(x, 2);
  const auto want =
      policy.hidden_state(policy.encode_triple(x.h, x.r, x.t, kge.score(x.h, x.r, x.t)), 2);
  CHECK(z == want);
  CHECK(provider.representation(x, 1) != z);

  // labeled extraction over a balanced classification set
  const auto labeled = g.balanced_classification_set(Split::Valid, 5);
  const auto data = extract_representations(provider, labeled, 2);
  CHECK(data.size() == static_cast<int>(labeled.size()));
  CHECK(data.dim == 10);
}

TEST_CASE("an informative layer is learnable and a noise layer is not") {
  InjectingProvider provider(6, 3, 2, 77);
  const auto train_hot = parity_data(provider, 2, 160, 0);
  const auto valid_hot = parity_data(provider, 2, 60, 1000);
  ProbeClassifier hot(6, 8, 1);
  ProbeTrainConfig cfg;
  cfg.epochs = 80;
  const auto r_hot = train_probe(hot, train_hot, valid_hot, cfg);
  CHECK(r_hot.valid_accuracy >= 0.9);

  const auto train_cold = parity_data(provider, 1, 160, 0);
  const auto valid_cold = parity_data(provider, 1, 60, 1000);
  ProbeClassifier cold(6, 8, 1);
  const auto r_cold = train_probe(cold, train_cold, valid_cold, cfg);
  CHECK(r_cold.valid_accuracy < 0.8);  // nothing to find in pure noise
  CHECK(r_hot.valid_accuracy > r_cold.valid_accuracy);
}
