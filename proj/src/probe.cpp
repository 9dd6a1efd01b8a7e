#include "kgr/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "kgr/rng.hpp"

namespace kgr {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

ProbeData extract_representations(const RepresentationProvider& provider,
                                  const std::vector<LabeledTriple>& triples, int layer) {
  if (layer < 1 || layer > provider.num_layers())
    throw std::runtime_error("representation layer out of range");
  ProbeData out;
  out.dim = provider.dim();
  out.layer = layer;
  out.X.reserve(triples.size() * static_cast<std::size_t>(out.dim));
  out.y.reserve(triples.size());
  for (const auto& lt : triples) {
    const auto z = provider.representation(lt.triple, layer);
    if (static_cast<int>(z.size()) != out.dim)
      throw std::runtime_error("provider returned a vector of the wrong size");
    out.X.insert(out.X.end(), z.begin(), z.end());
    out.y.push_back(lt.label);
  }
  return out;
}

void save_representations(const std::string& path, const ProbeData& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << data.size() << ' ' << data.dim << ' ' << data.layer << '\n';
  char buf[32];
  for (int i = 0; i < data.size(); ++i) {
    for (int j = 0; j < data.dim; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", data.X[static_cast<std::size_t>(i) * data.dim + j]);
      if (j) out << ' ';
      out << buf;
    }
    out << '\n';
  }
}

ProbeData load_representations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty representation file: " + path);
  std::istringstream header(line);
  long long n = -1;
  ProbeData out;
  header >> n >> out.dim >> out.layer;
  if (!header || n < 0 || out.dim < 1 || out.layer < 1)
    throw std::runtime_error("bad representation header in " + path);
  out.X.reserve(static_cast<std::size_t>(n) * out.dim);
  for (long long i = 0; i < n; ++i) {
    if (!std::getline(in, line))
      throw std::runtime_error(path + ": expected " + std::to_string(n) + " rows, found " +
                               std::to_string(i));
    std::istringstream row(line);
    for (int j = 0; j < out.dim; ++j) {
      double v;
      if (!(row >> v))
        throw std::runtime_error(path + ":" + std::to_string(i + 2) + ": truncated row");
      out.X.push_back(v);
    }
    double extra;
    if (row >> extra)
      throw std::runtime_error(path + ":" + std::to_string(i + 2) + ": row has extra columns");
  }
  return out;
}

void save_labels(const std::string& path, const std::vector<int>& y) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (int v : y) out << v << '\n';
}

std::vector<int> load_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<int> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line != "0" && line != "1")
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": labels must be 0 or 1");
    out.push_back(line == "1" ? 1 : 0);
  }
  return out;
}

ProbeClassifier::ProbeClassifier(int dim, int hidden, std::uint64_t seed)
    : dim_(dim), hidden_(hidden) {
  if (dim < 1 || hidden < 1) throw std::runtime_error("probe dimensions must be positive");
  params_.assign(static_cast<std::size_t>(hidden) * dim + hidden + 1 + hidden + 1, 0.0);
  Rng rng(seed);
  const double bound1 = std::sqrt(6.0 / (dim + hidden));
  for (int i = 0; i < hidden * dim; ++i) params_[static_cast<std::size_t>(i)] = rng.uniform(-bound1, bound1);
  params_[static_cast<std::size_t>(hidden) * dim + hidden] = 0.25;  // leak slope
  const double bound2 = std::sqrt(6.0 / (hidden + 1));
  const std::size_t w2_off = static_cast<std::size_t>(hidden) * dim + hidden + 1;
  for (int i = 0; i < hidden; ++i) params_[w2_off + static_cast<std::size_t>(i)] = rng.uniform(-bound2, bound2);
}

std::vector<double> ProbeClassifier::hidden_activations(const double* z) const {
  const double* W1 = params_.data();
  const double* b1 = W1 + static_cast<std::size_t>(hidden_) * dim_;
  const double slope = b1[hidden_];
  std::vector<double> v(static_cast<std::size_t>(hidden_));
  for (int i = 0; i < hidden_; ++i) {
    double a = b1[i];
    const double* row = W1 + static_cast<std::size_t>(i) * dim_;
    for (int j = 0; j < dim_; ++j) a += row[j] * z[j];
    v[static_cast<std::size_t>(i)] = a > 0.0 ? a : slope * a;
  }
  return v;
}

double ProbeClassifier::score(const double* z) const {
  const auto v = hidden_activations(z);
  const double* w2 = params_.data() + static_cast<std::size_t>(hidden_) * dim_ + hidden_ + 1;
  double o = w2[hidden_];  // b2
  for (int i = 0; i < hidden_; ++i) o += w2[i] * v[static_cast<std::size_t>(i)];
  return sigmoid(o);
}

double ProbeClassifier::score(const std::vector<double>& z) const {
  if (static_cast<int>(z.size()) != dim_) throw std::runtime_error("probe input size mismatch");
  return score(z.data());
}

double ProbeClassifier::bce_loss(const std::vector<double>& X, const std::vector<int>& y,
                                 std::vector<double>* grad) const {
  const auto n = static_cast<std::size_t>(y.size());
  if (n == 0) throw std::runtime_error("bce_loss: empty batch");
  if (X.size() != n * static_cast<std::size_t>(dim_))
    throw std::runtime_error("bce_loss: X and y disagree");
  if (grad && grad->size() != params_.size()) throw std::runtime_error("bce_loss: grad size");

  const double* W1 = params_.data();
  const double* b1 = W1 + static_cast<std::size_t>(hidden_) * dim_;
  const double slope = b1[hidden_];
  const double* w2 = b1 + hidden_ + 1;
  const double b2 = w2[hidden_];

  double* dW1 = grad ? grad->data() : nullptr;
  double* db1 = grad ? dW1 + static_cast<std::size_t>(hidden_) * dim_ : nullptr;
  double* dslope = grad ? db1 + hidden_ : nullptr;
  double* dw2 = grad ? dslope + 1 : nullptr;
  double* db2 = grad ? dw2 + hidden_ : nullptr;

  std::vector<double> pre(static_cast<std::size_t>(hidden_));
  std::vector<double> act(static_cast<std::size_t>(hidden_));
  double loss = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const double* z = X.data() + s * dim_;
    double o = b2;
    for (int i = 0; i < hidden_; ++i) {
      double a = b1[i];
      const double* row = W1 + static_cast<std::size_t>(i) * dim_;
      for (int j = 0; j < dim_; ++j) a += row[j] * z[j];
      pre[static_cast<std::size_t>(i)] = a;
      act[static_cast<std::size_t>(i)] = a > 0.0 ? a : slope * a;
      o += w2[i] * act[static_cast<std::size_t>(i)];
    }
    loss += (softplus(o) - y[s] * o) / static_cast<double>(n);
    if (!grad) continue;

    const double delta = (sigmoid(o) - y[s]) / static_cast<double>(n);
    db2[0] += delta;
    for (int i = 0; i < hidden_; ++i) {
      dw2[i] += delta * act[static_cast<std::size_t>(i)];
      const double da = delta * w2[i];
      const double dpre = pre[static_cast<std::size_t>(i)] > 0.0 ? da : da * slope;
      if (pre[static_cast<std::size_t>(i)] <= 0.0) dslope[0] += da * pre[static_cast<std::size_t>(i)];
      db1[i] += dpre;
      double* drow = dW1 + static_cast<std::size_t>(i) * dim_;
      for (int j = 0; j < dim_; ++j) drow[j] += dpre * z[j];
    }
  }
  if (!std::isfinite(loss)) throw std::runtime_error("bce_loss: non-finite loss");
  return loss;
}

void ProbeClassifier::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  char tbuf[32];
  std::snprintf(tbuf, sizeof tbuf, "%.17g", threshold_);
  out << "kgr-probe 1 " << dim_ << ' ' << hidden_ << ' ' << tbuf << '\n';
  std::vector<float> buf(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) buf[i] = static_cast<float>(params_[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

ProbeClassifier ProbeClassifier::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(in, line);
  std::istringstream header(line);
  std::string magic;
  int version = 0, dim = 0, hidden = 0;
  double threshold = 0.5;
  header >> magic >> version >> dim >> hidden >> threshold;
  if (magic != "kgr-probe" || version != 1 || !header)
    throw std::runtime_error("bad probe checkpoint header in " + path);
  ProbeClassifier probe(dim, hidden, 0);
  probe.threshold_ = threshold;
  std::vector<float> buf(probe.params_.size());
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in) throw std::runtime_error("truncated probe checkpoint: " + path);
  for (std::size_t i = 0; i < buf.size(); ++i) probe.params_[i] = static_cast<double>(buf[i]);
  return probe;
}

double probe_accuracy(const ProbeClassifier& probe, const ProbeData& data) {
  const int n = data.size();
  if (n == 0) throw std::runtime_error("probe_accuracy: empty data");
  if (static_cast<int>(data.y.size()) != n) throw std::runtime_error("probe_accuracy: unlabeled data");
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    const double s = probe.score(data.X.data() + static_cast<std::size_t>(i) * data.dim);
    const int pred = s >= probe.threshold() ? 1 : 0;
    if (pred == data.y[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / n;
}

ProbeTrainResult train_probe(ProbeClassifier& probe, const ProbeData& train, const ProbeData& valid,
                             const ProbeTrainConfig& cfg) {
  if (train.size() == 0) throw std::runtime_error("train_probe: empty training set");
  if (valid.size() == 0) throw std::runtime_error("train_probe: empty validation set");
  if (train.dim != probe.dim() || valid.dim != probe.dim())
    throw std::runtime_error("train_probe: representation size does not match the probe");
  if (static_cast<int>(train.y.size()) != train.size() ||
      static_cast<int>(valid.y.size()) != valid.size())
    throw std::runtime_error("train_probe: data must be labeled");

  auto& params = probe.parameters();
  std::vector<double> m(params.size(), 0.0), v(params.size(), 0.0), grad(params.size());
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::int64_t step = 0;

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(static_cast<std::size_t>(train.size()));
  std::iota(order.begin(), order.end(), 0);

  ProbeTrainResult result;
  std::vector<double> bx;
  std::vector<int> by;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      bx.clear();
      by.clear();
      for (std::size_t i = start; i < end; ++i) {
        const double* row = train.X.data() + order[i] * static_cast<std::size_t>(train.dim);
        bx.insert(bx.end(), row, row + train.dim);
        by.push_back(train.y[order[i]]);
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      epoch_loss += probe.bce_loss(bx, by, &grad);
      ++batches;
      ++step;
      const double corr = cfg.lr * std::sqrt(1.0 - std::pow(b2, static_cast<double>(step))) /
                          (1.0 - std::pow(b1, static_cast<double>(step)));
      for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
        v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
        params[i] -= corr * m[i] / (std::sqrt(v[i]) + eps);
      }
    }
    result.loss_history.push_back(epoch_loss / std::max(batches, 1));
  }

  // threshold sweep on the validation scores; 0.5 wins ties by being first
  std::vector<double> scores(static_cast<std::size_t>(valid.size()));
  for (int i = 0; i < valid.size(); ++i)
    scores[static_cast<std::size_t>(i)] =
        probe.score(valid.X.data() + static_cast<std::size_t>(i) * valid.dim);
  auto accuracy_at = [&](double t) {
    int hits = 0;
    for (int i = 0; i < valid.size(); ++i) {
      const int pred = scores[static_cast<std::size_t>(i)] >= t ? 1 : 0;
      if (pred == valid.y[static_cast<std::size_t>(i)]) ++hits;
    }
    return static_cast<double>(hits) / valid.size();
  };
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<double> candidates = {0.5};
  candidates.push_back(sorted.front() / 2.0);  // everything predicted positive
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i)
    candidates.push_back(0.5 * (sorted[i] + sorted[i + 1]));
  candidates.push_back(0.5 * (sorted.back() + 1.0));  // everything negative
  double best_t = 0.5, best_acc = -1.0;
  for (double t : candidates) {
    const double acc = accuracy_at(t);
    if (acc > best_acc) {
      best_acc = acc;
      best_t = t;
    }
  }
  probe.set_threshold(best_t);
  result.threshold = best_t;
  result.valid_accuracy = best_acc;
  return result;
}

}  // namespace kgr
