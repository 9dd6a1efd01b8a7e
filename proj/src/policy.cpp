#include "kgr/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "kgr/rng.hpp"

namespace kgr {

namespace {

void check_little_endian() {
  const std::uint32_t probe = 1;
  if (*reinterpret_cast<const std::uint8_t*>(&probe) != 1)
    throw std::runtime_error("policy checkpoint io requires a little-endian host");
}

// y = W x + b with W row-major (rows x cols)
void affine(const double* W, const double* b, const double* x, double* y, int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    double acc = b ? b[i] : 0.0;
    const double* row = W + static_cast<std::size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
}

// dx += W^T dy; dW += dy x^T; db += dy
void affine_backward(const double* W, const double* x, const double* dy, double* dW, double* db,
                     double* dx, int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    const double g = dy[i];
    if (g == 0.0) continue;
    const double* row = W + static_cast<std::size_t>(i) * cols;
    double* drow = dW + static_cast<std::size_t>(i) * cols;
    if (db) db[i] += g;
    for (int j = 0; j < cols; ++j) {
      drow[j] += g * x[j];
      if (dx) dx[j] += g * row[j];
    }
  }
}

void log_softmax(const double* z, double* out, int n) {
  double m = z[0];
  for (int i = 1; i < n; ++i) m = std::max(m, z[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += std::exp(z[i] - m);
  const double lse = m + std::log(sum);
  for (int i = 0; i < n; ++i) out[i] = z[i] - lse;
}

}  // namespace

struct SequencePolicy::Cache {
  int K = 0, T = 0;
  std::vector<double> f;       // K x F
  std::vector<double> u;       // K x d
  std::vector<double> ubar;    // d
  std::vector<double> c;       // d
  std::vector<double> x;       // T x X
  std::vector<double> h;       // L x T x d
  std::vector<double> logits;  // T x V
  std::vector<double> logp;    // T x V
  std::vector<int> prev;       // T (token embedding row per step; last row = begin marker)
};

SequencePolicy::SequencePolicy(const PolicyConfig& cfg, int num_entities, int num_relations)
    : cfg_(cfg), num_entities_(num_entities), num_relations_(num_relations) {
  if (cfg_.layers < 2) throw std::runtime_error("policy needs at least 2 layers");
  if (cfg_.max_k < 2 || cfg_.max_k > 26) throw std::runtime_error("max_k must be in [2, 26]");
  if (cfg_.width < 1 || cfg_.emb_dim < 1) throw std::runtime_error("bad policy dimensions");
  if (num_entities_ < 1 || num_relations_ < 1)
    throw std::runtime_error("policy needs a non-empty entity and relation set");

  const int m = cfg_.emb_dim, d = cfg_.width, V = vocab_size();
  const int F = feature_dim(), X = step_dim(), L = cfg_.layers;

  std::size_t total = 0;
  auto claim = [&total](std::size_t n) {
    const std::size_t at = total;
    total += n;
    return at;
  };
  off_ent_ = claim(static_cast<std::size_t>(num_entities_) * m);
  off_rel_ = claim(static_cast<std::size_t>(num_relations_) * m);
  off_pos_ = claim(static_cast<std::size_t>(cfg_.max_k) * m);
  off_tok_ = claim(static_cast<std::size_t>(V + 1) * m);
  off_wc1_ = claim(static_cast<std::size_t>(d) * F);
  off_bc1_ = claim(static_cast<std::size_t>(d));
  off_wc2_ = claim(static_cast<std::size_t>(d) * d);
  off_bc2_ = claim(static_cast<std::size_t>(d));
  off_w_.resize(static_cast<std::size_t>(L));
  off_b_.resize(static_cast<std::size_t>(L));
  off_w_[0] = claim(static_cast<std::size_t>(d) * X);
  off_b_[0] = claim(static_cast<std::size_t>(d));
  for (int l = 1; l < L; ++l) {
    off_w_[static_cast<std::size_t>(l)] = claim(static_cast<std::size_t>(d) * d);
    off_b_[static_cast<std::size_t>(l)] = claim(static_cast<std::size_t>(d));
  }
  off_wout_ = claim(static_cast<std::size_t>(V) * d);
  off_bout_ = claim(static_cast<std::size_t>(V));
  params_.assign(total, 0.0);

  Rng rng(cfg_.seed);
  auto fill_normal = [&](std::size_t off, std::size_t n, double sd) {
    for (std::size_t i = 0; i < n; ++i) params_[off + i] = rng.normal(0.0, sd);
  };
  auto fill_xavier = [&](std::size_t off, int rows, int cols) {
    const double bound = std::sqrt(6.0 / (rows + cols));
    for (std::size_t i = 0; i < static_cast<std::size_t>(rows) * cols; ++i)
      params_[off + i] = rng.uniform(-bound, bound);
  };
  fill_normal(off_ent_, static_cast<std::size_t>(num_entities_) * m, 0.2);
  fill_normal(off_rel_, static_cast<std::size_t>(num_relations_) * m, 0.2);
  fill_normal(off_pos_, static_cast<std::size_t>(cfg_.max_k) * m, 0.2);
  fill_normal(off_tok_, static_cast<std::size_t>(V + 1) * m, 0.2);
  fill_xavier(off_wc1_, d, F);
  fill_xavier(off_wc2_, d, d);
  fill_xavier(off_w_[0], d, X);
  for (int l = 1; l < L; ++l) fill_xavier(off_w_[static_cast<std::size_t>(l)], d, d);
  fill_xavier(off_wout_, V, d);
}

std::vector<int> SequencePolicy::encode_answer(const std::vector<char>& labels) const {
  if (labels.empty()) throw std::runtime_error("encode_answer: empty label set");
  std::vector<int> out;
  out.reserve(labels.size() * 2 + 1);
  out.push_back(answer_token());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int idx = labels[i] - 'A';
    if (idx < 0 || idx >= cfg_.max_k)
      throw std::runtime_error("label outside the policy vocabulary");
    if (i) out.push_back(comma_token());
    out.push_back(idx);
  }
  out.push_back(eos_token());
  return out;
}

std::string SequencePolicy::detokenize(const std::vector<int>& tokens) const {
  std::string out;
  for (int tok : tokens) {
    if (tok == answer_token()) out += "Answer:";
    else if (tok == comma_token()) out += ',';
    else if (tok == eos_token()) continue;
    else if (tok >= 0 && tok < cfg_.max_k) {
      out += ' ';
      out += static_cast<char>('A' + tok);
    } else {
      throw std::runtime_error("detokenize: token id outside vocabulary");
    }
  }
  return out;
}

PolicyInput SequencePolicy::encode(const DiscriminativeInstance& inst) const {
  if (static_cast<int>(inst.options.size()) > cfg_.max_k)
    throw std::runtime_error("instance has more candidates than max_k");
  PolicyInput in;
  in.h = inst.h;
  in.r = inst.r;
  double mean = 0.0;
  for (const auto& o : inst.options) mean += o.kge_score;
  mean /= static_cast<double>(inst.options.size());
  double var = 0.0;
  for (const auto& o : inst.options) var += (o.kge_score - mean) * (o.kge_score - mean);
  const double sd = std::sqrt(var / static_cast<double>(inst.options.size()));
  for (const auto& o : inst.options) {
    in.entities.push_back(o.entity);
    in.score_tanh.push_back(std::tanh(o.kge_score / 4.0));
    in.score_z.push_back((o.kge_score - mean) / std::max(sd, 1e-8));
  }
  return in;
}

PolicyInput SequencePolicy::encode_triple(EntityId h, RelationId r, EntityId t,
                                          double kge_score) const {
  PolicyInput in;
  in.h = h;
  in.r = r;
  in.entities = {h, t};
  const double s = std::tanh(kge_score / 4.0);
  in.score_tanh = {s, s};
  in.score_z = {0.0, 0.0};
  return in;
}

void SequencePolicy::run_forward(const PolicyInput& in, const std::vector<int>& prev_tokens,
                                 Cache& cache) const {
  const int m = cfg_.emb_dim, d = cfg_.width, V = vocab_size();
  const int F = feature_dim(), X = step_dim(), L = cfg_.layers;
  const int K = static_cast<int>(in.entities.size());
  const int T = static_cast<int>(prev_tokens.size());
  if (K < 1 || K > cfg_.max_k) throw std::runtime_error("candidate count outside [1, max_k]");
  if (T < 1 || T > max_len()) throw std::runtime_error("sequence length outside [1, max_len]");
  if (in.h < 0 || in.h >= num_entities_ || in.r < 0 || in.r >= num_relations_)
    throw std::runtime_error("query ids outside the policy's entity/relation tables");

  cache.K = K;
  cache.T = T;
  const double* P = params_.data();

  // per-candidate features and pooled context
  cache.f.assign(static_cast<std::size_t>(K) * F, 0.0);
  cache.u.assign(static_cast<std::size_t>(K) * d, 0.0);
  cache.ubar.assign(static_cast<std::size_t>(d), 0.0);
  cache.c.assign(static_cast<std::size_t>(d), 0.0);
  for (int k = 0; k < K; ++k) {
    const EntityId e = in.entities[static_cast<std::size_t>(k)];
    if (e < 0 || e >= num_entities_)
      throw std::runtime_error("candidate entity outside the policy's entity table");
    double* f = cache.f.data() + static_cast<std::size_t>(k) * F;
    std::memcpy(f, P + off_ent_ + static_cast<std::size_t>(in.h) * m, sizeof(double) * m);
    std::memcpy(f + m, P + off_ent_ + static_cast<std::size_t>(e) * m, sizeof(double) * m);
    std::memcpy(f + 2 * m, P + off_rel_ + static_cast<std::size_t>(in.r) * m, sizeof(double) * m);
    std::memcpy(f + 3 * m, P + off_pos_ + static_cast<std::size_t>(k) * m, sizeof(double) * m);
    f[4 * m] = in.score_tanh[static_cast<std::size_t>(k)];
    f[4 * m + 1] = in.score_z[static_cast<std::size_t>(k)];

    double* u = cache.u.data() + static_cast<std::size_t>(k) * d;
    affine(P + off_wc1_, P + off_bc1_, f, u, d, F);
    for (int i = 0; i < d; ++i) {
      u[i] = std::tanh(u[i]);
      cache.ubar[static_cast<std::size_t>(i)] += u[i] / K;
    }
  }
  affine(P + off_wc2_, P + off_bc2_, cache.ubar.data(), cache.c.data(), d, d);
  for (auto& v : cache.c) v = std::tanh(v);

  // decode steps under teacher forcing
  cache.x.assign(static_cast<std::size_t>(T) * X, 0.0);
  cache.h.assign(static_cast<std::size_t>(L) * T * d, 0.0);
  cache.logits.assign(static_cast<std::size_t>(T) * V, 0.0);
  cache.logp.assign(static_cast<std::size_t>(T) * V, 0.0);
  cache.prev.assign(static_cast<std::size_t>(T), V);  // begin-marker row

  std::vector<bool> emitted(static_cast<std::size_t>(cfg_.max_k), false);
  for (int t = 0; t < T; ++t) {
    if (t > 0) {
      const int prev = prev_tokens[static_cast<std::size_t>(t - 1)];
      if (prev < 0 || prev >= V) throw std::runtime_error("token id outside vocabulary");
      cache.prev[static_cast<std::size_t>(t)] = prev;
      if (prev < cfg_.max_k) emitted[static_cast<std::size_t>(prev)] = true;
    }
    double* x = cache.x.data() + static_cast<std::size_t>(t) * X;
    std::memcpy(x, cache.c.data(), sizeof(double) * d);
    std::memcpy(x + d,
                P + off_tok_ + static_cast<std::size_t>(cache.prev[static_cast<std::size_t>(t)]) * m,
                sizeof(double) * m);
    for (int i = 0; i < cfg_.max_k; ++i)
      x[d + m + i] = emitted[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    x[d + m + cfg_.max_k + t] = 1.0;

    double* h0 = cache.h.data() + (static_cast<std::size_t>(0) * T + t) * d;
    affine(P + off_w_[0], P + off_b_[0], x, h0, d, X);
    for (int i = 0; i < d; ++i) h0[i] = std::tanh(h0[i]);
    for (int l = 1; l < L; ++l) {
      const double* hin = cache.h.data() + (static_cast<std::size_t>(l - 1) * T + t) * d;
      double* hout = cache.h.data() + (static_cast<std::size_t>(l) * T + t) * d;
      affine(P + off_w_[static_cast<std::size_t>(l)], P + off_b_[static_cast<std::size_t>(l)], hin,
             hout, d, d);
      for (int i = 0; i < d; ++i) hout[i] = std::tanh(hout[i]);
    }
    const double* hL = cache.h.data() + (static_cast<std::size_t>(L - 1) * T + t) * d;
    double* logits = cache.logits.data() + static_cast<std::size_t>(t) * V;
    affine(P + off_wout_, P + off_bout_, hL, logits, V, d);
    log_softmax(logits, cache.logp.data() + static_cast<std::size_t>(t) * V, V);
  }
}

void SequencePolicy::run_backward(const PolicyInput& in, const Cache& cache,
                                  const std::vector<double>& dlogits,
                                  std::vector<double>& grad) const {
  const int m = cfg_.emb_dim, d = cfg_.width, V = vocab_size();
  const int F = feature_dim(), X = step_dim(), L = cfg_.layers;
  const int K = cache.K, T = cache.T;
  if (dlogits.size() != static_cast<std::size_t>(T) * V)
    throw std::runtime_error("dlogits size mismatch");
  if (grad.size() != params_.size()) throw std::runtime_error("grad size mismatch");

  const double* P = params_.data();
  double* G = grad.data();

  std::vector<double> dc(static_cast<std::size_t>(d), 0.0);
  std::vector<double> dh(static_cast<std::size_t>(d));
  std::vector<double> da(static_cast<std::size_t>(d));
  std::vector<double> dx(static_cast<std::size_t>(X));

  for (int t = 0; t < T; ++t) {
    const double* dlog = dlogits.data() + static_cast<std::size_t>(t) * V;
    const double* hL = cache.h.data() + (static_cast<std::size_t>(L - 1) * T + t) * d;
    std::fill(dh.begin(), dh.end(), 0.0);
    affine_backward(P + off_wout_, hL, dlog, G + off_wout_, G + off_bout_, dh.data(), V, d);
    for (int l = L - 1; l >= 1; --l) {
      const double* hout = cache.h.data() + (static_cast<std::size_t>(l) * T + t) * d;
      const double* hin = cache.h.data() + (static_cast<std::size_t>(l - 1) * T + t) * d;
      for (int i = 0; i < d; ++i) da[static_cast<std::size_t>(i)] = dh[static_cast<std::size_t>(i)] * (1.0 - hout[i] * hout[i]);
      std::fill(dh.begin(), dh.end(), 0.0);
      affine_backward(P + off_w_[static_cast<std::size_t>(l)], hin, da.data(),
                      G + off_w_[static_cast<std::size_t>(l)], G + off_b_[static_cast<std::size_t>(l)],
                      dh.data(), d, d);
    }
    const double* h0 = cache.h.data() + (static_cast<std::size_t>(0) * T + t) * d;
    const double* x = cache.x.data() + static_cast<std::size_t>(t) * X;
    for (int i = 0; i < d; ++i) da[static_cast<std::size_t>(i)] = dh[static_cast<std::size_t>(i)] * (1.0 - h0[i] * h0[i]);
    std::fill(dx.begin(), dx.end(), 0.0);
    affine_backward(P + off_w_[0], x, da.data(), G + off_w_[0], G + off_b_[0], dx.data(), d, X);
    for (int i = 0; i < d; ++i) dc[static_cast<std::size_t>(i)] += dx[static_cast<std::size_t>(i)];
    double* dtok = G + off_tok_ + static_cast<std::size_t>(cache.prev[static_cast<std::size_t>(t)]) * m;
    for (int i = 0; i < m; ++i) dtok[i] += dx[static_cast<std::size_t>(d + i)];
    // mask and position one-hot entries are constants
  }

  // context: c = tanh(Wc2 ubar + bc2), ubar = mean_k u_k, u_k = tanh(Wc1 f_k + bc1)
  std::vector<double> dubar(static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < d; ++i)
    da[static_cast<std::size_t>(i)] =
        dc[static_cast<std::size_t>(i)] * (1.0 - cache.c[static_cast<std::size_t>(i)] * cache.c[static_cast<std::size_t>(i)]);
  affine_backward(P + off_wc2_, cache.ubar.data(), da.data(), G + off_wc2_, G + off_bc2_,
                  dubar.data(), d, d);

  std::vector<double> du(static_cast<std::size_t>(d));
  std::vector<double> df(static_cast<std::size_t>(F));
  for (int k = 0; k < K; ++k) {
    const double* u = cache.u.data() + static_cast<std::size_t>(k) * d;
    const double* f = cache.f.data() + static_cast<std::size_t>(k) * F;
    for (int i = 0; i < d; ++i)
      du[static_cast<std::size_t>(i)] = dubar[static_cast<std::size_t>(i)] / K * (1.0 - u[i] * u[i]);
    std::fill(df.begin(), df.end(), 0.0);
    affine_backward(P + off_wc1_, f, du.data(), G + off_wc1_, G + off_bc1_, df.data(), d, F);

    const EntityId e = in.entities[static_cast<std::size_t>(k)];
    double* g_head = G + off_ent_ + static_cast<std::size_t>(in.h) * m;
    double* g_cand = G + off_ent_ + static_cast<std::size_t>(e) * m;
    double* g_rel = G + off_rel_ + static_cast<std::size_t>(in.r) * m;
    double* g_pos = G + off_pos_ + static_cast<std::size_t>(k) * m;
    for (int i = 0; i < m; ++i) {
      g_head[i] += df[static_cast<std::size_t>(i)];
      g_cand[i] += df[static_cast<std::size_t>(m + i)];
      g_rel[i] += df[static_cast<std::size_t>(2 * m + i)];
      g_pos[i] += df[static_cast<std::size_t>(3 * m + i)];
    }
  }
}

PolicyOutput SequencePolicy::forward_teacher(const PolicyInput& in,
                                             const std::vector<int>& target) const {
  const int V = vocab_size(), d = cfg_.width, L = cfg_.layers;
  for (int tok : target)
    if (tok < 0 || tok >= V) throw std::runtime_error("target token outside vocabulary");
  Cache cache;
  run_forward(in, target, cache);
  PolicyOutput out;
  out.tokens = target;
  out.logprobs.resize(target.size());
  for (int t = 0; t < cache.T; ++t)
    out.logprobs[static_cast<std::size_t>(t)] =
        cache.logp[static_cast<std::size_t>(t) * V + target[static_cast<std::size_t>(t)]];
  out.hidden.resize(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    out.hidden[static_cast<std::size_t>(l)].assign(
        cache.h.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(l) * cache.T * d),
        cache.h.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(l + 1) * cache.T * d));
  }
  return out;
}

std::vector<double> SequencePolicy::step_logprobs(const PolicyInput& in,
                                                  const std::vector<int>& tokens) const {
  Cache cache;
  run_forward(in, tokens, cache);
  return cache.logp;
}

double SequencePolicy::sequence_logprob(const PolicyInput& in,
                                        const std::vector<int>& tokens) const {
  const auto out = forward_teacher(in, tokens);
  return std::accumulate(out.logprobs.begin(), out.logprobs.end(), 0.0);
}

PolicyOutput SequencePolicy::sample(const PolicyInput& in, double temperature,
                                    std::uint64_t seed) const {
  if (temperature <= 0.0) throw std::runtime_error("sample: temperature must be > 0");
  const int V = vocab_size(), d = cfg_.width, L = cfg_.layers;
  Rng rng(seed);
  PolicyOutput out;
  out.hidden.resize(static_cast<std::size_t>(L));
  std::vector<int> tokens;
  Cache cache;
  for (int t = 0; t < max_len(); ++t) {
    // teacher-force the sampled prefix plus one open slot
    std::vector<int> prefix = tokens;
    prefix.push_back(eos_token());  // placeholder; only positions < t feed inputs
    run_forward(in, prefix, cache);
    const double* logp = cache.logp.data() + static_cast<std::size_t>(t) * V;

    int pick = V - 1;
    if (temperature == 1.0) {
      double r = rng.uniform();
      double acc = 0.0;
      for (int v = 0; v < V; ++v) {
        acc += std::exp(logp[v]);
        if (r < acc) {
          pick = v;
          break;
        }
      }
    } else {
      std::vector<double> scaled(static_cast<std::size_t>(V));
      for (int v = 0; v < V; ++v) scaled[static_cast<std::size_t>(v)] = logp[v] / temperature;
      std::vector<double> tempered(static_cast<std::size_t>(V));
      log_softmax(scaled.data(), tempered.data(), V);
      double r = rng.uniform();
      double acc = 0.0;
      for (int v = 0; v < V; ++v) {
        acc += std::exp(tempered[static_cast<std::size_t>(v)]);
        if (r < acc) {
          pick = v;
          break;
        }
      }
    }
    tokens.push_back(pick);
    out.logprobs.push_back(logp[pick]);
    for (int l = 0; l < L; ++l) {
      const double* h = cache.h.data() + (static_cast<std::size_t>(l) * cache.T + t) * d;
      out.hidden[static_cast<std::size_t>(l)].insert(out.hidden[static_cast<std::size_t>(l)].end(),
                                                     h, h + d);
    }
    if (pick == eos_token()) break;
  }
  out.tokens = std::move(tokens);
  return out;
}

PolicyOutput SequencePolicy::greedy_decode(const PolicyInput& in) const {
  const int V = vocab_size(), d = cfg_.width, L = cfg_.layers;
  PolicyOutput out;
  out.hidden.resize(static_cast<std::size_t>(L));
  std::vector<int> tokens;
  Cache cache;
  for (int t = 0; t < max_len(); ++t) {
    std::vector<int> prefix = tokens;
    prefix.push_back(eos_token());
    run_forward(in, prefix, cache);
    const double* logp = cache.logp.data() + static_cast<std::size_t>(t) * V;
    int pick = 0;
    for (int v = 1; v < V; ++v)
      if (logp[v] > logp[pick]) pick = v;
    tokens.push_back(pick);
    out.logprobs.push_back(logp[pick]);
    for (int l = 0; l < L; ++l) {
      const double* h = cache.h.data() + (static_cast<std::size_t>(l) * cache.T + t) * d;
      out.hidden[static_cast<std::size_t>(l)].insert(out.hidden[static_cast<std::size_t>(l)].end(),
                                                     h, h + d);
    }
    if (pick == eos_token()) break;
  }
  out.tokens = std::move(tokens);
  return out;
}

std::vector<double> SequencePolicy::hidden_state(const PolicyInput& in, int layer) const {
  if (layer < 1 || layer > cfg_.layers)
    throw std::runtime_error("hidden_state: layer must be in [1, L]");
  Cache cache;
  run_forward(in, {eos_token()}, cache);  // single position, begin marker as input
  const int d = cfg_.width;
  const auto off = static_cast<std::size_t>(layer - 1) * cache.T * d;
  return {cache.h.begin() + static_cast<std::ptrdiff_t>(off),
          cache.h.begin() + static_cast<std::ptrdiff_t>(off + static_cast<std::size_t>(d))};
}

double SequencePolicy::sft_loss(const std::vector<const DiscriminativeInstance*>& batch,
                                std::vector<double>* grad) const {
  if (batch.empty()) throw std::runtime_error("sft_loss: empty batch");
  const int V = vocab_size();
  std::size_t total_tokens = 0;
  for (const auto* inst : batch) total_tokens += inst->e_pos.size() * 2 + 1;

  double loss = 0.0;
  Cache cache;
  std::vector<double> dlogits;
  for (const auto* inst : batch) {
    const auto in = encode(*inst);
    const auto target = encode_answer(inst->e_pos);
    run_forward(in, target, cache);
    if (grad) dlogits.assign(static_cast<std::size_t>(cache.T) * V, 0.0);
    for (int t = 0; t < cache.T; ++t) {
      const double* logp = cache.logp.data() + static_cast<std::size_t>(t) * V;
      const int y = target[static_cast<std::size_t>(t)];
      loss -= logp[y] / static_cast<double>(total_tokens);
      if (grad) {
        double* dl = dlogits.data() + static_cast<std::size_t>(t) * V;
        for (int v = 0; v < V; ++v)
          dl[v] = (std::exp(logp[v]) - (v == y ? 1.0 : 0.0)) / static_cast<double>(total_tokens);
      }
    }
    if (grad) run_backward(in, cache, dlogits, *grad);
  }
  if (!std::isfinite(loss)) throw std::runtime_error("sft_loss: non-finite loss");
  return loss;
}

void SequencePolicy::backward_from_logits(const PolicyInput& in, const std::vector<int>& tokens,
                                          const std::vector<double>& dlogits,
                                          std::vector<double>& grad) const {
  Cache cache;
  run_forward(in, tokens, cache);
  run_backward(in, cache, dlogits, grad);
}

double SequencePolicy::sft_step(const std::vector<const DiscriminativeInstance*>& batch,
                                double lr) {
  std::vector<double> grad(params_.size(), 0.0);
  const double loss = sft_loss(batch, &grad);
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i] -= lr * grad[i];
  return loss;
}

void SequencePolicy::save(const std::string& path) const {
  check_little_endian();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "kgr-policy 1 " << cfg_.max_k << ' ' << cfg_.layers << ' ' << cfg_.width << ' '
      << cfg_.emb_dim << ' ' << num_entities_ << ' ' << num_relations_ << '\n';
  std::vector<float> buf(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) buf[i] = static_cast<float>(params_[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

SequencePolicy SequencePolicy::load(const std::string& path) {
  check_little_endian();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(in, line);
  std::istringstream header(line);
  std::string magic;
  int version = 0, max_k = 0, layers = 0, width = 0, emb = 0, ne = 0, nr = 0;
  header >> magic >> version >> max_k >> layers >> width >> emb >> ne >> nr;
  if (magic != "kgr-policy" || version != 1 || !header)
    throw std::runtime_error("bad policy checkpoint header in " + path);
  PolicyConfig cfg;
  cfg.max_k = max_k;
  cfg.layers = layers;
  cfg.width = width;
  cfg.emb_dim = emb;
  cfg.seed = 0;
  SequencePolicy p(cfg, ne, nr);
  std::vector<float> buf(p.params_.size());
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in) throw std::runtime_error("truncated policy checkpoint: " + path);
  for (std::size_t i = 0; i < buf.size(); ++i) p.params_[i] = static_cast<double>(buf[i]);
  return p;
}

SftResult train_sft(SequencePolicy& policy, const std::vector<DiscriminativeInstance>& data,
                    const SftConfig& cfg) {
  if (data.empty()) throw std::runtime_error("train_sft: empty dataset");
  if (cfg.batch_size < 1) throw std::runtime_error("train_sft: bad batch size");
  SftResult result;
  auto& params = policy.parameters();
  std::vector<double> m(params.size(), 0.0), v(params.size(), 0.0), grad(params.size());
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::int64_t step = 0;

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const DiscriminativeInstance*> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data[order[i]]);

      std::fill(grad.begin(), grad.end(), 0.0);
      epoch_loss += policy.sft_loss(batch, &grad);
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
  return result;
}

std::vector<DiscriminativeInstance> build_error_set(
    const SequencePolicy& policy, const std::vector<DiscriminativeInstance>& instances) {
  std::vector<DiscriminativeInstance> errors;
  for (const auto& inst : instances) {
    const auto out = policy.greedy_decode(policy.encode(inst));
    const auto parsed = parse_answer(policy.detokenize(out.tokens), inst.labels());
    if (!parsed.has_value() || *parsed != inst.e_pos) errors.push_back(inst);
  }
  return errors;
}

}  // namespace kgr
