#include "kgr/kge.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "kgr/rng.hpp"

namespace kgr {

namespace {

constexpr double kPi = 3.14159265358979323846;

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_little_endian() {
  const std::uint32_t probe = 1;
  if (*reinterpret_cast<const std::uint8_t*>(&probe) != 1)
    throw std::runtime_error("kge checkpoint io requires a little-endian host");
}

void write_f32_block(std::ofstream& out, const std::vector<double>& v) {
  std::vector<float> buf(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) buf[i] = static_cast<float>(v[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

void read_f32_block(std::ifstream& in, std::vector<double>& v, const std::string& path) {
  std::vector<float> buf(v.size());
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  for (std::size_t i = 0; i < buf.size(); ++i) v[i] = static_cast<double>(buf[i]);
}

}  // namespace

KgeKind kge_kind_from_string(const std::string& name) {
  std::string s;
  for (char c : name) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s == "transe") return KgeKind::TransE;
  if (s == "distmult") return KgeKind::DistMult;
  if (s == "complex") return KgeKind::ComplEx;
  if (s == "rotate") return KgeKind::RotatE;
  if (s == "tucker") return KgeKind::TuckER;
  throw std::runtime_error("unknown KGE kind: " + name);
}

std::string kge_kind_name(KgeKind kind) {
  switch (kind) {
    case KgeKind::TransE: return "transe";
    case KgeKind::DistMult: return "distmult";
    case KgeKind::ComplEx: return "complex";
    case KgeKind::RotatE: return "rotate";
    case KgeKind::TuckER: return "tucker";
  }
  return "?";
}

KgeModel::KgeModel(KgeKind kind, int num_entities, int num_relations, int dim_entity,
                   int dim_relation, std::uint64_t seed)
    : kind_(kind),
      num_entities_(num_entities),
      num_relations_(num_relations),
      d_e_(dim_entity),
      d_r_(dim_relation) {
  if ((kind == KgeKind::ComplEx || kind == KgeKind::RotatE) && dim_entity % 2 != 0)
    throw std::runtime_error("ComplEx/RotatE need an even entity dimension");
  if (kind == KgeKind::RotatE && dim_relation != dim_entity / 2)
    throw std::runtime_error("RotatE needs dim_relation == dim_entity / 2 (phases)");
  if (kind != KgeKind::TuckER && kind != KgeKind::RotatE && dim_relation != dim_entity)
    throw std::runtime_error("this kind needs dim_relation == dim_entity");

  ent_.resize(static_cast<std::size_t>(num_entities) * d_e_);
  rel_.resize(static_cast<std::size_t>(num_relations) * d_r_);
  Rng rng(seed);
  const double bound = 6.0 / std::sqrt(static_cast<double>(d_e_));
  switch (kind_) {
    case KgeKind::TransE:
    case KgeKind::DistMult:
    case KgeKind::ComplEx:
      for (auto& x : ent_) x = rng.uniform(-bound, bound);
      for (auto& x : rel_) x = rng.uniform(-bound, bound);
      if (kind_ == KgeKind::TransE) {
        // classic init: relations normalized once, entities per batch
        for (int r = 0; r < num_relations_; ++r) {
          double* w = rel_.data() + static_cast<std::size_t>(r) * d_r_;
          double norm = 0.0;
          for (int i = 0; i < d_r_; ++i) norm += w[i] * w[i];
          norm = std::sqrt(std::max(norm, 1e-12));
          for (int i = 0; i < d_r_; ++i) w[i] /= norm;
        }
      }
      break;
    case KgeKind::RotatE:
      for (auto& x : ent_) x = rng.uniform(-bound, bound);
      for (auto& x : rel_) x = rng.uniform(-kPi, kPi);
      break;
    case KgeKind::TuckER: {
      const double sigma = 0.15;
      for (auto& x : ent_) x = rng.normal(0.0, sigma);
      for (auto& x : rel_) x = rng.normal(0.0, sigma);
      core_.resize(static_cast<std::size_t>(d_e_) * d_r_ * d_e_);
      for (auto& x : core_) x = rng.uniform(-1.0, 1.0);
      break;
    }
  }
}

void KgeModel::query_vector(EntityId h, RelationId r, std::vector<double>& q) const {
  const double* eh = ent_.data() + static_cast<std::size_t>(h) * d_e_;
  const double* wr = rel_.data() + static_cast<std::size_t>(r) * d_r_;
  q.assign(static_cast<std::size_t>(d_e_), 0.0);
  switch (kind_) {
    case KgeKind::TransE:
      for (int i = 0; i < d_e_; ++i) q[static_cast<std::size_t>(i)] = eh[i] + wr[i];
      break;
    case KgeKind::DistMult:
      for (int i = 0; i < d_e_; ++i) q[static_cast<std::size_t>(i)] = eh[i] * wr[i];
      break;
    case KgeKind::ComplEx:
      for (int k = 0; k < d_e_ / 2; ++k) {
        const double hr = eh[2 * k], hi = eh[2 * k + 1];
        const double rr = wr[2 * k], ri = wr[2 * k + 1];
        q[static_cast<std::size_t>(2 * k)] = hr * rr - hi * ri;
        q[static_cast<std::size_t>(2 * k + 1)] = hr * ri + hi * rr;
      }
      break;
    case KgeKind::RotatE:
      for (int k = 0; k < d_e_ / 2; ++k) {
        const double c = std::cos(wr[k]), s = std::sin(wr[k]);
        const double hr = eh[2 * k], hi = eh[2 * k + 1];
        q[static_cast<std::size_t>(2 * k)] = hr * c - hi * s;
        q[static_cast<std::size_t>(2 * k + 1)] = hr * s + hi * c;
      }
      break;
    case KgeKind::TuckER: {
      // q[k] = sum_{i,j} W[i][j][k] h_i r_j
      const double* W = core_.data();
      for (int i = 0; i < d_e_; ++i) {
        const double hi = eh[i];
        if (hi == 0.0) continue;
        for (int j = 0; j < d_r_; ++j) {
          const double c = hi * wr[j];
          const double* row = W + (static_cast<std::size_t>(i) * d_r_ + j) * d_e_;
          for (int k = 0; k < d_e_; ++k) q[static_cast<std::size_t>(k)] += c * row[k];
        }
      }
      break;
    }
  }
}

double KgeModel::score_against_query(const std::vector<double>& q, EntityId t) const {
  const double* et = ent_.data() + static_cast<std::size_t>(t) * d_e_;
  switch (kind_) {
    case KgeKind::TransE: {
      double acc = 0.0;
      for (int i = 0; i < d_e_; ++i) {
        const double diff = q[static_cast<std::size_t>(i)] - et[i];
        acc += diff * diff;
      }
      return -std::sqrt(acc);
    }
    case KgeKind::RotatE: {
      double acc = 0.0;
      for (int k = 0; k < d_e_ / 2; ++k) {
        const double dr = q[static_cast<std::size_t>(2 * k)] - et[2 * k];
        const double di = q[static_cast<std::size_t>(2 * k + 1)] - et[2 * k + 1];
        acc += std::sqrt(dr * dr + di * di);
      }
      return -acc;
    }
    case KgeKind::DistMult:
    case KgeKind::ComplEx:
    case KgeKind::TuckER: {
      double acc = 0.0;
      for (int i = 0; i < d_e_; ++i) acc += q[static_cast<std::size_t>(i)] * et[i];
      return acc;
    }
  }
  return 0.0;
}

double KgeModel::score(EntityId h, RelationId r, EntityId t) const {
  std::vector<double> q;
  query_vector(h, r, q);
  return score_against_query(q, t);
}

void KgeModel::score_all_tails(EntityId h, RelationId r, std::vector<double>& out) const {
  std::vector<double> q;
  query_vector(h, r, q);
  out.resize(static_cast<std::size_t>(num_entities_));
  for (EntityId t = 0; t < num_entities_; ++t)
    out[static_cast<std::size_t>(t)] = score_against_query(q, t);
}

void KgeModel::save(const std::string& path) const {
  check_little_endian();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "kgr-kge 1 " << kge_kind_name(kind_) << ' ' << d_e_ << ' ' << d_r_ << ' ' << num_entities_
      << ' ' << num_relations_ << '\n';
  write_f32_block(out, ent_);
  write_f32_block(out, rel_);
  if (kind_ == KgeKind::TuckER) write_f32_block(out, core_);
}

KgeModel KgeModel::load(const std::string& path) {
  check_little_endian();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(in, line);
  std::istringstream header(line);
  std::string magic, kind_name;
  int version = 0, d_e = 0, d_r = 0, ne = 0, nr = 0;
  header >> magic >> version >> kind_name >> d_e >> d_r >> ne >> nr;
  if (magic != "kgr-kge" || version != 1 || !header)
    throw std::runtime_error("bad kge checkpoint header in " + path);
  KgeModel m(kge_kind_from_string(kind_name), ne, nr, d_e, d_r, /*seed=*/0);
  read_f32_block(in, m.ent_, path);
  read_f32_block(in, m.rel_, path);
  if (m.kind_ == KgeKind::TuckER) read_f32_block(in, m.core_, path);
  return m;
}

KgeModel KgeModel::load_for_graph(const std::string& path, const KnowledgeGraph& g) {
  KgeModel m = load(path);
  if (m.num_entities() != g.num_entities() || m.num_relations() != g.num_relations()) {
    throw std::runtime_error("checkpoint " + path + " was trained on a different graph (" +
                             std::to_string(m.num_entities()) + " entities, " +
                             std::to_string(m.num_relations()) + " relations)");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Training

namespace {

// Sparse per-batch gradient: touched embedding rows plus (TuckER) a dense
// core accumulator.
struct BatchGrad {
  std::unordered_map<EntityId, std::vector<double>> ent;
  std::unordered_map<RelationId, std::vector<double>> rel;
  std::vector<double> core;

  std::vector<double>& ent_row(EntityId e, int d) {
    auto& g = ent[e];
    if (g.empty()) g.assign(static_cast<std::size_t>(d), 0.0);
    return g;
  }
  std::vector<double>& rel_row(RelationId r, int d) {
    auto& g = rel[r];
    if (g.empty()) g.assign(static_cast<std::size_t>(d), 0.0);
    return g;
  }

  void merge_from(BatchGrad& other) {
    for (auto& [k, v] : other.ent) {
      auto& dst = ent[k];
      if (dst.empty()) dst = std::move(v);
      else for (std::size_t i = 0; i < v.size(); ++i) dst[i] += v[i];
    }
    for (auto& [k, v] : other.rel) {
      auto& dst = rel[k];
      if (dst.empty()) dst = std::move(v);
      else for (std::size_t i = 0; i < v.size(); ++i) dst[i] += v[i];
    }
    if (!other.core.empty()) {
      if (core.empty()) core = std::move(other.core);
      else for (std::size_t i = 0; i < other.core.size(); ++i) core[i] += other.core[i];
    }
    other.ent.clear();
    other.rel.clear();
    other.core.clear();
  }
};

}  // namespace

struct KgeTrainer {
  KgeModel& model;
  const KnowledgeGraph& graph;
  const KgeTrainConfig& cfg;
  std::unordered_set<Triple, TripleHash> train_set;
  // AdaGrad accumulators
  std::vector<double> acc_ent, acc_rel, acc_core;

  KgeTrainer(KgeModel& m, const KnowledgeGraph& g, const KgeTrainConfig& c)
      : model(m), graph(g), cfg(c) {
    for (const auto& x : g.triples(Split::Train)) train_set.insert(x);
    if (cfg.adaptive) {
      acc_ent.assign(model.ent_.size(), 0.0);
      acc_rel.assign(model.rel_.size(), 0.0);
      acc_core.assign(model.core_.size(), 0.0);
    }
  }

  bool margin_based() const {
    return model.kind_ == KgeKind::TransE || model.kind_ == KgeKind::RotatE;
  }

  EntityId sample_negative_tail(const Triple& x, Rng& rng) const {
    while (true) {
      const EntityId cand = static_cast<EntityId>(rng.uniform_int(model.num_entities_));
      if (!train_set.count(Triple{x.h, x.r, cand})) return cand;
    }
  }

  EntityId sample_negative_head(const Triple& x, Rng& rng) const {
    while (true) {
      const EntityId cand = static_cast<EntityId>(rng.uniform_int(model.num_entities_));
      if (!train_set.count(Triple{cand, x.r, x.t})) return cand;
    }
  }

  // d(h, r, t) and its gradient wrt (e_h, w_r, e_t), TransE squared L2 /
  // RotatE sum-of-moduli. Gradients are accumulated scaled by `coeff`.
  double distance_with_grad(const Triple& x, double coeff, BatchGrad& g) const {
    const int d_e = model.d_e_;
    const double* eh = model.ent_.data() + static_cast<std::size_t>(x.h) * d_e;
    const double* et = model.ent_.data() + static_cast<std::size_t>(x.t) * d_e;
    const double* wr = model.rel_.data() + static_cast<std::size_t>(x.r) * model.d_r_;
    auto& gh = g.ent_row(x.h, d_e);
    auto& gt = g.ent_row(x.t, d_e);
    auto& gr = g.rel_row(x.r, model.d_r_);
    if (model.kind_ == KgeKind::TransE) {
      double dist = 0.0;
      for (int i = 0; i < d_e; ++i) {
        const double diff = eh[i] + wr[i] - et[i];
        dist += diff * diff;
        const double grad = coeff * 2.0 * diff;
        gh[static_cast<std::size_t>(i)] += grad;
        gr[static_cast<std::size_t>(i)] += grad;
        gt[static_cast<std::size_t>(i)] -= grad;
      }
      return dist;
    }
    // RotatE
    double dist = 0.0;
    for (int k = 0; k < d_e / 2; ++k) {
      const double c = std::cos(wr[k]), s = std::sin(wr[k]);
      const double hr = eh[2 * k], hi = eh[2 * k + 1];
      const double rot_re = hr * c - hi * s;
      const double rot_im = hr * s + hi * c;
      const double ur = rot_re - et[2 * k];
      const double ui = rot_im - et[2 * k + 1];
      const double m = std::sqrt(std::max(ur * ur + ui * ui, 1e-24));
      dist += m;
      const double cur = coeff * ur / m;
      const double cui = coeff * ui / m;
      gh[static_cast<std::size_t>(2 * k)] += cur * c + cui * s;
      gh[static_cast<std::size_t>(2 * k + 1)] += -cur * s + cui * c;
      gt[static_cast<std::size_t>(2 * k)] -= cur;
      gt[static_cast<std::size_t>(2 * k + 1)] -= cui;
      gr[static_cast<std::size_t>(k)] += cur * (-rot_im) + cui * rot_re;
    }
    return dist;
  }

  double margin_sample_loss(const Triple& pos, Rng& rng, BatchGrad& g) const {
    Triple neg = pos;
    if (rng.uniform() < cfg.corrupt_head_prob) neg.h = sample_negative_head(pos, rng);
    else neg.t = sample_negative_tail(pos, rng);

    BatchGrad probe;  // gradients only needed when the hinge is active
    const double d_pos = distance_with_grad(pos, 1.0, probe);
    const double d_neg = distance_with_grad(neg, -1.0, probe);
    const double loss = cfg.margin + d_pos - d_neg;
    if (loss <= 0.0) return 0.0;
    g.merge_from(probe);
    return loss;
  }

  // Multiplicative kinds: BCE with sampled negatives.
  double bce_sample_loss(const Triple& pos, Rng& rng, BatchGrad& g) const {
    const int d_e = model.d_e_;
    const int m = std::max(cfg.negatives, 1);
    std::vector<Triple> samples;
    samples.reserve(static_cast<std::size_t>(m) + 1);
    samples.push_back(pos);
    for (int i = 0; i < m; ++i) {
      Triple neg = pos;
      if (model.kind_ != KgeKind::TuckER && rng.uniform() < cfg.corrupt_head_prob)
        neg.h = sample_negative_head(pos, rng);
      else
        neg.t = sample_negative_tail(pos, rng);
      samples.push_back(neg);
    }

    double loss = 0.0;
    if (model.kind_ == KgeKind::TuckER) {
      // all samples share (h, r); fold per-sample coefficients into one
      // combined tail vector so the rank-1 core passes run once
      std::vector<double> q;
      model.query_vector(pos.h, pos.r, q);
      std::vector<double> c(static_cast<std::size_t>(d_e), 0.0);
      auto& gq_h = g.ent_row(pos.h, d_e);
      auto& gq_r = g.rel_row(pos.r, model.d_r_);
      for (std::size_t si = 0; si < samples.size(); ++si) {
        const EntityId t = samples[si].t;
        const double s = model.score_against_query(q, t);
        const bool is_pos = si == 0;
        loss += is_pos ? softplus(-s) : softplus(s) / m;
        const double coeff = is_pos ? sigmoid(s) - 1.0 : sigmoid(s) / m;
        const double* et = model.ent_.data() + static_cast<std::size_t>(t) * d_e;
        auto& gt = g.ent_row(t, d_e);
        for (int k = 0; k < d_e; ++k) {
          gt[static_cast<std::size_t>(k)] += coeff * q[static_cast<std::size_t>(k)];
          c[static_cast<std::size_t>(k)] += coeff * et[k];
        }
      }
      const double* eh = model.ent_.data() + static_cast<std::size_t>(pos.h) * d_e;
      const double* wr = model.rel_.data() + static_cast<std::size_t>(pos.r) * model.d_r_;
      if (g.core.empty()) g.core.assign(model.core_.size(), 0.0);
      const double* W = model.core_.data();
      for (int i = 0; i < d_e; ++i) {
        double gh_i = 0.0;
        for (int j = 0; j < model.d_r_; ++j) {
          const std::size_t base = (static_cast<std::size_t>(i) * model.d_r_ + j) *
                                   static_cast<std::size_t>(d_e);
          const double* row = W + base;
          double* grow = g.core.data() + base;
          double dot = 0.0;
          const double hr = eh[i] * wr[j];
          for (int k = 0; k < d_e; ++k) {
            dot += row[k] * c[static_cast<std::size_t>(k)];
            grow[k] += hr * c[static_cast<std::size_t>(k)];
          }
          gh_i += wr[j] * dot;
          gq_r[static_cast<std::size_t>(j)] += eh[i] * dot;
        }
        gq_h[static_cast<std::size_t>(i)] += gh_i;
      }
      return loss;
    }

    for (std::size_t si = 0; si < samples.size(); ++si) {
      const Triple& x = samples[si];
      const double s = model.score(x.h, x.r, x.t);
      const bool is_pos = si == 0;
      loss += is_pos ? softplus(-s) : softplus(s) / m;
      const double coeff = is_pos ? sigmoid(s) - 1.0 : sigmoid(s) / m;
      const double* eh = model.ent_.data() + static_cast<std::size_t>(x.h) * d_e;
      const double* et = model.ent_.data() + static_cast<std::size_t>(x.t) * d_e;
      const double* wr = model.rel_.data() + static_cast<std::size_t>(x.r) * model.d_r_;
      auto& gh = g.ent_row(x.h, d_e);
      auto& gt = g.ent_row(x.t, d_e);
      auto& gr = g.rel_row(x.r, model.d_r_);
      if (model.kind_ == KgeKind::DistMult) {
        for (int i = 0; i < d_e; ++i) {
          gh[static_cast<std::size_t>(i)] += coeff * wr[i] * et[i];
          gr[static_cast<std::size_t>(i)] += coeff * eh[i] * et[i];
          gt[static_cast<std::size_t>(i)] += coeff * eh[i] * wr[i];
        }
      } else {  // ComplEx
        for (int k = 0; k < d_e / 2; ++k) {
          const double hr = eh[2 * k], hi = eh[2 * k + 1];
          const double rr = wr[2 * k], ri = wr[2 * k + 1];
          const double tr = et[2 * k], ti = et[2 * k + 1];
          gh[static_cast<std::size_t>(2 * k)] += coeff * (rr * tr + ri * ti);
          gh[static_cast<std::size_t>(2 * k + 1)] += coeff * (rr * ti - ri * tr);
          gr[static_cast<std::size_t>(2 * k)] += coeff * (hr * tr + hi * ti);
          gr[static_cast<std::size_t>(2 * k + 1)] += coeff * (hr * ti - hi * tr);
          gt[static_cast<std::size_t>(2 * k)] += coeff * (hr * rr - hi * ri);
          gt[static_cast<std::size_t>(2 * k + 1)] += coeff * (hr * ri + hi * rr);
        }
      }
    }
    return loss;
  }

  void apply_row(double* param, double* acc, const std::vector<double>& grad, double reg) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
      double gi = grad[i] + reg * param[i];
      if (cfg.adaptive) {
        acc[i] += gi * gi;
        param[i] -= cfg.lr * gi / (std::sqrt(acc[i]) + 1e-8);
      } else {
        param[i] -= cfg.lr * gi;
      }
    }
  }

  void apply(BatchGrad& g) {
    const double reg = margin_based() ? 0.0 : cfg.reg;
    for (auto& [e, grad] : g.ent) {
      const std::size_t off = static_cast<std::size_t>(e) * model.d_e_;
      apply_row(model.ent_.data() + off, cfg.adaptive ? acc_ent.data() + off : nullptr, grad, reg);
    }
    for (auto& [r, grad] : g.rel) {
      const std::size_t off = static_cast<std::size_t>(r) * model.d_r_;
      apply_row(model.rel_.data() + off, cfg.adaptive ? acc_rel.data() + off : nullptr, grad, reg);
    }
    if (!g.core.empty())
      apply_row(model.core_.data(), cfg.adaptive ? acc_core.data() : nullptr, g.core, reg);
  }

  void project() {
    if (model.kind_ == KgeKind::TransE) {
      for (int e = 0; e < model.num_entities_; ++e) {
        double* v = model.ent_.data() + static_cast<std::size_t>(e) * model.d_e_;
        double norm = 0.0;
        for (int i = 0; i < model.d_e_; ++i) norm += v[i] * v[i];
        norm = std::sqrt(norm);
        if (norm > 1.0) for (int i = 0; i < model.d_e_; ++i) v[i] /= norm;
      }
    } else if (model.kind_ == KgeKind::RotatE) {
      for (auto& phase : model.rel_) {
        while (phase > kPi) phase -= 2.0 * kPi;
        while (phase < -kPi) phase += 2.0 * kPi;
      }
    }
  }

  KgeTrainResult run() {
    KgeTrainResult result;
    const auto& train = graph.triples(Split::Train);
    if (train.empty()) throw std::runtime_error("train_kge: empty train split");
    if (cfg.epochs == 0) return result;

    Rng epoch_rng(cfg.seed);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    const int threads = std::max(cfg.threads, 1);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      epoch_rng.shuffle(order);
      double epoch_loss = 0.0;
      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end =
            std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        std::vector<BatchGrad> grads(static_cast<std::size_t>(threads));
        std::vector<double> losses(static_cast<std::size_t>(threads), 0.0);
        auto worker = [&](int tid) {
          for (std::size_t idx = start + static_cast<std::size_t>(tid); idx < end;
               idx += static_cast<std::size_t>(threads)) {
            const Triple& pos = train[order[idx]];
            Rng rng = epoch_rng.fork(static_cast<std::uint64_t>(epoch) * train.size() + idx);
            losses[static_cast<std::size_t>(tid)] +=
                margin_based() ? margin_sample_loss(pos, rng, grads[static_cast<std::size_t>(tid)])
                               : bce_sample_loss(pos, rng, grads[static_cast<std::size_t>(tid)]);
          }
        };
        if (threads == 1) {
          worker(0);
        } else {
          std::vector<std::thread> pool;
          for (int tid = 0; tid < threads; ++tid) pool.emplace_back(worker, tid);
          for (auto& th : pool) th.join();
        }
        for (int tid = 1; tid < threads; ++tid)
          grads[0].merge_from(grads[static_cast<std::size_t>(tid)]);
        for (double l : losses) epoch_loss += l;
        apply(grads[0]);
        project();
      }
      const double mean_loss = epoch_loss / static_cast<double>(train.size());
      if (!std::isfinite(mean_loss))
        throw std::runtime_error("train_kge diverged (non-finite loss) at epoch " +
                                 std::to_string(epoch));
      result.loss_history.push_back(mean_loss);
    }
    return result;
  }
};

KgeTrainResult train_kge(KgeModel& model, const KnowledgeGraph& g, const KgeTrainConfig& cfg) {
  KgeTrainer trainer(model, g, cfg);
  return trainer.run();
}

KgeModel train_kge(const KnowledgeGraph& g, KgeKind kind, int dim_entity, int dim_relation,
                   const KgeTrainConfig& cfg) {
  KgeModel model(kind, g.num_entities(), g.num_relations(), dim_entity, dim_relation, cfg.seed);
  train_kge(model, g, cfg);
  return model;
}

std::vector<ScoredEntity> rank_all_tails(const KgeModel& model, EntityId h, RelationId r,
                                         const std::vector<EntityId>& filter) {
  std::vector<double> scores;
  model.score_all_tails(h, r, scores);
  std::vector<ScoredEntity> out;
  out.reserve(scores.size());
  for (EntityId e = 0; e < model.num_entities(); ++e) {
    if (std::binary_search(filter.begin(), filter.end(), e)) continue;
    out.push_back({e, scores[static_cast<std::size_t>(e)]});
  }
  std::sort(out.begin(), out.end(), [](const ScoredEntity& a, const ScoredEntity& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.entity < b.entity;
  });
  return out;
}

std::vector<ScoredEntity> retrieve_topn(const KgeModel& model, EntityId h, RelationId r, int n,
                                        const std::vector<EntityId>& filter) {
  if (n < 1) throw std::runtime_error("retrieve_topn: n must be >= 1");
  auto ranked = rank_all_tails(model, h, r, filter);
  if (static_cast<int>(ranked.size()) > n) ranked.resize(static_cast<std::size_t>(n));
  return ranked;
}

}  // namespace kgr
