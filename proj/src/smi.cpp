#include "kgr/smi.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"
#include "kgr/rng.hpp"

namespace kgr {

double digamma(double x) {
  if (x <= 0.0) throw std::runtime_error("digamma: argument must be positive");
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  // asymptotic series at large x
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  return acc + std::log(x) - 0.5 * inv -
         inv2 * (1.0 / 12.0 -
                 inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))));
}

namespace {

void apply_jitter(std::vector<double>& x, std::uint64_t seed) {
  double lo = x[0], hi = x[0];
  for (double v : x) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double scale = 1e-10 * (hi - lo);
  if (scale == 0.0) return;
  Rng rng(seed);
  for (auto& v : x) v += rng.uniform() * scale;
}

// k-th smallest |c[j] - c[p]| over j != p within a sorted array
double kth_neighbor_distance(const std::vector<double>& c, std::size_t p, int k) {
  std::size_t left = p;              // next candidate on the left is left-1
  std::size_t right = p + 1;         // next candidate on the right
  double d = 0.0;
  for (int step = 0; step < k; ++step) {
    const double dl = left > 0 ? c[p] - c[left - 1] : std::numeric_limits<double>::infinity();
    const double dr =
        right < c.size() ? c[right] - c[p] : std::numeric_limits<double>::infinity();
    if (dl <= dr) {
      d = dl;
      --left;
    } else {
      d = dr;
      ++right;
    }
  }
  return d;
}

}  // namespace

double mixed_ksg_mi(const std::vector<double>& x, const std::vector<int>& y, int k,
                    std::uint64_t jitter_seed) {
  const std::size_t n = x.size();
  if (n != y.size()) throw std::runtime_error("mixed_ksg_mi: x and y disagree");
  if (k < 1) throw std::runtime_error("mixed_ksg_mi: k must be >= 1");
  if (n < 4) throw std::runtime_error("mixed_ksg_mi: too few samples");

  std::vector<double> xs = x;
  apply_jitter(xs, jitter_seed);

  std::unordered_map<int, std::vector<double>> classes;
  for (std::size_t i = 0; i < n; ++i) classes[y[i]].push_back(xs[i]);
  for (auto& [label, values] : classes) {
    if (values.size() < 2)
      throw std::runtime_error("mixed_ksg_mi: every label class needs at least 2 samples");
    std::sort(values.begin(), values.end());
  }

  std::vector<double> global = xs;
  std::sort(global.begin(), global.end());

  double psi_ny = 0.0, psi_ki = 0.0, psi_mi = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& cls = classes.at(y[i]);
    const auto cn = cls.size();
    const int ki = std::min<std::int64_t>(k, static_cast<std::int64_t>(cn) - 1);

    const auto p = static_cast<std::size_t>(
        std::lower_bound(cls.begin(), cls.end(), xs[i]) - cls.begin());
    const double di = kth_neighbor_distance(cls, p, ki);

    // all samples within the radius, self excluded; the comparison reuses
    // the same subtraction that produced di so boundary points stay inside
    const auto g = static_cast<std::size_t>(
        std::lower_bound(global.begin(), global.end(), xs[i]) - global.begin());
    std::size_t mi = 0;
    for (std::size_t j = g; j > 0 && xs[i] - global[j - 1] <= di; --j) ++mi;
    for (std::size_t j = g + 1; j < n && global[j] - xs[i] <= di; ++j) ++mi;

    psi_ny += digamma(static_cast<double>(cn));
    psi_ki += digamma(static_cast<double>(ki));
    psi_mi += digamma(static_cast<double>(mi));
  }
  const auto dn = static_cast<double>(n);
  return digamma(dn) - psi_ny / dn + psi_ki / dn - psi_mi / dn;
}

double continuous_ksg_mi(const std::vector<double>& x, const std::vector<double>& y, int k,
                         std::uint64_t jitter_seed) {
  const std::size_t n = x.size();
  if (n != y.size()) throw std::runtime_error("continuous_ksg_mi: x and y disagree");
  if (k < 1) throw std::runtime_error("continuous_ksg_mi: k must be >= 1");
  if (n < static_cast<std::size_t>(k) + 2) throw std::runtime_error("continuous_ksg_mi: too few samples");

  std::vector<double> xs = x, ys = y;
  apply_jitter(xs, jitter_seed);
  apply_jitter(ys, jitter_seed ^ 0x5851F42D4C957F2Dull);

  double acc = 0.0;
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      dist[j] = j == i ? std::numeric_limits<double>::infinity()
                       : std::max(std::abs(xs[j] - xs[i]), std::abs(ys[j] - ys[i]));
    std::vector<double> d = dist;
    std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
    const double eps = d[static_cast<std::size_t>(k - 1)];  // k-th neighbour max-norm radius

    std::size_t nx = 0, ny = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (std::abs(xs[j] - xs[i]) < eps) ++nx;
      if (std::abs(ys[j] - ys[i]) < eps) ++ny;
    }
    acc += digamma(static_cast<double>(nx + 1)) + digamma(static_cast<double>(ny + 1));
  }
  const auto dn = static_cast<double>(n);
  return digamma(static_cast<double>(k)) + digamma(dn) - acc / dn;
}

std::vector<double> task_projections(const ProbeClassifier& probe, const ProbeData& data) {
  if (data.dim != probe.dim())
    throw std::runtime_error("task_projections: representation size does not match the probe");
  const int n = data.size();
  const int dv = probe.hidden();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n) * dv);
  for (int i = 0; i < n; ++i) {
    const auto v = probe.hidden_activations(data.X.data() + static_cast<std::size_t>(i) * data.dim);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

namespace {

SmiResult slices_mi(const std::vector<double>& V, const std::vector<int>& y, int n, int dv,
                    const SmiConfig& cfg) {
  SmiResult r;
  r.k = cfg.k;
  r.n = n;
  r.d_v = dv;
  Rng rng(cfg.jitter_seed);
  std::vector<double> col(static_cast<std::size_t>(n));
  for (int j = 0; j < dv; ++j) {
    for (int i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = V[static_cast<std::size_t>(i) * dv + j];
    const double mi = mixed_ksg_mi(col, y, cfg.k, rng.fork(static_cast<std::uint64_t>(j)).seed());
    r.per_dim_mi.push_back(std::max(mi, 0.0));
  }
  double total = 0.0;
  for (double v : r.per_dim_mi) total += v;
  r.i_task = r.per_dim_mi.empty() ? 0.0 : total / static_cast<double>(r.per_dim_mi.size());
  return r;
}

}  // namespace

SmiResult task_smi(const ProbeClassifier& probe, const ProbeData& data, const SmiConfig& cfg) {
  if (static_cast<int>(data.y.size()) != data.size())
    throw std::runtime_error("task_smi: data must be labeled");
  const auto V = task_projections(probe, data);
  return slices_mi(V, data.y, data.size(), probe.hidden(), cfg);
}

SmiResult random_projection_smi(const ProbeData& data, int num_directions, std::uint64_t seed,
                                const SmiConfig& cfg) {
  if (static_cast<int>(data.y.size()) != data.size())
    throw std::runtime_error("random_projection_smi: data must be labeled");
  if (num_directions < 1) throw std::runtime_error("random_projection_smi: need directions");
  const int n = data.size();
  const int d = data.dim;
  Rng rng(seed);
  std::vector<double> V(static_cast<std::size_t>(n) * num_directions);
  std::vector<double> u(static_cast<std::size_t>(d));
  for (int j = 0; j < num_directions; ++j) {
    double norm = 0.0;
    for (auto& v : u) {
      v = rng.normal(0.0, 1.0);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : u) v /= norm;
    for (int i = 0; i < n; ++i) {
      double dot = 0.0;
      const double* z = data.X.data() + static_cast<std::size_t>(i) * d;
      for (int c = 0; c < d; ++c) dot += z[c] * u[static_cast<std::size_t>(c)];
      V[static_cast<std::size_t>(i) * num_directions + j] = dot;
    }
  }
  return slices_mi(V, data.y, n, num_directions, cfg);
}

void save_smi_json(const std::string& path, const SmiResult& r) {
  nlohmann::json j;
  j["k"] = r.k;
  j["N"] = r.n;
  j["d_v"] = r.d_v;
  j["per_dim_mi"] = r.per_dim_mi;
  j["i_task"] = r.i_task;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

void save_smi_csv(const std::string& path, const SmiResult& r) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "dim,mi\n";
  for (std::size_t j = 0; j < r.per_dim_mi.size(); ++j) out << j << ',' << r.per_dim_mi[j] << '\n';
}

}  // namespace kgr
