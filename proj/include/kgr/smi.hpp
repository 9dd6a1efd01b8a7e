#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kgr/probe.hpp"

namespace kgr {

// Sliced mutual-information estimation between probed representations and
// truth labels. Each scalar slice of the task-adapted projection is scored
// with a k-nearest-neighbour estimator that handles the discrete label side
// exactly; slices are averaged into a single task-information number.

double digamma(double x);

// MI in nats between a continuous scalar and a discrete label. For each
// sample, the k-th nearest same-label neighbour fixes a radius d_i and m_i
// counts all samples inside it:
//   I = psi(N) - <psi(N_y)> + <psi(k_i)> - <psi(m_i)>
// with k_i = min(k, class size - 1). A seeded jitter of 1e-10 times the
// value range breaks ties. Can return slightly negative values by chance.
double mixed_ksg_mi(const std::vector<double>& x, const std::vector<int>& y, int k = 3,
                    std::uint64_t jitter_seed = 0);

// KSG estimator between two continuous scalars (joint max-norm ball,
// strict marginal counts):
//   I = psi(k) + psi(N) - <psi(n_x + 1) + psi(n_y + 1)>
double continuous_ksg_mi(const std::vector<double>& x, const std::vector<double>& y, int k = 3,
                         std::uint64_t jitter_seed = 0);

struct SmiConfig {
  int k = 3;
  std::uint64_t jitter_seed = 101;
};

struct SmiResult {
  int k = 0;
  int n = 0;
  int d_v = 0;
  std::vector<double> per_dim_mi;  // one per projection dim, clamped at 0
  double i_task = 0.0;             // mean of per_dim_mi
};

// V = prelu(W1 Z + b1) per row of data; N x hidden row-major.
std::vector<double> task_projections(const ProbeClassifier& probe, const ProbeData& data);

// Slice MI of the probe's hidden projections against the labels.
SmiResult task_smi(const ProbeClassifier& probe, const ProbeData& data,
                   const SmiConfig& cfg = {});

// The same slice estimator over uniformly random unit directions of the raw
// representation; the control for the task-adapted projection.
SmiResult random_projection_smi(const ProbeData& data, int num_directions, std::uint64_t seed,
                                const SmiConfig& cfg = {});

void save_smi_json(const std::string& path, const SmiResult& r);
void save_smi_csv(const std::string& path, const SmiResult& r);

}  // namespace kgr
