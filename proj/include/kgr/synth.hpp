#pragma once

#include <cstdint>

#include "kgr/graph.hpp"

namespace kgr {

// Bundled offline fixture: a rule-defined knowledge graph over a cyclic set
// of entities. Relations are modular-arithmetic rules (successor, +5,
// doubling, …) plus compositional ones (neighbor_of = successor ∪ predecessor,
// second_successor = successor ∘ successor), giving a mix of one-to-one and
// one-to-many relations.
struct SynthConfig {
  int num_entities = 64;
  double valid_frac = 0.1;
  double test_frac = 0.1;
  std::uint64_t seed = 17;
};

KnowledgeGraph make_synthetic_graph(const SynthConfig& cfg = {});

}  // namespace kgr
