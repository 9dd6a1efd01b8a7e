#include "kgr/synth.hpp"

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "kgr/rng.hpp"

namespace kgr {

KnowledgeGraph make_synthetic_graph(const SynthConfig& cfg) {
  const int n = cfg.num_entities;
  if (n < 8) throw std::runtime_error("make_synthetic_graph: need at least 8 entities");
  if (cfg.valid_frac + cfg.test_frac >= 1.0)
    throw std::runtime_error("make_synthetic_graph: valid_frac + test_frac must be < 1");

  std::vector<std::string> entity_keys;
  std::unordered_map<std::string, std::string> text, desc;
  entity_keys.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::string key = "item_" + std::to_string(i);
    entity_keys.push_back(key);
    text[key] = "item " + std::to_string(i);
    desc[key] = "element " + std::to_string(i) + " of a cyclic collection of " +
                std::to_string(n) + " items";
  }

  struct Rule {
    std::string key;
    std::string name;
    std::vector<int> offsets;    // tails: (h + offset) mod n
    std::vector<int> multiples;  // tails: (h * multiple) mod n
  };
  const std::vector<Rule> rules = {
      {"succ", "immediate successor of", {1}, {}},
      {"pred", "immediate predecessor of", {n - 1}, {}},
      {"plus_five", "five places after", {5}, {}},
      {"double_of", "double of", {}, {2}},
      {"triple_of", "triple of", {}, {3}},
      {"neighbor_of", "adjacent to", {1, n - 1}, {}},
      {"sibling_of", "two places away from", {2, n - 2}, {}},
      {"second_successor", "successor of the successor of", {2}, {}},
  };

  std::vector<std::string> relation_keys;
  std::vector<Triple> all;
  for (std::size_t ri = 0; ri < rules.size(); ++ri) {
    const auto& rule = rules[ri];
    relation_keys.push_back(rule.key);
    text[rule.key] = rule.name;
    for (int h = 0; h < n; ++h) {
      for (int off : rule.offsets)
        all.push_back({h, static_cast<RelationId>(ri), (h + off) % n});
      for (int mul : rule.multiples)
        all.push_back({h, static_cast<RelationId>(ri), (h * mul) % n});
    }
  }

  Rng rng(cfg.seed);
  rng.shuffle(all);
  const auto total = static_cast<std::size_t>(all.size());
  const auto n_valid = static_cast<std::size_t>(cfg.valid_frac * total);
  const auto n_test = static_cast<std::size_t>(cfg.test_frac * total);
  const auto n_train = total - n_valid - n_test;

  std::vector<Triple> train(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<Triple> valid(all.begin() + static_cast<std::ptrdiff_t>(n_train),
                            all.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  std::vector<Triple> test(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid),
                           all.end());

  return KnowledgeGraph::build(std::move(entity_keys), std::move(relation_keys), std::move(train),
                               std::move(valid), std::move(test), std::move(text), std::move(desc));
}

}  // namespace kgr
