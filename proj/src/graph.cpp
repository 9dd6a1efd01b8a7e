#include "kgr/graph.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "kgr/rng.hpp"

namespace kgr {

namespace {

std::uint64_t query_key(EntityId h, RelationId r) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(h)) << 32) |
         static_cast<std::uint32_t>(r);
}

// Splits a line into exactly n tab-separated fields.
std::vector<std::string> split_tsv(const std::string& line, std::size_t n, const std::string& path,
                                   int lineno) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  if (fields.size() != n) {
    throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(n) + " tab-separated fields, got " +
                             std::to_string(fields.size()));
  }
  return fields;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

const std::vector<EntityId> kEmptyTails;

}  // namespace

std::string split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

EntityId KnowledgeGraph::intern_entity(const std::string& key) {
  auto it = entity_ids_.find(key);
  if (it != entity_ids_.end()) return it->second;
  const EntityId id = static_cast<EntityId>(entity_keys_.size());
  entity_keys_.push_back(key);
  entity_ids_.emplace(key, id);
  return id;
}

RelationId KnowledgeGraph::intern_relation(const std::string& key) {
  auto it = relation_ids_.find(key);
  if (it != relation_ids_.end()) return it->second;
  const RelationId id = static_cast<RelationId>(relation_keys_.size());
  relation_keys_.push_back(key);
  relation_ids_.emplace(key, id);
  return id;
}

KnowledgeGraph KnowledgeGraph::load(const std::string& train_path, const std::string& valid_path,
                                    const std::string& test_path, const std::string& text_path,
                                    const std::string& desc_path) {
  KnowledgeGraph g;

  struct SplitFile {
    const std::string* path;
    std::vector<Triple>* out;
  };
  std::vector<Triple>* outs[3] = {&g.train_, &g.valid_, &g.test_};
  const std::string* paths[3] = {&train_path, &valid_path, &test_path};

  for (int s = 0; s < 3; ++s) {
    const auto lines = read_lines(*paths[s]);
    std::unordered_set<Triple, TripleHash> seen;
    seen.reserve(lines.size());
    int lineno = 0;
    for (const auto& line : lines) {
      ++lineno;
      if (line.empty()) continue;
      const auto f = split_tsv(line, 3, *paths[s], lineno);
      Triple x{g.intern_entity(f[0]), g.intern_relation(f[1]), g.intern_entity(f[2])};
      if (!seen.insert(x).second) {
        ++g.duplicates_removed_;
        continue;
      }
      outs[s]->push_back(x);
    }
  }

  // Names. Entities appearing in valid/test must be named; train-only
  // entities and relations fall back to their raw key.
  std::unordered_map<std::string, std::string> text;
  {
    const auto lines = read_lines(text_path);
    int lineno = 0;
    for (const auto& line : lines) {
      ++lineno;
      if (line.empty()) continue;
      const auto f = split_tsv(line, 2, text_path, lineno);
      text[f[0]] = f[1];
    }
  }
  std::unordered_set<EntityId> eval_entities;
  for (const auto* split : {&g.valid_, &g.test_}) {
    for (const auto& x : *split) {
      eval_entities.insert(x.h);
      eval_entities.insert(x.t);
    }
  }
  g.entity_text_.resize(g.entity_keys_.size());
  for (std::size_t i = 0; i < g.entity_keys_.size(); ++i) {
    auto it = text.find(g.entity_keys_[i]);
    if (it != text.end()) {
      g.entity_text_[i] = it->second;
    } else if (eval_entities.count(static_cast<EntityId>(i))) {
      throw std::runtime_error("entity '" + g.entity_keys_[i] +
                               "' appears in valid/test but has no entry in " + text_path);
    } else {
      g.entity_text_[i] = g.entity_keys_[i];
    }
  }
  g.relation_text_.resize(g.relation_keys_.size());
  for (std::size_t i = 0; i < g.relation_keys_.size(); ++i) {
    auto it = text.find(g.relation_keys_[i]);
    g.relation_text_[i] = it != text.end() ? it->second : g.relation_keys_[i];
  }

  g.entity_desc_.resize(g.entity_keys_.size());
  if (!desc_path.empty()) {
    const auto lines = read_lines(desc_path);
    int lineno = 0;
    for (const auto& line : lines) {
      ++lineno;
      if (line.empty()) continue;
      const auto f = split_tsv(line, 2, desc_path, lineno);
      auto it = g.entity_ids_.find(f[0]);
      if (it != g.entity_ids_.end()) g.entity_desc_[static_cast<std::size_t>(it->second)] = f[1];
    }
  }

  g.index();
  return g;
}

KnowledgeGraph KnowledgeGraph::build(std::vector<std::string> entity_keys,
                                     std::vector<std::string> relation_keys,
                                     std::vector<Triple> train, std::vector<Triple> valid,
                                     std::vector<Triple> test,
                                     std::unordered_map<std::string, std::string> text,
                                     std::unordered_map<std::string, std::string> desc) {
  KnowledgeGraph g;
  g.entity_keys_ = std::move(entity_keys);
  g.relation_keys_ = std::move(relation_keys);
  for (std::size_t i = 0; i < g.entity_keys_.size(); ++i)
    g.entity_ids_.emplace(g.entity_keys_[i], static_cast<EntityId>(i));
  for (std::size_t i = 0; i < g.relation_keys_.size(); ++i)
    g.relation_ids_.emplace(g.relation_keys_[i], static_cast<RelationId>(i));

  auto dedup = [&g](std::vector<Triple>& v) {
    std::unordered_set<Triple, TripleHash> seen;
    seen.reserve(v.size());
    std::vector<Triple> out;
    out.reserve(v.size());
    for (const auto& x : v) {
      if (x.h < 0 || x.t < 0 || x.h >= g.num_entities() || x.t >= g.num_entities() || x.r < 0 ||
          x.r >= g.num_relations()) {
        throw std::runtime_error("triple refers to an unknown entity or relation id");
      }
      if (seen.insert(x).second) out.push_back(x);
      else ++g.duplicates_removed_;
    }
    v = std::move(out);
  };
  g.train_ = std::move(train);
  g.valid_ = std::move(valid);
  g.test_ = std::move(test);
  dedup(g.train_);
  dedup(g.valid_);
  dedup(g.test_);

  g.entity_text_.resize(g.entity_keys_.size());
  for (std::size_t i = 0; i < g.entity_keys_.size(); ++i) {
    auto it = text.find(g.entity_keys_[i]);
    g.entity_text_[i] = it != text.end() ? it->second : g.entity_keys_[i];
  }
  g.relation_text_.resize(g.relation_keys_.size());
  for (std::size_t i = 0; i < g.relation_keys_.size(); ++i) {
    auto it = text.find(g.relation_keys_[i]);
    g.relation_text_[i] = it != text.end() ? it->second : g.relation_keys_[i];
  }
  g.entity_desc_.resize(g.entity_keys_.size());
  for (std::size_t i = 0; i < g.entity_keys_.size(); ++i) {
    auto it = desc.find(g.entity_keys_[i]);
    if (it != desc.end()) g.entity_desc_[i] = it->second;
  }

  g.index();
  return g;
}

void KnowledgeGraph::index() {
  auto add = [](std::unordered_map<std::uint64_t, std::vector<EntityId>>& m, const Triple& x) {
    m[query_key(x.h, x.r)].push_back(x.t);
  };
  for (const auto& x : train_) {
    add(gt_all_, x);
    add(gt_train_, x);
    add(gt_train_valid_, x);
  }
  for (const auto& x : valid_) {
    add(gt_all_, x);
    add(gt_train_valid_, x);
  }
  for (const auto& x : test_) add(gt_all_, x);
  for (auto* m : {&gt_all_, &gt_train_, &gt_train_valid_}) {
    for (auto& [k, tails] : *m) {
      std::sort(tails.begin(), tails.end());
      tails.erase(std::unique(tails.begin(), tails.end()), tails.end());
    }
  }
}

void KnowledgeGraph::save(const std::string& dir) const {
  auto write_split = [this, &dir](const char* name, const std::vector<Triple>& v) {
    std::ofstream out(dir + "/" + name);
    if (!out) throw std::runtime_error("cannot write " + dir + "/" + name);
    for (const auto& x : v) {
      out << entity_keys_[static_cast<std::size_t>(x.h)] << '\t'
          << relation_keys_[static_cast<std::size_t>(x.r)] << '\t'
          << entity_keys_[static_cast<std::size_t>(x.t)] << '\n';
    }
  };
  write_split("train.txt", train_);
  write_split("valid.txt", valid_);
  write_split("test.txt", test_);

  std::ofstream text(dir + "/text.txt");
  if (!text) throw std::runtime_error("cannot write " + dir + "/text.txt");
  for (std::size_t i = 0; i < entity_keys_.size(); ++i)
    text << entity_keys_[i] << '\t' << entity_text_[i] << '\n';
  for (std::size_t i = 0; i < relation_keys_.size(); ++i)
    text << relation_keys_[i] << '\t' << relation_text_[i] << '\n';

  bool any_desc = false;
  for (const auto& d : entity_desc_) any_desc = any_desc || !d.empty();
  if (any_desc) {
    std::ofstream desc(dir + "/desc.txt");
    if (!desc) throw std::runtime_error("cannot write " + dir + "/desc.txt");
    for (std::size_t i = 0; i < entity_keys_.size(); ++i)
      if (!entity_desc_[i].empty()) desc << entity_keys_[i] << '\t' << entity_desc_[i] << '\n';
  }
}

const std::vector<Triple>& KnowledgeGraph::triples(Split s) const {
  switch (s) {
    case Split::Train: return train_;
    case Split::Valid: return valid_;
    case Split::Test: return test_;
  }
  return train_;
}

const std::string& KnowledgeGraph::entity_desc(EntityId e) const {
  const auto& d = entity_desc_.at(static_cast<std::size_t>(e));
  return d.empty() ? entity_text_.at(static_cast<std::size_t>(e)) : d;
}

std::optional<EntityId> KnowledgeGraph::find_entity(const std::string& key) const {
  auto it = entity_ids_.find(key);
  if (it == entity_ids_.end()) return std::nullopt;
  return it->second;
}

std::optional<RelationId> KnowledgeGraph::find_relation(const std::string& key) const {
  auto it = relation_ids_.find(key);
  if (it == relation_ids_.end()) return std::nullopt;
  return it->second;
}

const std::vector<EntityId>& KnowledgeGraph::ground_truth_tails(EntityId h, RelationId r,
                                                                GtScope scope) const {
  const auto& m = scope == GtScope::All ? gt_all_
                : scope == GtScope::TrainOnly ? gt_train_
                                              : gt_train_valid_;
  auto it = m.find(query_key(h, r));
  return it == m.end() ? kEmptyTails : it->second;
}

bool KnowledgeGraph::is_known_tail(EntityId h, RelationId r, EntityId t, GtScope scope) const {
  const auto& tails = ground_truth_tails(h, r, scope);
  return std::binary_search(tails.begin(), tails.end(), t);
}

bool KnowledgeGraph::contains(const Triple& x, Split s) const {
  const auto& v = triples(s);
  return std::find(v.begin(), v.end(), x) != v.end();
}

Triple KnowledgeGraph::corrupt_tail(const Triple& x, std::uint64_t seed) const {
  const auto& gt = ground_truth_tails(x.h, x.r, GtScope::All);
  const int n = num_entities();
  if (static_cast<int>(gt.size()) >= n) {
    throw std::runtime_error("corrupt_tail: every entity is a known tail for (" +
                             entity_key(x.h) + ", " + relation_key(x.r) + ")");
  }
  Rng rng(seed);
  while (true) {
    const EntityId cand = static_cast<EntityId>(rng.uniform_int(n));
    if (!std::binary_search(gt.begin(), gt.end(), cand)) return Triple{x.h, x.r, cand};
  }
}

std::vector<LabeledTriple> KnowledgeGraph::balanced_classification_set(Split s,
                                                                       std::uint64_t seed) const {
  const auto& pos = triples(s);
  if (pos.empty()) throw std::runtime_error("balanced_classification_set: empty " + split_name(s));
  Rng rng(seed);
  std::vector<LabeledTriple> out;
  out.reserve(pos.size() * 2);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    out.push_back({pos[i], 1});
    out.push_back({corrupt_tail(pos[i], rng.fork(i).seed()), 0});
  }
  return out;
}

std::string KnowledgeGraph::stats_json() const {
  std::ostringstream os;
  os << "{\"entities\": " << num_entities() << ", \"relations\": " << num_relations()
     << ", \"train\": " << train_.size() << ", \"valid\": " << valid_.size()
     << ", \"test\": " << test_.size() << "}";
  return os.str();
}

InductiveSplit make_inductive_split(const KnowledgeGraph& g, double rho, std::uint64_t seed) {
  if (rho < 0.0 || rho >= 1.0)
    throw std::runtime_error("make_inductive_split: rho must be in [0, 1)");
  InductiveSplit out;
  out.rho = rho;
  const int n = g.num_entities();
  const auto count = static_cast<std::int64_t>(rho * n);
  Rng rng(seed);
  auto picked = rng.sample_without_replacement(n, count);
  out.inductive_entities.reserve(picked.size());
  for (auto e : picked) out.inductive_entities.push_back(static_cast<EntityId>(e));
  std::sort(out.inductive_entities.begin(), out.inductive_entities.end());

  auto is_inductive = [&out](EntityId e) {
    return std::binary_search(out.inductive_entities.begin(), out.inductive_entities.end(), e);
  };
  for (const auto& x : g.triples(Split::Train))
    if (!is_inductive(x.h) && !is_inductive(x.t)) out.reduced_train.push_back(x);
  for (const auto& x : g.triples(Split::Test)) {
    if (is_inductive(x.h) || is_inductive(x.t)) out.unseen_test.push_back(x);
    else out.seen_test.push_back(x);
  }
  return out;
}

}  // namespace kgr
