#include "kgr/instance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "kgr/rng.hpp"

namespace kgr {

namespace {

using nlohmann::json;

struct ScoredCandidate {
  EntityId entity;
  double score;
};

std::string label_set_string(const std::vector<char>& labels) {
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i) out += ", ";
    out += labels[i];
  }
  return out;
}

}  // namespace

std::string answer_mode_name(AnswerMode m) {
  return m == AnswerMode::Single ? "single" : "variable";
}

AnswerMode answer_mode_from_string(const std::string& s) {
  if (s == "single") return AnswerMode::Single;
  if (s == "variable") return AnswerMode::Variable;
  throw std::runtime_error("unknown answer mode: " + s);
}

std::vector<char> DiscriminativeInstance::labels() const {
  std::vector<char> out;
  out.reserve(options.size());
  for (const auto& o : options) out.push_back(o.label);
  std::sort(out.begin(), out.end());
  return out;
}

NegativeTiers stratify_negatives(const KnowledgeGraph& g, const KgeModel& kge, EntityId h,
                                 RelationId r, const TierConfig& tc) {
  if (!(tc.q_lo > 0.0 && tc.q_lo < tc.q_hi && tc.q_hi < 1.0))
    throw std::runtime_error("tier quantiles must satisfy 0 < q_lo < q_hi < 1");
  const auto& gt = g.ground_truth_tails(h, r, GtScope::All);

  std::vector<double> scores;
  kge.score_all_tails(h, r, scores);

  std::vector<ScoredCandidate> pool;
  pool.reserve(scores.size());
  for (EntityId e = 0; e < g.num_entities(); ++e) {
    if (std::binary_search(gt.begin(), gt.end(), e)) continue;
    if (tc.pool_size > 0 && static_cast<int>(pool.size()) >= tc.pool_size) break;
    pool.push_back({e, scores[static_cast<std::size_t>(e)]});
  }
  if (pool.empty())
    throw std::runtime_error("no negative candidates for query (" + g.entity_key(h) + ", " +
                             g.relation_key(r) + ")");
  std::sort(pool.begin(), pool.end(), [](const ScoredCandidate& a, const ScoredCandidate& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.entity < b.entity;
  });

  const auto m = static_cast<std::int64_t>(pool.size());
  const auto lo = static_cast<std::int64_t>(std::floor(tc.q_lo * static_cast<double>(m)));
  const auto hi = static_cast<std::int64_t>(std::ceil(tc.q_hi * static_cast<double>(m)));

  NegativeTiers out;
  out.tier1.reserve(static_cast<std::size_t>(lo));
  for (std::int64_t i = 0; i < lo; ++i) out.tier1.push_back(pool[static_cast<std::size_t>(i)].entity);
  out.tier2.reserve(pool.size());
  out.tier2_scores.reserve(pool.size());
  for (const auto& c : pool) {
    out.tier2.push_back(c.entity);
    out.tier2_scores.push_back(c.score);
  }
  out.tier3.reserve(static_cast<std::size_t>(m - hi));
  for (std::int64_t i = hi; i < m; ++i) out.tier3.push_back(pool[static_cast<std::size_t>(i)].entity);
  return out;
}

std::string render_prompt(const DiscriminativeInstance& inst, const KnowledgeGraph& g,
                          const std::string& tmpl) {
  auto option_lines = [&](bool with_desc) {
    std::string out;
    for (std::size_t i = 0; i < inst.options.size(); ++i) {
      const auto& o = inst.options[i];
      if (i) out += '\n';
      out += o.label;
      out += ". ";
      out += g.entity_text(o.entity);
      if (with_desc) {
        out += ": ";
        out += g.entity_desc(o.entity);
      }
    }
    return out;
  };

  std::string out;
  out.reserve(tmpl.size() + 256);
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const std::size_t open = tmpl.find('{', pos);
    if (open == std::string::npos) {
      out.append(tmpl, pos, std::string::npos);
      break;
    }
    out.append(tmpl, pos, open - pos);
    const std::size_t close = tmpl.find('}', open);
    if (close == std::string::npos)
      throw std::runtime_error("unterminated placeholder in template");
    const std::string name = tmpl.substr(open + 1, close - open - 1);
    if (name == "head") out += g.entity_text(inst.h);
    else if (name == "relation") out += g.relation_text(inst.r);
    else if (name == "head_desc") out += g.entity_desc(inst.h);
    else if (name == "options") out += option_lines(false);
    else if (name == "options_desc") out += option_lines(true);
    else throw std::runtime_error("unresolved placeholder {" + name + "} in template");
    pos = close + 1;
  }
  return out;
}

std::string render_cot_target(const DiscriminativeInstance& inst, const KnowledgeGraph& g) {
  std::string out;
  for (const auto& o : inst.options) {
    out += o.label;
    out += ". ";
    out += g.entity_text(o.entity);
    out += o.is_positive ? " is compatible with (" : " is not compatible with (";
    out += g.entity_text(inst.h);
    out += ", ";
    out += g.relation_text(inst.r);
    out += ").\n";
  }
  out += "Answer: ";
  out += label_set_string(inst.e_pos);
  return out;
}

const std::string kDefaultPromptTemplate =
    "Query: {head} {relation} ?\n"
    "Options:\n"
    "{options}\n"
    "Select every option that answers the query.";

const std::string kCotPromptTemplate =
    "Query: {head} {relation} ?\n"
    "About the subject: {head_desc}\n"
    "Options:\n"
    "{options_desc}\n"
    "Check each option against the query, then end with a line"
    " `Answer: <labels>` listing every correct option.";

DiscriminativeInstance build_instance(const KnowledgeGraph& g, const KgeModel& kge, EntityId h,
                                      RelationId r, int K, int tier, AnswerMode mode,
                                      std::uint64_t seed, const TierConfig& tc,
                                      const std::string& prompt_template) {
  if (K < 2 || K > 26) throw std::runtime_error("K must be in [2, 26]");
  if (tier < 1 || tier > 3) throw std::runtime_error("tier must be 1, 2 or 3");
  const auto& gt_train = g.ground_truth_tails(h, r, GtScope::TrainOnly);
  if (gt_train.empty())
    throw std::runtime_error("build_instance: no train-split answers for (" + g.entity_key(h) +
                             ", " + g.relation_key(r) + ")");

  Rng rng(seed);
  int p = 1;
  if (mode == AnswerMode::Variable) {
    const int p_max = std::min(K - 1, static_cast<int>(gt_train.size()));
    p = 1 + static_cast<int>(rng.uniform_int(p_max));
  }

  const auto tiers = stratify_negatives(g, kge, h, r, tc);
  const auto& pool = tier == 1 ? tiers.tier1 : tier == 3 ? tiers.tier3 : tiers.tier2;
  const int negatives_needed = K - p;
  if (static_cast<int>(pool.size()) < negatives_needed)
    throw std::runtime_error("insufficient tier-" + std::to_string(tier) + " negatives for (" +
                             g.entity_key(h) + ", " + g.relation_key(r) + "): need " +
                             std::to_string(negatives_needed) + ", have " +
                             std::to_string(pool.size()));

  DiscriminativeInstance inst;
  inst.h = h;
  inst.r = r;
  inst.tier = tier;
  inst.mode = mode;
  inst.seed = seed;

  for (auto idx : rng.sample_without_replacement(static_cast<std::int64_t>(gt_train.size()), p)) {
    const EntityId e = gt_train[static_cast<std::size_t>(idx)];
    inst.options.push_back({'?', e, true, kge.score(h, r, e)});
  }
  for (auto idx :
       rng.sample_without_replacement(static_cast<std::int64_t>(pool.size()), negatives_needed)) {
    const EntityId e = pool[static_cast<std::size_t>(idx)];
    inst.options.push_back({'?', e, false, kge.score(h, r, e)});
  }
  rng.shuffle(inst.options);
  for (std::size_t i = 0; i < inst.options.size(); ++i) {
    inst.options[i].label = static_cast<char>('A' + i);
    if (inst.options[i].is_positive) inst.e_pos.push_back(inst.options[i].label);
  }

  inst.prompt = render_prompt(inst, g, prompt_template);
  inst.target = render_cot_target(inst, g);
  return inst;
}

std::optional<std::vector<char>> parse_answer(const std::string& text,
                                              const std::vector<char>& valid_labels) {
  static const std::string kPrefix = "Answer:";
  // find the last line that begins with the prefix
  std::string line;
  bool found = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    if (text.compare(pos, kPrefix.size(), kPrefix) == 0) {
      line = text.substr(pos, end - pos);
      found = true;
    }
    if (end == text.size()) break;
    pos = end + 1;
  }
  if (!found) return std::nullopt;

  // strict grammar: `Answer: L(, L)*` with unique valid labels
  std::size_t i = kPrefix.size();
  std::vector<char> out;
  while (true) {
    if (i >= line.size() || line[i] != ' ') return std::nullopt;
    ++i;
    if (i >= line.size()) return std::nullopt;
    const char label = line[i];
    if (std::find(valid_labels.begin(), valid_labels.end(), label) == valid_labels.end())
      return std::nullopt;
    if (std::find(out.begin(), out.end(), label) != out.end()) return std::nullopt;  // duplicate
    out.push_back(label);
    ++i;
    if (i == line.size()) break;
    if (line[i] != ',') return std::nullopt;
    ++i;  // the loop head then insists on the space after the comma
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<DiscriminativeInstance> build_instance_dataset(const KnowledgeGraph& g,
                                                           const KgeModel& kge,
                                                           const InstanceDatasetConfig& cfg) {
  if (cfg.K < 2 || cfg.K > 26) throw std::runtime_error("K must be in [2, 26]");
  if (cfg.tier < 1 || cfg.tier > 3) throw std::runtime_error("tier must be 1, 2 or 3");
  if (!(cfg.tiers.q_lo > 0.0 && cfg.tiers.q_lo < cfg.tiers.q_hi && cfg.tiers.q_hi < 1.0))
    throw std::runtime_error("tier quantiles must satisfy 0 < q_lo < q_hi < 1");
  if (cfg.per_query < 1) throw std::runtime_error("per_query must be >= 1");

  std::vector<std::pair<EntityId, RelationId>> queries;
  {
    std::unordered_map<std::uint64_t, bool> seen;
    for (const auto& x : g.triples(Split::Train)) {
      const auto key = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(x.h)) << 32) |
                       static_cast<std::uint32_t>(x.r);
      if (!seen.emplace(key, true).second) continue;
      queries.emplace_back(x.h, x.r);
    }
  }
  Rng rng(cfg.seed);
  std::vector<DiscriminativeInstance> out;
  out.reserve(queries.size() * static_cast<std::size_t>(cfg.per_query));
  std::size_t stream = 0;
  for (const auto& [h, r] : queries) {
    for (int rep = 0; rep < cfg.per_query; ++rep, ++stream) {
      try {
        out.push_back(build_instance(g, kge, h, r, cfg.K, cfg.tier, cfg.mode,
                                     rng.fork(stream).seed(), cfg.tiers, cfg.prompt_template));
      } catch (const std::runtime_error&) {
        // queries without enough negatives (or tiny tiers) are skipped
      }
    }
  }
  return out;
}

void save_instances(const std::string& path, const std::vector<DiscriminativeInstance>& v) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& inst : v) {
    json rec;
    rec["h"] = inst.h;
    rec["r"] = inst.r;
    json opts = json::array();
    for (const auto& o : inst.options) {
      opts.push_back({{"label", std::string(1, o.label)},
                      {"entity", o.entity},
                      {"positive", o.is_positive},
                      {"score", o.kge_score}});
    }
    rec["options"] = opts;
    rec["e_pos"] = json::array();
    for (char c : inst.e_pos) rec["e_pos"].push_back(std::string(1, c));
    rec["tier"] = inst.tier;
    rec["mode"] = answer_mode_name(inst.mode);
    rec["seed"] = inst.seed;
    out << rec.dump() << '\n';
  }
}

std::vector<DiscriminativeInstance> load_instances(const std::string& path,
                                                   const KnowledgeGraph& g,
                                                   const std::string& prompt_template) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<DiscriminativeInstance> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    DiscriminativeInstance inst;
    inst.h = rec.at("h").get<EntityId>();
    inst.r = rec.at("r").get<RelationId>();
    if (inst.h < 0 || inst.h >= g.num_entities() || inst.r < 0 || inst.r >= g.num_relations())
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": entity or relation id outside the graph");
    for (const auto& o : rec.at("options")) {
      CandidateOption opt;
      const auto label = o.at("label").get<std::string>();
      if (label.size() != 1)
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad label");
      opt.label = label[0];
      opt.entity = o.at("entity").get<EntityId>();
      if (opt.entity < 0 || opt.entity >= g.num_entities())
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": entity id outside graph");
      opt.is_positive = o.at("positive").get<bool>();
      opt.kge_score = o.at("score").get<double>();
      inst.options.push_back(opt);
    }
    for (const auto& c : rec.at("e_pos")) {
      const auto s = c.get<std::string>();
      if (s.size() != 1)
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad e_pos label");
      inst.e_pos.push_back(s[0]);
    }
    std::vector<char> expect;
    for (const auto& o : inst.options)
      if (o.is_positive) expect.push_back(o.label);
    std::sort(expect.begin(), expect.end());
    auto sorted_pos = inst.e_pos;
    std::sort(sorted_pos.begin(), sorted_pos.end());
    if (expect != sorted_pos || expect.empty())
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": e_pos does not match the positive options");
    inst.tier = rec.at("tier").get<int>();
    inst.mode = answer_mode_from_string(rec.at("mode").get<std::string>());
    inst.seed = rec.at("seed").get<std::uint64_t>();
    inst.prompt = render_prompt(inst, g, prompt_template);
    inst.target = render_cot_target(inst, g);
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace kgr
