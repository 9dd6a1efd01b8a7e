#include "kgr/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "kgr/rng.hpp"

namespace kgr {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw std::runtime_error("not a number: '" + s + "'");
  }
  if (used != s.size()) throw std::runtime_error("not a number: '" + s + "'");
  return v;
}

std::int64_t parse_int(const std::string& s) {
  std::size_t used = 0;
  std::int64_t v;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    throw std::runtime_error("not an integer: '" + s + "'");
  }
  if (used != s.size()) throw std::runtime_error("not an integer: '" + s + "'");
  return v;
}

std::uint64_t parse_seed(const std::string& s) {
  std::size_t used = 0;
  std::uint64_t v;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    throw std::runtime_error("not a seed: '" + s + "'");
  }
  if (used != s.size()) throw std::runtime_error("not a seed: '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::runtime_error("not a boolean: '" + s + "'");
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& s, Parse parse) {
  std::vector<T> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) out.push_back(parse(trim(item)));
  if (out.empty()) throw std::runtime_error("empty list");
  return out;
}

template <typename T>
std::string render_list(const std::vector<T>& v, std::string (*render)(T)) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += render(v[i]);
  }
  return out;
}

struct KeySpec {
  std::string key;  // section.key
  std::string doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
  bool is_seed = false;       // derived from run.seed when absent
  std::uint64_t seed_stream = 0;
};

#define KGR_INT_KEY(key, field, doc) \
  {key, doc, [](const RunConfig& c) { return std::to_string(c.field); }, \
   [](RunConfig& c, const std::string& v) { c.field = static_cast<int>(parse_int(v)); }}
#define KGR_DBL_KEY(key, field, doc) \
  {key, doc, [](const RunConfig& c) { return shortest(c.field); }, \
   [](RunConfig& c, const std::string& v) { c.field = parse_double(v); }}
#define KGR_BOOL_KEY(key, field, doc) \
  {key, doc, [](const RunConfig& c) { return c.field ? "true" : "false"; }, \
   [](RunConfig& c, const std::string& v) { c.field = parse_bool(v); }}
#define KGR_STR_KEY(key, field, doc) \
  {key, doc, [](const RunConfig& c) { return c.field; }, \
   [](RunConfig& c, const std::string& v) { c.field = v; }}
#define KGR_SEED_KEY(key, field, doc, stream) \
  {key, doc, [](const RunConfig& c) { return std::to_string(c.field); }, \
   [](RunConfig& c, const std::string& v) { c.field = parse_seed(v); }, true, stream}

const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = {
      KGR_STR_KEY("run.out", out, "output directory for every artifact"),
      KGR_STR_KEY("run.dataset", dataset,
                  "'synthetic' or a directory with train/valid/test/text files"),
      KGR_SEED_KEY("run.seed", seed, "master seed; unset module seeds derive from it", 0),
      KGR_BOOL_KEY("run.deterministic", deterministic,
                   "pin jobs to 1 so reruns are byte-identical"),
      KGR_INT_KEY("run.jobs", jobs, "worker threads for parallel stages"),

      KGR_INT_KEY("synth.entities", synth.num_entities, "entity count of the bundled fixture"),
      KGR_DBL_KEY("synth.valid_frac", synth.valid_frac, "fraction of rule triples held for valid"),
      KGR_DBL_KEY("synth.test_frac", synth.test_frac, "fraction of rule triples held for test"),
      KGR_SEED_KEY("synth.seed", synth.seed, "fixture split shuffling seed", 1),

      {"kge.model", "retriever family: transe, distmult, complex, rotate, tucker",
       [](const RunConfig& c) { return kge_kind_name(c.kge_kind); },
       [](RunConfig& c, const std::string& v) { c.kge_kind = kge_kind_from_string(v); }},
      KGR_INT_KEY("kge.dim_entity", kge_dim_entity, "entity embedding width"),
      KGR_INT_KEY("kge.dim_relation", kge_dim_relation, "relation embedding width"),
      KGR_INT_KEY("kge.epochs", kge.epochs, "retriever training epochs"),
      KGR_INT_KEY("kge.batch_size", kge.batch_size, "triples per training batch"),
      KGR_DBL_KEY("kge.lr", kge.lr, "retriever learning rate"),
      KGR_INT_KEY("kge.negatives", kge.negatives, "sampled negatives per positive (BCE kinds)"),
      KGR_DBL_KEY("kge.margin", kge.margin, "ranking margin (TransE, RotatE)"),
      KGR_DBL_KEY("kge.reg", kge.reg, "L2 weight decay on touched parameters"),
      KGR_BOOL_KEY("kge.adaptive", kge.adaptive, "per-parameter AdaGrad scaling"),
      KGR_DBL_KEY("kge.corrupt_head_prob", kge.corrupt_head_prob,
                  "probability a negative corrupts the head instead of the tail"),
      KGR_SEED_KEY("kge.seed", kge.seed, "retriever init and sampling seed", 2),

      KGR_INT_KEY("instances.k", instances.K, "options per discriminative instance"),
      KGR_INT_KEY("instances.tier", instances.tier, "negative pool: 1 easy, 2 random, 3 hard"),
      {"instances.mode", "answer cardinality: single or variable",
       [](const RunConfig& c) { return answer_mode_name(c.instances.mode); },
       [](RunConfig& c, const std::string& v) { c.instances.mode = answer_mode_from_string(v); }},
      KGR_INT_KEY("instances.per_query", instances.per_query,
                  "instances drawn per distinct train query"),
      KGR_DBL_KEY("instances.q_lo", instances.tiers.q_lo, "tier-1 score quantile cutoff"),
      KGR_DBL_KEY("instances.q_hi", instances.tiers.q_hi, "tier-3 score quantile cutoff"),
      KGR_INT_KEY("instances.pool_size", instances.tiers.pool_size,
                  "scored negative pool cap; 0 scores every entity"),
      KGR_STR_KEY("instances.prompt_style", prompt_style,
                  "prompt template: plain (names) or cot (adds descriptions)"),
      KGR_SEED_KEY("instances.seed", instances.seed, "candidate sampling seed", 3),

      KGR_INT_KEY("policy.max_k", policy.max_k, "largest option count the vocabulary supports"),
      KGR_INT_KEY("policy.layers", policy.layers, "decoder depth; probe layers are 1..layers"),
      KGR_INT_KEY("policy.width", policy.width, "decoder hidden width (probed state size)"),
      KGR_INT_KEY("policy.emb_dim", policy.emb_dim, "entity/relation/token embedding width"),
      KGR_SEED_KEY("policy.seed", policy.seed, "policy parameter init seed", 4),

      KGR_INT_KEY("sft.epochs", sft.epochs, "supervised fine-tuning epochs"),
      KGR_INT_KEY("sft.batch_size", sft.batch_size, "instances per SFT batch"),
      KGR_DBL_KEY("sft.lr", sft.lr, "SFT Adam step size"),
      KGR_SEED_KEY("sft.seed", sft.seed, "SFT shuffling seed", 5),

      KGR_INT_KEY("grpo.iterations", grpo.iterations, "policy-gradient iterations"),
      KGR_INT_KEY("grpo.group_size", grpo.group_size, "rollouts per instance group"),
      KGR_INT_KEY("grpo.batch_instances", grpo.batch_instances, "instances per iteration"),
      KGR_DBL_KEY("grpo.clip", grpo.clip, "importance-ratio clip half-width"),
      KGR_DBL_KEY("grpo.kl_weight", grpo.kl_weight, "weight of the KL-to-reference term"),
      KGR_DBL_KEY("grpo.alpha", grpo.alpha, "format share of the composite reward"),
      KGR_DBL_KEY("grpo.adv_floor", grpo.adv_floor, "advantage normalization floor"),
      KGR_DBL_KEY("grpo.lr", grpo.lr, "policy-gradient step size"),
      KGR_DBL_KEY("grpo.temperature", grpo.temperature, "rollout sampling temperature"),
      KGR_SEED_KEY("grpo.seed", grpo.seed, "rollout sampling seed", 6),

      KGR_INT_KEY("probe.hidden", probe_hidden, "probe hidden units (projection count)"),
      KGR_INT_KEY("probe.layer", probe_layer, "policy layer the probe reads"),
      KGR_INT_KEY("probe.epochs", probe.epochs, "probe training epochs"),
      KGR_INT_KEY("probe.batch_size", probe.batch_size, "rows per probe batch"),
      KGR_DBL_KEY("probe.lr", probe.lr, "probe Adam step size"),
      KGR_SEED_KEY("probe.train_seed", probe.seed, "probe batch shuffling seed", 7),
      KGR_SEED_KEY("probe.init_seed", probe_init_seed, "probe parameter init seed", 8),

      KGR_INT_KEY("eval.top_n", eval_top_n, "retrieval depth for rerank evaluation"),

      KGR_INT_KEY("smi.k", smi.k, "nearest-neighbor order of the MI estimator"),
      KGR_INT_KEY("smi.directions", smi_directions, "random-direction baseline width"),
      KGR_SEED_KEY("smi.jitter_seed", smi.jitter_seed, "tie-breaking jitter seed", 9),

      {"inductive.rhos", "unseen-entity fractions swept by the inductive stage",
       [](const RunConfig& c) { return render_list<double>(c.inductive_rhos, shortest); },
       [](RunConfig& c, const std::string& v) {
         c.inductive_rhos = parse_list<double>(v, parse_double);
       }},
      KGR_SEED_KEY("inductive.seed", inductive_seed, "inductive entity sampling seed", 10),

      {"sweep.k", "option counts tried by `sweep k`",
       [](const RunConfig& c) {
         return render_list<int>(c.sweep_k, +[](int v) { return std::to_string(v); });
       },
       [](RunConfig& c, const std::string& v) {
         c.sweep_k = parse_list<int>(v, [](const std::string& s) {
           return static_cast<int>(parse_int(s));
         });
       }},
      {"sweep.n", "retrieval depths tried by `sweep n`",
       [](const RunConfig& c) {
         return render_list<int>(c.sweep_n, +[](int v) { return std::to_string(v); });
       },
       [](RunConfig& c, const std::string& v) {
         c.sweep_n = parse_list<int>(v, [](const std::string& s) {
           return static_cast<int>(parse_int(s));
         });
       }},
      {"sweep.tier", "negative tiers tried by `sweep tier`",
       [](const RunConfig& c) {
         return render_list<int>(c.sweep_tier, +[](int v) { return std::to_string(v); });
       },
       [](RunConfig& c, const std::string& v) {
         c.sweep_tier = parse_list<int>(v, [](const std::string& s) {
           return static_cast<int>(parse_int(s));
         });
       }},
  };
  return specs;
}

#undef KGR_INT_KEY
#undef KGR_DBL_KEY
#undef KGR_BOOL_KEY
#undef KGR_STR_KEY
#undef KGR_SEED_KEY

const KeySpec* find_spec(const std::string& key) {
  for (const auto& s : key_specs())
    if (s.key == key) return &s;
  return nullptr;
}

void check_ranges(const RunConfig& c, std::vector<std::string>& bad) {
  auto require = [&](bool ok, const std::string& msg) {
    if (!ok) bad.push_back(msg);
  };
  require(!c.out.empty(), "run.out: must not be empty");
  require(!c.dataset.empty(), "run.dataset: must not be empty");
  require(c.jobs >= 1, "run.jobs: must be >= 1");
  require(c.synth.num_entities >= 8, "synth.entities: must be >= 8");
  require(c.synth.valid_frac >= 0.0 && c.synth.test_frac >= 0.0 &&
              c.synth.valid_frac + c.synth.test_frac < 1.0,
          "synth.valid_frac/test_frac: fractions must be >= 0 and sum below 1");
  require(c.kge_dim_entity >= 1, "kge.dim_entity: must be >= 1");
  require(c.kge_dim_relation >= 1, "kge.dim_relation: must be >= 1");
  require(c.kge.epochs >= 0, "kge.epochs: must be >= 0");
  require(c.kge.batch_size >= 1, "kge.batch_size: must be >= 1");
  require(c.kge.lr > 0.0, "kge.lr: must be positive");
  require(c.kge.negatives >= 1, "kge.negatives: must be >= 1");
  require(c.kge.margin > 0.0, "kge.margin: must be positive");
  require(c.kge.reg >= 0.0, "kge.reg: must be >= 0");
  require(c.kge.corrupt_head_prob >= 0.0 && c.kge.corrupt_head_prob <= 1.0,
          "kge.corrupt_head_prob: must lie in [0, 1]");
  require(c.instances.K >= 2 && c.instances.K <= 26, "instances.k: must lie in [2, 26]");
  require(c.instances.tier >= 1 && c.instances.tier <= 3, "instances.tier: must be 1, 2, or 3");
  require(c.instances.per_query >= 1, "instances.per_query: must be >= 1");
  require(c.instances.tiers.q_lo >= 0.0 && c.instances.tiers.q_lo < 1.0,
          "instances.q_lo: must lie in [0, 1)");
  require(c.instances.tiers.q_hi > c.instances.tiers.q_lo && c.instances.tiers.q_hi <= 1.0,
          "instances.q_hi: must lie in (q_lo, 1]");
  require(c.instances.tiers.pool_size >= 0, "instances.pool_size: must be >= 0");
  require(c.prompt_style == "plain" || c.prompt_style == "cot",
          "instances.prompt_style: must be 'plain' or 'cot'");
  require(c.policy.max_k >= 2 && c.policy.max_k <= 26, "policy.max_k: must lie in [2, 26]");
  require(c.policy.max_k >= c.instances.K,
          "policy.max_k: must cover instances.k option labels");
  require(c.policy.layers >= 2, "policy.layers: must be >= 2");
  require(c.policy.width >= 1, "policy.width: must be >= 1");
  require(c.policy.emb_dim >= 1, "policy.emb_dim: must be >= 1");
  require(c.sft.epochs >= 0, "sft.epochs: must be >= 0");
  require(c.sft.batch_size >= 1, "sft.batch_size: must be >= 1");
  require(c.sft.lr > 0.0, "sft.lr: must be positive");
  require(c.grpo.iterations >= 0, "grpo.iterations: must be >= 0");
  require(c.grpo.group_size >= 2, "grpo.group_size: must be >= 2");
  require(c.grpo.batch_instances >= 1, "grpo.batch_instances: must be >= 1");
  require(c.grpo.clip > 0.0 && c.grpo.clip < 1.0, "grpo.clip: must lie in (0, 1)");
  require(c.grpo.kl_weight >= 0.0, "grpo.kl_weight: must be >= 0");
  require(c.grpo.alpha >= 0.0 && c.grpo.alpha <= 1.0, "grpo.alpha: must lie in [0, 1]");
  require(c.grpo.adv_floor > 0.0, "grpo.adv_floor: must be positive");
  require(c.grpo.lr > 0.0, "grpo.lr: must be positive");
  require(c.grpo.temperature > 0.0, "grpo.temperature: must be positive");
  require(c.probe_hidden >= 1, "probe.hidden: must be >= 1");
  require(c.probe_layer >= 1 && c.probe_layer <= c.policy.layers,
          "probe.layer: must lie in [1, policy.layers]");
  require(c.probe.epochs >= 0, "probe.epochs: must be >= 0");
  require(c.probe.batch_size >= 1, "probe.batch_size: must be >= 1");
  require(c.probe.lr > 0.0, "probe.lr: must be positive");
  require(c.eval_top_n >= 1, "eval.top_n: must be >= 1");
  require(c.smi.k >= 1, "smi.k: must be >= 1");
  require(c.smi_directions >= 1, "smi.directions: must be >= 1");
  for (double rho : c.inductive_rhos)
    require(rho >= 0.0 && rho < 1.0, "inductive.rhos: every fraction must lie in [0, 1)");
  for (int k : c.sweep_k) {
    require(k >= 2 && k <= 26, "sweep.k: every value must lie in [2, 26]");
    require(k <= c.policy.max_k, "sweep.k: every value must be covered by policy.max_k");
  }
  for (int n : c.sweep_n) require(n >= 1, "sweep.n: every value must be >= 1");
  for (int t : c.sweep_tier)
    require(t >= 1 && t <= 3, "sweep.tier: every value must be 1, 2, or 3");
}

}  // namespace

std::map<std::string, std::string> parse_ini(const std::string& text) {
  std::map<std::string, std::string> entries;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::runtime_error("config line " + std::to_string(line_no) +
                                 ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw std::runtime_error("config line " + std::to_string(line_no) + ": empty section");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty())
      throw std::runtime_error("config line " + std::to_string(line_no) + ": empty key");
    if (section.empty())
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": key before any [section]");
    entries[section + "." + key] = trim(line.substr(eq + 1));
  }
  return entries;
}

void apply_env_overrides(std::map<std::string, std::string>& entries) {
  for (const auto& spec : key_specs()) {
    std::string name = "KGRKIT_" + spec.key;
    for (auto& ch : name) {
      if (ch == '.') ch = '_';
      ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    }
    if (const char* value = std::getenv(name.c_str())) entries[spec.key] = value;
  }
}

RunConfig config_from_entries(const std::map<std::string, std::string>& entries) {
  RunConfig cfg;
  std::vector<std::string> bad;
  for (const auto& [key, value] : entries) {
    const KeySpec* spec = find_spec(key);
    if (!spec) {
      bad.push_back("unknown key: " + key);
      continue;
    }
    try {
      spec->set(cfg, value);
    } catch (const std::exception& e) {
      bad.push_back(key + ": " + e.what());
    }
  }
  // unset module seeds follow the master seed
  for (const auto& spec : key_specs()) {
    if (!spec.is_seed || spec.seed_stream == 0 || entries.count(spec.key)) continue;
    spec.set(cfg, std::to_string(Rng(cfg.seed).fork(spec.seed_stream).seed()));
  }
  if (bad.empty()) check_ranges(cfg, bad);
  if (!bad.empty()) {
    std::string msg = "invalid config:";
    for (const auto& b : bad) msg += "\n  - " + b;
    throw std::runtime_error(msg);
  }
  return cfg;
}

RunConfig parse_run_config(const std::string& text) {
  return config_from_entries(parse_ini(text));
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  auto entries = parse_ini(buf.str());
  apply_env_overrides(entries);
  return config_from_entries(entries);
}

std::string config_reference() {
  const RunConfig defaults;
  std::string out = "# every key with its default; KGRKIT_<SECTION>_<KEY> overrides any of them\n";
  std::string section;
  for (const auto& spec : key_specs()) {
    const auto dot = spec.key.find('.');
    const auto sec = spec.key.substr(0, dot);
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    const std::string value = spec.is_seed && spec.seed_stream > 0
                                  ? std::string("(derived from run.seed)")
                                  : spec.get(defaults);
    out += spec.key.substr(dot + 1) + " = " + value + "\n    # " + spec.doc + "\n";
  }
  return out;
}

std::string render_config(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& spec : key_specs()) {
    const auto dot = spec.key.find('.');
    const auto sec = spec.key.substr(0, dot);
    if (sec != section) {
      if (!out.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += spec.key.substr(dot + 1) + " = " + spec.get(cfg) + "\n";
  }
  return out;
}

}  // namespace kgr
