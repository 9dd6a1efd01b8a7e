#include "kgr/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "json.hpp"
#include "kgr/eval.hpp"
#include "kgr/rng.hpp"

namespace fs = std::filesystem;

namespace kgr {

namespace {

// seed streams reserved for stage-internal draws (module seeds use 0..10)
constexpr std::uint64_t kStreamEvalInstances = 14;
constexpr std::uint64_t kStreamClassTrain = 20;
constexpr std::uint64_t kStreamClassValid = 21;
constexpr std::uint64_t kStreamClassTest = 22;
constexpr std::uint64_t kStreamRandomSmi = 30;

std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

void write_loss_csv(const std::string& path, const std::vector<double>& losses) {
  std::string text = "epoch,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i)
    text += std::to_string(i + 1) + "," + num(losses[i]) + "\n";
  write_text(path, text);
}

// config lines that do not influence artifact bytes
std::string normalized_config(const std::string& rendered) {
  std::istringstream in(rendered);
  std::string line, out;
  while (std::getline(in, line)) {
    if (line.rfind("jobs = ", 0) == 0 || line.rfind("deterministic = ", 0) == 0) continue;
    out += line + "\n";
  }
  return out;
}

struct StageDef {
  std::string name;
  std::vector<std::string> deps;
};

const std::vector<StageDef>& stage_defs() {
  static const std::vector<StageDef> defs = {
      {"ingest", {}},
      {"train-kge", {"ingest"}},
      {"build-instances", {"ingest", "train-kge"}},
      {"sft", {"ingest", "build-instances"}},
      {"grpo", {"ingest", "build-instances", "sft"}},
      {"extract-reps", {"ingest", "train-kge", "grpo"}},
      {"train-probe", {"extract-reps"}},
      {"eval-lp", {"ingest", "train-kge", "grpo", "train-probe"}},
      {"eval-tc", {"ingest", "train-kge", "grpo", "train-probe"}},
      {"smi", {"extract-reps", "train-probe"}},
      {"layer-sweep", {"ingest", "train-kge", "grpo"}},
      {"inductive", {"ingest"}},
      {"sweep-k", {"ingest", "train-kge"}},
      {"sweep-n", {"ingest", "train-kge", "grpo", "train-probe"}},
      {"sweep-tier", {"ingest", "train-kge"}},
  };
  return defs;
}

const StageDef& stage_def(const std::string& name) {
  for (const auto& d : stage_defs())
    if (d.name == name) return d;
  throw std::runtime_error("unknown stage '" + name + "'");
}

}  // namespace

std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const auto got = static_cast<std::size_t>(in.gcount());
    for (std::size_t i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  return h;
}

namespace {

std::string checksum_hex(const std::string& path) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a_file(path)));
  return buf;
}

}  // namespace

Pipeline::Pipeline(const RunConfig& cfg) : cfg_(cfg) {
  if (cfg_.deterministic) cfg_.jobs = 1;
  fs::create_directories(cfg_.out);
  load_manifest();
}

const std::vector<std::string>& Pipeline::stage_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& d : stage_defs()) v.push_back(d.name);
    return v;
  }();
  return names;
}

const std::vector<std::string>& Pipeline::stage_dependencies(const std::string& stage) {
  return stage_def(stage).deps;
}

std::string Pipeline::artifact_path(const std::string& rel) const {
  return (fs::path(cfg_.out) / rel).string();
}

void Pipeline::load_manifest() {
  manifest_.clear();
  const auto path = artifact_path("manifest.json");
  if (!fs::exists(path)) return;
  nlohmann::json j;
  std::ifstream in(path);
  in >> j;
  // a config change invalidates recorded stages; --force is not needed
  if (normalized_config(j.value("config", "")) != normalized_config(render_config(cfg_))) return;
  for (const auto& [name, entry] : j.at("stages").items()) {
    StageEntry e;
    e.seconds = entry.value("seconds", 0.0);
    for (const auto& [rel, sum] : entry.at("artifacts").items())
      e.artifacts[rel] = sum.get<std::string>();
    manifest_[name] = e;
  }
}

void Pipeline::write_manifest() const {
  nlohmann::json j;
  j["config"] = render_config(cfg_);
  j["stages"] = nlohmann::json::object();
  for (const auto& [name, e] : manifest_) {
    nlohmann::json s;
    s["seconds"] = e.seconds;
    s["artifacts"] = nlohmann::json::object();
    for (const auto& [rel, sum] : e.artifacts) s["artifacts"][rel] = sum;
    j["stages"][name] = s;
  }
  const auto path = artifact_path("manifest.json");
  const auto tmp = path + ".tmp";
  write_text(tmp, j.dump(2) + "\n");
  fs::rename(tmp, path);
}

bool Pipeline::stage_current(const std::string& stage) const {
  const auto it = manifest_.find(stage);
  if (it == manifest_.end() || it->second.artifacts.empty()) return false;
  for (const auto& [rel, sum] : it->second.artifacts) {
    const auto path = artifact_path(rel);
    if (!fs::exists(path) || checksum_hex(path) != sum) return false;
  }
  return true;
}

void Pipeline::require_dependencies(const std::string& stage) const {
  for (const auto& dep : stage_def(stage).deps) {
    if (!stage_current(dep))
      throw std::runtime_error("stage '" + stage + "' needs artifacts from '" + dep +
                               "'; run `kgrkit " + dep + "` first");
  }
}

StageOutcome Pipeline::run(const std::string& stage, bool force) {
  stage_def(stage);  // validates the name
  require_dependencies(stage);
  StageOutcome outcome;
  outcome.stage = stage;
  if (!force && stage_current(stage)) {
    outcome.skipped = true;
    for (const auto& [rel, sum] : manifest_.at(stage).artifacts) outcome.artifacts.push_back(rel);
    std::sort(outcome.artifacts.begin(), outcome.artifacts.end());
    return outcome;
  }
  const auto start = std::chrono::steady_clock::now();
  auto written = execute(stage);
  outcome.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::sort(written.begin(), written.end());
  StageEntry entry;
  entry.seconds = outcome.seconds;
  for (const auto& rel : written) entry.artifacts[rel] = checksum_hex(artifact_path(rel));
  manifest_[stage] = entry;
  write_manifest();
  outcome.artifacts = written;
  return outcome;
}

std::vector<StageOutcome> Pipeline::run_all(bool force) {
  std::vector<StageOutcome> outcomes;
  for (const auto& name : stage_names()) outcomes.push_back(run(name, force));
  return outcomes;
}

// stage bodies

namespace {

std::string dataset_label(const RunConfig& cfg) {
  if (cfg.dataset == "synthetic") return "synthetic";
  return fs::path(cfg.dataset).filename().string();
}

const std::string& template_for(const RunConfig& cfg) {
  return cfg.prompt_style == "cot" ? kCotPromptTemplate : kDefaultPromptTemplate;
}

struct StageContext {
  const RunConfig& cfg;
  const Pipeline& pipe;

  std::string path(const std::string& rel) const { return pipe.artifact_path(rel); }

  KnowledgeGraph graph() const {
    const auto dir = fs::path(pipe.artifact_path("graph"));
    const auto desc = dir / "desc.txt";
    return KnowledgeGraph::load((dir / "train.txt").string(), (dir / "valid.txt").string(),
                                (dir / "test.txt").string(), (dir / "text.txt").string(),
                                fs::exists(desc) ? desc.string() : "");
  }

  KgeModel kge(const KnowledgeGraph& g) const {
    return KgeModel::load_for_graph(path("kge.bin"), g);
  }

  std::vector<DiscriminativeInstance> instances(const KnowledgeGraph& g,
                                                const std::string& rel) const {
    return load_instances(path(rel), g, template_for(cfg));
  }

  ProbeData reps(const std::string& name) const {
    auto data = load_representations(path("reps_" + name + ".txt"));
    data.y = load_labels(path("labels_" + name + ".txt"));
    return data;
  }
};

std::vector<std::string> stage_ingest(const StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  KnowledgeGraph g = [&] {
    if (cfg.dataset == "synthetic") return make_synthetic_graph(cfg.synth);
    if (!fs::is_directory(cfg.dataset))
      throw std::runtime_error("run.dataset: '" + cfg.dataset +
                               "' is not a directory (or 'synthetic')");
    const fs::path dir(cfg.dataset);
    const auto desc = dir / "desc.txt";
    return KnowledgeGraph::load((dir / "train.txt").string(), (dir / "valid.txt").string(),
                                (dir / "test.txt").string(), (dir / "text.txt").string(),
                                fs::exists(desc) ? desc.string() : "");
  }();
  fs::create_directories(ctx.path("graph"));
  g.save(ctx.path("graph"));
  write_text(ctx.path("stats.json"), g.stats_json() + "\n");

  std::vector<std::string> written = {"graph/train.txt", "graph/valid.txt", "graph/test.txt",
                                      "graph/text.txt", "stats.json"};
  if (fs::exists(ctx.path("graph/desc.txt"))) written.push_back("graph/desc.txt");
  return written;
}

std::vector<std::string> stage_train_kge(const StageContext& ctx) {
  const auto g = ctx.graph();
  auto kge_cfg = ctx.cfg.kge;
  kge_cfg.threads = ctx.cfg.jobs;
  KgeModel model(ctx.cfg.kge_kind, g.num_entities(), g.num_relations(), ctx.cfg.kge_dim_entity,
                 ctx.cfg.kge_dim_relation, kge_cfg.seed);
  const auto result = train_kge(model, g, kge_cfg);
  model.save(ctx.path("kge.bin"));
  write_loss_csv(ctx.path("kge_train.csv"), result.loss_history);
  return {"kge.bin", "kge_train.csv"};
}

std::vector<std::string> stage_build_instances(const StageContext& ctx) {
  const auto g = ctx.graph();
  const auto kge = ctx.kge(g);
  auto icfg = ctx.cfg.instances;
  icfg.prompt_template = template_for(ctx.cfg);
  const auto train = build_instance_dataset(g, kge, icfg);
  if (train.empty())
    throw std::runtime_error(
        "no train instances could be built; lower instances.k or grow the graph");
  icfg.seed = Rng(icfg.seed).fork(kStreamEvalInstances).seed();
  const auto eval = build_instance_dataset(g, kge, icfg);
  save_instances(ctx.path("instances_train.jsonl"), train);
  save_instances(ctx.path("instances_eval.jsonl"), eval);
  return {"instances_train.jsonl", "instances_eval.jsonl"};
}

std::vector<std::string> stage_sft(const StageContext& ctx) {
  const auto g = ctx.graph();
  const auto train = ctx.instances(g, "instances_train.jsonl");
  const auto eval = ctx.instances(g, "instances_eval.jsonl");
  SequencePolicy policy(ctx.cfg.policy, g.num_entities(), g.num_relations());
  const auto result = train_sft(policy, train, ctx.cfg.sft);
  policy.save(ctx.path("policy_sft.bin"));
  write_loss_csv(ctx.path("sft_log.csv"), result.loss_history);
  const auto reward = evaluate_policy(policy, eval, ctx.cfg.grpo.alpha);
  write_json(ctx.path("sft_eval.json"),
             {{"reward", reward.total}, {"format", reward.format}, {"accuracy", reward.accuracy}});
  return {"policy_sft.bin", "sft_log.csv", "sft_eval.json"};
}

std::vector<std::string> stage_grpo(const StageContext& ctx) {
  const auto g = ctx.graph();
  const auto train = ctx.instances(g, "instances_train.jsonl");
  const auto eval = ctx.instances(g, "instances_eval.jsonl");
  auto policy = SequencePolicy::load(ctx.path("policy_sft.bin"));
  const auto errors_before = build_error_set(policy, train);
  auto gcfg = ctx.cfg.grpo;
  gcfg.log_path = ctx.path("grpo_log.csv");
  if (errors_before.empty()) {
    // nothing to correct; keep the SFT policy and an empty log
    write_text(gcfg.log_path, "iteration,mean_reward,mean_format,mean_accuracy,kl,loss\n");
  } else {
    grpo_train(policy, errors_before, gcfg);
  }
  const auto errors_after = build_error_set(policy, train);
  policy.save(ctx.path("policy_grpo.bin"));
  const auto reward = evaluate_policy(policy, eval, ctx.cfg.grpo.alpha);
  write_json(ctx.path("grpo_eval.json"), {{"errors_before", errors_before.size()},
                                          {"errors_after", errors_after.size()},
                                          {"reward", reward.total},
                                          {"format", reward.format},
                                          {"accuracy", reward.accuracy}});
  return {"policy_grpo.bin", "grpo_log.csv", "grpo_eval.json"};
}

std::vector<std::string> stage_extract_reps(const StageContext& ctx) {
  const auto g = ctx.graph();
  const auto kge = ctx.kge(g);
  const auto policy = SequencePolicy::load(ctx.path("policy_grpo.bin"));
  const PolicyStateProvider provider(policy, kge);
  const Rng base(ctx.cfg.seed);
  const std::vector<std::tuple<Split, std::string, std::uint64_t>> splits = {
      {Split::Train, "train", kStreamClassTrain},
      {Split::Valid, "valid", kStreamClassValid},
      {Split::Test, "test", kStreamClassTest},
  };
  std::vector<std::string> written;
  for (const auto& [split, name, stream] : splits) {
    const auto labeled = g.balanced_classification_set(split, base.fork(stream).seed());
    const auto data = extract_representations(provider, labeled, ctx.cfg.probe_layer);
    save_representations(ctx.path("reps_" + name + ".txt"), data);
    save_labels(ctx.path("labels_" + name + ".txt"), data.y);
    written.push_back("reps_" + name + ".txt");
    written.push_back("labels_" + name + ".txt");
  }
  return written;
}

std::vector<std::string> stage_train_probe(const StageContext& ctx) {
  const auto train = ctx.reps("train");
  const auto valid = ctx.reps("valid");
  ProbeClassifier probe(train.dim, ctx.cfg.probe_hidden, ctx.cfg.probe_init_seed);
  const auto result = train_probe(probe, train, valid, ctx.cfg.probe);
  probe.save(ctx.path("probe.bin"));
  write_loss_csv(ctx.path("probe_log.csv"), result.loss_history);
  write_json(ctx.path("probe_eval.json"),
             {{"valid_accuracy", result.valid_accuracy}, {"threshold", result.threshold}});
  return {"probe.bin", "probe_log.csv", "probe_eval.json"};
}

std::vector<std::string> stage_eval_lp(const StageContext& ctx) {
  const auto g = ctx.graph();
  const auto kge = ctx.kge(g);
  const auto policy = SequencePolicy::load(ctx.path("policy_grpo.bin"));
  const auto probe = ProbeClassifier::load(ctx.path("probe.bin"));
  const PolicyStateProvider provider(policy, kge);
  auto report = link_predict(kge, probe, provider, g, ctx.cfg.eval_top_n, ctx.cfg.probe_layer,
                             Split::Test, ctx.cfg.jobs);
  report.dataset = dataset_label(ctx.cfg);
  report.seed = ctx.cfg.seed;
  save_metrics_json(ctx.path("metrics_lp.json"), report);
  return {"metrics_lp.json"};
}

std::vector<std::string> stage_eval_tc(const StageContext& ctx) {
  const auto g = ctx.graph();
  const auto kge = ctx.kge(g);
  const auto policy = SequencePolicy::load(ctx.path("policy_grpo.bin"));
  const auto probe = ProbeClassifier::load(ctx.path("probe.bin"));
  const PolicyStateProvider provider(policy, kge);
  const auto labeled =
      g.balanced_classification_set(Split::Test, Rng(ctx.cfg.seed).fork(kStreamClassTest).seed());
  auto report = triple_classify(probe, provider, labeled, ctx.cfg.probe_layer);
  report.dataset = dataset_label(ctx.cfg);
  report.seed = ctx.cfg.seed;
  save_metrics_json(ctx.path("metrics_tc.json"), report);
  return {"metrics_tc.json"};
}

std::vector<std::string> stage_smi(const StageContext& ctx) {
  const auto probe = ProbeClassifier::load(ctx.path("probe.bin"));
  const auto valid = ctx.reps("valid");
  const auto tuned = task_smi(probe, valid, ctx.cfg.smi);
  save_smi_json(ctx.path("smi.json"), tuned);
  save_smi_csv(ctx.path("smi.csv"), tuned);
  const auto random = random_projection_smi(
      valid, ctx.cfg.smi_directions, Rng(ctx.cfg.seed).fork(kStreamRandomSmi).seed(), ctx.cfg.smi);
  save_smi_json(ctx.path("smi_random.json"), random);
  return {"smi.json", "smi.csv", "smi_random.json"};
}

std::vector<std::string> stage_layer_sweep(const StageContext& ctx) {
  const auto g = ctx.graph();
  const auto kge = ctx.kge(g);
  const auto policy = SequencePolicy::load(ctx.path("policy_grpo.bin"));
  const PolicyStateProvider provider(policy, kge);
  const auto labeled =
      g.balanced_classification_set(Split::Train, Rng(ctx.cfg.seed).fork(kStreamClassTrain).seed());
  std::vector<int> layers(static_cast<std::size_t>(policy.config().layers));
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i] = static_cast<int>(i) + 1;
  LayerSweepConfig scfg;
  scfg.hidden = ctx.cfg.probe_hidden;
  scfg.train = ctx.cfg.probe;
  const auto entries = layer_sweep(provider, labeled, layers, scfg);
  save_layer_sweep_csv(ctx.path("layer_sweep.csv"), entries);
  return {"layer_sweep.csv"};
}

KnowledgeGraph rebuild_with_train(const KnowledgeGraph& g, std::vector<Triple> train) {
  std::vector<std::string> ek, rk;
  std::unordered_map<std::string, std::string> text, desc;
  for (EntityId e = 0; e < g.num_entities(); ++e) {
    ek.push_back(g.entity_key(e));
    text[g.entity_key(e)] = g.entity_text(e);
    desc[g.entity_key(e)] = g.entity_desc(e);
  }
  for (RelationId r = 0; r < g.num_relations(); ++r) {
    rk.push_back(g.relation_key(r));
    text[g.relation_key(r)] = g.relation_text(r);
  }
  return KnowledgeGraph::build(std::move(ek), std::move(rk), std::move(train),
                               g.triples(Split::Valid), g.triples(Split::Test), std::move(text),
                               std::move(desc));
}

std::vector<std::string> stage_inductive(const StageContext& ctx) {
  const auto& cfg = ctx.cfg;
  const auto g = ctx.graph();
  std::vector<std::string> written;
  std::string csv = "rho,n_seen,n_unseen,acc_seen,acc_unseen,acc_all\n";

  for (std::size_t ri = 0; ri < cfg.inductive_rhos.size(); ++ri) {
    const double rho = cfg.inductive_rhos[ri];
    const auto split = make_inductive_split(g, rho, cfg.inductive_seed);
    const auto g_rho = rebuild_with_train(g, split.reduced_train);
    const Rng fork_base(Rng(cfg.inductive_seed).fork(ri + 1).seed());

    auto kge_cfg = cfg.kge;
    kge_cfg.threads = cfg.jobs;
    kge_cfg.seed = fork_base.fork(1).seed();
    KgeModel kge(cfg.kge_kind, g_rho.num_entities(), g_rho.num_relations(), cfg.kge_dim_entity,
                 cfg.kge_dim_relation, kge_cfg.seed);
    train_kge(kge, g_rho, kge_cfg);

    auto icfg = cfg.instances;
    icfg.prompt_template = template_for(cfg);
    icfg.seed = fork_base.fork(2).seed();
    const auto instances = build_instance_dataset(g_rho, kge, icfg);
    if (instances.empty())
      throw std::runtime_error("inductive: no instances at rho " + num(rho) +
                               "; lower instances.k or the rho fraction");

    auto pcfg = cfg.policy;
    pcfg.seed = fork_base.fork(3).seed();
    SequencePolicy policy(pcfg, g_rho.num_entities(), g_rho.num_relations());
    auto sft_cfg = cfg.sft;
    sft_cfg.seed = fork_base.fork(4).seed();
    train_sft(policy, instances, sft_cfg);
    const auto errors = build_error_set(policy, instances);
    if (!errors.empty()) {
      auto gcfg = cfg.grpo;
      gcfg.seed = fork_base.fork(5).seed();
      gcfg.log_path.clear();
      grpo_train(policy, errors, gcfg);
    }

    const PolicyStateProvider provider(policy, kge);
    const auto train_set =
        g_rho.balanced_classification_set(Split::Train, fork_base.fork(6).seed());
    const auto valid_set =
        g_rho.balanced_classification_set(Split::Valid, fork_base.fork(7).seed());
    ProbeClassifier probe(policy.config().width, cfg.probe_hidden, fork_base.fork(8).seed());
    train_probe(probe, extract_representations(provider, train_set, cfg.probe_layer),
                extract_representations(provider, valid_set, cfg.probe_layer), cfg.probe);

    // per positive test triple: classify it and one seeded corruption
    const std::uint64_t corrupt_seed = fork_base.fork(9).seed();
    auto metric = [&](const Triple& x) {
      const int pos = probe.predict(provider.representation(x, cfg.probe_layer));
      const auto neg = g_rho.corrupt_tail(x, corrupt_seed ^ TripleHash{}(x));
      const int negp = probe.predict(provider.representation(neg, cfg.probe_layer));
      return ((pos == 1 ? 1.0 : 0.0) + (negp == 0 ? 1.0 : 0.0)) / 2.0;
    };
    auto report = inductive_report(split, metric);
    report.dataset = dataset_label(cfg);
    report.seed = cfg.seed;
    report.l = cfg.probe_layer;

    const auto pct = static_cast<int>(rho * 100.0 + 0.5);
    const std::string rel = "metrics_inductive_r" + std::to_string(pct) + ".json";
    save_metrics_json(ctx.path(rel), report);
    written.push_back(rel);

    const bool has_s = report.strata.count("S") > 0;
    const bool has_u = report.strata.count("U") > 0;
    csv += num(rho) + ",";
    csv += (has_s ? std::to_string(report.strata.at("S").n) : "0") + ",";
    csv += (has_u ? std::to_string(report.strata.at("U").n) : "0") + ",";
    csv += (has_s ? num(report.strata.at("S").accuracy) : "") + ",";
    csv += (has_u ? num(report.strata.at("U").accuracy) : "") + ",";
    csv += num(report.accuracy) + "\n";
  }
  write_text(ctx.path("inductive.csv"), csv);
  written.push_back("inductive.csv");
  return written;
}

double sft_accuracy_for(const StageContext& ctx, const KnowledgeGraph& g, const KgeModel& kge,
                        InstanceDatasetConfig icfg, std::uint64_t stream) {
  const auto& cfg = ctx.cfg;
  icfg.prompt_template = template_for(cfg);
  const Rng fork_base(Rng(cfg.instances.seed).fork(stream).seed());
  icfg.seed = fork_base.fork(1).seed();
  const auto train = build_instance_dataset(g, kge, icfg);
  if (train.empty()) throw std::runtime_error("sweep: no instances for this configuration");
  icfg.seed = fork_base.fork(2).seed();
  const auto eval = build_instance_dataset(g, kge, icfg);

  auto pcfg = cfg.policy;
  pcfg.seed = fork_base.fork(3).seed();
  SequencePolicy policy(pcfg, g.num_entities(), g.num_relations());
  auto sft_cfg = cfg.sft;
  sft_cfg.seed = fork_base.fork(4).seed();
  train_sft(policy, train, sft_cfg);
  return evaluate_policy(policy, eval, cfg.grpo.alpha).accuracy;
}

std::vector<std::string> stage_sweep_k(const StageContext& ctx) {
  const auto g = ctx.graph();
  const auto kge = ctx.kge(g);
  std::string csv = "k,accuracy\n";
  for (std::size_t i = 0; i < ctx.cfg.sweep_k.size(); ++i) {
    auto icfg = ctx.cfg.instances;
    icfg.K = ctx.cfg.sweep_k[i];
    csv += std::to_string(icfg.K) + "," +
           num(sft_accuracy_for(ctx, g, kge, icfg, 100 + i)) + "\n";
  }
  write_text(ctx.path("sweep_k.csv"), csv);
  return {"sweep_k.csv"};
}

std::vector<std::string> stage_sweep_tier(const StageContext& ctx) {
  const auto g = ctx.graph();
  const auto kge = ctx.kge(g);
  std::string csv = "tier,accuracy\n";
  for (std::size_t i = 0; i < ctx.cfg.sweep_tier.size(); ++i) {
    auto icfg = ctx.cfg.instances;
    icfg.tier = ctx.cfg.sweep_tier[i];
    csv += std::to_string(icfg.tier) + "," +
           num(sft_accuracy_for(ctx, g, kge, icfg, 200 + i)) + "\n";
  }
  write_text(ctx.path("sweep_tier.csv"), csv);
  return {"sweep_tier.csv"};
}

std::vector<std::string> stage_sweep_n(const StageContext& ctx) {
  const auto g = ctx.graph();
  const auto kge = ctx.kge(g);
  const auto policy = SequencePolicy::load(ctx.path("policy_grpo.bin"));
  const auto probe = ProbeClassifier::load(ctx.path("probe.bin"));
  const PolicyStateProvider provider(policy, kge);
  std::string csv = "n,mrr,hits10,fallback_fraction\n";
  for (int n : ctx.cfg.sweep_n) {
    const auto report = link_predict(kge, probe, provider, g, n, ctx.cfg.probe_layer, Split::Test,
                                     ctx.cfg.jobs);
    csv += std::to_string(n) + "," + num(report.mrr) + "," + num(report.hits10) + "," +
           num(report.fallback_fraction) + "\n";
  }
  write_text(ctx.path("sweep_n.csv"), csv);
  return {"sweep_n.csv"};
}

}  // namespace

std::vector<std::string> Pipeline::execute(const std::string& stage) {
  const StageContext ctx{cfg_, *this};
  if (stage == "ingest") return stage_ingest(ctx);
  if (stage == "train-kge") return stage_train_kge(ctx);
  if (stage == "build-instances") return stage_build_instances(ctx);
  if (stage == "sft") return stage_sft(ctx);
  if (stage == "grpo") return stage_grpo(ctx);
  if (stage == "extract-reps") return stage_extract_reps(ctx);
  if (stage == "train-probe") return stage_train_probe(ctx);
  if (stage == "eval-lp") return stage_eval_lp(ctx);
  if (stage == "eval-tc") return stage_eval_tc(ctx);
  if (stage == "smi") return stage_smi(ctx);
  if (stage == "layer-sweep") return stage_layer_sweep(ctx);
  if (stage == "inductive") return stage_inductive(ctx);
  if (stage == "sweep-k") return stage_sweep_k(ctx);
  if (stage == "sweep-n") return stage_sweep_n(ctx);
  if (stage == "sweep-tier") return stage_sweep_tier(ctx);
  throw std::runtime_error("unknown stage '" + stage + "'");
}

}  // namespace kgr
