// Python bindings for the core workbench operations.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <stdexcept>
#include <string>
#include <vector>

#include "kgr/config.hpp"
#include "kgr/eval.hpp"
#include "kgr/pipeline.hpp"

namespace py = pybind11;
using namespace kgr;

namespace {

Split split_from(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "valid") return Split::Valid;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("split must be 'train', 'valid', or 'test'");
}

Triple to_triple(const std::tuple<int, int, int>& t) {
  return Triple{std::get<0>(t), std::get<1>(t), std::get<2>(t)};
}

std::tuple<int, int, int> from_triple(const Triple& x) { return {x.h, x.r, x.t}; }

std::vector<LabeledTriple> to_labeled(
    const std::vector<std::pair<std::tuple<int, int, int>, int>>& rows) {
  std::vector<LabeledTriple> out;
  out.reserve(rows.size());
  for (const auto& [t, y] : rows) out.push_back({to_triple(t), y});
  return out;
}

ProbeData to_probe_data(const std::vector<std::vector<double>>& X, const std::vector<int>& y) {
  ProbeData data;
  if (X.empty()) throw std::invalid_argument("X must not be empty");
  data.dim = static_cast<int>(X[0].size());
  for (const auto& row : X) {
    if (static_cast<int>(row.size()) != data.dim)
      throw std::invalid_argument("X rows must share one width");
    data.X.insert(data.X.end(), row.begin(), row.end());
  }
  if (!y.empty() && y.size() != X.size())
    throw std::invalid_argument("y must be empty or match X");
  data.y = y;
  return data;
}

py::object json_loads(const std::string& text) {
  return py::module_::import("json").attr("loads")(text);
}

py::dict smi_dict(const SmiResult& r) {
  py::dict d;
  d["k"] = r.k;
  d["n"] = r.n;
  d["d_v"] = r.d_v;
  d["per_dim_mi"] = r.per_dim_mi;
  d["i_task"] = r.i_task;
  return d;
}

py::dict outcome_dict(const StageOutcome& o) {
  py::dict d;
  d["stage"] = o.stage;
  d["skipped"] = o.skipped;
  d["seconds"] = o.seconds;
  d["artifacts"] = o.artifacts;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "knowledge-graph reasoning workbench core";

  py::class_<KnowledgeGraph>(m, "KnowledgeGraph")
      .def_static("load", &KnowledgeGraph::load, py::arg("train"), py::arg("valid"),
                  py::arg("test"), py::arg("text"), py::arg("desc") = "")
      .def("save", &KnowledgeGraph::save, py::arg("dir"))
      .def_property_readonly("num_entities", &KnowledgeGraph::num_entities)
      .def_property_readonly("num_relations", &KnowledgeGraph::num_relations)
      .def("entity_key", &KnowledgeGraph::entity_key)
      .def("entity_text", &KnowledgeGraph::entity_text)
      .def("relation_key", &KnowledgeGraph::relation_key)
      .def("relation_text", &KnowledgeGraph::relation_text)
      .def("triples",
           [](const KnowledgeGraph& g, const std::string& split) {
             std::vector<std::tuple<int, int, int>> out;
             for (const auto& x : g.triples(split_from(split))) out.push_back(from_triple(x));
             return out;
           },
           py::arg("split"))
      .def("balanced_set",
           [](const KnowledgeGraph& g, const std::string& split, std::uint64_t seed) {
             std::vector<std::pair<std::tuple<int, int, int>, int>> out;
             for (const auto& lt : g.balanced_classification_set(split_from(split), seed))
               out.emplace_back(from_triple(lt.triple), lt.label);
             return out;
           },
           py::arg("split"), py::arg("seed"))
      .def("corrupt_tail",
           [](const KnowledgeGraph& g, const std::tuple<int, int, int>& x, std::uint64_t seed) {
             return from_triple(g.corrupt_tail(to_triple(x), seed));
           },
           py::arg("triple"), py::arg("seed"))
      .def("stats", [](const KnowledgeGraph& g) { return json_loads(g.stats_json()); });

  m.def("synthetic_graph",
        [](int entities, double valid_frac, double test_frac, std::uint64_t seed) {
          SynthConfig cfg;
          cfg.num_entities = entities;
          cfg.valid_frac = valid_frac;
          cfg.test_frac = test_frac;
          cfg.seed = seed;
          return make_synthetic_graph(cfg);
        },
        py::arg("entities") = 64, py::arg("valid_frac") = 0.1, py::arg("test_frac") = 0.1,
        py::arg("seed") = 17);

  py::class_<KgeModel>(m, "KgeModel")
      .def_property_readonly("kind", [](const KgeModel& k) { return kge_kind_name(k.kind()); })
      .def_property_readonly("num_entities", &KgeModel::num_entities)
      .def_property_readonly("num_relations", &KgeModel::num_relations)
      .def_property_readonly("dim_entity", &KgeModel::dim_entity)
      .def("score", &KgeModel::score, py::arg("h"), py::arg("r"), py::arg("t"))
      .def("score_all_tails",
           [](const KgeModel& k, int h, int r) {
             std::vector<double> out;
             k.score_all_tails(h, r, out);
             return out;
           },
           py::arg("h"), py::arg("r"))
      .def("retrieve",
           [](const KgeModel& k, int h, int r, int n, std::vector<int> filter) {
             std::sort(filter.begin(), filter.end());
             std::vector<std::pair<int, double>> out;
             for (const auto& se : retrieve_topn(k, h, r, n, filter))
               out.emplace_back(se.entity, se.score);
             return out;
           },
           py::arg("h"), py::arg("r"), py::arg("n"), py::arg("filter") = std::vector<int>{})
      .def("save", &KgeModel::save, py::arg("path"))
      .def_static("load", &KgeModel::load, py::arg("path"));

  m.def("train_kge",
        [](const KnowledgeGraph& g, const std::string& model, int dim_entity, int dim_relation,
           int epochs, int batch_size, double lr, int negatives, double margin, double reg,
           bool adaptive, double corrupt_head_prob, int threads, std::uint64_t seed) {
          KgeTrainConfig cfg;
          cfg.epochs = epochs;
          cfg.batch_size = batch_size;
          cfg.lr = lr;
          cfg.negatives = negatives;
          cfg.margin = margin;
          cfg.reg = reg;
          cfg.adaptive = adaptive;
          cfg.corrupt_head_prob = corrupt_head_prob;
          cfg.threads = threads;
          cfg.seed = seed;
          KgeModel kge(kge_kind_from_string(model), g.num_entities(), g.num_relations(),
                       dim_entity, dim_relation, seed);
          const auto result = train_kge(kge, g, cfg);
          return std::make_pair(std::move(kge), result.loss_history);
        },
        py::arg("g"), py::arg("model") = "distmult", py::arg("dim_entity") = 32,
        py::arg("dim_relation") = 32, py::arg("epochs") = 200, py::arg("batch_size") = 128,
        py::arg("lr") = 0.05, py::arg("negatives") = 8, py::arg("margin") = 4.0,
        py::arg("reg") = 1e-6, py::arg("adaptive") = true, py::arg("corrupt_head_prob") = 0.5,
        py::arg("threads") = 1, py::arg("seed") = 7,
        py::call_guard<py::gil_scoped_release>());

  py::class_<DiscriminativeInstance>(m, "Instance")
      .def_readonly("h", &DiscriminativeInstance::h)
      .def_readonly("r", &DiscriminativeInstance::r)
      .def_readonly("tier", &DiscriminativeInstance::tier)
      .def_readonly("prompt", &DiscriminativeInstance::prompt)
      .def_readonly("target", &DiscriminativeInstance::target)
      .def_property_readonly("mode",
                             [](const DiscriminativeInstance& i) { return answer_mode_name(i.mode); })
      .def_property_readonly("answers",
                             [](const DiscriminativeInstance& i) {
                               std::vector<std::string> out;
                               for (char c : i.e_pos) out.emplace_back(1, c);
                               return out;
                             })
      .def_property_readonly("options", [](const DiscriminativeInstance& i) {
        std::vector<std::tuple<std::string, int, bool, double>> out;
        for (const auto& o : i.options)
          out.emplace_back(std::string(1, o.label), o.entity, o.is_positive, o.kge_score);
        return out;
      });

  m.def("build_instances",
        [](const KnowledgeGraph& g, const KgeModel& kge, int k, int tier, const std::string& mode,
           int per_query, double q_lo, double q_hi, int pool_size, std::uint64_t seed, bool cot) {
          InstanceDatasetConfig cfg;
          cfg.K = k;
          cfg.tier = tier;
          cfg.mode = answer_mode_from_string(mode);
          cfg.per_query = per_query;
          cfg.tiers.q_lo = q_lo;
          cfg.tiers.q_hi = q_hi;
          cfg.tiers.pool_size = pool_size;
          cfg.seed = seed;
          cfg.prompt_template = cot ? kCotPromptTemplate : kDefaultPromptTemplate;
          return build_instance_dataset(g, kge, cfg);
        },
        py::arg("g"), py::arg("kge"), py::arg("k") = 4, py::arg("tier") = 2,
        py::arg("mode") = "single", py::arg("per_query") = 1, py::arg("q_lo") = 0.25,
        py::arg("q_hi") = 0.75, py::arg("pool_size") = 0, py::arg("seed") = 13,
        py::arg("cot") = false);

  m.def("save_instances", &save_instances, py::arg("path"), py::arg("instances"));
  m.def("load_instances",
        [](const std::string& path, const KnowledgeGraph& g, bool cot) {
          return load_instances(path, g, cot ? kCotPromptTemplate : kDefaultPromptTemplate);
        },
        py::arg("path"), py::arg("g"), py::arg("cot") = false);

  py::class_<SequencePolicy>(m, "SequencePolicy")
      .def(py::init([](int num_entities, int num_relations, int max_k, int layers, int width,
                       int emb_dim, std::uint64_t seed) {
             PolicyConfig cfg;
             cfg.max_k = max_k;
             cfg.layers = layers;
             cfg.width = width;
             cfg.emb_dim = emb_dim;
             cfg.seed = seed;
             return SequencePolicy(cfg, num_entities, num_relations);
           }),
           py::arg("num_entities"), py::arg("num_relations"), py::arg("max_k") = 8,
           py::arg("layers") = 4, py::arg("width") = 64, py::arg("emb_dim") = 32,
           py::arg("seed") = 1)
      .def_property_readonly("max_k", [](const SequencePolicy& p) { return p.config().max_k; })
      .def_property_readonly("layers", [](const SequencePolicy& p) { return p.config().layers; })
      .def_property_readonly("width", [](const SequencePolicy& p) { return p.config().width; })
      .def("answer",
           [](const SequencePolicy& p, const DiscriminativeInstance& inst) {
             return p.detokenize(p.greedy_decode(p.encode(inst)).tokens);
           },
           py::arg("instance"))
      .def("hidden",
           [](const SequencePolicy& p, const DiscriminativeInstance& inst, int layer) {
             return p.hidden_state(p.encode(inst), layer);
           },
           py::arg("instance"), py::arg("layer"))
      .def("save", &SequencePolicy::save, py::arg("path"))
      .def_static("load", &SequencePolicy::load, py::arg("path"));

  m.def("train_sft",
        [](SequencePolicy& policy, const std::vector<DiscriminativeInstance>& data, int epochs,
           int batch_size, double lr, std::uint64_t seed) {
          SftConfig cfg;
          cfg.epochs = epochs;
          cfg.batch_size = batch_size;
          cfg.lr = lr;
          cfg.seed = seed;
          return train_sft(policy, data, cfg).loss_history;
        },
        py::arg("policy"), py::arg("instances"), py::arg("epochs") = 60,
        py::arg("batch_size") = 16, py::arg("lr") = 0.01, py::arg("seed") = 23,
        py::call_guard<py::gil_scoped_release>());

  m.def("build_error_set", &build_error_set, py::arg("policy"), py::arg("instances"),
        py::call_guard<py::gil_scoped_release>());

  m.def("grpo_train",
        [](SequencePolicy& policy, const std::vector<DiscriminativeInstance>& data,
           int iterations, int group_size, int batch_instances, double clip, double kl_weight,
           double alpha, double adv_floor, double lr, double temperature, std::uint64_t seed,
           const std::string& log_path) {
          GrpoConfig cfg;
          cfg.iterations = iterations;
          cfg.group_size = group_size;
          cfg.batch_instances = batch_instances;
          cfg.clip = clip;
          cfg.kl_weight = kl_weight;
          cfg.alpha = alpha;
          cfg.adv_floor = adv_floor;
          cfg.lr = lr;
          cfg.temperature = temperature;
          cfg.seed = seed;
          cfg.log_path = log_path;
          const auto result = grpo_train(policy, data, cfg);
          std::vector<std::map<std::string, double>> history;
          for (const auto& s : result.history)
            history.push_back({{"iteration", static_cast<double>(s.iteration)},
                               {"mean_reward", s.mean_reward},
                               {"mean_format", s.mean_format},
                               {"mean_accuracy", s.mean_accuracy},
                               {"kl", s.kl},
                               {"loss", s.loss}});
          return history;
        },
        py::arg("policy"), py::arg("instances"), py::arg("iterations") = 60,
        py::arg("group_size") = 8, py::arg("batch_instances") = 8, py::arg("clip") = 0.2,
        py::arg("kl_weight") = 0.04, py::arg("alpha") = 0.1, py::arg("adv_floor") = 1e-8,
        py::arg("lr") = 0.01, py::arg("temperature") = 1.0, py::arg("seed") = 31,
        py::arg("log_path") = "", py::call_guard<py::gil_scoped_release>());

  m.def("evaluate_policy",
        [](const SequencePolicy& policy, const std::vector<DiscriminativeInstance>& data,
           double alpha) {
          const auto r = evaluate_policy(policy, data, alpha);
          return std::map<std::string, double>{
              {"format", r.format}, {"accuracy", r.accuracy}, {"total", r.total}};
        },
        py::arg("policy"), py::arg("instances"), py::arg("alpha") = 0.1,
        py::call_guard<py::gil_scoped_release>());

  py::class_<ProbeClassifier>(m, "ProbeClassifier")
      .def(py::init<int, int, std::uint64_t>(), py::arg("dim"), py::arg("hidden"),
           py::arg("seed") = 41)
      .def_property_readonly("threshold", &ProbeClassifier::threshold)
      .def("score", py::overload_cast<const std::vector<double>&>(&ProbeClassifier::score,
                                                                  py::const_),
           py::arg("z"))
      .def("predict", &ProbeClassifier::predict, py::arg("z"))
      .def("save", &ProbeClassifier::save, py::arg("path"))
      .def_static("load", &ProbeClassifier::load, py::arg("path"));

  m.def("train_probe",
        [](ProbeClassifier& probe, const std::vector<std::vector<double>>& X_train,
           const std::vector<int>& y_train, const std::vector<std::vector<double>>& X_valid,
           const std::vector<int>& y_valid, int epochs, int batch_size, double lr,
           std::uint64_t seed) {
          ProbeTrainConfig cfg;
          cfg.epochs = epochs;
          cfg.batch_size = batch_size;
          cfg.lr = lr;
          cfg.seed = seed;
          const auto r =
              train_probe(probe, to_probe_data(X_train, y_train), to_probe_data(X_valid, y_valid),
                          cfg);
          py::gil_scoped_acquire gil;
          py::dict d;
          d["losses"] = r.loss_history;
          d["valid_accuracy"] = r.valid_accuracy;
          d["threshold"] = r.threshold;
          return d;
        },
        py::arg("probe"), py::arg("X_train"), py::arg("y_train"), py::arg("X_valid"),
        py::arg("y_valid"), py::arg("epochs") = 150, py::arg("batch_size") = 32,
        py::arg("lr") = 0.01, py::arg("seed") = 41, py::call_guard<py::gil_scoped_release>());

  m.def("extract_representations",
        [](const SequencePolicy& policy, const KgeModel& kge,
           const std::vector<std::pair<std::tuple<int, int, int>, int>>& labeled, int layer) {
          const PolicyStateProvider provider(policy, kge);
          const auto data = extract_representations(provider, to_labeled(labeled), layer);
          std::vector<std::vector<double>> X;
          for (int i = 0; i < data.size(); ++i)
            X.emplace_back(data.X.begin() + static_cast<std::ptrdiff_t>(i) * data.dim,
                           data.X.begin() + static_cast<std::ptrdiff_t>(i + 1) * data.dim);
          return std::make_pair(X, data.y);
        },
        py::arg("policy"), py::arg("kge"), py::arg("labeled"), py::arg("layer"),
        py::call_guard<py::gil_scoped_release>());

  m.def("mixed_ksg_mi", &mixed_ksg_mi, py::arg("x"), py::arg("y"), py::arg("k") = 3,
        py::arg("jitter_seed") = 0);
  m.def("continuous_ksg_mi", &continuous_ksg_mi, py::arg("x"), py::arg("y"), py::arg("k") = 3,
        py::arg("jitter_seed") = 0);

  m.def("task_smi",
        [](const ProbeClassifier& probe, const std::vector<std::vector<double>>& X,
           const std::vector<int>& y, int k, std::uint64_t jitter_seed) {
          SmiConfig cfg;
          cfg.k = k;
          cfg.jitter_seed = jitter_seed;
          return smi_dict(task_smi(probe, to_probe_data(X, y), cfg));
        },
        py::arg("probe"), py::arg("X"), py::arg("y"), py::arg("k") = 3,
        py::arg("jitter_seed") = 101);

  m.def("random_projection_smi",
        [](const std::vector<std::vector<double>>& X, const std::vector<int>& y, int directions,
           std::uint64_t seed, int k, std::uint64_t jitter_seed) {
          SmiConfig cfg;
          cfg.k = k;
          cfg.jitter_seed = jitter_seed;
          return smi_dict(random_projection_smi(to_probe_data(X, y), directions, seed, cfg));
        },
        py::arg("X"), py::arg("y"), py::arg("directions"), py::arg("seed"), py::arg("k") = 3,
        py::arg("jitter_seed") = 101);

  m.def("link_predict",
        [](const KgeModel& kge, const ProbeClassifier& probe, const SequencePolicy& policy,
           const KnowledgeGraph& g, int top_n, int layer, const std::string& split, int threads) {
          const PolicyStateProvider provider(policy, kge);
          const auto report =
              link_predict(kge, probe, provider, g, top_n, layer, split_from(split), threads);
          py::gil_scoped_acquire gil;
          return json_loads(metrics_json(report));
        },
        py::arg("kge"), py::arg("probe"), py::arg("policy"), py::arg("g"), py::arg("top_n") = 15,
        py::arg("layer") = 2, py::arg("split") = "test", py::arg("threads") = 1,
        py::call_guard<py::gil_scoped_release>());

  m.def("triple_classify",
        [](const ProbeClassifier& probe, const SequencePolicy& policy, const KgeModel& kge,
           const std::vector<std::pair<std::tuple<int, int, int>, int>>& labeled, int layer) {
          const PolicyStateProvider provider(policy, kge);
          const auto report = triple_classify(probe, provider, to_labeled(labeled), layer);
          py::gil_scoped_acquire gil;
          return json_loads(metrics_json(report));
        },
        py::arg("probe"), py::arg("policy"), py::arg("kge"), py::arg("labeled"), py::arg("layer"),
        py::call_guard<py::gil_scoped_release>());

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init([] { return parse_run_config(""); }))
      .def_static("parse", &parse_run_config, py::arg("text"))
      .def_static("load", &load_run_config, py::arg("path"))
      .def("render", &render_config)
      .def_readwrite("out", &RunConfig::out)
      .def_readwrite("dataset", &RunConfig::dataset)
      .def_readwrite("seed", &RunConfig::seed)
      .def_readwrite("jobs", &RunConfig::jobs)
      .def_readwrite("deterministic", &RunConfig::deterministic);

  m.def("config_reference", &config_reference);

  py::class_<Pipeline>(m, "Pipeline")
      .def(py::init<const RunConfig&>(), py::arg("config"))
      .def_static("stage_names", [] { return Pipeline::stage_names(); })
      .def_static("stage_dependencies",
                  [](const std::string& s) { return Pipeline::stage_dependencies(s); },
                  py::arg("stage"))
      .def("run",
           [](Pipeline& p, const std::string& stage, bool force) {
             StageOutcome o;
             {
               py::gil_scoped_release release;
               o = p.run(stage, force);
             }
             return outcome_dict(o);
           },
           py::arg("stage"), py::arg("force") = false)
      .def("run_all",
           [](Pipeline& p, bool force) {
             std::vector<StageOutcome> outcomes;
             {
               py::gil_scoped_release release;
               outcomes = p.run_all(force);
             }
             py::list out;
             for (const auto& o : outcomes) out.append(outcome_dict(o));
             return out;
           },
           py::arg("force") = false)
      .def("stage_current", &Pipeline::stage_current, py::arg("stage"))
      .def("artifact_path", &Pipeline::artifact_path, py::arg("rel"));
}
