#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kgr/instance.hpp"
#include "kgr/kge.hpp"
#include "kgr/policy.hpp"
#include "kgr/probe.hpp"
#include "kgr/rl.hpp"
#include "kgr/smi.hpp"
#include "kgr/synth.hpp"

namespace kgr {

// Run-wide configuration: one text file covering every stage, overridable
// from the environment (KGRKIT_<SECTION>_<KEY>=value) and from CLI flags.
// Module seeds left unset in the file are derived from run.seed, so changing
// the run seed reseeds the whole pipeline while explicit seeds stay put.

struct RunConfig {
  // [run]
  std::string out = "runs/default";
  std::string dataset = "synthetic";  // "synthetic" or a directory of split files
  std::uint64_t seed = 7;
  bool deterministic = false;
  int jobs = 1;

  // [synth]
  SynthConfig synth;

  // [kge]
  KgeKind kge_kind = KgeKind::DistMult;
  int kge_dim_entity = 32;
  int kge_dim_relation = 32;
  KgeTrainConfig kge;

  // [instances]
  InstanceDatasetConfig instances;
  std::string prompt_style = "plain";  // plain | cot

  // [policy]
  PolicyConfig policy;

  // [sft]
  SftConfig sft;

  // [grpo]
  GrpoConfig grpo;

  // [probe]
  int probe_hidden = 16;
  int probe_layer = 2;
  std::uint64_t probe_init_seed = 41;
  ProbeTrainConfig probe;

  // [eval]
  int eval_top_n = 15;

  // [smi]
  SmiConfig smi;
  int smi_directions = 8;  // random-direction baseline width

  // [inductive]
  std::vector<double> inductive_rhos = {0.1, 0.2, 0.4};
  std::uint64_t inductive_seed = 29;

  // [sweep]
  std::vector<int> sweep_k = {3, 4, 5, 6};
  std::vector<int> sweep_n = {1, 5, 10, 15, 20};
  std::vector<int> sweep_tier = {1, 2, 3};
};

// `[section]` headers and `key = value` rows; `#` starts a comment; later
// duplicates win. Keys are returned as "section.key".
std::map<std::string, std::string> parse_ini(const std::string& text);

// Overlays KGRKIT_<SECTION>_<KEY> environment values onto parsed entries.
void apply_env_overrides(std::map<std::string, std::string>& entries);

// Builds a RunConfig from parsed entries. Unknown keys, malformed values,
// and violated ranges are all collected and thrown together.
RunConfig config_from_entries(const std::map<std::string, std::string>& entries);

RunConfig parse_run_config(const std::string& text);  // no environment pass
RunConfig load_run_config(const std::string& path);   // file + environment

// Every key with its default and a one-line description.
std::string config_reference();

// Canonical resolved snapshot; parsing it back reproduces the config.
std::string render_config(const RunConfig& cfg);

}  // namespace kgr
