#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kgr/config.hpp"

namespace kgr {

// Stage orchestration over a run directory. Every stage reads upstream
// artifacts from disk, writes its own, and records them in a manifest with
// checksums, so completed stages are skipped until --force and missing
// dependencies name the command that produces them.

struct StageOutcome {
  std::string stage;
  bool skipped = false;  // artifacts already current, nothing rewritten
  double seconds = 0.0;
  std::vector<std::string> artifacts;  // run-relative paths
};

std::uint64_t fnv1a_file(const std::string& path);  // throws when unreadable

class Pipeline {
 public:
  explicit Pipeline(const RunConfig& cfg);

  // ingest, train-kge, build-instances, sft, grpo, extract-reps,
  // train-probe, eval-lp, eval-tc, smi, layer-sweep, inductive,
  // sweep-k, sweep-n, sweep-tier
  static const std::vector<std::string>& stage_names();
  static const std::vector<std::string>& stage_dependencies(const std::string& stage);

  StageOutcome run(const std::string& stage, bool force = false);
  // Every stage in declaration order.
  std::vector<StageOutcome> run_all(bool force = false);

  bool stage_current(const std::string& stage) const;
  std::string artifact_path(const std::string& rel) const;  // under run.out
  const RunConfig& config() const { return cfg_; }

 private:
  struct StageEntry {
    double seconds = 0.0;
    std::map<std::string, std::string> artifacts;  // rel path -> checksum hex
  };

  void load_manifest();
  void write_manifest() const;
  void require_dependencies(const std::string& stage) const;
  std::vector<std::string> execute(const std::string& stage);

  RunConfig cfg_;
  std::map<std::string, StageEntry> manifest_;
};

}  // namespace kgr
