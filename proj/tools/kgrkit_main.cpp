// kgrkit: run the workbench stages over a run directory.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kgr/pipeline.hpp"

namespace {

void print_usage(std::ostream& out) {
  out << "usage: kgrkit <command> [flags]\n"
         "\n"
         "commands:\n"
         "  pipeline             run every stage in order\n"
         "  <stage>              run one stage:\n"
         "                       ";
  const auto& names = kgr::Pipeline::stage_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    out << names[i];
    if (i + 1 < names.size()) out << (i % 5 == 4 ? ",\n                       " : ", ");
  }
  out << "\n"
         "  sweep k|n|tier       shorthand for the sweep-* stages\n"
         "  config show          print the resolved configuration\n"
         "  config reference     print every key with its default and doc line\n"
         "\n"
         "flags:\n"
         "  --config PATH        read settings from an INI file\n"
         "  --out DIR            run directory (default runs/default)\n"
         "  --seed N             master seed; unset module seeds derive from it\n"
         "  --jobs N             worker threads where a stage supports them\n"
         "  --deterministic      single-threaded, byte-reproducible artifacts\n"
         "  --force              rerun stages even when artifacts are current\n"
         "\n"
         "environment: KGRKIT_<SECTION>_<KEY> overrides a file key, e.g.\n"
         "KGRKIT_KGE_EPOCHS=50. Flags outrank the environment.\n";
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void print_outcome(const kgr::StageOutcome& o) {
  if (o.skipped) {
    std::cout << "[" << o.stage << "] up to date\n";
    return;
  }
  std::cout << "[" << o.stage << "] " << o.seconds << "s";
  for (const auto& rel : o.artifacts) std::cout << " " << rel;
  std::cout << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::vector<std::string> words;
  std::string config_path;
  std::map<std::string, std::string> overrides;
  bool force = false;

  const auto take_value = [&](std::size_t& i, const std::string& flag) -> std::string {
    if (i + 1 >= args.size()) {
      throw std::runtime_error(flag + " needs a value");
    }
    return args[++i];
  };

  try {
    for (std::size_t i = 0; i < args.size(); ++i) {
      const auto& a = args[i];
      if (a == "--help" || a == "-h") {
        print_usage(std::cout);
        return 0;
      } else if (a == "--config") {
        config_path = take_value(i, a);
      } else if (a == "--out") {
        overrides["run.out"] = take_value(i, a);
      } else if (a == "--seed") {
        overrides["run.seed"] = take_value(i, a);
      } else if (a == "--jobs") {
        overrides["run.jobs"] = take_value(i, a);
      } else if (a == "--deterministic") {
        overrides["run.deterministic"] = "true";
      } else if (a == "--force") {
        force = true;
      } else if (a.rfind("--", 0) == 0) {
        std::cerr << "kgrkit: unknown flag '" << a << "'\n\n";
        print_usage(std::cerr);
        return 2;
      } else {
        words.push_back(a);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "kgrkit: " << e.what() << "\n";
    return 2;
  }

  if (words.empty()) {
    print_usage(std::cerr);
    return 2;
  }

  if (words[0] == "config" && words.size() == 2 && words[1] == "reference") {
    std::cout << kgr::config_reference();
    return 0;
  }

  try {
    std::map<std::string, std::string> entries;
    if (!config_path.empty()) entries = kgr::parse_ini(read_file(config_path));
    kgr::apply_env_overrides(entries);
    for (const auto& [k, v] : overrides) entries[k] = v;
    const kgr::RunConfig cfg = kgr::config_from_entries(entries);

    if (words[0] == "config") {
      if (words.size() == 2 && words[1] == "show") {
        std::cout << kgr::render_config(cfg);
        return 0;
      }
      std::cerr << "kgrkit: expected `config show` or `config reference`\n";
      return 2;
    }

    std::string stage;
    if (words[0] == "pipeline" && words.size() == 1) {
      kgr::Pipeline pipe(cfg);
      for (const auto& outcome : pipe.run_all(force)) print_outcome(outcome);
      return 0;
    }
    if (words[0] == "sweep" && words.size() == 2) {
      stage = "sweep-" + words[1];
    } else if (words.size() == 1) {
      stage = words[0];
    }
    const auto& names = kgr::Pipeline::stage_names();
    if (stage.empty() || std::find(names.begin(), names.end(), stage) == names.end()) {
      std::cerr << "kgrkit: unknown command";
      for (const auto& w : words) std::cerr << " '" << w << "'";
      std::cerr << "\n\n";
      print_usage(std::cerr);
      return 2;
    }
    kgr::Pipeline pipe(cfg);
    print_outcome(pipe.run(stage, force));
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "kgrkit: " << e.what() << "\n";
    return 1;
  }
}
