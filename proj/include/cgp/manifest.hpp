#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cgp/version.hpp"

namespace cgp {

// Record of a CLI run: the subcommand, every option with defaults
// materialized, and the input/output paths. Written before any long
// computation; re-running the same command with these options reproduces the
// run exactly. Keys are emitted sorted and no timestamps are included, so
// identical runs produce identical manifests.
struct RunManifest {
  std::string command;
  nlohmann::json options = nlohmann::json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  void write(const std::string& path) const {
    nlohmann::json j;
    j["tool"] = "cgp";
    j["version"] = kVersion;
    j["command"] = command;
    j["options"] = options;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("RunManifest: cannot open " + path);
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("RunManifest: write failed for " + path);
  }
};

}  // namespace cgp
