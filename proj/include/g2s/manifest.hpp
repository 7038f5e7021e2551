#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "g2s/config.hpp"
#include "g2s/version.hpp"

namespace g2s {

// Provenance record written next to every produced artifact: inputs are
// digested so a run can be verified and reproduced from the manifest alone.
struct RunManifest {
  std::string command;
  std::map<std::string, std::string> args;
  std::string config_digest;
  uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  void write(const std::string& path) const {
    nlohmann::json j;
    j["tool_version"] = kVersion;
    j["command"] = command;
    j["args"] = args;
    if (!config_digest.empty()) j["config_digest"] = config_digest;
    j["seed"] = seed;
    auto ins = nlohmann::json::array();
    for (const auto& p : inputs) ins.push_back({{"path", p}, {"fnv1a64", fnv1a64_file(p)}});
    j["inputs"] = ins;
    j["outputs"] = outputs;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest " + path);
    out << j.dump(2) << "\n";
  }
};

}  // namespace g2s
