#pragma once
// Run manifest: everything needed to replay a training or evaluation run —
// config snapshot, input digests (recorded before work starts), seed, tool
// version and output paths.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "matadapt/embedding.hpp"
#include "matadapt/rng.hpp"
#include "matadapt/version.hpp"

namespace matadapt {

inline std::string file_digest(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file_bytes(path);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return std::string(buf);
}

struct RunManifest {
  nlohmann::json config;
  std::map<std::string, std::string> inputs;  // path -> digest
  std::uint64_t seed = 0;
  std::string tool_version = kVersion;
  std::vector<std::string> outputs;

  void add_input(const std::filesystem::path& path) { inputs[path.string()] = file_digest(path); }
};

inline void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
  nlohmann::json j{{"config", m.config},
                   {"inputs", m.inputs},
                   {"seed", m.seed},
                   {"tool_version", m.tool_version},
                   {"outputs", m.outputs}};
  detail::write_file_bytes(path, j.dump(2) + "\n");
}

}  // namespace matadapt
