// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

namespace labelcon::cli {

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

std::string utc_timestamp();

// Everything needed to re-run a command: the fully resolved option values
// (replayable through --config), digests of inputs and outputs, seeds, and
// timing.
struct Manifest {
  std::string command;
  std::map<std::string, nlohmann::json> config;
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // path -> sha256
  std::map<std::string, std::uint64_t> seeds;
  std::string started_at;
  std::string finished_at;

  void add_input(const std::filesystem::path& path) { inputs[path.string()] = sha256_file(path); }
  void add_output(const std::filesystem::path& path) { outputs[path.string()] = sha256_file(path); }
  nlohmann::json to_json() const;
};

inline constexpr const char* kToolVersion = "0.1.0";

std::filesystem::path manifest_path(const std::filesystem::path& output);
void write_manifest(const Manifest& manifest, const std::filesystem::path& output);

}  // namespace labelcon::cli
