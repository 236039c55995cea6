#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace trajdiff::cli {

// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

struct RunManifest {
  std::string command;
  nlohmann::json flags = nlohmann::json::object();  // resolved settings
  std::uint64_t seed = 0;
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;
  double wall_time_s = 0.0;
  nlohmann::json extra = nlohmann::json::object();
};

nlohmann::json to_json(const RunManifest& manifest);
void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);

// "<output>.manifest.json" next to the primary output.
std::filesystem::path manifest_path_for(const std::filesystem::path& output);

}  // namespace trajdiff::cli
