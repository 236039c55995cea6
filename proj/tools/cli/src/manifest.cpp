#include "trajdiff/cli/manifest.hpp"

#include <array>
#include <cstdio>
#include <fstream>

#include "trajdiff/error.hpp"
#include "trajdiff/version.hpp"

namespace trajdiff::cli {

using nlohmann::json;

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "' for hashing");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    const auto got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[static_cast<std::size_t>(i)]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

json to_json(const RunManifest& m) {
  json inputs = json::array();
  for (const auto& p : m.inputs) inputs.push_back(json{{"path", p.string()}, {"fnv1a64", file_hash(p)}});
  json outputs = json::array();
  for (const auto& p : m.outputs) outputs.push_back(p.string());
  return json{{"toolkit", "trajdiff"}, {"version", kVersion}, {"command", m.command},
              {"flags", m.flags},      {"seed", m.seed},      {"inputs", std::move(inputs)},
              {"outputs", std::move(outputs)}, {"wall_time_s", m.wall_time_s}, {"extra", m.extra}};
}

void write_manifest(const std::filesystem::path& path, const RunManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest '" + path.string() + "'");
  out << to_json(manifest).dump(2) << '\n';
}

std::filesystem::path manifest_path_for(const std::filesystem::path& output) {
  return std::filesystem::path(output.string() + ".manifest.json");
}

}  // namespace trajdiff::cli
