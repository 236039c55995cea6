#pragma once

// Binary checkpoint: "TDCK1", uint64 LE header length, JSON header, then the
// parameter arrays as little-endian float32, each named in the header with
// its shape and byte offset.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "trajdiff/schedule.hpp"
#include "trajdiff/trajdata.hpp"
#include "trajdiff/traj_unet.hpp"

namespace trajdiff::cli {

inline constexpr std::string_view kCheckpointMagic = "TDCK1";
inline constexpr int kCheckpointSchema = 1;

struct ScheduleParams {
  std::size_t steps = 100;
  double beta_start = 5e-4;
  double beta_end = 0.25;

  [[nodiscard]] NoiseSchedule build() const { return NoiseSchedule::linear(steps, beta_start, beta_end); }
};

struct CheckpointMeta {
  TrajUNetConfig model;
  ScheduleParams schedule;
  NormStats norm;
  GridSpec grid;
  AttributeOptions attributes;
  std::size_t train_steps = 0;
  std::uint64_t seed = 0;
};

struct LoadedCheckpoint {
  CheckpointMeta meta;
  ParamStore params;
};

std::string encode_checkpoint(const CheckpointMeta& meta, const ParamStore& params);
// Throws DataError on bad magic, schema mismatch, truncation or any
// inconsistency between header and payload.
LoadedCheckpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta, const ParamStore& params);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Rebuilds the model from a checkpoint and copies in its parameters.
TrajUNet restore_model(const LoadedCheckpoint& ckpt);

std::string distance_name(DistanceKind kind);
DistanceKind parse_distance(const std::string& name);

nlohmann::json to_json(const TrajUNetConfig& config);
TrajUNetConfig unet_config_from_json(const nlohmann::json& j);

}  // namespace trajdiff::cli
