#include "trajdiff/cli/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "trajdiff/error.hpp"

namespace trajdiff::cli {

using nlohmann::json;

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(std::string_view bytes, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  return v;
}

void put_f32(std::string& out, float f) {
  const auto u = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

float get_f32(const char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(u);
}

}  // namespace

std::string distance_name(DistanceKind kind) {
  return kind == DistanceKind::kHaversine ? "haversine" : "euclidean";
}

DistanceKind parse_distance(const std::string& name) {
  if (name == "haversine") return DistanceKind::kHaversine;
  if (name == "euclidean") return DistanceKind::kEuclideanDegrees;
  throw ArgumentError("unknown distance '" + name + "' (expected haversine or euclidean)");
}

json to_json(const TrajUNetConfig& c) {
  return json{{"in_channels", c.in_channels},
              {"length", c.length},
              {"base_channels", c.base_channels},
              {"channel_multipliers", c.channel_multipliers},
              {"resnet_blocks", c.resnet_blocks},
              {"attention", c.attention},
              {"time_embed_dim", c.time_embed_dim},
              {"cond_embed_dim", c.cond_embed_dim},
              {"norm_groups", c.norm_groups},
              {"numeric_mask", c.numeric_mask},
              {"departure_slots", c.departure_slots},
              {"grid_cells", c.grid_cells}};
}

TrajUNetConfig unet_config_from_json(const json& j) {
  try {
    TrajUNetConfig c;
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.length = j.at("length").get<std::size_t>();
    c.base_channels = j.at("base_channels").get<std::size_t>();
    c.channel_multipliers = j.at("channel_multipliers").get<std::vector<std::size_t>>();
    c.resnet_blocks = j.at("resnet_blocks").get<std::size_t>();
    c.attention = j.at("attention").get<bool>();
    c.time_embed_dim = j.at("time_embed_dim").get<std::size_t>();
    c.cond_embed_dim = j.at("cond_embed_dim").get<std::size_t>();
    c.norm_groups = j.at("norm_groups").get<std::size_t>();
    c.numeric_mask = j.at("numeric_mask").get<std::uint32_t>();
    c.departure_slots = j.at("departure_slots").get<std::size_t>();
    c.grid_cells = j.at("grid_cells").get<std::size_t>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid model config: ") + e.what());
  } catch (const ArgumentError& e) {
    throw DataError(std::string("invalid model config: ") + e.what());
  }
}

std::string encode_checkpoint(const CheckpointMeta& meta, const ParamStore& params) {
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& e : params.entries()) {
    const std::uint64_t size = e.tensor.numel() * sizeof(float);
    tensors.push_back(json{{"name", e.name}, {"shape", e.tensor.shape()}, {"offset", offset}, {"size", size}});
    offset += size;
  }
  const json header{{"schema_version", kCheckpointSchema},
                    {"model", to_json(meta.model)},
                    {"schedule",
                     {{"kind", "linear"},
                      {"steps", meta.schedule.steps},
                      {"beta_start", meta.schedule.beta_start},
                      {"beta_end", meta.schedule.beta_end}}},
                    {"norm", trajdiff::to_json(meta.norm)},
                    {"grid", trajdiff::to_json(meta.grid)},
                    {"attributes",
                     {{"distance", distance_name(meta.attributes.distance)},
                      {"require_departure", meta.attributes.require_departure}}},
                    {"train_steps", meta.train_steps},
                    {"seed", meta.seed},
                    {"payload_bytes", offset},
                    {"tensors", std::move(tensors)}};
  const std::string text = header.dump();

  std::string out;
  out.reserve(kCheckpointMagic.size() + 8 + text.size() + offset);
  out.append(kCheckpointMagic);
  put_u64(out, text.size());
  out.append(text);
  for (const auto& e : params.entries()) {
    for (float f : e.tensor.data()) put_f32(out, f);
  }
  return out;
}

LoadedCheckpoint decode_checkpoint(std::string_view bytes) {
  const std::size_t prefix = kCheckpointMagic.size() + 8;
  if (bytes.size() < prefix || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw DataError("not a trajdiff checkpoint (bad magic)");
  }
  const std::uint64_t header_len = get_u64(bytes, kCheckpointMagic.size());
  if (header_len > bytes.size() - prefix) throw DataError("checkpoint truncated inside the header");

  json header;
  try {
    header = json::parse(bytes.substr(prefix, header_len));
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  const std::string_view payload = bytes.substr(prefix + header_len);

  LoadedCheckpoint out;
  try {
    const int schema = header.at("schema_version").get<int>();
    if (schema != kCheckpointSchema) {
      throw DataError("checkpoint schema version " + std::to_string(schema) + " is not supported (expected " +
                      std::to_string(kCheckpointSchema) + ")");
    }
    out.meta.model = unet_config_from_json(header.at("model"));
    const auto& s = header.at("schedule");
    if (s.at("kind").get<std::string>() != "linear") throw DataError("unknown schedule kind");
    out.meta.schedule.steps = s.at("steps").get<std::size_t>();
    out.meta.schedule.beta_start = s.at("beta_start").get<double>();
    out.meta.schedule.beta_end = s.at("beta_end").get<double>();
    out.meta.norm = norm_stats_from_json(header.at("norm"));
    out.meta.grid = grid_from_json(header.at("grid"));
    const auto& a = header.at("attributes");
    out.meta.attributes.distance = parse_distance(a.at("distance").get<std::string>());
    out.meta.attributes.require_departure = a.at("require_departure").get<bool>();
    out.meta.train_steps = header.at("train_steps").get<std::size_t>();
    out.meta.seed = header.at("seed").get<std::uint64_t>();

    const auto payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
    if (payload.size() < payload_bytes) {
      throw DataError("checkpoint payload truncated: " + std::to_string(payload.size()) + " of " +
                      std::to_string(payload_bytes) + " bytes");
    }
    if (payload.size() > payload_bytes) throw DataError("checkpoint has trailing bytes after the payload");

    std::uint64_t expected_offset = 0;
    for (const auto& t : header.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<Shape>();
      const auto offset = t.at("offset").get<std::uint64_t>();
      const auto size = t.at("size").get<std::uint64_t>();
      if (offset != expected_offset || size != shape_numel(shape) * sizeof(float) || offset + size > payload.size()) {
        throw DataError("checkpoint tensor '" + name + "' has an inconsistent offset or size");
      }
      std::vector<float> values(shape_numel(shape));
      for (std::size_t i = 0; i < values.size(); ++i) values[i] = get_f32(payload.data() + offset + 4 * i);
      out.params.add(name, Tensor::from(shape, std::move(values)));
      expected_offset = offset + size;
    }
    if (expected_offset != payload_bytes) throw DataError("checkpoint tensors do not cover the payload");
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint header is malformed: ") + e.what());
  } catch (const ArgumentError& e) {
    throw DataError(std::string("checkpoint header is malformed: ") + e.what());
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointMeta& meta, const ParamStore& params) {
  const std::string bytes = encode_checkpoint(meta, params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

TrajUNet restore_model(const LoadedCheckpoint& ckpt) {
  TrajUNet model(ckpt.meta.model, ckpt.meta.seed);
  model.load_params(ckpt.params);
  return model;
}

}  // namespace trajdiff::cli
