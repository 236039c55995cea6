#include "trajdiff/trajdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

#include "trajdiff/error.hpp"

namespace trajdiff {

using nlohmann::json;

namespace {

constexpr double kEarthRadiusKm = 6371.0088;

bool finite_point(const GeoPoint& p) { return std::isfinite(p.lng) && std::isfinite(p.lat); }

double axis_to_unit(double v, double lo, double hi) { return 2.0 * (v - lo) / (hi - lo) - 1.0; }
double unit_to_axis(double u, double lo, double hi) { return lo + (u + 1.0) * 0.5 * (hi - lo); }

void require_box(const BoundingBox& box, const char* what) {
  if (!box.valid() || !std::isfinite(box.lng_min) || !std::isfinite(box.lng_max) || !std::isfinite(box.lat_min) ||
      !std::isfinite(box.lat_max)) {
    throw DataError(std::string(what) + ": degenerate bounding box");
  }
}

std::size_t clamp_index(double u, std::size_t n, bool& clamped) {
  if (!(u >= 0.0)) {
    if (u < 0.0) clamped = true;
    return 0;
  }
  auto idx = static_cast<std::size_t>(std::floor(u));
  if (idx >= n) {
    // The far edge of the box belongs to the last cell.
    if (u > static_cast<double>(n)) clamped = true;
    return n - 1;
  }
  return idx;
}

}  // namespace

BoundingBox BoundingBox::expanded(double fraction) const {
  const double dl = (lng_max - lng_min) * fraction;
  const double dt = (lat_max - lat_min) * fraction;
  return {lng_min - dl, lng_max + dl, lat_min - dt, lat_max + dt};
}

BoundingBox bounding_box(std::span<const RawTrajectory> trajs) {
  BoundingBox box{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                  std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  bool any = false;
  for (const auto& t : trajs) {
    for (const auto& p : t.points) {
      box.lng_min = std::min(box.lng_min, p.lng);
      box.lng_max = std::max(box.lng_max, p.lng);
      box.lat_min = std::min(box.lat_min, p.lat);
      box.lat_max = std::max(box.lat_max, p.lat);
      any = true;
    }
  }
  if (!any) throw DataError("bounding_box: no points");
  return box;
}

std::size_t GridSpec::cell_of(const GeoPoint& p, bool* clamped) const {
  if (rows == 0 || cols == 0) throw ArgumentError("GridSpec: empty grid");
  bool c = false;
  const double u = (p.lng - box.lng_min) / (box.lng_max - box.lng_min) * static_cast<double>(cols);
  const double v = (p.lat - box.lat_min) / (box.lat_max - box.lat_min) * static_cast<double>(rows);
  const std::size_t col = clamp_index(u, cols, c);
  const std::size_t row = clamp_index(v, rows, c);
  if (clamped) *clamped = c;
  return row * cols + col;
}

// ---- dataset files ------------------------------------------------------------

json trajectory_to_json(const RawTrajectory& traj) {
  json pts = json::array();
  for (const auto& p : traj.points) pts.push_back(json::array({p.lng, p.lat}));
  json j = json::object();
  j["id"] = traj.id;
  j["points"] = std::move(pts);
  if (traj.t0) j["t0"] = *traj.t0;
  if (traj.interval_s) j["interval"] = *traj.interval_s;
  return j;
}

RawTrajectory trajectory_from_json(const json& j) {
  if (!j.is_object()) throw DataError("trajectory is not a JSON object");
  RawTrajectory t;
  auto id = j.find("id");
  if (id == j.end()) throw DataError("missing field 'id'");
  if (id->is_string()) {
    t.id = id->get<std::string>();
  } else if (id->is_number_integer()) {
    t.id = std::to_string(id->get<std::int64_t>());
  } else {
    throw DataError("field 'id' must be a string");
  }
  auto pts = j.find("points");
  if (pts == j.end() || !pts->is_array()) throw DataError("missing or non-array field 'points'");
  t.points.reserve(pts->size());
  for (std::size_t i = 0; i < pts->size(); ++i) {
    const auto& p = (*pts)[i];
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number()) {
      throw DataError("point " + std::to_string(i) + " is not a [lng, lat] pair");
    }
    GeoPoint g{p[0].get<double>(), p[1].get<double>()};
    if (!finite_point(g)) throw DataError("point " + std::to_string(i) + " is not finite");
    if (std::abs(g.lng) > 180.0 || std::abs(g.lat) > 90.0) {
      throw DataError("point " + std::to_string(i) + " is outside valid lng/lat ranges");
    }
    t.points.push_back(g);
  }
  if (t.points.size() < 2) throw DataError("trajectory has fewer than 2 points");
  if (auto t0 = j.find("t0"); t0 != j.end() && !t0->is_null()) {
    if (!t0->is_number_integer()) throw DataError("field 't0' must be an integer");
    t.t0 = t0->get<std::int64_t>();
  }
  if (auto iv = j.find("interval"); iv != j.end() && !iv->is_null()) {
    if (!iv->is_number() || !(iv->get<double>() > 0.0) || !std::isfinite(iv->get<double>())) {
      throw DataError("field 'interval' must be a positive number");
    }
    t.interval_s = iv->get<double>();
  }
  return t;
}

Dataset read_dataset(std::istream& in, const LoadOptions& options, LoadReport* report) {
  LoadReport local;
  LoadReport& rep = report ? *report : local;
  rep = LoadReport{};
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;

    json j;
    RawTrajectory traj;
    try {
      j = json::parse(line);
      if (first_content && j.is_object() && j.contains("format")) {
        first_content = false;
        if (j["format"] != kDatasetFormat) throw DataError("unknown dataset format");
        if (!j.contains("version") || j["version"] != kDatasetVersion) {
          throw DataError("unsupported dataset version");
        }
        DatasetHeader h;
        if (j.contains("bbox")) h.bbox = bbox_from_json(j["bbox"]);
        if (j.contains("meta") && j["meta"].is_object()) h.extra = j["meta"];
        ds.header = std::move(h);
        continue;
      }
      first_content = false;
      traj = trajectory_from_json(j);
    } catch (const std::exception& e) {
      std::string msg = "line " + std::to_string(line_no) + ": " + e.what();
      if (dynamic_cast<const DataError*>(&e) == nullptr && dynamic_cast<const json::exception*>(&e) == nullptr) {
        throw;
      }
      ++rep.lines;
      if (!options.skip_bad) throw DataError(msg);
      ++rep.skipped_bad;
      rep.warnings.push_back(std::move(msg));
      continue;
    }
    ++rep.lines;
    if (traj.points.size() < options.min_points) {
      ++rep.dropped_short;
      continue;
    }
    ds.trajectories.push_back(std::move(traj));
  }
  if (in.bad()) throw DataError("read error on dataset stream");
  rep.loaded = ds.trajectories.size();
  if (rep.lines == 0) rep.warnings.emplace_back("dataset is empty");
  if (rep.dropped_short > 0) {
    rep.warnings.push_back("dropped " + std::to_string(rep.dropped_short) + " trajectories with fewer than " +
                           std::to_string(options.min_points) + " points");
  }
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, const LoadOptions& options, LoadReport* report) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset '" + path.string() + "'");
  try {
    return read_dataset(in, options, report);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_dataset(std::ostream& out, const Dataset& dataset) {
  if (dataset.header) {
    json h = json::object();
    h["format"] = kDatasetFormat;
    h["version"] = kDatasetVersion;
    if (dataset.header->bbox) h["bbox"] = to_json(*dataset.header->bbox);
    if (!dataset.header->extra.empty()) h["meta"] = dataset.header->extra;
    out << h.dump() << '\n';
  }
  for (const auto& t : dataset.trajectories) out << trajectory_to_json(t).dump() << '\n';
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write dataset '" + path.string() + "'");
  write_dataset(out, dataset);
  out.flush();
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

// ---- preprocessing ------------------------------------------------------------

std::vector<GeoPoint> resample(std::span<const GeoPoint> points, std::size_t length) {
  if (points.size() < 2) throw DataError("resample: need at least 2 points");
  if (length < 2) throw ArgumentError("resample: length must be at least 2");
  const std::size_t n = points.size();
  std::vector<GeoPoint> out(length);
  const double span = static_cast<double>(n - 1);
  const double denom = static_cast<double>(length - 1);
  for (std::size_t k = 0; k < length; ++k) {
    const double u = static_cast<double>(k) * span / denom;
    auto i = static_cast<std::size_t>(std::floor(u));
    if (i >= n - 1) {
      out[k] = points[n - 1];
      continue;
    }
    const double f = u - static_cast<double>(i);
    if (f == 0.0) {
      out[k] = points[i];
    } else {
      out[k] = {points[i].lng + f * (points[i + 1].lng - points[i].lng),
                points[i].lat + f * (points[i + 1].lat - points[i].lat)};
    }
  }
  out.front() = points.front();
  out.back() = points.back();
  return out;
}

GeoPoint normalize_point(const GeoPoint& p, const BoundingBox& box) {
  require_box(box, "normalize");
  return {axis_to_unit(p.lng, box.lng_min, box.lng_max), axis_to_unit(p.lat, box.lat_min, box.lat_max)};
}

GeoPoint denormalize_point(const GeoPoint& p, const BoundingBox& box) {
  require_box(box, "denormalize");
  return {unit_to_axis(p.lng, box.lng_min, box.lng_max), unit_to_axis(p.lat, box.lat_min, box.lat_max)};
}

Tensor normalize(std::span<const RawTrajectory> trajs, const NormStats& stats, std::size_t length) {
  require_box(stats.box, "normalize");
  std::vector<float> data(trajs.size() * 2 * length);
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto pts = resample(trajs[i].points, length);
    float* lng = data.data() + i * 2 * length;
    float* lat = lng + length;
    for (std::size_t k = 0; k < length; ++k) {
      const GeoPoint q = normalize_point(pts[k], stats.box);
      lng[k] = static_cast<float>(q.lng);
      lat[k] = static_cast<float>(q.lat);
    }
  }
  return Tensor::from({trajs.size(), 2, length}, std::move(data));
}

std::vector<GeoPoint> denormalize(const Tensor& batch, std::size_t index, const NormStats& stats) {
  if (batch.rank() != 3 || batch.dim(1) != 2) throw ShapeError("denormalize: expected [N, 2, L], got " + shape_str(batch.shape()));
  if (index >= batch.dim(0)) throw ArgumentError("denormalize: index out of range");
  const std::size_t length = batch.dim(2);
  const float* lng = batch.data().data() + index * 2 * length;
  const float* lat = lng + length;
  std::vector<GeoPoint> out(length);
  for (std::size_t k = 0; k < length; ++k) out[k] = denormalize_point({lng[k], lat[k]}, stats.box);
  return out;
}

// ---- attributes ------------------------------------------------------------------

double haversine_km(const GeoPoint& a, const GeoPoint& b) {
  constexpr double kRad = std::numbers::pi / 180.0;
  const double phi1 = a.lat * kRad;
  const double phi2 = b.lat * kRad;
  const double dphi = (b.lat - a.lat) * kRad;
  const double dlmb = (b.lng - a.lng) * kRad;
  const double s1 = std::sin(dphi * 0.5);
  const double s2 = std::sin(dlmb * 0.5);
  const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

double travel_distance(std::span<const GeoPoint> points, DistanceKind kind) {
  double total = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (kind == DistanceKind::kHaversine) {
      total += haversine_km(points[i - 1], points[i]);
    } else {
      total += std::hypot(points[i].lng - points[i - 1].lng, points[i].lat - points[i - 1].lat);
    }
  }
  return total;
}

int departure_slot(std::int64_t epoch_seconds) {
  std::int64_t sod = epoch_seconds % 86400;
  if (sod < 0) sod += 86400;
  return static_cast<int>(sod / 300);
}

TripAttributes trip_attributes(const RawTrajectory& traj, const GridSpec& grid, const AttributeOptions& options) {
  if (traj.points.size() < 2) throw DataError("trajectory '" + traj.id + "' has fewer than 2 points");
  if (options.require_departure && !traj.t0) {
    throw DataError("trajectory '" + traj.id + "' has no departure time");
  }
  TripAttributes a;
  const double n = static_cast<double>(traj.points.size());
  const double dist = travel_distance(traj.points, options.distance);
  a.numeric[0] = dist;
  a.numeric[1] = dist / (n - 1.0);
  a.numeric[2] = traj.interval_s ? *traj.interval_s * (n - 1.0) : 0.0;
  a.numeric[3] = n;
  a.departure_slot = traj.t0 ? departure_slot(*traj.t0) : 0;
  a.origin_cell = static_cast<int>(grid.cell_of(traj.points.front()));
  a.destination_cell = static_cast<int>(grid.cell_of(traj.points.back()));
  return a;
}

NormStats compute_norm_stats(std::span<const RawTrajectory> trajs, const BoundingBox& box, const GridSpec& grid,
                             const AttributeOptions& options) {
  require_box(box, "compute_norm_stats");
  NormStats s;
  s.box = box;
  if (trajs.empty()) return s;
  std::array<double, kNumericAttributes> sum{};
  std::array<double, kNumericAttributes> sq{};
  std::vector<TripAttributes> attrs;
  attrs.reserve(trajs.size());
  for (const auto& t : trajs) attrs.push_back(trip_attributes(t, grid, options));
  const double n = static_cast<double>(attrs.size());
  for (const auto& a : attrs) {
    for (std::size_t k = 0; k < kNumericAttributes; ++k) sum[k] += a.numeric[k];
  }
  for (std::size_t k = 0; k < kNumericAttributes; ++k) s.attr_mean[k] = sum[k] / n;
  for (const auto& a : attrs) {
    for (std::size_t k = 0; k < kNumericAttributes; ++k) {
      const double d = a.numeric[k] - s.attr_mean[k];
      sq[k] += d * d;
    }
  }
  for (std::size_t k = 0; k < kNumericAttributes; ++k) {
    const double sd = std::sqrt(sq[k] / n);
    s.attr_std[k] = (sd > 0.0 && std::isfinite(sd)) ? sd : 1.0;
  }
  return s;
}

ConditionVector extract_attributes(const RawTrajectory& traj, const GridSpec& grid, const NormStats& stats,
                                   const AttributeOptions& options) {
  const TripAttributes a = trip_attributes(traj, grid, options);
  ConditionVector c;
  for (std::size_t k = 0; k < kNumericAttributes; ++k) {
    if (!(stats.attr_std[k] > 0.0)) throw DataError("extract_attributes: non-positive attribute std");
    c.numeric[k] = static_cast<float>((a.numeric[k] - stats.attr_mean[k]) / stats.attr_std[k]);
  }
  c.departure_slot = a.departure_slot;
  c.origin_cell = a.origin_cell;
  c.destination_cell = a.destination_cell;
  return c;
}

// ---- reference perturbers -----------------------------------------------------------

RawTrajectory perturb_random(const RawTrajectory& traj, double radius, RngStream& rng) {
  if (!(radius >= 0.0)) throw ArgumentError("perturb_random: radius must be >= 0");
  RawTrajectory out = traj;
  if (radius == 0.0) return out;
  for (auto& p : out.points) {
    p.lng += rng.uniform(-radius, radius);
    p.lat += rng.uniform(-radius, radius);
  }
  return out;
}

RawTrajectory perturb_gaussian(const RawTrajectory& traj, double sigma, RngStream& rng) {
  if (!(sigma >= 0.0)) throw ArgumentError("perturb_gaussian: sigma must be >= 0");
  RawTrajectory out = traj;
  if (sigma == 0.0) return out;
  for (auto& p : out.points) {
    p.lng += sigma * rng.normal();
    p.lat += sigma * rng.normal();
  }
  return out;
}

// ---- json helpers -------------------------------------------------------------------

json to_json(const BoundingBox& box) {
  return json{{"lng_min", box.lng_min}, {"lng_max", box.lng_max}, {"lat_min", box.lat_min}, {"lat_max", box.lat_max}};
}

BoundingBox bbox_from_json(const json& j) {
  try {
    BoundingBox b{j.at("lng_min").get<double>(), j.at("lng_max").get<double>(), j.at("lat_min").get<double>(),
                  j.at("lat_max").get<double>()};
    require_box(b, "bbox");
    return b;
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid bbox: ") + e.what());
  }
}

json to_json(const GridSpec& grid) {
  return json{{"bbox", to_json(grid.box)}, {"rows", grid.rows}, {"cols", grid.cols}};
}

GridSpec grid_from_json(const json& j) {
  try {
    GridSpec g;
    g.box = bbox_from_json(j.at("bbox"));
    g.rows = j.at("rows").get<std::size_t>();
    g.cols = j.at("cols").get<std::size_t>();
    if (g.rows == 0 || g.cols == 0) throw DataError("grid must have at least one row and column");
    return g;
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid grid: ") + e.what());
  }
}

json to_json(const NormStats& stats) {
  return json{{"bbox", to_json(stats.box)},
              {"attr_mean", std::vector<double>(stats.attr_mean.begin(), stats.attr_mean.end())},
              {"attr_std", std::vector<double>(stats.attr_std.begin(), stats.attr_std.end())}};
}

NormStats norm_stats_from_json(const json& j) {
  try {
    NormStats s;
    s.box = bbox_from_json(j.at("bbox"));
    const auto mean = j.at("attr_mean").get<std::vector<double>>();
    const auto sd = j.at("attr_std").get<std::vector<double>>();
    if (mean.size() != kNumericAttributes || sd.size() != kNumericAttributes) {
      throw DataError("norm stats: wrong attribute count");
    }
    for (std::size_t k = 0; k < kNumericAttributes; ++k) {
      if (!(sd[k] > 0.0)) throw DataError("norm stats: non-positive std");
      s.attr_mean[k] = mean[k];
      s.attr_std[k] = sd[k];
    }
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid norm stats: ") + e.what());
  }
}

}  // namespace trajdiff
