#pragma once

// Trajectory ingestion, fixed-length resampling, coordinate normalization,
// condition-attribute extraction and the RP/GP reference perturbers.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajdiff/condition.hpp"
#include "trajdiff/rng.hpp"
#include "trajdiff/tensor.hpp"

namespace trajdiff {

struct GeoPoint {
  double lng = 0.0;
  double lat = 0.0;

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

struct RawTrajectory {
  std::string id;
  std::vector<GeoPoint> points;
  std::optional<std::int64_t> t0;       // departure, epoch seconds (UTC)
  std::optional<double> interval_s;     // sampling interval between points

  friend bool operator==(const RawTrajectory&, const RawTrajectory&) = default;
};

struct BoundingBox {
  double lng_min = 0.0;
  double lng_max = 0.0;
  double lat_min = 0.0;
  double lat_max = 0.0;

  [[nodiscard]] bool contains(const GeoPoint& p) const {
    return p.lng >= lng_min && p.lng <= lng_max && p.lat >= lat_min && p.lat <= lat_max;
  }
  [[nodiscard]] bool valid() const { return lng_max > lng_min && lat_max > lat_min; }
  [[nodiscard]] BoundingBox expanded(double fraction) const;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

// Smallest box holding every point; throws DataError on an empty set.
BoundingBox bounding_box(std::span<const RawTrajectory> trajs);

// rows x cols partition of a box. Row 0 is the southern edge, column 0 the
// western edge; cells are numbered row * cols + col.
struct GridSpec {
  BoundingBox box;
  std::size_t rows = 16;
  std::size_t cols = 16;

  [[nodiscard]] std::size_t cells() const { return rows * cols; }
  // Points outside the box are clamped into the nearest boundary cell;
  // `clamped` (when given) is set accordingly.
  [[nodiscard]] std::size_t cell_of(const GeoPoint& p, bool* clamped = nullptr) const;
  [[nodiscard]] std::size_t row_of(std::size_t cell) const { return cell / cols; }
  [[nodiscard]] std::size_t col_of(std::size_t cell) const { return cell % cols; }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

// Coordinate box plus z-score statistics for the numeric attributes.
struct NormStats {
  BoundingBox box;
  std::array<double, kNumericAttributes> attr_mean{};
  std::array<double, kNumericAttributes> attr_std{1.0, 1.0, 1.0, 1.0};

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

// ---- dataset files ------------------------------------------------------------

inline constexpr const char* kDatasetFormat = "trajdiff-jsonl";
inline constexpr int kDatasetVersion = 1;

// Optional first line of a dataset file.
struct DatasetHeader {
  std::optional<BoundingBox> bbox;
  nlohmann::json extra = nlohmann::json::object();  // free-form metadata
};

struct Dataset {
  std::optional<DatasetHeader> header;
  std::vector<RawTrajectory> trajectories;
};

struct LoadOptions {
  std::size_t min_points = 120;
  bool skip_bad = false;
};

struct LoadReport {
  std::size_t lines = 0;          // non-blank lines, header excluded
  std::size_t loaded = 0;
  std::size_t dropped_short = 0;
  std::size_t skipped_bad = 0;
  std::vector<std::string> warnings;
};

Dataset read_dataset(std::istream& in, const LoadOptions& options = {}, LoadReport* report = nullptr);
Dataset load_dataset(const std::filesystem::path& path, const LoadOptions& options = {}, LoadReport* report = nullptr);
void write_dataset(std::ostream& out, const Dataset& dataset);
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);

nlohmann::json trajectory_to_json(const RawTrajectory& traj);
// Throws DataError describing the first problem found.
RawTrajectory trajectory_from_json(const nlohmann::json& j);

// ---- preprocessing ------------------------------------------------------------

// Exactly `length` points, linearly interpolated at uniform positions of the
// cumulative point index; endpoints are preserved.
std::vector<GeoPoint> resample(std::span<const GeoPoint> points, std::size_t length);

// Affine map of the box onto [-1, 1] per axis, and its inverse.
GeoPoint normalize_point(const GeoPoint& p, const BoundingBox& box);
GeoPoint denormalize_point(const GeoPoint& p, const BoundingBox& box);

// Resamples each trajectory to `length` and stacks them as [N, 2, length]
// (channel 0 longitude, channel 1 latitude) in normalized coordinates.
Tensor normalize(std::span<const RawTrajectory> trajs, const NormStats& stats, std::size_t length);

// Inverse of normalize for one sample of a [N, 2, L] tensor.
std::vector<GeoPoint> denormalize(const Tensor& batch, std::size_t index, const NormStats& stats);

// ---- attributes ------------------------------------------------------------------

enum class DistanceKind { kHaversine, kEuclideanDegrees };

double haversine_km(const GeoPoint& a, const GeoPoint& b);
double travel_distance(std::span<const GeoPoint> points, DistanceKind kind = DistanceKind::kHaversine);

// 5-minute bucket of the time of day, in [0, 288).
int departure_slot(std::int64_t epoch_seconds);

// Un-normalized attributes in ConditionVector order.
struct TripAttributes {
  std::array<double, kNumericAttributes> numeric{};
  int departure_slot = 0;
  int origin_cell = 0;
  int destination_cell = 0;
};

struct AttributeOptions {
  DistanceKind distance = DistanceKind::kHaversine;
  bool require_departure = true;
};

TripAttributes trip_attributes(const RawTrajectory& traj, const GridSpec& grid, const AttributeOptions& options = {});

// Attribute means/stds over a training split; a zero std is replaced by 1.
NormStats compute_norm_stats(std::span<const RawTrajectory> trajs, const BoundingBox& box,
                             const GridSpec& grid, const AttributeOptions& options = {});

ConditionVector extract_attributes(const RawTrajectory& traj, const GridSpec& grid, const NormStats& stats,
                                   const AttributeOptions& options = {});

// ---- reference perturbers -----------------------------------------------------------

inline constexpr double kDefaultRandomRadius = 0.01;
inline constexpr double kDefaultGaussianSigma = 0.01;

// Independent uniform offsets in [-radius, radius] degrees per coordinate.
RawTrajectory perturb_random(const RawTrajectory& traj, double radius, RngStream& rng);
// Independent N(0, sigma^2) offsets in degrees per coordinate.
RawTrajectory perturb_gaussian(const RawTrajectory& traj, double sigma, RngStream& rng);

// ---- json helpers -------------------------------------------------------------------

nlohmann::json to_json(const BoundingBox& box);
BoundingBox bbox_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GridSpec& grid);
GridSpec grid_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NormStats& stats);
NormStats norm_stats_from_json(const nlohmann::json& j);

}  // namespace trajdiff
