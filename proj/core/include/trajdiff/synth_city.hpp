#pragma once

// Synthetic Manhattan-lattice city used as the desk-scale dataset.

#include <cstddef>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajdiff/trajdata.hpp"

namespace trajdiff {

struct CitySpec {
  BoundingBox box{104.00, 104.16, 30.60, 30.76};
  std::size_t grid = 16;          // cells per axis of the evaluation grid
  std::size_t lattice = 5;        // streets per axis
  double jitter_deg = 1e-4;       // GPS noise, per coordinate
  double interval_s = 15.0;
  std::size_t min_points = 120;
  std::size_t max_points = 240;
  double center_bias = 1.0;       // 0 = uniform O/D intersections
  std::int64_t epoch_start = 1541030400;  // 2018-11-01T00:00:00Z
  std::int64_t epoch_days = 30;

  // Throws ArgumentError when no valid trajectory can be generated.
  void validate() const;

  [[nodiscard]] GridSpec grid_spec() const { return {box, grid, grid}; }
  // Street centre lines: longitudes of north-south streets, latitudes of
  // east-west streets. Each lies at the centre of a grid cell.
  [[nodiscard]] std::vector<double> street_lngs() const;
  [[nodiscard]] std::vector<double> street_lats() const;
  // True when a grid cell lies on a street.
  [[nodiscard]] bool is_street_cell(std::size_t cell) const;
};

nlohmann::json to_json(const CitySpec& spec);
// Missing keys keep their defaults.
CitySpec city_spec_from_json(const nlohmann::json& j);

// n trajectories between random lattice intersections (horizontal leg first),
// n points each drawn uniformly from [min_points, max_points], spread evenly
// by arc length with Gaussian jitter. Deterministic per seed.
Dataset synth_city(std::uint64_t seed, std::size_t n, const CitySpec& spec = {});

}  // namespace trajdiff
