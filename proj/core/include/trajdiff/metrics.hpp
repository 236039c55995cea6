#pragma once

// Similarity suite comparing a generated trajectory set against a reference
// set: Density, Trip and Length errors (all JSD) and the top-n Pattern score.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "trajdiff/trajdata.hpp"

namespace trajdiff {

// Probabilities over a finite support.
struct Distribution {
  std::vector<double> p;

  [[nodiscard]] std::size_t size() const { return p.size(); }
  // Normalizes non-negative counts; an all-zero vector stays all-zero.
  static Distribution from_counts(std::span<const double> counts);
};

// 1/2 KL(P || M) + 1/2 KL(G || M), M = (P + G) / 2, with 0 log 0 = 0.
// Exactly symmetric and within [0, ln 2].
double jsd(const Distribution& p, const Distribution& g);

struct DensityStats {
  std::size_t points = 0;
  std::size_t clamped = 0;  // points outside the grid box
};

// Every point binned to its cell, normalized over all points. Throws
// ArgumentError on an empty set.
Distribution grid_density(std::span<const RawTrajectory> trajs, const GridSpec& grid, DensityStats* stats = nullptr);
Distribution origin_density(std::span<const RawTrajectory> trajs, const GridSpec& grid);
Distribution destination_density(std::span<const RawTrajectory> trajs, const GridSpec& grid);

double density_error(std::span<const RawTrajectory> gen, std::span<const RawTrajectory> real, const GridSpec& grid);

// Mean of the origin-cell and destination-cell JSDs.
double trip_error(std::span<const RawTrajectory> gen, std::span<const RawTrajectory> real, const GridSpec& grid);

inline constexpr std::size_t kDefaultLengthBins = 50;
inline constexpr std::size_t kDefaultTopN = 10;

// JSD of per-trajectory travel-distance histograms with `bins` uniform bins
// over the pooled range. When every length is identical the result is 0 and
// `degenerate` (if given) is set.
double length_error(std::span<const RawTrajectory> gen, std::span<const RawTrajectory> real,
                    std::size_t bins = kDefaultLengthBins, DistanceKind kind = DistanceKind::kHaversine,
                    bool* degenerate = nullptr);

// The n most probable nonempty cells, ties broken by lower cell index
// (row-major, so (row, col) lexicographic). Fewer are returned when fewer
// cells are nonempty.
std::vector<std::size_t> top_cells(const Distribution& density, std::size_t n);

// F1 overlap of the top-n cell sets: 2 |A & B| / (|A| + |B|).
double pattern_score(std::span<const RawTrajectory> gen, std::span<const RawTrajectory> real, const GridSpec& grid,
                     std::size_t n = kDefaultTopN);

struct MetricConfig {
  GridSpec grid;
  std::size_t top_n = kDefaultTopN;
  std::size_t length_bins = kDefaultLengthBins;
  DistanceKind distance = DistanceKind::kHaversine;
};

struct MetricReport {
  double density_error = 0.0;
  double trip_error = 0.0;
  double length_error = 0.0;
  double pattern_score = 0.0;
  MetricConfig config;
  std::size_t gen_count = 0;
  std::size_t real_count = 0;
  std::size_t gen_clamped = 0;
  std::size_t real_clamped = 0;
  std::vector<std::string> warnings;
};

MetricReport evaluate(std::span<const RawTrajectory> gen, std::span<const RawTrajectory> real,
                      const MetricConfig& config);

nlohmann::json to_json(const MetricReport& report);

}  // namespace trajdiff
