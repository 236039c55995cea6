#include "trajdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "trajdiff/error.hpp"
#include "trajdiff/version.hpp"

namespace trajdiff {

using nlohmann::json;

namespace {

void require_nonempty(std::span<const RawTrajectory> trajs, const char* what) {
  if (trajs.empty()) throw ArgumentError(std::string(what) + ": empty trajectory set");
}

Distribution endpoint_density(std::span<const RawTrajectory> trajs, const GridSpec& grid, bool origin) {
  require_nonempty(trajs, origin ? "origin_density" : "destination_density");
  std::vector<double> counts(grid.cells(), 0.0);
  for (const auto& t : trajs) {
    if (t.points.empty()) throw DataError("trajectory '" + t.id + "' has no points");
    counts[grid.cell_of(origin ? t.points.front() : t.points.back())] += 1.0;
  }
  return Distribution::from_counts(counts);
}

}  // namespace

Distribution Distribution::from_counts(std::span<const double> counts) {
  double total = 0.0;
  for (double c : counts) {
    if (!(c >= 0.0) || !std::isfinite(c)) throw ArgumentError("Distribution: counts must be finite and >= 0");
    total += c;
  }
  Distribution d;
  d.p.assign(counts.begin(), counts.end());
  if (total > 0.0) {
    for (auto& v : d.p) v /= total;
  }
  return d;
}

double jsd(const Distribution& p, const Distribution& g) {
  if (p.size() != g.size()) {
    throw ArgumentError("jsd: support mismatch (" + std::to_string(p.size()) + " vs " + std::to_string(g.size()) + ")");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = p.p[i];
    const double b = g.p[i];
    if (!(a >= 0.0) || !(b >= 0.0)) throw ArgumentError("jsd: negative or NaN probability");
    if (a == 0.0 && b == 0.0) continue;
    const double m = 0.5 * a + 0.5 * b;
    const double ta = a > 0.0 ? a * std::log(a / m) : 0.0;
    const double tb = b > 0.0 ? b * std::log(b / m) : 0.0;
    total += 0.5 * ta + 0.5 * tb;
  }
  return std::clamp(total, 0.0, std::numbers::ln2);
}

Distribution grid_density(std::span<const RawTrajectory> trajs, const GridSpec& grid, DensityStats* stats) {
  require_nonempty(trajs, "grid_density");
  std::vector<double> counts(grid.cells(), 0.0);
  DensityStats s;
  for (const auto& t : trajs) {
    for (const auto& p : t.points) {
      bool clamped = false;
      counts[grid.cell_of(p, &clamped)] += 1.0;
      s.clamped += clamped ? 1 : 0;
      ++s.points;
    }
  }
  if (s.points == 0) throw ArgumentError("grid_density: trajectory set has no points");
  if (stats) *stats = s;
  return Distribution::from_counts(counts);
}

Distribution origin_density(std::span<const RawTrajectory> trajs, const GridSpec& grid) {
  return endpoint_density(trajs, grid, true);
}

Distribution destination_density(std::span<const RawTrajectory> trajs, const GridSpec& grid) {
  return endpoint_density(trajs, grid, false);
}

double density_error(std::span<const RawTrajectory> gen, std::span<const RawTrajectory> real, const GridSpec& grid) {
  return jsd(grid_density(real, grid), grid_density(gen, grid));
}

double trip_error(std::span<const RawTrajectory> gen, std::span<const RawTrajectory> real, const GridSpec& grid) {
  const double o = jsd(origin_density(real, grid), origin_density(gen, grid));
  const double d = jsd(destination_density(real, grid), destination_density(gen, grid));
  return 0.5 * (o + d);
}

double length_error(std::span<const RawTrajectory> gen, std::span<const RawTrajectory> real, std::size_t bins,
                    DistanceKind kind, bool* degenerate) {
  require_nonempty(gen, "length_error");
  require_nonempty(real, "length_error");
  if (bins == 0) throw ArgumentError("length_error: bins must be positive");
  auto lengths = [kind](std::span<const RawTrajectory> trajs) {
    std::vector<double> out;
    out.reserve(trajs.size());
    for (const auto& t : trajs) out.push_back(travel_distance(t.points, kind));
    return out;
  };
  const auto lg = lengths(gen);
  const auto lr = lengths(real);
  double lo = lg.front();
  double hi = lg.front();
  for (const auto* v : {&lg, &lr}) {
    for (double x : *v) {
      if (!std::isfinite(x)) throw NumericError("length_error: non-finite trajectory length");
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  if (degenerate) *degenerate = !(hi > lo);
  if (!(hi > lo)) return 0.0;
  auto histogram = [&](const std::vector<double>& xs) {
    std::vector<double> counts(bins, 0.0);
    for (double x : xs) {
      auto b = static_cast<std::size_t>(std::floor((x - lo) / (hi - lo) * static_cast<double>(bins)));
      counts[std::min(b, bins - 1)] += 1.0;
    }
    return Distribution::from_counts(counts);
  };
  return jsd(histogram(lr), histogram(lg));
}

std::vector<std::size_t> top_cells(const Distribution& density, std::size_t n) {
  if (n == 0) throw ArgumentError("top_cells: n must be positive");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < density.size(); ++i) {
    if (density.p[i] > 0.0) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return density.p[a] > density.p[b]; });
  if (idx.size() > n) idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double pattern_score(std::span<const RawTrajectory> gen, std::span<const RawTrajectory> real, const GridSpec& grid,
                     std::size_t n) {
  if (n == 0) throw ArgumentError("pattern_score: n must be positive");
  const auto a = top_cells(grid_density(real, grid), n);
  const auto b = top_cells(grid_density(gen, grid), n);
  std::vector<std::size_t> both;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
  return 2.0 * static_cast<double>(both.size()) / static_cast<double>(a.size() + b.size());
}

MetricReport evaluate(std::span<const RawTrajectory> gen, std::span<const RawTrajectory> real,
                      const MetricConfig& config) {
  require_nonempty(gen, "evaluate (generated set)");
  require_nonempty(real, "evaluate (reference set)");
  if (config.top_n == 0) throw ArgumentError("evaluate: top_n must be positive");
  MetricReport r;
  r.config = config;
  r.gen_count = gen.size();
  r.real_count = real.size();

  DensityStats gs;
  DensityStats rs;
  const Distribution dg = grid_density(gen, config.grid, &gs);
  const Distribution dr = grid_density(real, config.grid, &rs);
  r.gen_clamped = gs.clamped;
  r.real_clamped = rs.clamped;
  r.density_error = jsd(dr, dg);
  r.trip_error = trip_error(gen, real, config.grid);
  bool degenerate = false;
  r.length_error = length_error(gen, real, config.length_bins, config.distance, &degenerate);

  const auto ta = top_cells(dr, config.top_n);
  const auto tb = top_cells(dg, config.top_n);
  std::vector<std::size_t> both;
  std::set_intersection(ta.begin(), ta.end(), tb.begin(), tb.end(), std::back_inserter(both));
  r.pattern_score = 2.0 * static_cast<double>(both.size()) / static_cast<double>(ta.size() + tb.size());

  if (degenerate) r.warnings.emplace_back("all trajectory lengths identical; length error set to 0");
  if (ta.size() < config.top_n || tb.size() < config.top_n) {
    r.warnings.push_back("fewer than " + std::to_string(config.top_n) + " nonempty cells; pattern score uses " +
                         std::to_string(std::min(ta.size(), tb.size())) + "+ cells");
  }
  if (gs.clamped > 0) {
    r.warnings.push_back(std::to_string(gs.clamped) + " generated points outside the grid were clamped");
  }
  if (rs.clamped > 0) {
    r.warnings.push_back(std::to_string(rs.clamped) + " reference points outside the grid were clamped");
  }
  return r;
}

json to_json(const MetricReport& report) {
  return json{{"toolkit", "trajdiff"},
              {"version", kVersion},
              {"metrics",
               {{"density_error", report.density_error},
                {"trip_error", report.trip_error},
                {"length_error", report.length_error},
                {"pattern_score", report.pattern_score}}},
              {"grid", to_json(report.config.grid)},
              {"top_n", report.config.top_n},
              {"length_bins", report.config.length_bins},
              {"distance", report.config.distance == DistanceKind::kHaversine ? "haversine" : "euclidean_deg"},
              {"samples",
               {{"generated", report.gen_count},
                {"reference", report.real_count},
                {"generated_clamped_points", report.gen_clamped},
                {"reference_clamped_points", report.real_clamped}}},
              {"warnings", report.warnings}};
}

}  // namespace trajdiff
