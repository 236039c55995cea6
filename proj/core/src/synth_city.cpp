#include "trajdiff/synth_city.hpp"

#include <algorithm>
#include <cmath>

#include "trajdiff/error.hpp"
#include "trajdiff/rng.hpp"

namespace trajdiff {

using nlohmann::json;

namespace {

std::vector<std::size_t> street_cells_1d(std::size_t grid, std::size_t lattice) {
  std::vector<std::size_t> out(lattice);
  for (std::size_t j = 0; j < lattice; ++j) {
    out[j] = static_cast<std::size_t>(std::floor((static_cast<double>(j) + 0.5) * static_cast<double>(grid) /
                                                 static_cast<double>(lattice)));
  }
  return out;
}

std::vector<double> street_coords(std::size_t grid, std::size_t lattice, double lo, double hi) {
  std::vector<double> out;
  const double cell = (hi - lo) / static_cast<double>(grid);
  for (std::size_t c : street_cells_1d(grid, lattice)) out.push_back(lo + (static_cast<double>(c) + 0.5) * cell);
  return out;
}

// Cumulative weights for choosing intersections; central ones are favoured.
std::vector<double> intersection_cdf(std::size_t lattice, double bias) {
  std::vector<double> cdf(lattice * lattice);
  const double mid = 0.5 * static_cast<double>(lattice - 1);
  const double scale = std::max(mid, 1.0);
  double acc = 0.0;
  for (std::size_t r = 0; r < lattice; ++r) {
    for (std::size_t c = 0; c < lattice; ++c) {
      const double dr = (static_cast<double>(r) - mid) / scale;
      const double dc = (static_cast<double>(c) - mid) / scale;
      acc += std::exp(-bias * (dr * dr + dc * dc));
      cdf[r * lattice + c] = acc;
    }
  }
  for (auto& v : cdf) v /= acc;
  return cdf;
}

std::size_t draw(const std::vector<double>& cdf, RngStream& rng) {
  const double u = rng.uniform();
  auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

}  // namespace

void CitySpec::validate() const {
  if (!box.valid() || !std::isfinite(box.lng_min + box.lng_max + box.lat_min + box.lat_max)) {
    throw ArgumentError("city spec: invalid bounding box");
  }
  if (grid == 0) throw ArgumentError("city spec: grid must be positive");
  if (lattice < 2) throw ArgumentError("city spec: lattice needs at least 2 streets per axis");
  if (lattice > grid) throw ArgumentError("city spec: more streets than grid cells per axis");
  if (!(jitter_deg >= 0.0) || !std::isfinite(jitter_deg)) throw ArgumentError("city spec: jitter must be >= 0");
  if (!(interval_s > 0.0) || !std::isfinite(interval_s)) throw ArgumentError("city spec: interval must be > 0");
  if (min_points < 2) throw ArgumentError("city spec: min_points must be at least 2");
  if (max_points < min_points) throw ArgumentError("city spec: max_points below min_points");
  if (!(center_bias >= 0.0) || !std::isfinite(center_bias)) throw ArgumentError("city spec: center_bias must be >= 0");
  if (epoch_days <= 0) throw ArgumentError("city spec: epoch_days must be positive");
}

std::vector<double> CitySpec::street_lngs() const { return street_coords(grid, lattice, box.lng_min, box.lng_max); }

std::vector<double> CitySpec::street_lats() const { return street_coords(grid, lattice, box.lat_min, box.lat_max); }

bool CitySpec::is_street_cell(std::size_t cell) const {
  const auto cells = street_cells_1d(grid, lattice);
  const std::size_t row = cell / grid;
  const std::size_t col = cell % grid;
  return std::find(cells.begin(), cells.end(), row) != cells.end() ||
         std::find(cells.begin(), cells.end(), col) != cells.end();
}

json to_json(const CitySpec& spec) {
  return json{{"bbox", to_json(spec.box)},       {"grid", spec.grid},
              {"lattice", spec.lattice},         {"jitter_deg", spec.jitter_deg},
              {"interval_s", spec.interval_s},   {"min_points", spec.min_points},
              {"max_points", spec.max_points},   {"center_bias", spec.center_bias},
              {"epoch_start", spec.epoch_start}, {"epoch_days", spec.epoch_days}};
}

CitySpec city_spec_from_json(const json& j) {
  if (!j.is_object()) throw ArgumentError("city spec must be a JSON object");
  CitySpec s;
  try {
    if (j.contains("bbox")) s.box = bbox_from_json(j["bbox"]);
    s.grid = j.value("grid", s.grid);
    s.lattice = j.value("lattice", s.lattice);
    s.jitter_deg = j.value("jitter_deg", s.jitter_deg);
    s.interval_s = j.value("interval_s", s.interval_s);
    s.min_points = j.value("min_points", s.min_points);
    s.max_points = j.value("max_points", s.max_points);
    s.center_bias = j.value("center_bias", s.center_bias);
    s.epoch_start = j.value("epoch_start", s.epoch_start);
    s.epoch_days = j.value("epoch_days", s.epoch_days);
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("city spec: ") + e.what());
  } catch (const DataError& e) {
    throw ArgumentError(std::string("city spec: ") + e.what());
  }
  return s;
}

Dataset synth_city(std::uint64_t seed, std::size_t n, const CitySpec& spec) {
  spec.validate();
  const auto xs = spec.street_lngs();
  const auto ys = spec.street_lats();
  const auto cdf = intersection_cdf(spec.lattice, spec.center_bias);
  const std::size_t k = spec.lattice;

  Dataset ds;
  DatasetHeader header;
  header.bbox = spec.box;
  header.extra = json{{"generator", "synth_city"}, {"seed", seed}, {"count", n}, {"city", to_json(spec)}};
  ds.header = std::move(header);
  ds.trajectories.reserve(n);

  for (std::size_t i = 0; i < n; ++i) {
    RngStream rng(seed, i);
    const std::size_t o = draw(cdf, rng);
    std::size_t d = draw(cdf, rng);
    while (d == o) d = draw(cdf, rng);

    const GeoPoint a{xs[o % k], ys[o / k]};
    const GeoPoint b{xs[d % k], ys[d / k]};
    const GeoPoint corner{b.lng, a.lat};
    const double leg1 = std::abs(corner.lng - a.lng);
    const double leg2 = std::abs(b.lat - corner.lat);
    const double total = leg1 + leg2;

    const std::size_t count =
        spec.min_points + static_cast<std::size_t>(rng.below(spec.max_points - spec.min_points + 1));
    RawTrajectory t;
    t.id = "c" + std::to_string(i);
    t.points.reserve(count);
    for (std::size_t p = 0; p < count; ++p) {
      const double s = total * static_cast<double>(p) / static_cast<double>(count - 1);
      GeoPoint q;
      if (s <= leg1) {
        const double f = leg1 > 0.0 ? s / leg1 : 0.0;
        q = {a.lng + f * (corner.lng - a.lng), a.lat};
      } else {
        const double f = (s - leg1) / leg2;
        q = {b.lng, corner.lat + f * (b.lat - corner.lat)};
      }
      q.lng = std::clamp(q.lng + spec.jitter_deg * rng.normal(), spec.box.lng_min, spec.box.lng_max);
      q.lat = std::clamp(q.lat + spec.jitter_deg * rng.normal(), spec.box.lat_min, spec.box.lat_max);
      t.points.push_back(q);
    }
    const auto day = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(spec.epoch_days)));
    const auto sec = static_cast<std::int64_t>(rng.below(86400));
    t.t0 = spec.epoch_start + day * 86400 + sec;
    t.interval_s = spec.interval_s;
    ds.trajectories.push_back(std::move(t));
  }
  return ds;
}

}  // namespace trajdiff
