#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "trajdiff/error.hpp"
#include "trajdiff/synth_city.hpp"
#include "trajdiff/trajdata.hpp"

using namespace trajdiff;

namespace {

const BoundingBox kBox{104.0, 104.16, 30.6, 30.76};

RawTrajectory line_traj(std::string id, std::size_t n, GeoPoint a, GeoPoint b) {
  RawTrajectory t;
  t.id = std::move(id);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    t.points.push_back({a.lng + u * (b.lng - a.lng), a.lat + u * (b.lat - a.lat)});
  }
  t.t0 = 1541030400 + 3600;
  t.interval_s = 15.0;
  return t;
}

}  // namespace

TEST_SUITE("trajdata") {
  TEST_CASE("resample keeps endpoints and interpolates by index") {
    const std::vector<GeoPoint> pts{{0.0, 0.0}, {1.0, 2.0}, {3.0, 2.0}};
    const auto r = resample(pts, 5);
    REQUIRE(r.size() == 5);
    CHECK(r.front() == pts.front());
    CHECK(r.back() == pts.back());
    CHECK(r[1].lng == doctest::Approx(0.5));
    CHECK(r[1].lat == doctest::Approx(1.0));
    CHECK(r[2] == pts[1]);
    CHECK(r[3].lng == doctest::Approx(2.0));

    const auto same = resample(pts, 3);
    CHECK(same == pts);
    const auto down = resample(resample(pts, 9), 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(down[i].lng == doctest::Approx(pts[i].lng));
      CHECK(down[i].lat == doctest::Approx(pts[i].lat));
    }
    CHECK_THROWS_AS(resample(std::vector<GeoPoint>{{0, 0}}, 4), DataError);
    CHECK_THROWS_AS(resample(pts, 1), ArgumentError);
  }

  TEST_CASE("normalization roundtrip") {
    const GeoPoint corner = normalize_point({104.0, 30.76}, kBox);
    CHECK(corner.lng == doctest::Approx(-1.0));
    CHECK(corner.lat == doctest::Approx(1.0));
    const GeoPoint mid = normalize_point({104.08, 30.68}, kBox);
    CHECK(std::abs(mid.lng) < 1e-9);
    CHECK(std::abs(mid.lat) < 1e-9);

    std::vector<RawTrajectory> trajs{line_traj("a", 130, {104.01, 30.61}, {104.15, 30.75}),
                                     line_traj("b", 200, {104.12, 30.70}, {104.02, 30.62})};
    NormStats stats;
    stats.box = kBox;
    const Tensor t = normalize(trajs, stats, 64);
    CHECK(t.shape() == Shape{2, 2, 64});
    for (float v : t.data()) CHECK(std::abs(v) <= 1.0f);
    for (std::size_t n = 0; n < 2; ++n) {
      const auto back = denormalize(t, n, stats);
      const auto want = resample(trajs[n].points, 64);
      for (std::size_t i = 0; i < 64; ++i) {
        CHECK(std::abs(back[i].lng - want[i].lng) < 1e-6);
        CHECK(std::abs(back[i].lat - want[i].lat) < 1e-6);
      }
    }
    CHECK_THROWS_AS(denormalize(t, 2, stats), ArgumentError);
    NormStats flat;
    flat.box = {104.0, 104.0, 30.0, 31.0};
    CHECK_THROWS_AS(normalize(trajs, flat, 64), DataError);
  }

  TEST_CASE("grid cells") {
    const GridSpec g{kBox, 16, 16};
    CHECK(g.cells() == 256);
    CHECK(g.cell_of({104.0, 30.6}) == 0);
    CHECK(g.cell_of({104.16, 30.76}) == 255);
    CHECK(g.cell_of({104.159, 30.601}) == 15);
    CHECK(g.cell_of({104.001, 30.759}) == 240);
    const std::size_t c = g.cell_of({104.0 + 0.01 * 3.5, 30.6 + 0.01 * 7.5});
    CHECK(g.row_of(c) == 7);
    CHECK(g.col_of(c) == 3);
    bool clamped = false;
    CHECK(g.cell_of({103.0, 30.675}, &clamped) == 7 * 16);
    CHECK(clamped);
    (void)g.cell_of({104.05, 30.7}, &clamped);
    CHECK_FALSE(clamped);
  }

  TEST_CASE("attributes") {
    const GridSpec g{kBox, 16, 16};
    // One degree of latitude along a meridian.
    CHECK(haversine_km({104.0, 30.0}, {104.0, 31.0}) == doctest::Approx(6371.0088 * M_PI / 180.0).epsilon(1e-9));
    CHECK(haversine_km({104.0, 30.0}, {104.0, 30.0}) == 0.0);

    const RawTrajectory t = line_traj("a", 121, {104.005, 30.605}, {104.005, 30.705});
    const auto a = trip_attributes(t, g);
    CHECK(a.numeric[0] == doctest::Approx(haversine_km(t.points.front(), t.points.back())).epsilon(1e-9));
    CHECK(a.numeric[1] == doctest::Approx(a.numeric[0] / 120.0));
    CHECK(a.numeric[2] == 15.0 * 120.0);
    CHECK(a.numeric[3] == 121.0);
    CHECK(a.departure_slot == 12);
    CHECK(a.origin_cell == 0);
    CHECK(a.destination_cell == 10 * 16);

    CHECK(departure_slot(0) == 0);
    CHECK(departure_slot(86399) == 287);
    CHECK(departure_slot(-1) == 287);

    RawTrajectory no_time = t;
    no_time.t0.reset();
    no_time.interval_s.reset();
    CHECK_THROWS_AS(trip_attributes(no_time, g), DataError);
    const auto loose = trip_attributes(no_time, g, {DistanceKind::kHaversine, false});
    CHECK(loose.numeric[2] == 0.0);
    CHECK(loose.departure_slot == 0);
    const auto deg = trip_attributes(t, g, {DistanceKind::kEuclideanDegrees, true});
    CHECK(deg.numeric[0] == doctest::Approx(0.1));
  }

  TEST_CASE("norm stats z-score the attributes and survive constant columns") {
    const GridSpec g{kBox, 16, 16};
    std::vector<RawTrajectory> trajs;
    for (int i = 0; i < 6; ++i) {
      trajs.push_back(line_traj("t" + std::to_string(i), 120 + 10 * i, {104.01, 30.61}, {104.01 + 0.01 * i, 30.7}));
    }
    const NormStats s = compute_norm_stats(trajs, kBox, g);
    double mean[4] = {0, 0, 0, 0};
    for (const auto& t : trajs) {
      const auto c = extract_attributes(t, g, s);
      for (int k = 0; k < 4; ++k) mean[k] += c.numeric[k];
    }
    for (double m : mean) CHECK(std::abs(m) < 1e-4);

    std::vector<RawTrajectory> same(3, trajs[0]);
    const NormStats flat = compute_norm_stats(same, kBox, g);
    for (double sd : flat.attr_std) CHECK(sd == 1.0);
    const auto c = extract_attributes(same[0], g, flat);
    for (float v : c.numeric) CHECK(std::abs(v) < 1e-6);

    const auto j = to_json(s);
    CHECK(norm_stats_from_json(j) == s);
    CHECK(grid_from_json(to_json(g)) == g);
    CHECK_THROWS_AS(norm_stats_from_json(nlohmann::json{{"box", to_json(kBox)}}), DataError);
  }

  TEST_CASE("dataset roundtrip with header") {
    Dataset ds;
    ds.header = DatasetHeader{kBox, nlohmann::json{{"generator", "test"}}};
    ds.trajectories.push_back(line_traj("a", 130, {104.01, 30.61}, {104.15, 30.75}));
    RawTrajectory bare = line_traj("b", 3, {104.0, 30.6}, {104.1, 30.7});
    bare.t0.reset();
    bare.interval_s.reset();
    ds.trajectories.push_back(bare);

    std::stringstream ss;
    write_dataset(ss, ds);
    LoadReport rep;
    const Dataset back = read_dataset(ss, {2, false}, &rep);
    REQUIRE(back.header.has_value());
    CHECK(back.header->bbox == kBox);
    CHECK(back.header->extra["generator"] == "test");
    REQUIRE(back.trajectories.size() == 2);
    CHECK(back.trajectories[0] == ds.trajectories[0]);
    CHECK(back.trajectories[1] == bare);
    CHECK(rep.loaded == 2);

    std::stringstream again;
    write_dataset(again, ds);
    const Dataset filtered = read_dataset(again, {120, false}, &rep);
    CHECK(filtered.trajectories.size() == 1);
    CHECK(rep.dropped_short == 1);
    CHECK_FALSE(rep.warnings.empty());

    const auto path = std::filesystem::temp_directory_path() / "trajdiff_test_roundtrip.jsonl";
    save_dataset(path, ds);
    CHECK(load_dataset(path, {2, false}).trajectories == back.trajectories);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_dataset(path), DataError);
  }

  TEST_CASE("malformed lines fail or are skipped") {
    const std::string good = R"({"id":"x","points":[[104.0,30.6],[104.1,30.7]]})";
    const std::vector<std::string> bad{
        "not json",
        R"({"points":[[104.0,30.6],[104.1,30.7]]})",
        R"({"id":"x","points":[[104.0,30.6]]})",
        R"({"id":"x","points":[[104.0,30.6],[190.0,30.7]]})",
        R"({"id":"x","points":[[104.0,30.6],[104.1]]})",
        R"({"id":"x","points":[[104.0,30.6],[104.1,30.7]],"t0":1.5})",
        R"({"id":"x","points":[[104.0,30.6],[104.1,30.7]],"interval":-2})",
    };
    for (const auto& line : bad) {
      std::stringstream strict(good + "\n" + line + "\n");
      CHECK_THROWS_AS(read_dataset(strict, {2, false}), DataError);
      std::stringstream lenient(good + "\n" + line + "\n" + good + "\n");
      LoadReport rep;
      const auto ds = read_dataset(lenient, {2, true}, &rep);
      CHECK(ds.trajectories.size() == 2);
      CHECK(rep.skipped_bad == 1);
    }
    std::stringstream wrong_format(R"({"format":"other","version":1})" "\n" + good + "\n");
    CHECK_THROWS_AS(read_dataset(wrong_format, {2, false}), DataError);
    std::stringstream empty("\n\n");
    LoadReport rep;
    CHECK(read_dataset(empty, {}, &rep).trajectories.empty());
    CHECK_FALSE(rep.warnings.empty());
  }

  TEST_CASE("bounding boxes") {
    std::vector<RawTrajectory> trajs{line_traj("a", 5, {104.01, 30.61}, {104.05, 30.65}),
                                     line_traj("b", 5, {104.10, 30.62}, {104.02, 30.70})};
    const auto box = bounding_box(trajs);
    CHECK(box == BoundingBox{104.01, 104.10, 30.61, 30.70});
    const auto wide = box.expanded(0.1);
    CHECK(wide.lng_min == doctest::Approx(104.001));
    CHECK(wide.lat_max == doctest::Approx(30.709));
    CHECK_THROWS_AS(bounding_box(std::vector<RawTrajectory>{}), DataError);
    CHECK(bbox_from_json(to_json(box)) == box);
    CHECK_THROWS_AS(bbox_from_json(nlohmann::json{{"lng_min", 1.0}}), DataError);
  }

  TEST_CASE("perturbers") {
    RngStream rng(40, 0);
    const RawTrajectory t = line_traj("a", 500, {104.01, 30.61}, {104.15, 30.75});
    const auto r = perturb_random(t, 0.01, rng);
    const auto g = perturb_gaussian(t, 0.01, rng);
    double max_off = 0.0, var = 0.0;
    for (std::size_t i = 0; i < t.points.size(); ++i) {
      max_off = std::max({max_off, std::abs(r.points[i].lng - t.points[i].lng), std::abs(r.points[i].lat - t.points[i].lat)});
      var += std::pow(g.points[i].lng - t.points[i].lng, 2);
    }
    CHECK(max_off <= 0.01);
    CHECK(max_off > 0.009);
    CHECK(std::sqrt(var / 500.0) == doctest::Approx(0.01).epsilon(0.15));
    CHECK(perturb_random(t, 0.0, rng) == t);
    CHECK_THROWS_AS(perturb_gaussian(t, -1.0, rng), ArgumentError);
  }
}

TEST_SUITE("synth_city") {
  TEST_CASE("trajectories follow the street lattice") {
    const CitySpec spec;
    const Dataset ds = synth_city(7, 300, spec);
    REQUIRE(ds.trajectories.size() == 300);
    REQUIRE(ds.header.has_value());
    CHECK(ds.header->bbox == spec.box);
    const auto lngs = spec.street_lngs();
    const auto lats = spec.street_lats();
    REQUIRE(lngs.size() == 5);
    const GridSpec g = spec.grid_spec();
    std::set<std::string> ids;
    for (const auto& t : ds.trajectories) {
      ids.insert(t.id);
      CHECK(t.points.size() >= 120);
      CHECK(t.points.size() <= 240);
      REQUIRE(t.t0.has_value());
      CHECK(*t.t0 >= spec.epoch_start);
      CHECK(*t.t0 < spec.epoch_start + 30 * 86400);
      CHECK(t.interval_s == 15.0);
      for (const auto& p : t.points) {
        CHECK(spec.box.contains(p));
        double dl = 1.0, dt = 1.0;
        for (double x : lngs) dl = std::min(dl, std::abs(p.lng - x));
        for (double y : lats) dt = std::min(dt, std::abs(p.lat - y));
        // On a street up to the GPS jitter.
        CHECK(std::min(dl, dt) < 6e-4);
        CHECK(spec.is_street_cell(g.cell_of(p)));
      }
    }
    CHECK(ids.size() == 300);
  }

  TEST_CASE("generation is deterministic per seed") {
    const auto a = synth_city(3, 40);
    const auto b = synth_city(3, 40);
    const auto c = synth_city(4, 40);
    CHECK(a.trajectories == b.trajectories);
    CHECK_FALSE(a.trajectories == c.trajectories);
  }

  TEST_CASE("spec validation and json") {
    CitySpec s;
    s.lattice = 1;
    CHECK_THROWS_AS(s.validate(), ArgumentError);
    s = CitySpec{};
    s.min_points = 300;
    CHECK_THROWS_AS(s.validate(), ArgumentError);
    s = CitySpec{};
    s.jitter_deg = 3e-4;
    s.center_bias = 0.0;
    const CitySpec back = city_spec_from_json(to_json(s));
    CHECK(back.jitter_deg == 3e-4);
    CHECK(back.center_bias == 0.0);
    CHECK(city_spec_from_json(nlohmann::json::object()).lattice == 5);
  }
}
