#include <doctest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "gapfill/errors.hpp"
#include "gapfill/synth.hpp"

using namespace gapfill;
using namespace gapfill::synth;

namespace {

TruthConfig small_truth(std::size_t t = 60, std::size_t h = 32, std::size_t w = 32) {
  TruthConfig c;
  c.t = t;
  c.h = h;
  c.w = w;
  return c;
}

std::size_t sea_count(std::span<const std::uint8_t> land) {
  return static_cast<std::size_t>(std::count(land.begin(), land.end(), 0));
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("truth field") {
  const auto cfg = small_truth();
  const auto f = gen_truth(cfg, 7);
  CHECK_NOTHROW(f.validate());
  CHECK(f.valid_count() == f.sea_pixel_count() * cfg.t);
  CHECK(f.sea_pixel_count() < cfg.h * cfg.w);
  bool in_range = true;
  for (std::size_t i = 0; i < f.dims().size(); ++i) {
    if (!f.valid()[i]) continue;
    const double v = f.values()[i];
    in_range = in_range && std::isfinite(v) && v >= cfg.mean_log10 - cfg.half_range - 1e-6 &&
               v <= cfg.mean_log10 + cfg.half_range + 1e-6;
  }
  CHECK(in_range);
  CHECK(bit_identical(gen_truth(cfg, 7), f));
  CHECK_FALSE(bit_identical(gen_truth(cfg, 8), f));
  CHECK(gen_land_mask(cfg, 7) == std::vector<std::uint8_t>(f.land().begin(), f.land().end()));
}

TEST_CASE("truth without blobs, background or season is constant") {
  auto cfg = small_truth(10, 16, 16);
  cfg.n_blobs = 0;
  cfg.background_amplitude = 0.0;
  cfg.seasonal_amplitude = 0.0;
  const auto f = gen_truth(cfg, 1);
  float first = std::nanf("");
  bool constant = true;
  for (std::size_t i = 0; i < f.dims().size(); ++i) {
    if (!f.valid()[i]) continue;
    if (std::isnan(first)) first = f.values()[i];
    constant = constant && f.values()[i] == first;
  }
  CHECK(constant);
}

TEST_CASE("truth is smooth in time") {
  const auto cfg = small_truth(200, 32, 32);
  const auto f = gen_truth(cfg, 3);
  const auto& d = f.dims();
  std::vector<double> m(d.t, 0.0);
  for (std::size_t t = 0; t < d.t; ++t) {
    std::size_t n = 0;
    for (std::size_t p = 0; p < d.frame_size(); ++p) {
      if (f.valid()[t * d.frame_size() + p]) {
        m[t] += f.values()[t * d.frame_size() + p];
        ++n;
      }
    }
    m[t] /= static_cast<double>(n);
  }
  double mean = 0.0;
  for (double v : m) mean += v;
  mean /= static_cast<double>(d.t);
  double c0 = 0.0, c1 = 0.0;
  for (std::size_t t = 0; t < d.t; ++t) c0 += (m[t] - mean) * (m[t] - mean);
  for (std::size_t t = 1; t < d.t; ++t) c1 += (m[t] - mean) * (m[t - 1] - mean);
  CHECK(c1 / c0 > 0.8);
}

TEST_CASE("cloud targets and masks") {
  const CloudConfig cc;
  SUBCASE("targets stay in range and follow the season") {
    const auto targets = cloud_targets(cc, 730, 5);
    for (double r : targets) {
      CHECK(r >= cc.min_missing);
      CHECK(r <= cc.max_missing);
    }
    // least squares fit of monthly means to a + b cos(2 pi (doy - peak) / 365)
    const double pi = 3.14159265358979323846;
    Eigen::Matrix<double, 24, 2> a;
    Eigen::Matrix<double, 24, 1> y;
    for (int month = 0; month < 24; ++month) {
      double s = 0.0, c = 0.0;
      int n = 0;
      for (int day = month * 730 / 24; day < (month + 1) * 730 / 24; ++day) {
        s += targets[static_cast<std::size_t>(day)];
        c += std::cos(2.0 * pi * ((day % 365) - cc.peak_day_of_year) / 365.0);
        ++n;
      }
      y(month) = s / n;
      a(month, 0) = 1.0;
      a(month, 1) = c / n;
    }
    const Eigen::Vector2d coef = a.colPivHouseholderQr().solve(y);
    CHECK(std::abs(coef(1) - (cc.max_missing - cc.min_missing) / 2.0) < 0.05);
  }
  SUBCASE("each day hides the requested share of sea pixels") {
    TruthConfig tc = small_truth(40, 24, 24);
    const auto land = gen_land_mask(tc, 2);
    const auto targets = cloud_targets(cc, 40, 2);
    const Dims d{40, 24, 24};
    const auto valid = gen_cloud_mask(cc, 2, d, land, targets);
    const auto sea = sea_count(land);
    for (std::size_t t = 0; t < d.t; ++t) {
      std::size_t ok = 0;
      for (std::size_t p = 0; p < d.frame_size(); ++p) {
        const auto v = valid[t * d.frame_size() + p];
        CHECK_FALSE((v && land[p]));
        ok += v;
      }
      const double missing = 1.0 - static_cast<double>(ok) / sea;
      CHECK(std::abs(missing - targets[t]) <= 0.05);
    }
  }
  SUBCASE("extreme targets") {
    TruthConfig tc = small_truth(8, 16, 16);
    const auto land = gen_land_mask(tc, 2);
    const Dims d{2, 16, 16};
    const std::vector<double> targets{0.0, 1.0};
    const auto valid = gen_cloud_mask(cc, 2, d, land, targets);
    std::size_t day0 = 0, day1 = 0;
    for (std::size_t p = 0; p < d.frame_size(); ++p) {
      day0 += valid[p];
      day1 += valid[d.frame_size() + p];
    }
    CHECK(day0 == sea_count(land));
    CHECK(day1 == 0);
  }
}

TEST_CASE("sensor masks") {
  const Dims d{6, 20, 20};
  const std::vector<std::uint8_t> all(d.size(), 1);
  SUBCASE("full swath single sensor") {
    SensorConfig sc;
    sc.sensors = {{"S", 10.0, 0.0, 1, 0, 0, 1}};
    sc.wide_swath = "S";
    const auto m = gen_sensor_mask(sc, 1, d, all);
    CHECK(std::all_of(m.sensors.begin(), m.sensors.end(), [](std::uint16_t b) { return b == 1; }));
  }
  SUBCASE("alternate-day revisit") {
    SensorConfig sc;
    sc.sensors = {{"S", 10.0, 0.0, 2, 0, 0, 1}};
    sc.wide_swath = "S";
    const auto m = gen_sensor_mask(sc, 1, d, all);
    for (std::size_t t = 0; t < d.t; ++t) {
      for (std::size_t p = 0; p < d.frame_size(); ++p) {
        CHECK(m.sensors[t * d.frame_size() + p] == (t % 2 == 0 ? 1 : 0));
      }
    }
    CHECK(sensor_active(sc.sensors[0], 4));
    CHECK_FALSE(sensor_active(sc.sensors[0], 5));
  }
  SUBCASE("generated dataset: union of sensors equals validity") {
    SynthConfig cfg;
    cfg.truth = small_truth(30, 32, 32);
    cfg.seed = 11;
    const auto ds = generate(cfg);
    CHECK_NOTHROW(ds.gappy.validate());
    REQUIRE(ds.gappy.sensors().has_value());
    const auto& s = *ds.gappy.sensors();
    CHECK(s.sensor_names.size() == 5);
    bool same = true, subset = true;
    for (std::size_t i = 0; i < ds.gappy.dims().size(); ++i) {
      same = same && ((s.sensors[i] != 0) == (ds.gappy.valid()[i] != 0));
      subset = subset && (!ds.gappy.valid()[i] || (ds.truth.valid()[i] && ds.gappy.values()[i] == ds.truth.values()[i]));
    }
    CHECK(same);
    CHECK(subset);
    const auto bit = static_cast<std::uint16_t>(1u << *s.find(cfg.sensors.wide_swath));
    const auto fs = ds.gappy.dims().frame_size();
    const auto sea = ds.gappy.sea_pixel_count();
    // swath footprint of the wide sensor, measured on a cloud-free sky
    std::vector<std::uint8_t> clear(ds.gappy.dims().size(), 0);
    for (std::size_t i = 0; i < clear.size(); ++i) clear[i] = ds.truth.valid()[i];
    const auto footprint = gen_sensor_mask(cfg.sensors, cfg.seed, ds.gappy.dims(), clear);
    for (std::size_t t = 0; t < ds.gappy.dims().t; ++t) {
      std::size_t covered = 0;
      for (std::size_t p = 0; p < fs; ++p) covered += (footprint.sensors[t * fs + p] & bit) ? 1 : 0;
      CHECK(static_cast<double>(covered) >= 0.9 * static_cast<double>(sea));
    }
    const auto again = generate(cfg);
    CHECK(bit_identical(again.gappy, ds.gappy));
    CHECK(bit_identical(again.truth, ds.truth));
  }
}

TEST_CASE("configuration") {
  SynthConfig cfg;
  cfg.truth = small_truth(20, 16, 16);
  cfg.seed = 99;
  const auto j = to_json(cfg);
  CHECK(to_json(synth_config_from_json(j)) == j);
  auto bad = j;
  bad["truth"]["colour"] = 1;
  CHECK_THROWS_WITH_AS(synth_config_from_json(bad), doctest::Contains("colour"), ConfigError);
  auto small = cfg;
  small.truth.h = 4;
  CHECK_THROWS_AS(small.truth.check(), ConfigError);
  auto rev = cfg;
  rev.sensors.sensors[0].revisit_days = 0;
  CHECK_THROWS_AS(rev.sensors.check(), ConfigError);
  auto ratio = cfg;
  ratio.cloud.max_missing = 1.2;
  CHECK_THROWS_AS(ratio.cloud.check(), ConfigError);
}

}  // TEST_SUITE
