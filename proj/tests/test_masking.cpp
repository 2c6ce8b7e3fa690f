#include <doctest.h>

#include <algorithm>
#include <set>

#include "gapfill/errors.hpp"
#include "gapfill/masking.hpp"
#include "oracles.hpp"

using namespace gapfill;

namespace {

std::size_t frame_valid(const SpatioTemporalField& f, std::size_t t) {
  const auto fs = f.dims().frame_size();
  return static_cast<std::size_t>(std::count(f.valid().begin() + t * fs, f.valid().begin() + (t + 1) * fs, 1));
}

std::size_t frame_kept(const ObservationMask& m, std::size_t t) {
  const auto fs = m.dims.frame_size();
  return static_cast<std::size_t>(std::count(m.keep.begin() + t * fs, m.keep.begin() + (t + 1) * fs, 1));
}

void check_subset_of_valid(const SpatioTemporalField& f, const ObservationMask& m) {
  REQUIRE(m.keep.size() == f.dims().size());
  bool ok = true;
  for (std::size_t i = 0; i < m.keep.size(); ++i) ok = ok && (!m.keep[i] || f.valid()[i]);
  CHECK(ok);
}

// Three sensors: A on even days, B everywhere on the left half, C on a diagonal band.
SpatioTemporalField sensor_field(Dims d) {
  auto f = oracle::random_field(d, 31, 0.9, 0);
  SensorMask s;
  s.sensor_names = {"A", "B", "C"};
  s.sensors.assign(d.size(), 0);
  for (std::size_t t = 0; t < d.t; ++t) {
    for (std::size_t h = 0; h < d.h; ++h) {
      for (std::size_t w = 0; w < d.w; ++w) {
        const auto i = d.index(t, h, w);
        if (!f.valid()[i]) continue;
        std::uint16_t b = 0;
        if (t % 2 == 0) b |= 1;
        if (w < d.w / 2) b |= 2;
        if ((h + w + t) % 3 == 0) b |= 4;
        if (b == 0) {
          f.clear(t, h, w);
        } else {
          s.sensors[i] = b;
        }
      }
    }
  }
  f.sensors() = s;
  return f;
}

}  // namespace

TEST_SUITE("masking") {

TEST_CASE("spec validation and identifiers") {
  CHECK(MaskSpec{RandomPatch{}, 0}.id() == "patch");
  CHECK(MaskSpec{RandomPixel{0.3}, 0}.id() == "random-pixel");
  CHECK(MaskSpec{KeepAll{}, 0}.id() == "none");
  CHECK(MaskSpec{SensorSubset{{"OLCI-S3A"}}, 0}.id() == "sensor:OLCI-S3A");
  CHECK_THROWS_AS(MaskSpec({RandomPixel{0.0}, 0}).check(32, 32), ConfigError);
  CHECK_THROWS_AS(MaskSpec({RandomPixel{1.0}, 0}).check(32, 32), ConfigError);
  CHECK_THROWS_AS(MaskSpec({RandomPatch{0.5, 6, 5, 0.75}, 0}).check(32, 32), ConfigError);
  CHECK_THROWS_AS(MaskSpec({RandomPatch{0.5, 5, 40, 0.75}, 0}).check(32, 32), ConfigError);
  CHECK_THROWS_AS(MaskSpec({SensorSubset{}, 0}).check(32, 32), ConfigError);
  CHECK_NOTHROW(MaskSpec({RandomPatch{}, 0}).check(32, 32));
}

TEST_CASE("JSON round trip") {
  for (const MaskSpec& s : {MaskSpec{RandomPatch{0.4, 3, 9, 0.6}, 12}, MaskSpec{RandomPixel{0.2}, 3},
                            MaskSpec{SensorSubset{{"A", "B"}}, 5}, MaskSpec{KeepAll{}, 0}}) {
    const auto j = mask_spec_to_json(s);
    CHECK(mask_spec_to_json(mask_spec_from_json(j)) == j);
  }
  CHECK_THROWS_WITH_AS(mask_spec_from_json({{"strategy", "patch"}, {"bogus", 1}}),
                       doctest::Contains("bogus"), ConfigError);
  CHECK_THROWS_AS(mask_spec_from_json({{"strategy", "circles"}}), ConfigError);
}

TEST_CASE("random pixel masking") {
  const Dims d{3, 100, 100};
  const auto f = oracle::random_field(d, 1, 1.0, 0);
  SUBCASE("binomial bound at rate 0.5") {
    const auto m = gen_random_pixel_mask(f, {RandomPixel{0.5}, 9});
    check_subset_of_valid(f, m);
    for (std::size_t t = 0; t < d.t; ++t) {
      const double removed = 1.0 - static_cast<double>(frame_kept(m, t)) / frame_valid(f, t);
      CHECK(removed >= 0.47);
      CHECK(removed <= 0.53);
    }
  }
  SUBCASE("extreme rates") {
    const auto lo = gen_random_pixel_mask(f, {RandomPixel{1e-12}, 9});
    CHECK(std::equal(lo.keep.begin(), lo.keep.end(), f.valid().begin()));
    const auto hi = gen_random_pixel_mask(f, {RandomPixel{1.0 - 1e-12}, 9});
    CHECK(hi.kept() == 0);
  }
  SUBCASE("deterministic and seed dependent") {
    const auto a = gen_random_pixel_mask(f, {RandomPixel{0.5}, 9});
    const auto b = gen_random_pixel_mask(f, {RandomPixel{0.5}, 9});
    const auto c = gen_random_pixel_mask(f, {RandomPixel{0.5}, 10});
    CHECK(a.keep == b.keep);
    CHECK(a.keep != c.keep);
  }
  SUBCASE("frames depend only on their own index") {
    const auto full = gen_random_pixel_mask(f, {RandomPixel{0.5}, 4});
    const auto sub = f.slice_time(0, 2);
    const auto part = gen_random_pixel_mask(sub, {RandomPixel{0.5}, 4});
    CHECK(std::equal(part.keep.begin(), part.keep.end(), full.keep.begin()));
  }
}

TEST_CASE("patch masking statistics") {
  const Dims d{40, 64, 64};
  auto f = oracle::random_field(d, 2, 0.95, 4);
  // every fifth frame above the exemption threshold
  for (std::size_t t = 0; t < d.t; t += 5) {
    for (std::size_t h = 0; h < d.h; ++h) {
      for (std::size_t w = 0; w < d.w; ++w) {
        if ((h * d.w + w) % 10 != 0) f.clear(t, h, w);
      }
    }
  }
  const MaskSpec spec{RandomPatch{}, 77};
  std::vector<Patch> patches;
  const auto m = gen_patch_mask(f, spec, &patches);
  check_subset_of_valid(f, m);
  for (std::size_t t = 0; t < d.t; ++t) {
    const auto valid = frame_valid(f, t);
    const auto kept = frame_kept(m, t);
    if (missing_ratio(f, t) >= 0.75) {
      CHECK(kept == valid);
    } else {
      const double removed = 1.0 - static_cast<double>(kept) / valid;
      CHECK(removed >= 0.5);
      CHECK(removed <= 0.5 + 625.0 / valid);
    }
  }
  REQUIRE(!patches.empty());
  for (const auto& p : patches) {
    CHECK(p.height >= 5);
    CHECK(p.height <= 25);
    CHECK(p.width >= 5);
    CHECK(p.width <= 25);
    CHECK(missing_ratio(f, p.t) < 0.75);
  }
  // removed pixels are exactly the valid pixels covered by the reported rectangles
  std::vector<std::uint8_t> covered(d.size(), 0);
  for (const auto& p : patches) {
    for (std::size_t h = p.top; h < std::min(d.h, p.top + p.height); ++h) {
      for (std::size_t w = p.left; w < std::min(d.w, p.left + p.width); ++w) covered[d.index(p.t, h, w)] = 1;
    }
  }
  bool same = true;
  for (std::size_t i = 0; i < d.size(); ++i) same = same && (m.keep[i] == (f.valid()[i] && !covered[i]));
  CHECK(same);
}

TEST_CASE("patch masking edge cases") {
  SUBCASE("one full-frame patch removes everything") {
    const auto f = oracle::smooth_field({2, 8, 8});
    const auto m = gen_patch_mask(f, {RandomPatch{0.5, 8, 8, 0.75}, 1});
    CHECK(m.kept() == 0);
  }
  SUBCASE("empty frame is kept unchanged") {
    auto f = oracle::smooth_field({2, 8, 8});
    for (std::size_t h = 0; h < 8; ++h) {
      for (std::size_t w = 0; w < 8; ++w) f.clear(1, h, w);
    }
    const auto m = gen_patch_mask(f, {RandomPatch{0.5, 2, 4, 1.0}, 1});
    CHECK(frame_kept(m, 1) == 0);
    CHECK(frame_kept(m, 0) < 64);
  }
  SUBCASE("land is never kept") {
    const auto f = oracle::random_field({5, 16, 16}, 3, 0.8, 3);
    for (const MaskSpec& s : {MaskSpec{RandomPatch{0.5, 2, 6, 0.75}, 1}, MaskSpec{RandomPixel{0.3}, 1},
                              MaskSpec{KeepAll{}, 0}}) {
      const auto m = generate_mask(f, s);
      bool ok = true;
      for (std::size_t i = 0; i < m.keep.size(); ++i) ok = ok && !(m.keep[i] && f.land()[i % 256]);
      CHECK(ok);
    }
  }
}

TEST_CASE("sensor subsets") {
  const Dims d{6, 10, 10};
  const auto f = sensor_field(d);
  const auto& s = *f.sensors();
  SUBCASE("all sensors keeps every valid pixel") {
    const auto m = apply_sensor_subset(f, s, {SensorSubset{{"A", "B", "C"}}, 0});
    CHECK(std::equal(m.keep.begin(), m.keep.end(), f.valid().begin()));
  }
  SUBCASE("alternate-day sensor") {
    const auto m = apply_sensor_subset(f, s, {SensorSubset{{"A"}}, 0});
    for (std::size_t t = 1; t < d.t; t += 2) CHECK(frame_kept(m, t) == 0);
    CHECK(frame_kept(m, 0) == frame_valid(f, 0));
  }
  SUBCASE("monotone in the subset") {
    const std::vector<std::vector<std::string>> subsets = {{"A"}, {"B"}, {"C"}, {"A", "B"}, {"A", "C"},
                                                           {"B", "C"}, {"A", "B", "C"}};
    for (const auto& a : subsets) {
      for (const auto& b : subsets) {
        if (!std::includes(b.begin(), b.end(), a.begin(), a.end())) continue;
        const auto ka = apply_sensor_subset(f, s, {SensorSubset{a}, 0});
        const auto kb = apply_sensor_subset(f, s, {SensorSubset{b}, 0});
        bool sub = true;
        for (std::size_t i = 0; i < ka.keep.size(); ++i) sub = sub && (!ka.keep[i] || kb.keep[i]);
        CHECK(sub);
      }
    }
  }
  SUBCASE("unknown sensor is a config error") {
    CHECK_THROWS_AS(apply_sensor_subset(f, s, {SensorSubset{{"Z"}}, 0}), ConfigError);
  }
  SUBCASE("generate_mask needs a sensor array") {
    const auto plain = oracle::random_field(d, 4);
    CHECK_THROWS_AS(generate_mask(plain, {SensorSubset{{"A"}}, 0}), ConfigError);
  }
}

TEST_CASE("observation split") {
  const auto f = oracle::random_field({4, 12, 12}, 5, 0.7, 2);
  SUBCASE("counting identity") {
    const auto m = gen_random_pixel_mask(f, {RandomPixel{0.4}, 3});
    const auto split = split_obs_target(f, m);
    const auto dom = std::count(split.eval_domain.begin(), split.eval_domain.end(), 1);
    CHECK(static_cast<std::size_t>(dom) + m.kept() == f.valid_count());
    CHECK(std::equal(m.keep.begin(), m.keep.end(), split.obs.valid().begin()));
    bool values = true;
    for (std::size_t i = 0; i < m.keep.size(); ++i) {
      values = values && (m.keep[i] ? split.obs.values()[i] == f.values()[i] : std::isnan(split.obs.values()[i]));
      values = values && !(m.keep[i] && split.eval_domain[i]);
    }
    CHECK(values);
    CHECK_NOTHROW(split.obs.validate());
  }
  SUBCASE("keep all gives an empty domain") {
    const auto split = split_obs_target(f, generate_mask(f, {KeepAll{}, 0}));
    CHECK(std::count(split.eval_domain.begin(), split.eval_domain.end(), 1) == 0);
  }
  SUBCASE("mask field round trip") {
    const auto m = gen_random_pixel_mask(f, {RandomPixel{0.4}, 3});
    const auto mf = mask_as_field(f, m);
    CHECK_NOTHROW(mf.validate());
    CHECK(mask_from_field(mf).keep == m.keep);
  }
}

}  // TEST_SUITE
