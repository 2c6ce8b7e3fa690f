#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "gapfill/errors.hpp"
#include "gapfill/varnet.hpp"
#include "oracles.hpp"

using namespace gapfill;
using namespace gapfill::tensor;
using varnet::MapperKind;
using varnet::MapperSpec;

namespace {

/// phi(x) = 0.25 * (3x3 box average of each channel): linear and contractive.
class LinearPrior final : public models::ImageModel {
 public:
  explicit LinearPrior(std::size_t channels) : channels_(channels) {
    std::vector<double> k(channels * channels * 9, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t i = 0; i < 9; ++i) k[(c * channels + c) * 9 + i] = 0.25 / 9.0;
    }
    kernel_ = Tensor::from({channels, channels, 3, 3}, std::move(k));
  }
  Tensor forward(const Tensor& x) const override { return conv2d(x, kernel_); }
  std::string arch() const override { return "linear"; }
  std::size_t in_channels() const override { return channels_; }
  std::size_t out_channels() const override { return channels_; }

 private:
  std::size_t channels_;
  Tensor kernel_;
};

std::vector<double> gappy_values(const Shape& shape, std::uint64_t seed, double p_valid,
                                 std::vector<std::uint8_t>* omega) {
  rng::Stream s(seed);
  std::vector<double> y(numel(shape));
  omega->assign(y.size(), 0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double v = s.uniform(-1.0, 1.0);
    if (s.uniform() < p_valid) {
      y[i] = v;
      (*omega)[i] = 1;
    } else {
      y[i] = std::nan("");
    }
  }
  return y;
}

void randomize(Tensor& t, std::uint64_t seed, double amp) {
  rng::Stream s(seed);
  for (auto& v : t.data()) v = s.uniform(-amp, amp);
}

MapperSpec small_spec(MapperKind kind, std::size_t window = 3, int iterations = 3) {
  MapperSpec s;
  s.kind = kind;
  s.window = window;
  s.width = 4;
  s.hidden = 4;
  s.iterations = iterations;
  s.seed = 5;
  return s;
}

/// Smooth field with a land strip, ~15% random gaps.
SpatioTemporalField gappy_smooth(Dims d, std::uint64_t seed) {
  auto f = oracle::smooth_field(d, 1);
  rng::Stream s(seed);
  for (std::size_t t = 0; t < d.t; ++t) {
    for (std::size_t h = 0; h < d.h; ++h) {
      for (std::size_t w = 0; w < d.w; ++w) {
        if (!f.is_land(h, w) && s.uniform() < 0.15) f.clear(t, h, w);
      }
    }
  }
  return f;
}

varnet::TrainConfig tiny_train(int epochs) {
  varnet::TrainConfig c;
  c.epochs = epochs;
  c.batch = 2;
  c.adam.lr = 1e-2;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_SUITE("varnet") {

TEST_CASE("variational cost") {
  ParamStore st;
  auto params = varnet::VarCostParams::create(st, "cost.", std::exp(0.3), 1.0);
  models::ConvNet identity(st, "phi.", "cnn", 2, 2, 4, 1);
  identity.init_identity();
  std::vector<std::uint8_t> omega;
  const auto y = gappy_values({2, 4, 5}, 1, 0.6, &omega);
  SUBCASE("zero at the observations with an identity prior") {
    std::vector<double> x0(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) x0[i] = omega[i] ? y[i] : 0.7;
    NoGradGuard ng;
    CHECK(varnet::var_cost(Tensor::from({2, 4, 5}, x0), y, omega, identity, params).item() == doctest::Approx(0.0));
  }
  SUBCASE("single observed pixel") {
    params.log_lambda2.data()[0] = -1000.0;
    std::vector<std::uint8_t> one(y.size(), 0);
    std::vector<double> yy(y.size(), std::nan(""));
    one[7] = 1;
    yy[7] = 0.5;
    auto x = Tensor::zeros({2, 4, 5});
    x.data()[7] = 0.2;
    NoGradGuard ng;
    const double u = varnet::var_cost(x, yy, one, LinearPrior(2), params).item();
    CHECK(u == doctest::Approx(std::exp(0.3) * 0.09).epsilon(1e-12));
    CHECK(params.lambda1() == doctest::Approx(std::exp(0.3)));
  }
  SUBCASE("blind window drops the observation term") {
    std::vector<std::uint8_t> none(y.size(), 0);
    NoGradGuard ng;
    const auto x = oracle::random_tensor({2, 4, 5}, 2);
    CHECK(varnet::var_cost(x, y, none, identity, params).item() == doctest::Approx(0.0));
  }
  SUBCASE("state gradient matches finite differences") {
    models::ConvNet phi(st, "phi2.", "cnn", 2, 2, 4, 3);
    auto x = oracle::random_tensor({2, 4, 5}, 4);
    const auto r = oracle::check_gradients([&] { return varnet::var_cost(x, y, omega, phi, params); },
                                           {x, params.log_lambda1, params.log_lambda2});
    CHECK(r.max_rel < 1e-5);
  }
}

TEST_CASE("plain-gradient solver") {
  ParamStore st;
  auto params = varnet::VarCostParams::create(st, "cost.");
  std::vector<std::uint8_t> omega;
  const auto y = gappy_values({3, 10, 10}, 5, 0.5, &omega);
  SUBCASE("descent with a linear contractive prior") {
    const LinearPrior phi(3);
    std::vector<double> trace;
    varnet::SolveOptions o;
    o.iterations = 50;
    o.plain_gradient = true;
    o.step = 0.1;
    o.cost_trace = &trace;
    varnet::solve(y, omega, {3, 10, 10}, phi, params, nullptr, o);
    REQUIRE(trace.size() == 51);
    for (std::size_t k = 1; k < trace.size(); ++k) CHECK(trace[k] <= trace[k - 1] + 1e-12);
    CHECK(trace.back() < trace.front());
  }
  SUBCASE("observation-dominated limit") {
    params.log_lambda2.data()[0] = -1000.0;
    std::vector<std::uint8_t> all(y.size(), 1);
    std::vector<double> full(y.size());
    rng::Stream s(6);
    for (auto& v : full) v = s.uniform(-1.0, 1.0);
    varnet::SolveOptions o;
    o.iterations = 60;
    o.plain_gradient = true;
    o.step = 0.25;
    const auto x = varnet::solve(full, all, {3, 10, 10}, LinearPrior(3), params, nullptr, o);
    for (std::size_t i = 0; i < full.size(); ++i) CHECK(std::abs(x.data()[i] - full[i]) < 1e-4);
  }
}

TEST_CASE("recurrent solver") {
  ParamStore st;
  auto params = varnet::VarCostParams::create(st, "cost.");
  models::ConvNet phi(st, "phi.", "cnn", 3, 3, 4, 7);
  models::ConvLstmCell cell(st, "cell.", 3, 4, 7);
  std::vector<std::uint8_t> omega;
  const auto y = gappy_values({3, 6, 6}, 8, 0.5, &omega);
  SUBCASE("zero cell leaves the start state") {
    cell.zero_weights();
    varnet::SolveOptions o;
    o.iterations = 1;
    const auto x = varnet::solve(y, omega, {3, 6, 6}, phi, params, &cell, o);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(x.data()[i] == (omega[i] ? y[i] : 0.0));
  }
  SUBCASE("non-finite gradient aborts") {
    auto bad = y;
    bad[std::find(omega.begin(), omega.end(), 1) - omega.begin()] = std::numeric_limits<double>::infinity();
    varnet::SolveOptions o;
    CHECK_THROWS_AS(varnet::solve(bad, omega, {3, 6, 6}, phi, params, &cell, o), NumericalError);
  }
  SUBCASE("inference and differentiable modes agree") {
    varnet::SolveOptions o;
    o.iterations = 3;
    const auto a = varnet::solve(y, omega, {3, 6, 6}, phi, params, &cell, o);
    Tape tape;
    o.differentiable = true;
    const auto b = varnet::solve(y, omega, {3, 6, 6}, phi, params, &cell, o);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("end-to-end gradients on a micro instance") {
  varnet::Mapper m(small_spec(MapperKind::varnet_cnn, 3, 3));
  randomize(m.params().get("cell.head.weight"), 9, 0.3);
  randomize(m.params().get("cost.log_lambda1"), 10, 0.3);
  std::vector<std::uint8_t> omega;
  const auto obs = gappy_values({3, 16, 16}, 11, 0.5, &omega);
  const auto target = oracle::random_tensor({3, 16, 16}, 12);
  const std::vector<std::uint8_t> mask(target.numel(), 1);
  std::vector<Tensor> leaves;
  for (auto& e : m.params().entries()) leaves.push_back(e.value);
  const auto r = oracle::check_gradients(
      [&] { return masked_mse(m.reconstruct(obs, 16, 16, grad_enabled()), target.data(), mask); }, leaves, 1e-5,
      1e-3, 6);
  CHECK(r.checked > 50);
  CHECK(r.max_rel < 1e-4);
}

TEST_CASE("mapper kinds") {
  CHECK(varnet::parse_kind("varnet-unet") == MapperKind::varnet_unet);
  CHECK(varnet::kind_name(MapperKind::direct_cnn) == "direct-cnn");
  CHECK_THROWS_AS(varnet::parse_kind("kriging"), ConfigError);
  CHECK(varnet::is_varnet(MapperKind::varnet_cnn));
  CHECK_FALSE(varnet::is_varnet(MapperKind::direct_unet));
  for (auto k : {MapperKind::direct_cnn, MapperKind::direct_unet, MapperKind::varnet_cnn, MapperKind::varnet_unet}) {
    varnet::Mapper m(small_spec(k));
    std::vector<std::uint8_t> omega;
    const auto obs = gappy_values({3, 6, 10}, 13, 0.5, &omega);
    const auto x = m.reconstruct(obs, 6, 10, false);
    CHECK(x.shape() == Shape{3, 6, 10});
    CHECK(std::all_of(x.data().begin(), x.data().end(), [](double v) { return std::isfinite(v); }));
  }
}

TEST_CASE("translation equivariance away from the borders") {
  varnet::Mapper m(small_spec(MapperKind::varnet_cnn, 2, 1));
  randomize(m.params().get("cell.head.weight"), 14, 0.3);
  const std::size_t n = 44, shift = 3;
  std::vector<double> base(2 * n * n), moved(2 * n * n);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t h = 0; h < n; ++h) {
      for (std::size_t w = 0; w < n; ++w) {
        auto f = [&](std::size_t hh, std::size_t ww) {
          const double p = 2.0 * 3.14159265358979323846 / 11.0;
          const bool gap = (hh * 7 + ww * 3 + c) % 5 == 0;
          return gap ? std::nan("") : std::sin(p * hh + c) * std::cos(p * ww);
        };
        base[(c * n + h) * n + w] = f(h, w);
        moved[(c * n + h) * n + w] = f(h + shift, w + shift);
      }
    }
  }
  const auto a = m.reconstruct(base, n, n, false);
  const auto b = m.reconstruct(moved, n, n, false);
  double err = 0.0;
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t h = 16; h < 26; ++h) {
      for (std::size_t w = 16; w < 26; ++w) {
        err = std::max(err, std::abs(b.data()[(c * n + h) * n + w] - a.data()[(c * n + h + shift) * n + w + shift]));
      }
    }
  }
  CHECK(err < 1e-6);
}

TEST_CASE("online masks differ across windows") {
  const auto f = gappy_smooth({40, 16, 16}, 15);
  const MaskSpec spec{RandomPatch{0.5, 2, 6, 0.75}, 4};
  std::set<std::vector<std::uint8_t>> seen;
  const std::size_t L = 3;
  const std::size_t n = f.dims().t - L + 1;
  for (std::size_t s = 0; s < n; ++s) seen.insert(varnet::online_mask(f.slice_time(s, L), spec, 1, s).keep);
  CHECK(static_cast<double>(seen.size()) >= 0.9 * static_cast<double>(n));
  CHECK(varnet::online_mask_seed(4, 1, 0) != varnet::online_mask_seed(4, 2, 0));
  CHECK(varnet::online_mask_seed(4, 1, 0) != varnet::online_mask_seed(4, 1, 1));
}

TEST_CASE("training") {
  const auto train = gappy_smooth({6, 8, 8}, 16);
  const auto val = gappy_smooth({4, 8, 8}, 17);
  const MaskSpec spec{RandomPatch{0.5, 2, 4, 0.75}, 1};
  SUBCASE("training updates the parameters") {
    const auto spec_v = small_spec(MapperKind::varnet_cnn);
    const auto before = varnet::Mapper(spec_v).params().snapshot();
    auto cfg = tiny_train(1);
    cfg.max_windows = 1;
    const auto one = varnet::train_varnet(spec_v, train, val, spec, cfg);
    const auto after_one = one.best.mapper.params().snapshot();
    REQUIRE(after_one.size() == before.size());
    CHECK(after_one != before);
    CHECK(one.history.size() == 1);
    CHECK(std::isfinite(one.history[0].train_loss));
    // The zero-initialized update head shields the rest of the solver on the
    // first step; from the second step on every parameter moves.
    cfg.epochs = 2;
    const auto two = varnet::train_varnet(spec_v, train, val, spec, cfg);
    const auto after_two = two.best.mapper.params().snapshot();
    const auto& entries = two.best.mapper.params().entries();
    if (two.best.epoch == 2) {
      for (std::size_t i = 0; i < before.size(); ++i) {
        CAPTURE(entries[i].name);
        CHECK(after_two[i] != before[i]);
      }
    }
  }
  SUBCASE("equal seeds give bit-identical checkpoints") {
    const auto dir = std::filesystem::temp_directory_path() / "gapfill_tests" / "varnet";
    std::filesystem::remove_all(dir);
    for (auto kind : {MapperKind::varnet_cnn, MapperKind::direct_unet}) {
      const auto s = small_spec(kind);
      const auto a = varnet::train_mapper(s, train, val, spec, tiny_train(2));
      const auto b = varnet::train_mapper(s, train, val, spec, tiny_train(2));
      varnet::save_mapper(a.best, dir / "a.gfw");
      varnet::save_mapper(b.best, dir / "b.gfw");
      std::ifstream fa(dir / "a.gfw", std::ios::binary), fb(dir / "b.gfw", std::ios::binary);
      const std::string ba((std::istreambuf_iterator<char>(fa)), {}), bb((std::istreambuf_iterator<char>(fb)), {});
      CHECK(ba == bb);
      const auto loaded = varnet::load_mapper(dir / "a.gfw");
      CHECK(loaded.mapper.spec().kind == kind);
      CHECK(loaded.norm.mean == a.best.norm.mean);
      CHECK(loaded.epoch == a.best.epoch);
    }
  }
  SUBCASE("resume continues from the last checkpoint") {
    const auto dir = std::filesystem::temp_directory_path() / "gapfill_tests" / "varnet_resume";
    std::filesystem::remove_all(dir);
    const auto s = small_spec(MapperKind::direct_cnn);
    auto full = tiny_train(3);
    const auto ref = varnet::train_mapper(s, train, val, spec, full);
    auto first = tiny_train(2);
    first.checkpoint_dir = dir;
    varnet::train_mapper(s, train, val, spec, first);
    auto rest = tiny_train(3);
    rest.checkpoint_dir = dir;
    rest.resume = true;
    const auto resumed = varnet::train_mapper(s, train, val, spec, rest);
    REQUIRE(resumed.history.size() >= 1);
    CHECK(resumed.history.back().epoch == 3);
    CHECK(resumed.history.back().train_loss == ref.history.back().train_loss);
    CHECK(resumed.history.back().val_rmsle == ref.history.back().val_rmsle);
  }
  SUBCASE("empty training set") {
    SpatioTemporalField empty({6, 8, 8});
    CHECK_THROWS(varnet::train_mapper(small_spec(MapperKind::direct_cnn), empty, val, spec, tiny_train(1)));
  }
}

TEST_CASE("series reconstruction") {
  const auto obs = gappy_smooth({7, 8, 9}, 18);
  varnet::TrainedMapper tm{varnet::Mapper(small_spec(MapperKind::direct_cnn)), {0.0, 1.0}, {}, 0, 0, 0.0};
  SUBCASE("every sea pixel is filled") {
    const auto r = varnet::reconstruct_series(tm, obs);
    CHECK(r.valid_count() == r.sea_pixel_count() * 7);
    CHECK_NOTHROW(r.validate());
  }
  SUBCASE("overlapping windows are averaged uniformly") {
    const auto r = varnet::reconstruct_series(tm, obs);
    const auto& d = obs.dims();
    const std::size_t L = 3, fs = d.frame_size(), t = 3;  // covered by windows starting at 1, 2, 3
    std::vector<double> mean(fs, 0.0);
    for (std::size_t s = 1; s <= 3; ++s) {
      std::vector<double> y(L * fs);
      for (std::size_t i = 0; i < L * fs; ++i) {
        y[i] = obs.valid()[s * fs + i] ? obs.values()[s * fs + i] : std::nan("");
      }
      const auto x = tm.mapper.reconstruct(y, d.h, d.w, false);
      for (std::size_t i = 0; i < fs; ++i) mean[i] += x.data()[(t - s) * fs + i] / 3.0;
    }
    for (std::size_t i = 0; i < fs; ++i) {
      if (obs.land()[i]) continue;
      CHECK(r.values()[t * fs + i] == doctest::Approx(static_cast<float>(mean[i])).epsilon(1e-6));
    }
  }
  SUBCASE("single window when T equals L") {
    const auto short_obs = obs.slice_time(0, 3);
    const auto r = varnet::reconstruct_series(tm, short_obs);
    std::vector<double> y(short_obs.dims().size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = short_obs.valid()[i] ? short_obs.values()[i] : std::nan("");
    const auto x = tm.mapper.reconstruct(y, 8, 9, false);
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!short_obs.land()[i % 72]) CHECK(r.values()[i] == static_cast<float>(x.data()[i]));
    }
  }
  SUBCASE("thread count does not change the result") {
    CHECK(bit_identical(varnet::reconstruct_series(tm, obs, 1), varnet::reconstruct_series(tm, obs, 3)));
  }
  SUBCASE("series shorter than the window") {
    CHECK_THROWS_AS(varnet::reconstruct_series(tm, obs.slice_time(0, 2)), ConfigError);
  }
}

}  // TEST_SUITE
