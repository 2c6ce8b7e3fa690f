#include "gapfill/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gapfill/errors.hpp"
#include "gapfill/json_util.hpp"
#include "gapfill/rng.hpp"

namespace gapfill::synth {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

constexpr std::uint64_t kLandDomain = 0x4c414e44ULL;
constexpr std::uint64_t kTruthDomain = 0x5452555448ULL;
constexpr std::uint64_t kFlowDomain = 0x464c4f57ULL;
constexpr std::uint64_t kBlobDomain = 0x424c4f42ULL;
constexpr std::uint64_t kBackgroundDomain = 0x424b4744ULL;
constexpr std::uint64_t kSeasonDomain = 0x5345415355ULL;
constexpr std::uint64_t kCloudDomain = 0x434c4f5544ULL;
constexpr std::uint64_t kTargetDomain = 0x5441524745ULL;
constexpr std::uint64_t kSensorDomain = 0x53454e53ULL;

// Unit-variance white noise smoothed in time by a Gaussian kernel of width sigma.
std::vector<double> smooth_noise(std::uint64_t key, std::size_t t, double sigma) {
  const auto half = static_cast<std::size_t>(std::ceil(3.0 * std::max(sigma, 0.5)));
  std::vector<double> weights(2 * half + 1);
  double norm = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    const double d = static_cast<double>(j) - static_cast<double>(half);
    weights[j] = rng::det_exp(-d * d / (2.0 * sigma * sigma));
    norm += weights[j] * weights[j];
  }
  norm = std::sqrt(norm);
  rng::Stream s(key);
  std::vector<double> eps(t + 2 * half);
  for (auto& e : eps) e = s.normal();
  std::vector<double> out(t, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) acc += weights[j] * eps[i + j];
    out[i] = acc / norm;
  }
  return out;
}

// Signed periodic offset in (-period/2, period/2].
double wrap_offset(double d, double period) { return d - period * std::floor(d / period + 0.5); }

double wrap_into(double x, double period) {
  x -= period * std::floor(x / period);
  return x >= period ? 0.0 : x;
}

struct FlowMode {
  double kx, ky, amplitude, phase, drift;
};

struct Velocity {
  double u, v;
};

// Divergence-free velocity (d psi / dy, -d psi / dx) of a sum of sinusoidal stream functions.
Velocity velocity(const std::vector<FlowMode>& modes, double x, double y, double t, double w, double h) {
  Velocity vel{0.0, 0.0};
  for (const auto& m : modes) {
    const double arg = kTwoPi * (m.kx * x / w + m.ky * y / h) + m.phase + m.drift * t;
    const double c = rng::det_cos(arg) * m.amplitude * kTwoPi;
    vel.u += c * m.ky / h;
    vel.v -= c * m.kx / w;
  }
  return vel;
}

bool ratio_ok(double v) { return v >= 0.0 && v <= 1.0; }

}  // namespace

// ---------------------------------------------------------------------------

void TruthConfig::check() const {
  if (t < 8 || h < 8 || w < 8) throw ConfigError("synth.truth: T, H and W must all be >= 8");
  if (!(land_fraction >= 0.0 && land_fraction <= 0.6)) throw ConfigError("synth.truth.land_fraction must be in [0, 0.6]");
  if (!(blob_amplitude_min >= 0.0 && blob_amplitude_min <= blob_amplitude_max)) {
    throw ConfigError("synth.truth: blob amplitude range is invalid");
  }
  if (!(blob_width_min > 0.0 && blob_width_min <= blob_width_max)) throw ConfigError("synth.truth: blob width range is invalid");
  if (!(flow_speed >= 0.0)) throw ConfigError("synth.truth.flow_speed must be >= 0");
  if (!(background_amplitude >= 0.0)) throw ConfigError("synth.truth.background_amplitude must be >= 0");
  if (background_max_wavenumber < 1) throw ConfigError("synth.truth.background_max_wavenumber must be >= 1");
  if (!(seasonal_amplitude >= 0.0)) throw ConfigError("synth.truth.seasonal_amplitude must be >= 0");
  if (!(decorrelation_days >= 1.0)) throw ConfigError("synth.truth.decorrelation_days must be >= 1");
  if (!(half_range > 0.0)) throw ConfigError("synth.truth.half_range must be > 0");
}

void CloudConfig::check() const {
  if (!ratio_ok(min_missing) || !ratio_ok(max_missing) || min_missing > max_missing) {
    throw ConfigError("synth.cloud: missing ratios must satisfy 0 <= min <= max <= 1");
  }
  if (!(jitter >= 0.0)) throw ConfigError("synth.cloud.jitter must be >= 0");
  if (!ratio_ok(persistence)) throw ConfigError("synth.cloud.persistence must be in [0, 1]");
  if (!(element_size_min > 0.0 && element_size_min <= element_size_max)) {
    throw ConfigError("synth.cloud: element size range is invalid");
  }
}

std::vector<SensorSpec> SensorConfig::default_sensors() {
  return {
      {"OLCI-S3A", 0.55, 12.0, 2, 0, 0, 1},
      {"MODIS-Aqua", 0.8, -10.0, 1, 0, 10, 1},
      {"VIIRS-JPSS1", 2.0, 8.0, 1, 0, 16, 1},
      {"VIIRS-SNPP", 0.7, 8.0, 1, 0, 16, 1},
      {"OLCI-S3B", 0.55, 12.0, 2, 1, 0, 1},
  };
}

void SensorConfig::check() const {
  if (sensors.empty()) throw ConfigError("synth.sensors: at least one sensor is required");
  if (sensors.size() > 16) throw ConfigError("synth.sensors: at most 16 sensors fit the bitmask");
  for (std::size_t i = 0; i < sensors.size(); ++i) {
    const auto& s = sensors[i];
    if (s.name.empty()) throw ConfigError("synth.sensors: sensor names must be non-empty");
    for (std::size_t j = 0; j < i; ++j) {
      if (sensors[j].name == s.name) throw ConfigError("synth.sensors: duplicate sensor '" + s.name + "'");
    }
    if (s.revisit_days < 1) throw ConfigError("synth.sensors." + s.name + ": revisit_days must be >= 1");
    if (!(s.swath > 0.0)) throw ConfigError("synth.sensors." + s.name + ": swath must be > 0");
    if (s.stripe_period < 0 || s.stripe_width < 0 || (s.stripe_period > 0 && s.stripe_width >= s.stripe_period)) {
      throw ConfigError("synth.sensors." + s.name + ": stripe_width must be below stripe_period");
    }
  }
  if (!wide_swath.empty() &&
      std::none_of(sensors.begin(), sensors.end(), [&](const SensorSpec& s) { return s.name == wide_swath; })) {
    throw ConfigError("synth.sensors.wide_swath names an unknown sensor '" + wide_swath + "'");
  }
}

bool sensor_active(const SensorSpec& s, std::size_t t) {
  return (t + static_cast<std::size_t>(s.phase)) % static_cast<std::size_t>(s.revisit_days) == 0;
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> gen_land_mask(const TruthConfig& cfg, std::uint64_t seed) {
  std::vector<std::uint8_t> land(cfg.h * cfg.w, 0);
  if (cfg.land_fraction <= 0.0) return land;
  rng::Stream s(rng::key({seed, kLandDomain}));
  const double p1 = s.uniform(0.0, kTwoPi), p2 = s.uniform(0.0, kTwoPi);
  const double f = cfg.land_fraction;
  for (std::size_t x = 0; x < cfg.w; ++x) {
    const double u = static_cast<double>(x) / static_cast<double>(cfg.w);
    const double depth = static_cast<double>(cfg.h) *
                         f * (1.0 + 0.4 * rng::det_sin(kTwoPi * 1.3 * u + p1) + 0.25 * rng::det_sin(kTwoPi * 3.7 * u + p2));
    for (std::size_t y = 0; y < cfg.h; ++y) {
      if (static_cast<double>(y) + 0.5 < depth) land[y * cfg.w + x] = 1;
    }
  }
  return land;
}

SpatioTemporalField gen_truth(const TruthConfig& cfg, std::uint64_t seed, const std::string& time_origin) {
  cfg.check();
  const std::uint64_t base = rng::key({seed, kTruthDomain});
  const std::size_t T = cfg.t, H = cfg.h, W = cfg.w;
  const double Hd = static_cast<double>(H), Wd = static_cast<double>(W);
  const double side = static_cast<double>(std::min(H, W));
  const double sigma_t = cfg.decorrelation_days / 2.0;

  // Advecting flow.
  std::vector<FlowMode> flow;
  {
    rng::Stream s(rng::key({base, kFlowDomain}));
    const double speed = cfg.flow_speed * side / std::sqrt(static_cast<double>(std::max<std::size_t>(1, cfg.flow_modes)));
    for (std::size_t m = 0; m < cfg.flow_modes; ++m) {
      FlowMode f{};
      do {
        f.kx = static_cast<double>(s.uniform_int(-2, 2));
        f.ky = static_cast<double>(s.uniform_int(-2, 2));
      } while (f.kx == 0.0 && f.ky == 0.0);
      const double k = kTwoPi * std::sqrt((f.kx / Wd) * (f.kx / Wd) + (f.ky / Hd) * (f.ky / Hd));
      f.amplitude = speed / k * s.uniform(0.5, 1.0);
      f.phase = s.uniform(0.0, kTwoPi);
      f.drift = s.uniform(-0.01, 0.01);
      flow.push_back(f);
    }
  }

  std::vector<double> raw(T * H * W, 0.0);

  // Advected Gaussian blobs with slowly varying amplitude.
  {
    rng::Stream s(rng::key({base, kBlobDomain}));
    std::vector<double> gx(W), gy(H);
    for (std::size_t b = 0; b < cfg.n_blobs; ++b) {
      double px = s.uniform(0.0, Wd), py = s.uniform(0.0, Hd);
      const double sign = s.uniform() < 0.5 ? -1.0 : 1.0;
      const double amp = sign * s.uniform(cfg.blob_amplitude_min, cfg.blob_amplitude_max);
      const double sigma = side * s.uniform(cfg.blob_width_min, cfg.blob_width_max);
      const auto modulation = smooth_noise(rng::key({base, kBlobDomain, b}), T, sigma_t);
      for (std::size_t t = 0; t < T; ++t) {
        const double a = amp * (1.0 + 0.5 * modulation[t]);
        for (std::size_t x = 0; x < W; ++x) {
          const double d = wrap_offset(static_cast<double>(x) - px, Wd);
          gx[x] = rng::det_exp(-d * d / (2.0 * sigma * sigma));
        }
        for (std::size_t y = 0; y < H; ++y) {
          const double d = wrap_offset(static_cast<double>(y) - py, Hd);
          gy[y] = a * rng::det_exp(-d * d / (2.0 * sigma * sigma));
        }
        double* frame = raw.data() + t * H * W;
        for (std::size_t y = 0; y < H; ++y) {
          for (std::size_t x = 0; x < W; ++x) frame[y * W + x] += gy[y] * gx[x];
        }
        const Velocity v = velocity(flow, px, py, static_cast<double>(t), Wd, Hd);
        px = wrap_into(px + v.u, Wd);
        py = wrap_into(py + v.v, Hd);
      }
    }
  }

  // Red-noise background: Fourier modes with smoothly varying coefficients.
  if (cfg.background_amplitude > 0.0) {
    struct Mode {
      int kx, ky;
      double amp;
      std::vector<double> c, s;
    };
    std::vector<Mode> modes;
    const int K = cfg.background_max_wavenumber;
    double total = 0.0;
    for (int kx = 0; kx <= K; ++kx) {
      for (int ky = -K; ky <= K; ++ky) {
        if (kx == 0 && ky <= 0) continue;
        const double k = std::sqrt(static_cast<double>(kx * kx + ky * ky));
        if (k > K) continue;
        Mode m{kx, ky, rng::det_exp(-0.5 * cfg.background_slope * rng::det_log(k)), {}, {}};
        const auto id = static_cast<std::uint64_t>((kx + K) * (2 * K + 1) + (ky + K));
        m.c = smooth_noise(rng::key({base, kBackgroundDomain, id, 0}), T, sigma_t);
        m.s = smooth_noise(rng::key({base, kBackgroundDomain, id, 1}), T, sigma_t);
        total += m.amp * m.amp;
        modes.push_back(std::move(m));
      }
    }
    const double scale = cfg.background_amplitude / std::sqrt(total);
    std::vector<double> cx(W), sx(W), cy(H), sy(H), a(W), bvec(W);
    for (const auto& m : modes) {
      for (std::size_t x = 0; x < W; ++x) {
        const double arg = kTwoPi * m.kx * static_cast<double>(x) / Wd;
        cx[x] = rng::det_cos(arg);
        sx[x] = rng::det_sin(arg);
      }
      for (std::size_t y = 0; y < H; ++y) {
        const double arg = kTwoPi * m.ky * static_cast<double>(y) / Hd;
        cy[y] = rng::det_cos(arg);
        sy[y] = rng::det_sin(arg);
      }
      for (std::size_t t = 0; t < T; ++t) {
        const double c = m.amp * scale * m.c[t], s = m.amp * scale * m.s[t];
        // c cos(ax + ay) + s sin(ax + ay) = cy (c cx + s sx) + sy (s cx - c sx)
        for (std::size_t x = 0; x < W; ++x) {
          a[x] = c * cx[x] + s * sx[x];
          bvec[x] = s * cx[x] - c * sx[x];
        }
        double* frame = raw.data() + t * H * W;
        for (std::size_t y = 0; y < H; ++y) {
          for (std::size_t x = 0; x < W; ++x) frame[y * W + x] += cy[y] * a[x] + sy[y] * bvec[x];
        }
      }
    }
  }

  // Annual cycle with a smooth spatial pattern.
  if (cfg.seasonal_amplitude > 0.0) {
    rng::Stream s(rng::key({base, kSeasonDomain}));
    const double phase = s.uniform(0.0, kTwoPi), px = s.uniform(0.0, kTwoPi);
    std::vector<double> pattern(H * W);
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        pattern[y * W + x] = 1.0 + 0.5 * rng::det_cos(kTwoPi * static_cast<double>(x) / Wd + px) *
                                       rng::det_cos(kPi * static_cast<double>(y) / Hd);
      }
    }
    for (std::size_t t = 0; t < T; ++t) {
      const double a = cfg.seasonal_amplitude * rng::det_cos(kTwoPi * static_cast<double>(t) / 365.25 + phase);
      double* frame = raw.data() + t * H * W;
      for (std::size_t i = 0; i < H * W; ++i) frame[i] += a * pattern[i];
    }
  }

  const auto land = gen_land_mask(cfg, seed);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < H * W; ++i) {
      if (land[i]) continue;
      lo = std::min(lo, raw[t * H * W + i]);
      hi = std::max(hi, raw[t * H * W + i]);
    }
  }

  FieldMeta meta;
  meta.time_origin = time_origin;
  SpatioTemporalField field(Dims{T, H, W}, meta);
  std::copy(land.begin(), land.end(), field.land().begin());
  const double span = hi - lo;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        if (land[y * W + x]) continue;
        const double r = raw[(t * H + y) * W + x];
        const double unit = span > 1e-12 ? 2.0 * (r - lo) / span - 1.0 : 0.0;
        field.set(t, y, x, static_cast<float>(cfg.mean_log10 + cfg.half_range * unit));
      }
    }
  }
  return field;
}

// ---------------------------------------------------------------------------

std::vector<double> cloud_targets(const CloudConfig& cfg, std::size_t t, std::uint64_t seed,
                                  const std::string& time_origin) {
  cfg.check();
  const long long origin = parse_iso_date(time_origin);
  const long long year_start = parse_iso_date(time_origin.substr(0, 4) + "-01-01");
  const double mid = 0.5 * (cfg.min_missing + cfg.max_missing);
  const double amp = 0.5 * (cfg.max_missing - cfg.min_missing);
  rng::Stream s(rng::key({seed, kTargetDomain}));
  std::vector<double> out(t);
  for (std::size_t i = 0; i < t; ++i) {
    const double day = static_cast<double>(origin - year_start) + static_cast<double>(i) -
                       static_cast<double>(cfg.peak_day_of_year);
    const double v = mid + amp * rng::det_cos(kTwoPi * day / 365.25) + cfg.jitter * (2.0 * s.uniform_at(i) - 1.0);
    out[i] = std::clamp(v, cfg.min_missing, cfg.max_missing);
  }
  return out;
}

std::vector<std::uint8_t> gen_cloud_mask(const CloudConfig& cfg, std::uint64_t seed, const Dims& dims,
                                         std::span<const std::uint8_t> land, std::span<const double> targets) {
  cfg.check();
  const std::size_t H = dims.h, W = dims.w, fs = dims.frame_size();
  if (land.size() != fs) throw std::invalid_argument("gen_cloud_mask: land mask size mismatch");
  if (targets.size() != dims.t) throw std::invalid_argument("gen_cloud_mask: one target ratio per day is required");
  for (double r : targets) {
    if (!ratio_ok(r)) throw ConfigError("cloud target ratios must be within [0, 1]");
  }
  std::vector<std::size_t> sea;
  for (std::size_t i = 0; i < fs; ++i) {
    if (!land[i]) sea.push_back(i);
  }
  const double side = static_cast<double>(std::min(H, W));

  struct Element {
    double x, y, a, b, angle, weight;
  };
  rng::Stream s(rng::key({seed, kCloudDomain}));
  auto draw = [&] {
    Element e{};
    e.x = s.uniform(-0.1, 1.1) * static_cast<double>(W);
    e.y = s.uniform(-0.1, 1.1) * static_cast<double>(H);
    e.a = side * s.uniform(cfg.element_size_min, cfg.element_size_max);
    e.b = side * s.uniform(cfg.element_size_min, cfg.element_size_max);
    e.angle = s.uniform(0.0, kPi);
    e.weight = s.uniform(0.5, 1.5);
    return e;
  };
  std::vector<Element> elems(cfg.n_elements);
  for (auto& e : elems) e = draw();

  std::vector<std::uint8_t> valid(dims.size(), 0);
  std::vector<double> density(fs);
  std::vector<std::size_t> order(sea.size());
  const rng::Stream speckle(rng::key({seed, kCloudDomain, 1}));
  const double rho = cfg.persistence;
  for (std::size_t t = 0; t < dims.t; ++t) {
    if (t > 0) {
      for (auto& e : elems) {
        const Element n = draw();
        e.x = rho * e.x + (1.0 - rho) * n.x;
        e.y = rho * e.y + (1.0 - rho) * n.y;
        e.a = rho * e.a + (1.0 - rho) * n.a;
        e.b = rho * e.b + (1.0 - rho) * n.b;
        e.angle = rho * e.angle + (1.0 - rho) * n.angle;
        e.weight = rho * e.weight + (1.0 - rho) * n.weight;
      }
    }
    std::fill(density.begin(), density.end(), 0.0);
    for (const auto& e : elems) {
      const double ca = rng::det_cos(e.angle), sa = rng::det_sin(e.angle);
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          const double dx = static_cast<double>(x) - e.x, dy = static_cast<double>(y) - e.y;
          const double u = (ca * dx + sa * dy) / e.a, v = (ca * dy - sa * dx) / e.b;
          density[y * W + x] += e.weight / (1.0 + u * u + v * v);
        }
      }
    }
    for (std::size_t i = 0; i < fs; ++i) density[i] += 0.02 * speckle.uniform_at(t * fs + i);

    const auto n_cloud = static_cast<std::size_t>(std::llround(targets[t] * static_cast<double>(sea.size())));
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto denser = [&](std::size_t i, std::size_t j) {
      const double a = density[sea[i]], b = density[sea[j]];
      return a != b ? a > b : i < j;
    };
    if (n_cloud > 0 && n_cloud < order.size()) {
      std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_cloud), order.end(), denser);
    }
    std::uint8_t* frame = valid.data() + t * fs;
    for (std::size_t i : sea) frame[i] = 1;
    for (std::size_t k = 0; k < std::min(n_cloud, order.size()); ++k) frame[sea[order[k]]] = 0;
  }
  return valid;
}

// ---------------------------------------------------------------------------

SensorMask gen_sensor_mask(const SensorConfig& cfg, std::uint64_t seed, const Dims& dims,
                           std::span<const std::uint8_t> valid) {
  cfg.check();
  if (valid.size() != dims.size()) throw std::invalid_argument("gen_sensor_mask: validity size mismatch");
  const std::size_t H = dims.h, W = dims.w, fs = dims.frame_size();
  const double Hd = static_cast<double>(H), Wd = static_cast<double>(W);
  const double diag = std::sqrt(Hd * Hd + Wd * Wd);

  SensorMask out;
  out.sensors.assign(dims.size(), 0);
  for (const auto& s : cfg.sensors) out.sensor_names.push_back(s.name);

  struct Pass {
    bool active;
    double ca, sa, center, half;
  };
  std::vector<Pass> passes(cfg.sensors.size());
  for (std::size_t t = 0; t < dims.t; ++t) {
    for (std::size_t k = 0; k < cfg.sensors.size(); ++k) {
      const auto& s = cfg.sensors[k];
      Pass& p = passes[k];
      p.active = sensor_active(s, t);
      const double ang = s.angle_deg * kPi / 180.0;
      p.ca = rng::det_cos(ang);
      p.sa = rng::det_sin(ang);
      const double reach = 0.5 * Wd * std::abs(p.ca) + 0.5 * Hd * std::abs(p.sa);
      p.center = reach * (2.0 * rng::Stream(rng::key({seed, kSensorDomain, k})).uniform_at(t) - 1.0);
      p.half = 0.5 * s.swath * diag;
    }
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t idx = t * fs + y * W + x;
        if (!valid[idx]) continue;
        std::uint16_t bits = 0;
        double best = std::numeric_limits<double>::infinity();
        std::size_t nearest = cfg.sensors.size();
        for (std::size_t k = 0; k < cfg.sensors.size(); ++k) {
          const Pass& p = passes[k];
          if (!p.active) continue;
          // Across-track coordinate relative to the swath center.
          const double across = (static_cast<double>(x) + 0.5 - 0.5 * Wd) * p.ca +
                                (static_cast<double>(y) + 0.5 - 0.5 * Hd) * p.sa - p.center;
          const double outside = std::abs(across) - p.half;
          const auto& s = cfg.sensors[k];
          bool seen = outside <= 0.0;
          if (seen && s.stripe_period > 0) {
            const auto col = static_cast<long long>(std::floor(across + p.half));
            seen = (col % s.stripe_period) >= s.stripe_width;
          }
          if (seen) bits |= static_cast<std::uint16_t>(1u << k);
          const double dist = std::max(outside, 0.0);
          if (dist < best) {
            best = dist;
            nearest = k;
          }
        }
        if (bits == 0 && nearest < cfg.sensors.size()) bits = static_cast<std::uint16_t>(1u << nearest);
        out.sensors[idx] = bits;
      }
    }
  }
  return out;
}

Dataset generate(const SynthConfig& cfg) {
  cfg.truth.check();
  cfg.cloud.check();
  cfg.sensors.check();
  Dataset ds;
  ds.truth = gen_truth(cfg.truth, cfg.seed, cfg.time_origin);
  const Dims& d = ds.truth.dims();
  ds.target_missing = cloud_targets(cfg.cloud, d.t, cfg.seed, cfg.time_origin);
  auto valid = gen_cloud_mask(cfg.cloud, cfg.seed, d, ds.truth.land(), ds.target_missing);
  SensorMask sensors = gen_sensor_mask(cfg.sensors, cfg.seed, d, valid);
  ds.gappy = ds.truth;
  for (std::size_t t = 0; t < d.t; ++t) {
    for (std::size_t y = 0; y < d.h; ++y) {
      for (std::size_t x = 0; x < d.w; ++x) {
        const auto idx = d.index(t, y, x);
        // Pixels seen by no active sensor cannot be part of the merged product.
        if (!valid[idx] || sensors.sensors[idx] == 0) {
          ds.gappy.clear(t, y, x);
          sensors.sensors[idx] = 0;
        }
      }
    }
  }
  ds.gappy.sensors() = std::move(sensors);
  return ds;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const SynthConfig& cfg) {
  const auto& t = cfg.truth;
  const auto& c = cfg.cloud;
  nlohmann::json sensors = nlohmann::json::array();
  for (const auto& s : cfg.sensors.sensors) {
    sensors.push_back({{"name", s.name},
                       {"swath", s.swath},
                       {"angle_deg", s.angle_deg},
                       {"revisit_days", s.revisit_days},
                       {"phase", s.phase},
                       {"stripe_period", s.stripe_period},
                       {"stripe_width", s.stripe_width}});
  }
  return {
      {"seed", cfg.seed},
      {"time_origin", cfg.time_origin},
      {"truth",
       {{"t", t.t},
        {"h", t.h},
        {"w", t.w},
        {"land_fraction", t.land_fraction},
        {"n_blobs", t.n_blobs},
        {"blob_amplitude_min", t.blob_amplitude_min},
        {"blob_amplitude_max", t.blob_amplitude_max},
        {"blob_width_min", t.blob_width_min},
        {"blob_width_max", t.blob_width_max},
        {"flow_speed", t.flow_speed},
        {"flow_modes", t.flow_modes},
        {"background_amplitude", t.background_amplitude},
        {"background_slope", t.background_slope},
        {"background_max_wavenumber", t.background_max_wavenumber},
        {"seasonal_amplitude", t.seasonal_amplitude},
        {"decorrelation_days", t.decorrelation_days},
        {"mean_log10", t.mean_log10},
        {"half_range", t.half_range}}},
      {"cloud",
       {{"min_missing", c.min_missing},
        {"max_missing", c.max_missing},
        {"peak_day_of_year", c.peak_day_of_year},
        {"jitter", c.jitter},
        {"n_elements", c.n_elements},
        {"persistence", c.persistence},
        {"element_size_min", c.element_size_min},
        {"element_size_max", c.element_size_max}}},
      {"sensors", {{"list", sensors}, {"wide_swath", cfg.sensors.wide_swath}}},
  };
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig cfg;
  json_util::ObjectReader r(j, "synth");
  r.get("seed", cfg.seed);
  r.get("time_origin", cfg.time_origin);
  parse_iso_date(cfg.time_origin);
  if (const auto* tj = r.child("truth")) {
    json_util::ObjectReader tr(*tj, "synth.truth");
    auto& t = cfg.truth;
    tr.get("t", t.t);
    tr.get("h", t.h);
    tr.get("w", t.w);
    tr.get("land_fraction", t.land_fraction);
    tr.get("n_blobs", t.n_blobs);
    tr.get("blob_amplitude_min", t.blob_amplitude_min);
    tr.get("blob_amplitude_max", t.blob_amplitude_max);
    tr.get("blob_width_min", t.blob_width_min);
    tr.get("blob_width_max", t.blob_width_max);
    tr.get("flow_speed", t.flow_speed);
    tr.get("flow_modes", t.flow_modes);
    tr.get("background_amplitude", t.background_amplitude);
    tr.get("background_slope", t.background_slope);
    tr.get("background_max_wavenumber", t.background_max_wavenumber);
    tr.get("seasonal_amplitude", t.seasonal_amplitude);
    tr.get("decorrelation_days", t.decorrelation_days);
    tr.get("mean_log10", t.mean_log10);
    tr.get("half_range", t.half_range);
    tr.finish();
  }
  if (const auto* cj = r.child("cloud")) {
    json_util::ObjectReader cr(*cj, "synth.cloud");
    auto& c = cfg.cloud;
    cr.get("min_missing", c.min_missing);
    cr.get("max_missing", c.max_missing);
    cr.get("peak_day_of_year", c.peak_day_of_year);
    cr.get("jitter", c.jitter);
    cr.get("n_elements", c.n_elements);
    cr.get("persistence", c.persistence);
    cr.get("element_size_min", c.element_size_min);
    cr.get("element_size_max", c.element_size_max);
    cr.finish();
  }
  if (const auto* sj = r.child("sensors")) {
    json_util::ObjectReader sr(*sj, "synth.sensors");
    sr.get("wide_swath", cfg.sensors.wide_swath);
    if (const auto* list = sr.child("list")) {
      if (!list->is_array()) throw ConfigError("synth.sensors.list: expected an array");
      cfg.sensors.sensors.clear();
      for (std::size_t i = 0; i < list->size(); ++i) {
        json_util::ObjectReader er((*list)[i], "synth.sensors.list[" + std::to_string(i) + "]");
        SensorSpec s;
        er.get("name", s.name);
        er.get("swath", s.swath);
        er.get("angle_deg", s.angle_deg);
        er.get("revisit_days", s.revisit_days);
        er.get("phase", s.phase);
        er.get("stripe_period", s.stripe_period);
        er.get("stripe_width", s.stripe_width);
        er.finish();
        cfg.sensors.sensors.push_back(std::move(s));
      }
    }
    sr.finish();
  }
  r.finish();
  cfg.truth.check();
  cfg.cloud.check();
  cfg.sensors.check();
  return cfg;
}

}  // namespace gapfill::synth
