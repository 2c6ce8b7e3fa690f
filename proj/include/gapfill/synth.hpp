#pragma once

// Synthetic observing system: a smooth, advected ground-truth field, seasonal
// cloud cover, and a multi-sensor swath record for the cloud-free pixels.
// Every draw comes from counter-based streams and the deterministic
// elementary functions in rng.hpp, so outputs are identical across platforms.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gapfill/grid.hpp"

namespace gapfill::synth {

struct TruthConfig {
  std::size_t t = 730;
  std::size_t h = 128;
  std::size_t w = 128;
  double land_fraction = 0.15;     // mean depth of the northern coastline, share of H
  std::size_t n_blobs = 16;
  double blob_amplitude_min = 0.5;
  double blob_amplitude_max = 1.5;
  double blob_width_min = 0.03;    // Gaussian sigma, share of min(H, W)
  double blob_width_max = 0.10;
  double flow_speed = 0.006;       // peak advection speed, share of the domain per day
  std::size_t flow_modes = 4;
  double background_amplitude = 0.6;
  double background_slope = 3.0;   // power spectrum ~ |k|^-slope
  int background_max_wavenumber = 6;
  double seasonal_amplitude = 0.4;
  double decorrelation_days = 10.0;
  double mean_log10 = -2.5;        // center of the output range
  double half_range = 0.5;         // values span mean +- half_range

  void check() const;
};

struct CloudConfig {
  double min_missing = 0.10;       // seasonal sinusoid bounds of the daily target ratio
  double max_missing = 0.80;
  int peak_day_of_year = 15;       // cloudiest day
  double jitter = 0.05;            // uniform day-to-day perturbation of the target
  std::size_t n_elements = 24;
  double persistence = 0.6;        // day-to-day morphing weight of cloud elements
  double element_size_min = 0.05;  // semi-axes, share of min(H, W)
  double element_size_max = 0.25;

  void check() const;
};

struct SensorSpec {
  std::string name;
  double swath = 0.6;              // swath width, share of the domain diagonal
  double angle_deg = 12.0;         // ground-track tilt from north
  int revisit_days = 1;
  int phase = 0;                   // active when (t + phase) % revisit_days == 0
  int stripe_period = 0;           // instrument dropout stripes (0 = none), in pixels
  int stripe_width = 1;
};

struct SensorConfig {
  std::vector<SensorSpec> sensors = default_sensors();
  std::string wide_swath = "VIIRS-JPSS1";

  static std::vector<SensorSpec> default_sensors();
  void check() const;
};

struct SynthConfig {
  TruthConfig truth;
  CloudConfig cloud;
  SensorConfig sensors;
  std::uint64_t seed = 42;
  std::string time_origin = "2017-01-01";
};

struct Dataset {
  SpatioTemporalField truth;  // fully valid at sea
  SpatioTemporalField gappy;  // truth restricted to cloud-free pixels, with sensor record
  std::vector<double> target_missing;  // per-day cloud target ratio
};

/// Northern coastline land mask (H x W, 1 = land).
std::vector<std::uint8_t> gen_land_mask(const TruthConfig& cfg, std::uint64_t seed);

SpatioTemporalField gen_truth(const TruthConfig& cfg, std::uint64_t seed,
                              const std::string& time_origin = "2017-01-01");

/// Daily target missing ratio: seasonal sinusoid plus jitter, clamped to [min_missing, max_missing].
std::vector<double> cloud_targets(const CloudConfig& cfg, std::size_t t, std::uint64_t seed,
                                  const std::string& time_origin = "2017-01-01");

/// T*H*W validity (1 = cloud-free sea). Each day hides exactly round(target * sea) sea pixels.
std::vector<std::uint8_t> gen_cloud_mask(const CloudConfig& cfg, std::uint64_t seed, const Dims& dims,
                                         std::span<const std::uint8_t> land,
                                         std::span<const double> targets);

/// Sensor bits restricted to `valid`. Valid pixels outside every active swath
/// are attributed to the active sensor with the nearest swath; on days with no
/// active sensor they stay unattributed (generate() drops them from validity).
SensorMask gen_sensor_mask(const SensorConfig& cfg, std::uint64_t seed, const Dims& dims,
                           std::span<const std::uint8_t> valid);

/// Whether `s` images day t at all.
bool sensor_active(const SensorSpec& s, std::size_t t);

Dataset generate(const SynthConfig& cfg);

// JSON forms; unknown keys raise ConfigError naming the key.
nlohmann::json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j);

}  // namespace gapfill::synth
