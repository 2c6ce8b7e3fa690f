#pragma once

// Observation sub-sampling: turns a gappy ground truth into an even gappier
// input. The complement of the kept set within valid pixels is the evaluation
// domain.

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "gapfill/grid.hpp"

namespace gapfill {

struct KeepAll {};  // input == target; used to demonstrate identity collapse

struct RandomPixel {
  double remove_rate = 0.5;
};

struct RandomPatch {
  double remove_rate = 0.5;
  std::size_t min_side = 5;
  std::size_t max_side = 25;
  double exempt_missing_threshold = 0.75;
};

struct SensorSubset {
  std::vector<std::string> sensor_ids;
};

using MaskStrategy = std::variant<KeepAll, RandomPixel, RandomPatch, SensorSubset>;

struct MaskSpec {
  MaskStrategy strategy = RandomPatch{};
  std::uint64_t seed = 0;

  /// Short identifier, e.g. "patch", "random-pixel", "sensor:OLCI-S3A", "none".
  std::string id() const;
  /// Throws ConfigError if the strategy parameters are out of range for H x W.
  void check(std::size_t h, std::size_t w) const;
};

/// JSON form: {"strategy": "none" | "random-pixel" | "patch" | "sensor", ...parameters, "seed"}.
/// Unknown keys raise ConfigError naming the key; omitted parameters take defaults.
nlohmann::json mask_spec_to_json(const MaskSpec& spec);
MaskSpec mask_spec_from_json(const nlohmann::json& j);

struct ObservationMask {
  Dims dims;
  std::vector<std::uint8_t> keep;  // T*H*W

  std::size_t kept() const;
};

struct Patch {
  std::size_t t = 0;
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

ObservationMask gen_random_pixel_mask(const SpatioTemporalField& field, const MaskSpec& spec);

/// Random rectangles per frame until the removed fraction of valid pixels
/// first reaches remove_rate. `patches`, when given, receives every sampled
/// rectangle.
ObservationMask gen_patch_mask(const SpatioTemporalField& field, const MaskSpec& spec,
                               std::vector<Patch>* patches = nullptr);

ObservationMask apply_sensor_subset(const SpatioTemporalField& field, const SensorMask& sensors,
                                    const MaskSpec& spec);

/// Dispatch on spec.strategy. SensorSubset uses the field's own sensor array.
ObservationMask generate_mask(const SpatioTemporalField& field, const MaskSpec& spec);

struct ObsSplit {
  SpatioTemporalField obs;
  std::vector<std::uint8_t> eval_domain;  // valid && !keep
};

ObsSplit split_obs_target(const SpatioTemporalField& field, const ObservationMask& mask);

/// Export a mask as a GFF field whose valid_mask is `keep` (values 0 where kept).
SpatioTemporalField mask_as_field(const SpatioTemporalField& like, const ObservationMask& mask);
ObservationMask mask_from_field(const SpatioTemporalField& field);

}  // namespace gapfill
