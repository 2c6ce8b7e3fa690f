#pragma once

// Gridded gappy fields: data model, value transforms, windowing and the GFF
// container format.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gapfill {

struct Dims {
  std::size_t t = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t frame_size() const { return h * w; }
  std::size_t size() const { return t * h * w; }
  std::size_t index(std::size_t ti, std::size_t hi, std::size_t wi) const {
    return (ti * h + hi) * w + wi;
  }
  bool operator==(const Dims&) const = default;
};

/// Per-pixel, per-day record of contributing sensors (bit i = sensor_names[i]).
struct SensorMask {
  std::vector<std::uint16_t> sensors;  // T*H*W, (t,h,w) row-major
  std::vector<std::string> sensor_names;

  /// Bitmask for a set of sensor names; throws ConfigError on unknown names.
  std::uint16_t bits_for(std::span<const std::string> names) const;
  std::optional<std::size_t> find(const std::string& name) const;
};

struct FieldMeta {
  std::string unit = "m^-1";
  bool log10 = true;
  std::string time_origin = "2017-01-01";  // ISO-8601 date of frame 0
  int time_step_days = 1;
  std::array<double, 2> lat_bounds{41.0, 43.5};
  std::array<double, 2> lon_bounds{3.0, 6.0};

  bool operator==(const FieldMeta&) const = default;
};

/// T x H x W gridded values with land mask and per-pixel validity.
///
/// Invalid pixels hold NaN; `valid` is the authoritative flag. Land pixels are
/// never valid.
class SpatioTemporalField {
 public:
  SpatioTemporalField() = default;
  /// All-invalid field of the given extents (values NaN, no land).
  explicit SpatioTemporalField(Dims dims, FieldMeta meta = {});

  const Dims& dims() const { return dims_; }
  const FieldMeta& meta() const { return meta_; }
  FieldMeta& meta() { return meta_; }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }
  std::span<std::uint8_t> valid() { return valid_; }
  std::span<const std::uint8_t> valid() const { return valid_; }
  std::span<std::uint8_t> land() { return land_; }
  std::span<const std::uint8_t> land() const { return land_; }

  float value(std::size_t t, std::size_t h, std::size_t w) const {
    return values_[dims_.index(t, h, w)];
  }
  bool is_valid(std::size_t t, std::size_t h, std::size_t w) const {
    return valid_[dims_.index(t, h, w)] != 0;
  }
  bool is_land(std::size_t h, std::size_t w) const { return land_[h * dims_.w + w] != 0; }

  /// Set a valid observation (clears nothing else).
  void set(std::size_t t, std::size_t h, std::size_t w, float v);
  /// Mark a pixel missing and write the NaN sentinel.
  void clear(std::size_t t, std::size_t h, std::size_t w);

  const std::optional<SensorMask>& sensors() const { return sensors_; }
  std::optional<SensorMask>& sensors() { return sensors_; }

  std::size_t sea_pixel_count() const;
  std::size_t valid_count() const;

  /// Frames [t0, t0 + len) as a new field; time_origin is shifted accordingly.
  SpatioTemporalField slice_time(std::size_t t0, std::size_t len) const;

  /// Throws FormatError describing the first broken invariant.
  void validate() const;

  bool operator==(const SpatioTemporalField& other) const;

 private:
  Dims dims_{};
  FieldMeta meta_{};
  std::vector<float> values_;
  std::vector<std::uint8_t> valid_;
  std::vector<std::uint8_t> land_;
  std::optional<SensorMask> sensors_;
};

/// Bitwise comparison of two fields, treating NaN payloads as raw bits.
bool bit_identical(const SpatioTemporalField& a, const SpatioTemporalField& b);

// ---------------------------------------------------------------------------
// GFF container

SpatioTemporalField load_field(const std::filesystem::path& path);
void save_field(const SpatioTemporalField& field, const std::filesystem::path& path);

/// Serialize / parse the container in memory (used by load/save and tests).
std::vector<std::uint8_t> encode_field(const SpatioTemporalField& field);
SpatioTemporalField decode_field(std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------------------
// Statistics and transforms

struct NormStats {
  double mean = 0.0;
  double std = 1.0;
};

/// Mean and population std over valid pixels of frames [t0, t1).
NormStats compute_norm_stats(const SpatioTemporalField& field, std::size_t t0, std::size_t t1);
NormStats compute_norm_stats(const SpatioTemporalField& field);

SpatioTemporalField standardize(const SpatioTemporalField& field, const NormStats& stats);
SpatioTemporalField destandardize(const SpatioTemporalField& field, const NormStats& stats);

/// Fraction of sea pixels of frame t that are not valid.
double missing_ratio(const SpatioTemporalField& field, std::size_t t);

/// One "t,date,missing_ratio" row per frame, with header.
void write_frame_stats_csv(const SpatioTemporalField& field, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Windows

/// A length-L time window. Arrays are L*H*W in (t,h,w) order; gaps are NaN.
struct WindowSample {
  std::size_t start = 0;
  std::size_t length = 0;
  std::size_t center_time = 0;
  std::vector<double> obs;
  std::vector<double> target;
  std::vector<std::uint8_t> target_mask;
};

std::size_t window_count(std::size_t t, std::size_t length, std::size_t stride);

/// Windows starting at 0, stride, 2*stride, ... up to T - L.
std::vector<WindowSample> extract_windows(const SpatioTemporalField& obs,
                                          const SpatioTemporalField& target,
                                          std::size_t length, std::size_t stride);

// ---------------------------------------------------------------------------
// Calendar helpers for ISO-8601 dates ("YYYY-MM-DD").

/// Days since 1970-01-01; throws ConfigError on malformed dates.
long long parse_iso_date(const std::string& iso);
std::string format_iso_date(long long days_since_epoch);
std::string add_days(const std::string& iso, long long days);

}  // namespace gapfill
