#include "gapfill/grid.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "gapfill/errors.hpp"

namespace gapfill {

namespace {

constexpr char kMagic[4] = {'G', 'F', 'F', '1'};
constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  T v;
  std::memcpy(&v, raw, sizeof(T));
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------

std::uint16_t SensorMask::bits_for(std::span<const std::string> names) const {
  std::uint16_t bits = 0;
  for (const auto& n : names) {
    auto idx = find(n);
    if (!idx) throw ConfigError("unknown sensor '" + n + "'");
    bits = static_cast<std::uint16_t>(bits | (1u << *idx));
  }
  return bits;
}

std::optional<std::size_t> SensorMask::find(const std::string& name) const {
  auto it = std::find(sensor_names.begin(), sensor_names.end(), name);
  if (it == sensor_names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - sensor_names.begin());
}

SpatioTemporalField::SpatioTemporalField(Dims dims, FieldMeta meta)
    : dims_(dims),
      meta_(std::move(meta)),
      values_(dims.size(), kNaN),
      valid_(dims.size(), 0),
      land_(dims.frame_size(), 0) {
  if (dims.t == 0 || dims.h == 0 || dims.w == 0) {
    throw ConfigError("field extents must be >= 1");
  }
}

void SpatioTemporalField::set(std::size_t t, std::size_t h, std::size_t w, float v) {
  const auto i = dims_.index(t, h, w);
  values_[i] = v;
  valid_[i] = 1;
}

void SpatioTemporalField::clear(std::size_t t, std::size_t h, std::size_t w) {
  const auto i = dims_.index(t, h, w);
  values_[i] = kNaN;
  valid_[i] = 0;
}

std::size_t SpatioTemporalField::sea_pixel_count() const {
  return static_cast<std::size_t>(std::count(land_.begin(), land_.end(), 0));
}

std::size_t SpatioTemporalField::valid_count() const {
  return static_cast<std::size_t>(std::count(valid_.begin(), valid_.end(), 1));
}

SpatioTemporalField SpatioTemporalField::slice_time(std::size_t t0, std::size_t len) const {
  if (len == 0 || t0 + len > dims_.t) throw ConfigError("time slice out of range");
  FieldMeta meta = meta_;
  meta.time_origin = add_days(meta_.time_origin, static_cast<long long>(t0) * meta_.time_step_days);
  SpatioTemporalField out(Dims{len, dims_.h, dims_.w}, meta);
  const auto fs = dims_.frame_size();
  std::copy_n(values_.begin() + static_cast<std::ptrdiff_t>(t0 * fs), len * fs, out.values_.begin());
  std::copy_n(valid_.begin() + static_cast<std::ptrdiff_t>(t0 * fs), len * fs, out.valid_.begin());
  out.land_ = land_;
  if (sensors_) {
    SensorMask sm;
    sm.sensor_names = sensors_->sensor_names;
    sm.sensors.assign(sensors_->sensors.begin() + static_cast<std::ptrdiff_t>(t0 * fs),
                      sensors_->sensors.begin() + static_cast<std::ptrdiff_t>((t0 + len) * fs));
    out.sensors_ = std::move(sm);
  }
  return out;
}

void SpatioTemporalField::validate() const {
  if (dims_.t == 0 || dims_.h == 0 || dims_.w == 0) throw FormatError("field extents must be >= 1");
  if (values_.size() != dims_.size() || valid_.size() != dims_.size() ||
      land_.size() != dims_.frame_size()) {
    throw FormatError("array sizes do not match dims");
  }
  for (auto b : land_) {
    if (b > 1) throw FormatError("land_mask bytes must be 0 or 1");
  }
  const auto fs = dims_.frame_size();
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (valid_[i] > 1) throw FormatError("valid_mask bytes must be 0 or 1");
    if (valid_[i]) {
      if (land_[i % fs]) throw FormatError("valid_mask overlaps land_mask");
      if (std::isnan(values_[i])) throw FormatError("valid pixel holds NaN");
    } else if (!std::isnan(values_[i])) {
      throw FormatError("missing pixel does not hold the NaN sentinel");
    }
  }
  if (sensors_) {
    if (sensors_->sensors.size() != dims_.size()) throw FormatError("sensors array size mismatch");
    if (sensors_->sensor_names.size() > 16) throw FormatError("more than 16 sensor names");
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (sensors_->sensors[i] != 0 && !valid_[i]) {
        throw FormatError("sensor bits set on a missing pixel");
      }
      if (sensors_->sensors[i] >> sensors_->sensor_names.size()) {
        throw FormatError("sensor bit beyond the declared sensor names");
      }
    }
  }
}

bool SpatioTemporalField::operator==(const SpatioTemporalField& other) const {
  return bit_identical(*this, other);
}

bool bit_identical(const SpatioTemporalField& a, const SpatioTemporalField& b) {
  if (!(a.dims() == b.dims()) || !(a.meta() == b.meta())) return false;
  if (std::memcmp(a.values().data(), b.values().data(), a.values().size_bytes()) != 0) return false;
  if (!std::equal(a.valid().begin(), a.valid().end(), b.valid().begin())) return false;
  if (!std::equal(a.land().begin(), a.land().end(), b.land().begin())) return false;
  if (a.sensors().has_value() != b.sensors().has_value()) return false;
  if (a.sensors()) {
    if (a.sensors()->sensor_names != b.sensors()->sensor_names) return false;
    if (a.sensors()->sensors != b.sensors()->sensors) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// GFF

std::vector<std::uint8_t> encode_field(const SpatioTemporalField& field) {
  field.validate();
  const auto& d = field.dims();
  const auto& m = field.meta();
  nlohmann::json header;
  header["dims"] = {d.t, d.h, d.w};
  header["dtype"] = "f32le";
  header["unit"] = m.unit;
  header["log10"] = m.log10;
  header["time_origin"] = m.time_origin;
  header["time_step_days"] = m.time_step_days;
  header["lat_bounds"] = m.lat_bounds;
  header["lon_bounds"] = m.lon_bounds;
  nlohmann::json arrays = {"values", "valid_mask", "land_mask"};
  if (field.sensors()) {
    arrays.push_back("sensors");
    header["sensor_names"] = field.sensors()->sensor_names;
  }
  header["arrays"] = arrays;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(8 + text.size() + d.size() * 7 + d.frame_size());
  out.insert(out.end(), kMagic, kMagic + 4);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (float v : field.values()) put_le<float>(out, v);
  out.insert(out.end(), field.valid().begin(), field.valid().end());
  out.insert(out.end(), field.land().begin(), field.land().end());
  if (field.sensors()) {
    for (auto s : field.sensors()->sensors) put_le<std::uint16_t>(out, s);
  }
  return out;
}

SpatioTemporalField decode_field(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw FormatError("file too short for GFF header");
  if (std::memcmp(bytes.data(), "GFF", 3) != 0) throw FormatError("bad magic, not a GFF file");
  if (bytes[3] != '1') throw FormatError("unsupported GFF version");
  const auto hlen = get_le<std::uint32_t>(bytes.data() + 4);
  if (bytes.size() < 8ull + hlen) throw FormatError("header truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + hlen);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  }

  Dims d;
  FieldMeta meta;
  std::vector<std::string> arrays;
  std::vector<std::string> sensor_names;
  try {
    auto dims = header.at("dims");
    if (!dims.is_array() || dims.size() != 3) throw FormatError("malformed header: dims must be [T,H,W]");
    d = Dims{dims[0].get<std::size_t>(), dims[1].get<std::size_t>(), dims[2].get<std::size_t>()};
    if (header.at("dtype").get<std::string>() != "f32le") throw FormatError("unsupported dtype");
    meta.unit = header.at("unit").get<std::string>();
    meta.log10 = header.at("log10").get<bool>();
    meta.time_origin = header.at("time_origin").get<std::string>();
    meta.time_step_days = header.at("time_step_days").get<int>();
    meta.lat_bounds = header.at("lat_bounds").get<std::array<double, 2>>();
    meta.lon_bounds = header.at("lon_bounds").get<std::array<double, 2>>();
    arrays = header.at("arrays").get<std::vector<std::string>>();
    if (header.contains("sensor_names")) {
      sensor_names = header.at("sensor_names").get<std::vector<std::string>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  }
  if (d.t == 0 || d.h == 0 || d.w == 0) throw FormatError("malformed header: zero extent");

  const std::vector<std::string> base = {"values", "valid_mask", "land_mask"};
  const bool base_ok = arrays.size() >= 3 && std::equal(base.begin(), base.end(), arrays.begin());
  const bool has_sensors = arrays.size() == 4 && arrays[3] == "sensors";
  if (!base_ok || (arrays.size() != 3 && !has_sensors)) {
    throw FormatError("malformed header: unsupported arrays list");
  }

  const std::size_t n = d.size();
  const std::size_t expected = n * 4 + n + d.frame_size() + (has_sensors ? n * 2 : 0);
  const std::size_t payload = bytes.size() - 8 - hlen;
  if (payload < expected) throw FormatError("payload truncated");
  if (payload > expected) throw FormatError("trailing bytes after payload");

  SpatioTemporalField f(d, meta);
  const std::uint8_t* p = bytes.data() + 8 + hlen;
  auto vals = f.values();
  for (std::size_t i = 0; i < n; ++i, p += 4) vals[i] = get_le<float>(p);
  std::copy_n(p, n, f.valid().begin());
  p += n;
  std::copy_n(p, d.frame_size(), f.land().begin());
  p += d.frame_size();
  if (has_sensors) {
    SensorMask sm;
    sm.sensor_names = std::move(sensor_names);
    sm.sensors.resize(n);
    for (std::size_t i = 0; i < n; ++i, p += 2) sm.sensors[i] = get_le<std::uint16_t>(p);
    f.sensors() = std::move(sm);
  }
  f.validate();
  return f;
}

SpatioTemporalField load_field(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_field(bytes);
}

void save_field(const SpatioTemporalField& field, const std::filesystem::path& path) {
  const auto bytes = encode_field(field);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

// ---------------------------------------------------------------------------

NormStats compute_norm_stats(const SpatioTemporalField& field, std::size_t t0, std::size_t t1) {
  const auto& d = field.dims();
  if (t0 >= t1 || t1 > d.t) throw ConfigError("invalid time range for normalization stats");
  const auto fs = d.frame_size();
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = t0 * fs; i < t1 * fs; ++i) {
    if (field.valid()[i]) {
      sum += field.values()[i];
      ++count;
    }
  }
  if (count < 2) throw NumericalError("fewer than 2 valid pixels for normalization stats");
  const double mean = sum / static_cast<double>(count);
  double ss = 0.0;
  for (std::size_t i = t0 * fs; i < t1 * fs; ++i) {
    if (field.valid()[i]) {
      const double dv = field.values()[i] - mean;
      ss += dv * dv;
    }
  }
  const double sd = std::sqrt(ss / static_cast<double>(count));
  if (!(sd > 0.0)) throw NumericalError("zero standard deviation in normalization stats");
  return {mean, sd};
}

NormStats compute_norm_stats(const SpatioTemporalField& field) {
  return compute_norm_stats(field, 0, field.dims().t);
}

SpatioTemporalField standardize(const SpatioTemporalField& field, const NormStats& stats) {
  SpatioTemporalField out = field;
  auto v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (out.valid()[i]) v[i] = static_cast<float>((static_cast<double>(v[i]) - stats.mean) / stats.std);
  }
  return out;
}

SpatioTemporalField destandardize(const SpatioTemporalField& field, const NormStats& stats) {
  SpatioTemporalField out = field;
  auto v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (out.valid()[i]) v[i] = static_cast<float>(static_cast<double>(v[i]) * stats.std + stats.mean);
  }
  return out;
}

double missing_ratio(const SpatioTemporalField& field, std::size_t t) {
  const auto& d = field.dims();
  if (t >= d.t) throw ConfigError("frame index out of range");
  std::size_t sea = 0;
  std::size_t missing = 0;
  const auto fs = d.frame_size();
  for (std::size_t p = 0; p < fs; ++p) {
    if (field.land()[p]) continue;
    ++sea;
    if (!field.valid()[t * fs + p]) ++missing;
  }
  if (sea == 0) return 1.0;
  return static_cast<double>(missing) / static_cast<double>(sea);
}

void write_frame_stats_csv(const SpatioTemporalField& field, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "t,date,missing_ratio\n";
  char buf[64];
  for (std::size_t t = 0; t < field.dims().t; ++t) {
    std::snprintf(buf, sizeof buf, "%.6g", missing_ratio(field, t));
    out << t << ','
        << add_days(field.meta().time_origin, static_cast<long long>(t) * field.meta().time_step_days)
        << ',' << buf << '\n';
  }
}

// ---------------------------------------------------------------------------

std::size_t window_count(std::size_t t, std::size_t length, std::size_t stride) {
  if (length == 0 || stride == 0 || length > t) return 0;
  return (t - length) / stride + 1;
}

std::vector<WindowSample> extract_windows(const SpatioTemporalField& obs,
                                          const SpatioTemporalField& target,
                                          std::size_t length, std::size_t stride) {
  const auto& d = target.dims();
  if (!(obs.dims() == d)) throw ConfigError("obs and target dims differ");
  if (length == 0 || length > d.t) throw ConfigError("window length must be in [1, T]");
  if (stride == 0) throw ConfigError("window stride must be >= 1");
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (obs.valid()[i] && !target.valid()[i]) {
      throw ConfigError("obs valid pixels must be a subset of target valid pixels");
    }
  }
  const auto fs = d.frame_size();
  const auto n = window_count(d.t, length, stride);
  std::vector<WindowSample> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    WindowSample ws;
    ws.start = k * stride;
    ws.length = length;
    ws.center_time = ws.start + length / 2;
    const auto off = ws.start * fs;
    ws.obs.resize(length * fs);
    ws.target.resize(length * fs);
    ws.target_mask.resize(length * fs);
    for (std::size_t i = 0; i < length * fs; ++i) {
      ws.obs[i] = obs.valid()[off + i] ? obs.values()[off + i] : std::numeric_limits<double>::quiet_NaN();
      ws.target[i] =
          target.valid()[off + i] ? target.values()[off + i] : std::numeric_limits<double>::quiet_NaN();
      ws.target_mask[i] = target.valid()[off + i];
    }
    out.push_back(std::move(ws));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Civil calendar conversions (proleptic Gregorian).

long long parse_iso_date(const std::string& iso) {
  int y = 0;
  unsigned m = 0;
  unsigned dd = 0;
  char tail = 0;
  if (iso.size() != 10 || std::sscanf(iso.c_str(), "%4d-%2u-%2u%c", &y, &m, &dd, &tail) != 3 || m < 1 ||
      m > 12 || dd < 1 || dd > 31) {
    throw ConfigError("malformed ISO date '" + iso + "'");
  }
  y -= m <= 2;
  const long long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + dd - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  const long long days = era * 146097 + static_cast<long long>(doe) - 719468;
  if (format_iso_date(days) != iso) throw ConfigError("invalid calendar date '" + iso + "'");
  return days;
}

std::string format_iso_date(long long z) {
  z += 719468;
  const long long era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const long long y0 = static_cast<long long>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  const long long y = y0 + (m <= 2);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04lld-%02u-%02u", y, m, d);
  return buf;
}

std::string add_days(const std::string& iso, long long days) {
  return format_iso_date(parse_iso_date(iso) + days);
}

}  // namespace gapfill
