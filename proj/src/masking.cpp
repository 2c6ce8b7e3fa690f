#include "gapfill/masking.hpp"

#include <algorithm>
#include <limits>

#include "gapfill/errors.hpp"
#include "gapfill/rng.hpp"

namespace gapfill {

namespace {

// Stream domains keep pixel and patch draws from sharing counters.
constexpr std::uint64_t kPixelDomain = 0x50495845ULL;
constexpr std::uint64_t kPatchDomain = 0x50415443ULL;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_rate(double r) {
  if (!(r > 0.0 && r < 1.0)) throw ConfigError("remove_rate must be in (0, 1)");
}

}  // namespace

std::string MaskSpec::id() const {
  return std::visit(overloaded{
                        [](const KeepAll&) -> std::string { return "none"; },
                        [](const RandomPixel&) -> std::string { return "random-pixel"; },
                        [](const RandomPatch&) -> std::string { return "patch"; },
                        [](const SensorSubset& s) -> std::string {
                          std::string out = "sensor:";
                          for (std::size_t i = 0; i < s.sensor_ids.size(); ++i) {
                            if (i) out += '+';
                            out += s.sensor_ids[i];
                          }
                          return out;
                        },
                    },
                    strategy);
}

void MaskSpec::check(std::size_t h, std::size_t w) const {
  std::visit(overloaded{
                 [](const KeepAll&) {},
                 [](const RandomPixel& s) { check_rate(s.remove_rate); },
                 [&](const RandomPatch& s) {
                   check_rate(s.remove_rate);
                   if (s.min_side < 1 || s.min_side > s.max_side || s.max_side > std::min(h, w)) {
                     throw ConfigError("patch sides must satisfy 1 <= min_side <= max_side <= min(H, W)");
                   }
                   if (!(s.exempt_missing_threshold >= 0.0 && s.exempt_missing_threshold <= 1.0)) {
                     throw ConfigError("exempt_missing_threshold must be in [0, 1]");
                   }
                 },
                 [](const SensorSubset& s) {
                   if (s.sensor_ids.empty()) throw ConfigError("sensor subset must not be empty");
                 },
             },
             strategy);
}

nlohmann::json mask_spec_to_json(const MaskSpec& spec) {
  nlohmann::json j = std::visit(
      overloaded{
          [](const KeepAll&) { return nlohmann::json{{"strategy", "none"}}; },
          [](const RandomPixel& s) { return nlohmann::json{{"strategy", "random-pixel"}, {"remove_rate", s.remove_rate}}; },
          [](const RandomPatch& s) {
            return nlohmann::json{{"strategy", "patch"},
                                  {"remove_rate", s.remove_rate},
                                  {"min_side", s.min_side},
                                  {"max_side", s.max_side},
                                  {"exempt_missing_threshold", s.exempt_missing_threshold}};
          },
          [](const SensorSubset& s) { return nlohmann::json{{"strategy", "sensor"}, {"sensors", s.sensor_ids}}; },
      },
      spec.strategy);
  j["seed"] = spec.seed;
  return j;
}

MaskSpec mask_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("mask: expected an object");
  if (!j.contains("strategy") || !j["strategy"].is_string()) throw ConfigError("mask: missing key 'strategy'");
  const auto kind = j["strategy"].get<std::string>();
  std::vector<std::string> allowed{"strategy", "seed"};
  MaskSpec spec;
  auto number = [&](const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number()) throw ConfigError(std::string("mask: key '") + key + "' must be a number");
    return j[key].get<double>();
  };
  auto count = [&](const char* key, std::size_t fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number_unsigned()) throw ConfigError(std::string("mask: key '") + key + "' must be a non-negative integer");
    return j[key].get<std::size_t>();
  };
  if (kind == "none") {
    spec.strategy = KeepAll{};
  } else if (kind == "random-pixel") {
    allowed.push_back("remove_rate");
    spec.strategy = RandomPixel{number("remove_rate", RandomPixel{}.remove_rate)};
  } else if (kind == "patch") {
    allowed.insert(allowed.end(), {"remove_rate", "min_side", "max_side", "exempt_missing_threshold"});
    const RandomPatch d;
    spec.strategy = RandomPatch{number("remove_rate", d.remove_rate), count("min_side", d.min_side),
                                count("max_side", d.max_side),
                                number("exempt_missing_threshold", d.exempt_missing_threshold)};
  } else if (kind == "sensor") {
    allowed.push_back("sensors");
    if (!j.contains("sensors") || !j["sensors"].is_array()) throw ConfigError("mask: missing key 'sensors'");
    SensorSubset s;
    for (const auto& v : j["sensors"]) {
      if (!v.is_string()) throw ConfigError("mask: 'sensors' must list sensor names");
      s.sensor_ids.push_back(v.get<std::string>());
    }
    spec.strategy = std::move(s);
  } else {
    throw ConfigError("mask: unknown strategy '" + kind + "'");
  }
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("mask: unknown key '" + key + "'");
    }
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw ConfigError("mask: key 'seed' must be a non-negative integer");
    spec.seed = j["seed"].get<std::uint64_t>();
  }
  return spec;
}

std::size_t ObservationMask::kept() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), 1));
}

ObservationMask gen_random_pixel_mask(const SpatioTemporalField& field, const MaskSpec& spec) {
  const auto* s = std::get_if<RandomPixel>(&spec.strategy);
  if (!s) throw ConfigError("gen_random_pixel_mask requires a RandomPixel spec");
  spec.check(field.dims().h, field.dims().w);
  const auto& d = field.dims();
  const auto fs = d.frame_size();
  ObservationMask m{d, std::vector<std::uint8_t>(field.valid().begin(), field.valid().end())};
  for (std::size_t t = 0; t < d.t; ++t) {
    const rng::Stream stream(rng::key({spec.seed, kPixelDomain, t}));
    for (std::size_t p = 0; p < fs; ++p) {
      auto& k = m.keep[t * fs + p];
      if (k && stream.uniform_at(p) < s->remove_rate) k = 0;
    }
  }
  return m;
}

ObservationMask gen_patch_mask(const SpatioTemporalField& field, const MaskSpec& spec,
                               std::vector<Patch>* patches) {
  const auto* s = std::get_if<RandomPatch>(&spec.strategy);
  if (!s) throw ConfigError("gen_patch_mask requires a RandomPatch spec");
  spec.check(field.dims().h, field.dims().w);
  const auto& d = field.dims();
  const auto fs = d.frame_size();
  ObservationMask m{d, std::vector<std::uint8_t>(field.valid().begin(), field.valid().end())};

  for (std::size_t t = 0; t < d.t; ++t) {
    if (missing_ratio(field, t) >= s->exempt_missing_threshold) continue;
    std::size_t valid = 0;
    for (std::size_t p = 0; p < fs; ++p) valid += field.valid()[t * fs + p];
    if (valid == 0) continue;

    rng::Stream stream(rng::key({spec.seed, kPatchDomain, t}));
    std::uint8_t* keep = m.keep.data() + t * fs;
    std::size_t removed = 0;
    // removed / valid >= remove_rate, evaluated without rounding drift.
    auto reached = [&] { return static_cast<double>(removed) >= s->remove_rate * static_cast<double>(valid); };
    while (!reached()) {
      Patch p;
      p.t = t;
      p.height = static_cast<std::size_t>(stream.uniform_int(static_cast<long long>(s->min_side),
                                                             static_cast<long long>(s->max_side)));
      p.width = static_cast<std::size_t>(stream.uniform_int(static_cast<long long>(s->min_side),
                                                            static_cast<long long>(s->max_side)));
      p.top = static_cast<std::size_t>(stream.uniform_int(0, static_cast<long long>(d.h - p.height)));
      p.left = static_cast<std::size_t>(stream.uniform_int(0, static_cast<long long>(d.w - p.width)));
      for (std::size_t y = p.top; y < p.top + p.height; ++y) {
        for (std::size_t x = p.left; x < p.left + p.width; ++x) {
          auto& k = keep[y * d.w + x];
          if (k) {
            k = 0;
            ++removed;
          }
        }
      }
      if (patches) patches->push_back(p);
    }
  }
  return m;
}

ObservationMask apply_sensor_subset(const SpatioTemporalField& field, const SensorMask& sensors,
                                    const MaskSpec& spec) {
  const auto* s = std::get_if<SensorSubset>(&spec.strategy);
  if (!s) throw ConfigError("apply_sensor_subset requires a SensorSubset spec");
  spec.check(field.dims().h, field.dims().w);
  const auto& d = field.dims();
  if (sensors.sensors.size() != d.size()) throw ConfigError("sensor mask does not match field dims");
  const std::uint16_t bits = sensors.bits_for(s->sensor_ids);
  ObservationMask m{d, std::vector<std::uint8_t>(d.size(), 0)};
  for (std::size_t i = 0; i < d.size(); ++i) {
    m.keep[i] = static_cast<std::uint8_t>(field.valid()[i] && (sensors.sensors[i] & bits) != 0);
  }
  return m;
}

ObservationMask generate_mask(const SpatioTemporalField& field, const MaskSpec& spec) {
  return std::visit(
      overloaded{
          [&](const KeepAll&) {
            return ObservationMask{field.dims(),
                                   std::vector<std::uint8_t>(field.valid().begin(), field.valid().end())};
          },
          [&](const RandomPixel&) { return gen_random_pixel_mask(field, spec); },
          [&](const RandomPatch&) { return gen_patch_mask(field, spec); },
          [&](const SensorSubset&) {
            if (!field.sensors()) throw ConfigError("sensor-subset masking needs a field with a sensors array");
            return apply_sensor_subset(field, *field.sensors(), spec);
          },
      },
      spec.strategy);
}

ObsSplit split_obs_target(const SpatioTemporalField& field, const ObservationMask& mask) {
  const auto& d = field.dims();
  if (!(mask.dims == d) || mask.keep.size() != d.size()) throw ConfigError("mask does not match field dims");
  ObsSplit out{field, std::vector<std::uint8_t>(d.size(), 0)};
  auto vals = out.obs.values();
  auto valid = out.obs.valid();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (mask.keep[i] && !field.valid()[i]) throw ConfigError("mask keeps a pixel that was not observed");
    if (field.valid()[i] && !mask.keep[i]) {
      out.eval_domain[i] = 1;
      valid[i] = 0;
      vals[i] = std::numeric_limits<float>::quiet_NaN();
    }
  }
  if (out.obs.sensors()) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (!valid[i]) out.obs.sensors()->sensors[i] = 0;
    }
  }
  return out;
}

SpatioTemporalField mask_as_field(const SpatioTemporalField& like, const ObservationMask& mask) {
  SpatioTemporalField f(like.dims(), like.meta());
  std::copy(like.land().begin(), like.land().end(), f.land().begin());
  for (std::size_t i = 0; i < mask.keep.size(); ++i) {
    if (mask.keep[i]) {
      f.values()[i] = 0.0f;
      f.valid()[i] = 1;
    }
  }
  return f;
}

ObservationMask mask_from_field(const SpatioTemporalField& field) {
  return ObservationMask{field.dims(), std::vector<std::uint8_t>(field.valid().begin(), field.valid().end())};
}

}  // namespace gapfill
