#include "gapfill/experiments.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gapfill/errors.hpp"
#include "gapfill/json_util.hpp"
#include "gapfill/log.hpp"
#include "gapfill/rng.hpp"

namespace gapfill::experiments {

using nlohmann::json;

namespace {

constexpr std::uint64_t kTestDomain = 0x54455354ULL;
constexpr std::uint64_t kTrainMaskDomain = 0x54524d41ULL;
constexpr std::uint64_t kInitDomain = 0x494e4954ULL;
constexpr std::uint64_t kHoldoutDomain = 0x484f4c44ULL;
constexpr std::uint64_t kRankDomain = 0x52414e4bULL;

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 1099511628211ULL;
  return h;
}

std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ULL) {
  return fnv1a(s.data(), s.size(), h);
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string sanitize(std::string s) {
  for (auto& c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) c = '_';
  }
  return s;
}

json range_json(const DateRange& r) { return json::array({r.first, r.last}); }

DateRange range_from(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_string() || !j[1].is_string()) {
    throw ConfigError(ctx + ": expected [\"YYYY-MM-DD\", \"YYYY-MM-DD\"]");
  }
  return DateRange{j[0].get<std::string>(), j[1].get<std::string>()};
}

json solver_json(const SolverConfig& s) {
  return {{"window", s.window},   {"width", s.width}, {"hidden", s.hidden},
          {"iterations", s.iterations}, {"epochs", s.epochs}, {"batch", s.batch},
          {"stride", s.stride},   {"max_windows", s.max_windows}, {"lr", s.lr},
          {"beta1", s.beta1},     {"beta2", s.beta2}};
}

json split_json(const Split& s) {
  return {{"train", range_json(s.train)}, {"val", range_json(s.val)}, {"test", range_json(s.test)}};
}

// Writes the whole file next to `path` and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string subset_name(const std::vector<std::string>& names) {
  std::string s;
  for (std::size_t i = 0; i < names.size(); ++i) s += (i ? "+" : "") + names[i];
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void Split::check() const {
  const DateRange* ranges[] = {&train, &val, &test};
  const char* names[] = {"train", "val", "test"};
  long long prev_last = 0;
  for (int i = 0; i < 3; ++i) {
    const long long a = parse_iso_date(ranges[i]->first);
    const long long b = parse_iso_date(ranges[i]->last);
    if (b < a) throw ConfigError(std::string("split.") + names[i] + ": last date precedes first date");
    if (i > 0 && a <= prev_last) {
      throw ConfigError(std::string("split.") + names[i] + " must start after split." + names[i - 1] + " ends");
    }
    prev_last = b;
  }
}

RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  json_util::ObjectReader r(j, "config");
  r.get("seed", cfg.seed);
  r.get("threads", cfg.threads);
  r.get("out", cfg.out);
  r.get("method", cfg.method);
  r.get("checkpoint", cfg.checkpoint);
  r.get("resume", cfg.resume);
  r.get("export_images", cfg.export_images);
  if (cfg.threads < 1) throw ConfigError("config.threads must be >= 1");

  auto resolve = [&](std::string& p) {
    if (p.empty()) return;
    std::filesystem::path path(p);
    if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
    if (!std::filesystem::exists(path)) throw ConfigError("referenced path does not exist: " + path.string());
    p = path.string();
  };

  if (const auto* dj = r.child("data")) {
    json_util::ObjectReader dr(*dj, "config.data");
    dr.get("gappy", cfg.data.gappy);
    dr.get("truth", cfg.data.truth);
    if (const auto* sj = dr.child("synth")) cfg.data.synth = synth::synth_config_from_json(*sj);
    dr.finish();
    resolve(cfg.data.gappy);
    resolve(cfg.data.truth);
  }
  if (const auto* sj = r.child("split")) {
    json_util::ObjectReader sr(*sj, "config.split");
    if (const auto* v = sr.child("train")) cfg.split.train = range_from(*v, "config.split.train");
    if (const auto* v = sr.child("val")) cfg.split.val = range_from(*v, "config.split.val");
    if (const auto* v = sr.child("test")) cfg.split.test = range_from(*v, "config.split.test");
    sr.finish();
  }
  cfg.split.check();
  if (const auto* mj = r.child("mask")) cfg.mask = mask_spec_from_json(*mj);
  if (const auto* sj = r.child("solver")) {
    json_util::ObjectReader sr(*sj, "config.solver");
    auto& s = cfg.solver;
    sr.get("window", s.window);
    sr.get("width", s.width);
    sr.get("hidden", s.hidden);
    sr.get("iterations", s.iterations);
    sr.get("epochs", s.epochs);
    sr.get("batch", s.batch);
    sr.get("stride", s.stride);
    sr.get("max_windows", s.max_windows);
    sr.get("lr", s.lr);
    sr.get("beta1", s.beta1);
    sr.get("beta2", s.beta2);
    sr.finish();
    if (s.window < 1 || s.width < 1 || s.hidden < 1 || s.iterations < 1 || s.epochs < 1 || s.batch < 1 ||
        s.stride < 1) {
      throw ConfigError("config.solver: window, width, hidden, iterations, epochs, batch and stride must be >= 1");
    }
    if (!(s.lr > 0.0) || !(s.beta1 >= 0.0 && s.beta1 < 1.0) || !(s.beta2 >= 0.0 && s.beta2 < 1.0)) {
      throw ConfigError("config.solver: lr must be > 0 and betas in [0, 1)");
    }
  }
  if (const auto* dj = r.child("dineof")) {
    json_util::ObjectReader dr(*dj, "config.dineof");
    auto& d = cfg.dineof;
    dr.get("rank", d.rank);
    dr.get("candidate_ranks", d.candidate_ranks);
    dr.get("cv_fraction", d.cv_fraction);
    dr.get("max_outer_iter", d.max_outer_iter);
    dr.get("tol", d.tol);
    dr.get("filter_width", d.filter_width);
    dr.finish();
    if (d.rank < 0) throw ConfigError("config.dineof.rank must be >= 0");
    if (d.filter_width < 1 || d.filter_width % 2 == 0) throw ConfigError("config.dineof.filter_width must be odd");
  }
  if (const auto* ej = r.child("eval")) {
    json_util::ObjectReader er(*ej, "config.eval");
    er.get("csv", cfg.eval.csv);
    if (const auto* tm = er.child("test_mask")) cfg.eval.test_mask = mask_spec_from_json(*tm);
    er.get("holdout_rate", cfg.eval.holdout_rate);
    er.get("sensor_pattern", cfg.eval.sensor_pattern);
    er.finish();
    if (!(cfg.eval.holdout_rate > 0.0 && cfg.eval.holdout_rate < 1.0)) {
      throw ConfigError("config.eval.holdout_rate must be in (0, 1)");
    }
  }
  r.finish();
  varnet::parse_kind(cfg.method == "dineof" || cfg.method == "edineof" ? "varnet-cnn" : cfg.method);
  resolve(cfg.checkpoint);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

json to_json(const RunConfig& cfg) {
  const auto& d = cfg.dineof;
  return {
      {"seed", cfg.seed},
      {"threads", cfg.threads},
      {"out", cfg.out},
      {"method", cfg.method},
      {"checkpoint", cfg.checkpoint},
      {"resume", cfg.resume},
      {"export_images", cfg.export_images},
      {"data", {{"gappy", cfg.data.gappy}, {"truth", cfg.data.truth}, {"synth", synth::to_json(cfg.data.synth)}}},
      {"split", split_json(cfg.split)},
      {"mask", mask_spec_to_json(cfg.mask)},
      {"solver", solver_json(cfg.solver)},
      {"dineof",
       {{"rank", d.rank},
        {"candidate_ranks", d.candidate_ranks},
        {"cv_fraction", d.cv_fraction},
        {"max_outer_iter", d.max_outer_iter},
        {"tol", d.tol},
        {"filter_width", d.filter_width}}},
      {"eval",
       {{"csv", cfg.eval.csv},
        {"test_mask", mask_spec_to_json(cfg.eval.test_mask)},
        {"holdout_rate", cfg.eval.holdout_rate},
        {"sensor_pattern", cfg.eval.sensor_pattern}}},
  };
}

// ---------------------------------------------------------------------------
// Data

FrameRange frames_of(const SpatioTemporalField& field, const DateRange& range) {
  const long long origin = parse_iso_date(field.meta().time_origin);
  const long long step = field.meta().time_step_days;
  if (step < 1) throw ConfigError("field time step must be >= 1 day");
  const long long a = parse_iso_date(range.first) - origin;
  const long long b = parse_iso_date(range.last) - origin;
  const long long first = a <= 0 ? 0 : (a + step - 1) / step;
  const long long last = b < 0 ? -1 : b / step;
  const auto T = static_cast<long long>(field.dims().t);
  if (a < 0 || last >= T || last < first) {
    throw ConfigError("date range " + range.first + " .. " + range.last + " is not covered by the series (" +
                      field.meta().time_origin + ", " + std::to_string(T) + " frames)");
  }
  return FrameRange{static_cast<std::size_t>(first), static_cast<std::size_t>(last + 1)};
}

Prepared prepare_from(SpatioTemporalField gappy, const Split& split) {
  split.check();
  Prepared p;
  p.train = frames_of(gappy, split.train);
  p.val = frames_of(gappy, split.val);
  p.test = frames_of(gappy, split.test);
  p.train_field = gappy.slice_time(p.train.begin, p.train.size());
  p.val_field = gappy.slice_time(p.val.begin, p.val.size());
  p.test_field = gappy.slice_time(p.test.begin, p.test.size());
  p.gappy = std::move(gappy);
  return p;
}

Prepared prepare(const RunConfig& cfg) {
  if (!cfg.data.gappy.empty()) return prepare_from(load_field(cfg.data.gappy), cfg.split);
  synth::SynthConfig sc = cfg.data.synth;
  sc.seed = cfg.seed;
  return prepare_from(synth::generate(sc).gappy, cfg.split);
}

SpatioTemporalField concat_time(const SpatioTemporalField& a, const SpatioTemporalField& b) {
  const auto& da = a.dims();
  const auto& db = b.dims();
  if (da.h != db.h || da.w != db.w) throw std::invalid_argument("concat_time: grids differ");
  if (!std::equal(a.land().begin(), a.land().end(), b.land().begin())) {
    throw std::invalid_argument("concat_time: land masks differ");
  }
  SpatioTemporalField out(Dims{da.t + db.t, da.h, da.w}, a.meta());
  std::copy(a.land().begin(), a.land().end(), out.land().begin());
  std::copy(a.values().begin(), a.values().end(), out.values().begin());
  std::copy(b.values().begin(), b.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(da.size()));
  std::copy(a.valid().begin(), a.valid().end(), out.valid().begin());
  std::copy(b.valid().begin(), b.valid().end(), out.valid().begin() + static_cast<std::ptrdiff_t>(da.size()));
  return out;
}

// ---------------------------------------------------------------------------
// Methods

TestCase make_test_case(const SpatioTemporalField& target, const MaskSpec& spec, std::uint64_t seed) {
  MaskSpec s = spec;
  s.seed = rng::key({seed, spec.seed, kTestDomain});
  TestCase tc;
  tc.mask_id = spec.id();
  tc.mask = generate_mask(target, s);
  tc.obs = split_obs_target(target, tc.mask).obs;
  return tc;
}

DineofRun interpolate_dineof(const SpatioTemporalField& train_gappy, const SpatioTemporalField& test_obs,
                             const DineofOptions& opts, bool filtered, std::uint64_t seed) {
  const SpatioTemporalField joint = concat_time(train_gappy, test_obs);
  const auto data = dineof::to_data_matrix(joint);
  dineof::DineofConfig c;
  c.rank = opts.rank;
  c.max_outer_iter = opts.max_outer_iter;
  c.tol = opts.tol;
  c.temporal_filter_width = opts.filter_width;
  if (c.rank == 0) {
    std::vector<int> ranks;
    const int limit = static_cast<int>(std::min(data.rows(), data.cols())) - 1;
    for (int k : opts.candidate_ranks) {
      if (k >= 1 && k <= limit) ranks.push_back(k);
    }
    if (ranks.empty()) throw ConfigError("no DINEOF candidate rank fits a " + std::to_string(data.rows()) + " x " +
                                         std::to_string(data.cols()) + " matrix");
    c.rank = dineof::select_rank(data, ranks, opts.cv_fraction, rng::key({seed, kRankDomain}), c, filtered);
  }
  const auto result = filtered ? dineof::edineof(data, c) : dineof::dineof(data, c);
  const auto full = dineof::from_data_matrix(result.completed, joint);
  DineofRun run;
  run.recon = full.slice_time(train_gappy.dims().t, test_obs.dims().t);
  run.recon.meta() = test_obs.meta();
  run.rank = result.rank;
  run.iterations = result.iterations;
  run.final_change = result.final_change;
  log::info(std::string(filtered ? "edineof" : "dineof") + ": rank " + std::to_string(run.rank) + ", " +
            std::to_string(run.iterations) + " iterations");
  return run;
}

varnet::MapperSpec mapper_spec(const SolverConfig& s, varnet::MapperKind kind, std::uint64_t seed) {
  varnet::MapperSpec m;
  m.kind = kind;
  m.window = s.window;
  m.width = s.width;
  m.hidden = s.hidden;
  m.iterations = s.iterations;
  m.seed = rng::key({seed, kInitDomain, static_cast<std::uint64_t>(kind)});
  return m;
}

varnet::TrainConfig train_config(const SolverConfig& s, std::uint64_t seed) {
  varnet::TrainConfig t;
  t.epochs = s.epochs;
  t.batch = s.batch;
  t.stride = s.stride;
  t.max_windows = s.max_windows;
  t.adam.lr = s.lr;
  t.adam.beta1 = s.beta1;
  t.adam.beta2 = s.beta2;
  t.seed = seed;
  return t;
}

MaskSpec seeded_mask(const MaskSpec& spec, std::uint64_t run_seed) {
  MaskSpec s = spec;
  s.seed = rng::key({run_seed, spec.seed, kTrainMaskDomain});
  return s;
}

ModelCache::ModelCache(std::filesystem::path root, const RunConfig& cfg, const Prepared& data)
    : root_(std::move(root)), cfg_(cfg), data_(data) {
  const auto bytes = encode_field(data.gappy);
  std::uint64_t h = fnv1a(bytes.data(), bytes.size());
  h = fnv1a(split_json(cfg.split).dump(), h);
  data_hash_ = hex16(h);
}

std::filesystem::path ModelCache::dir_for(varnet::MapperKind kind, const MaskSpec& mask) const {
  const json key{{"kind", varnet::kind_name(kind)},
                 {"mask", mask_spec_to_json(mask)},
                 {"solver", solver_json(cfg_.solver)},
                 {"seed", cfg_.seed},
                 {"data", data_hash_}};
  return root_ / (varnet::kind_name(kind) + "-" + sanitize(mask.id()) + "-" + hex16(fnv1a(key.dump())));
}

ModelCache::Entry& ModelCache::entry(varnet::MapperKind kind, const MaskSpec& mask) {
  const auto dir = dir_for(kind, mask);
  auto it = entries_.find(dir.string());
  if (it != entries_.end()) return it->second;
  Entry e;
  const auto done = dir / "done";
  if (std::filesystem::exists(done) && std::filesystem::exists(dir / "best.gfw")) {
    log::info("reusing trained " + varnet::kind_name(kind) + " (" + mask.id() + ") from " + dir.string());
    e.model = std::make_unique<varnet::TrainedMapper>(varnet::load_mapper(dir / "best.gfw"));
  } else {
    log::info("training " + varnet::kind_name(kind) + " with " + mask.id() + " sub-sampling");
    auto tc = train_config(cfg_.solver, cfg_.seed);
    tc.checkpoint_dir = dir;
    tc.resume = true;
    auto result = varnet::train_mapper(mapper_spec(cfg_.solver, kind, cfg_.seed), data_.train_field, data_.val_field,
                                       mask, tc);
    std::ofstream(done) << "ok\n";
    e.model = std::make_unique<varnet::TrainedMapper>(std::move(result.best));
    e.history = std::move(result.history);
  }
  return entries_.emplace(dir.string(), std::move(e)).first->second;
}

const varnet::TrainedMapper& ModelCache::get(varnet::MapperKind kind, const MaskSpec& mask) {
  return *entry(kind, mask).model;
}

const std::vector<varnet::EpochLog>& ModelCache::history(varnet::MapperKind kind, const MaskSpec& mask) {
  return entry(kind, mask).history;
}

// ---------------------------------------------------------------------------
// Tables

std::vector<BenchRow> run_bench(const RunConfig& cfg, const Prepared& data, ModelCache& models) {
  const TestCase tc = make_test_case(data.test_field, cfg.eval.test_mask, cfg.seed);
  const MaskSpec train_mask = seeded_mask(cfg.mask, cfg.seed);
  std::vector<BenchRow> rows;
  for (const std::string method : {"dineof", "edineof", "direct-cnn", "direct-unet", "varnet-cnn", "varnet-unet"}) {
    const auto t0 = std::chrono::steady_clock::now();
    SpatioTemporalField recon;
    if (method == "dineof" || method == "edineof") {
      recon = interpolate_dineof(data.train_field, tc.obs, cfg.dineof, method == "edineof", cfg.seed).recon;
    } else {
      const auto& model = models.get(varnet::parse_kind(method), train_mask);
      recon = varnet::reconstruct_series(model, tc.obs, cfg.threads);
    }
    BenchRow row;
    row.method = method;
    row.report = metrics::evaluate(data.test_field, recon, tc.mask, method, tc.mask_id);
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log::info("bench " + method + ": rmsle " + metrics::format_number(row.report.rmsle));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchRow>& rows, std::uint64_t seed) {
  std::string text = std::string(metrics::kReportHeader) + ",seconds\n";
  for (const auto& r : rows) {
    auto line = metrics::report_row(r.report, seed);
    line.pop_back();
    text += line + "," + metrics::format_number(r.seconds) + "\n";
  }
  write_file_atomic(path, text);
}

std::vector<MaskSpec> cross_patterns(const RunConfig& cfg) {
  MaskSpec patch{RandomPatch{}, 0};
  if (std::holds_alternative<RandomPatch>(cfg.mask.strategy)) patch = cfg.mask;
  MaskSpec pixel{RandomPixel{}, 1};
  MaskSpec sensor{SensorSubset{cfg.eval.sensor_pattern}, 2};
  return {patch, pixel, sensor};
}

std::vector<CrossCell> run_crossmatrix(const RunConfig& cfg, const Prepared& data, ModelCache& models) {
  const auto patterns = cross_patterns(cfg);
  std::vector<TestCase> cases;
  for (const auto& p : patterns) cases.push_back(make_test_case(data.test_field, p, cfg.seed));
  std::vector<CrossCell> cells;
  for (const auto& train_p : patterns) {
    const auto& model = models.get(varnet::MapperKind::varnet_cnn, seeded_mask(train_p, cfg.seed));
    for (const auto& tc : cases) {
      const auto recon = varnet::reconstruct_series(model, tc.obs, cfg.threads);
      CrossCell c;
      c.train_mask = train_p.id();
      c.test_mask = tc.mask_id;
      c.report = metrics::evaluate(data.test_field, recon, tc.mask, "varnet-cnn", tc.mask_id);
      log::info("crossmatrix train " + c.train_mask + " / test " + c.test_mask + ": rmsle " +
                metrics::format_number(c.report.rmsle));
      cells.push_back(std::move(c));
    }
  }
  const std::size_t n = patterns.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t best = 0;
    for (std::size_t row = 1; row < n; ++row) {
      if (cells[row * n + col].report.rmsle < cells[best * n + col].report.rmsle) best = row;
    }
    for (std::size_t row = 0; row < n; ++row) {
      cells[row * n + col].best_in_column = row == best;
      cells[row * n + col].column_diagonal_best = best == col;
    }
  }
  return cells;
}

void write_crossmatrix_csv(const std::filesystem::path& path, const std::vector<CrossCell>& cells,
                           std::uint64_t seed) {
  std::string text = "train_mask,test_mask,rmsle,mre_percent,mv_prop,n_pixels,best_in_column,column_diagonal_best,seed\n";
  for (const auto& c : cells) {
    text += c.train_mask + "," + c.test_mask + "," + metrics::format_number(c.report.rmsle) + "," +
            metrics::format_number(c.report.mre_percent) + "," + metrics::format_number(c.report.mv_prop) + "," +
            std::to_string(c.report.n_pixels) + "," + (c.best_in_column ? "1" : "0") + "," +
            (c.column_diagonal_best ? "1" : "0") + "," + std::to_string(seed) + "\n";
  }
  write_file_atomic(path, text);
}

Ablation run_ablation(const RunConfig& cfg, const Prepared& data, ModelCache& models) {
  const auto& test = data.test_field;
  if (!test.sensors()) throw ConfigError("sensor ablation needs a field with a sensor record");
  const auto& names = test.sensors()->sensor_names;
  const std::size_t n = names.size();
  const auto patterns = cross_patterns(cfg);
  const auto& patch = std::get<RandomPatch>(patterns[0].strategy);

  // Common evaluation support: a fixed patch holdout of the gappy test period.
  MaskSpec holdout{RandomPatch{cfg.eval.holdout_rate, patch.min_side, patch.max_side, 1.0},
                   rng::key({cfg.seed, kHoldoutDomain})};
  const auto base = split_obs_target(test, generate_mask(test, holdout));
  Ablation out;
  out.holdout_pixels = static_cast<std::size_t>(std::count(base.eval_domain.begin(), base.eval_domain.end(), 1));

  const auto& model = models.get(varnet::MapperKind::varnet_cnn, seeded_mask(patterns[0], cfg.seed));
  const auto& bits = test.sensors()->sensors;

  auto score = [&](std::uint16_t subset, const std::string& label) {
    ObservationMask keep{test.dims(), std::vector<std::uint8_t>(test.dims().size(), 0)};
    for (std::size_t i = 0; i < keep.keep.size(); ++i) {
      keep.keep[i] = (base.obs.valid()[i] && (bits[i] & subset)) ? 1 : 0;
    }
    const auto obs = split_obs_target(test, keep).obs;
    const auto recon = varnet::reconstruct_series(model, obs, cfg.threads);
    return metrics::evaluate_on(test, recon, base.eval_domain, keep.keep, "varnet-cnn", label);
  };

  std::vector<std::vector<std::size_t>> subsets;
  for (std::uint32_t m = 1; m < (1u << n); ++m) {
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < n; ++k) {
      if (m & (1u << k)) idx.push_back(k);
    }
    subsets.push_back(std::move(idx));
  }
  std::stable_sort(subsets.begin(), subsets.end(), [](const auto& a, const auto& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  for (const auto& idx : subsets) {
    AblationRow row;
    for (auto k : idx) {
      row.sensors.push_back(names[k]);
      row.bits = static_cast<std::uint16_t>(row.bits | (1u << k));
    }
    row.report = score(row.bits, "sensor:" + subset_name(row.sensors));
    log::info("ablation " + subset_name(row.sensors) + ": rmsle " + metrics::format_number(row.report.rmsle));
    out.rows.push_back(std::move(row));
  }
  out.blind = score(0, "sensor:none");
  return out;
}

void write_ablation_csv(const std::filesystem::path& path, const Ablation& ablation, std::uint64_t seed) {
  std::string text = "subset,n_sensors,rmsle,mre_percent,mv_prop,n_pixels,seed\n";
  for (const auto& r : ablation.rows) {
    text += subset_name(r.sensors) + "," + std::to_string(r.sensors.size()) + "," +
            metrics::format_number(r.report.rmsle) + "," + metrics::format_number(r.report.mre_percent) + "," +
            metrics::format_number(r.report.mv_prop) + "," + std::to_string(r.report.n_pixels) + "," +
            std::to_string(seed) + "\n";
  }
  write_file_atomic(path, text);
}

std::vector<SwathPair> wide_swath_pairs(const Ablation& ablation, const std::string& wide_sensor) {
  std::vector<SwathPair> pairs;
  for (const auto& row : ablation.rows) {
    auto it = std::find(row.sensors.begin(), row.sensors.end(), wide_sensor);
    if (it == row.sensors.end()) continue;
    std::vector<std::string> rest = row.sensors;
    rest.erase(rest.begin() + (it - row.sensors.begin()));
    SwathPair p;
    p.with = subset_name(row.sensors);
    p.rmsle_with = row.report.rmsle;
    if (rest.empty()) {
      p.without = "none";
      p.rmsle_without = ablation.blind.rmsle;
    } else {
      const auto match = std::find_if(ablation.rows.begin(), ablation.rows.end(),
                                      [&](const AblationRow& r) { return r.sensors == rest; });
      if (match == ablation.rows.end()) continue;
      p.without = subset_name(rest);
      p.rmsle_without = match->report.rmsle;
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void export_frame_pgm(const SpatioTemporalField& field, std::size_t t, const std::filesystem::path& path, double lo,
                      double hi) {
  const auto& d = field.dims();
  if (t >= d.t) throw ConfigError("frame index out of range for image export");
  if (!(hi > lo)) throw std::invalid_argument("image value window must satisfy lo < hi");
  std::string out = "P5\n" + std::to_string(d.w) + " " + std::to_string(d.h) + "\n255\n";
  for (std::size_t h = 0; h < d.h; ++h) {
    for (std::size_t w = 0; w < d.w; ++w) {
      unsigned char px = 0;
      if (field.is_valid(t, h, w)) {
        const double u = std::clamp((static_cast<double>(field.value(t, h, w)) - lo) / (hi - lo), 0.0, 1.0);
        px = static_cast<unsigned char>(1 + std::lround(u * 254.0));
      }
      out.push_back(static_cast<char>(px));
    }
  }
  write_file_atomic(path, out);
}

}  // namespace gapfill::experiments
