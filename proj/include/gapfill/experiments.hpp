#pragma once

// Experiment orchestration shared by the command-line tool and the acceptance
// suite: run configuration, data preparation, method runners, and the
// benchmark, train/test pattern cross-matrix and sensor ablation tables.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gapfill/dineof.hpp"
#include "gapfill/grid.hpp"
#include "gapfill/masking.hpp"
#include "gapfill/metrics.hpp"
#include "gapfill/synth.hpp"
#include "gapfill/varnet.hpp"

namespace gapfill::experiments {

/// Inclusive ISO-8601 date range.
struct DateRange {
  std::string first;
  std::string last;
};

struct Split {
  DateRange train{"2017-01-01", "2017-12-31"};
  DateRange val{"2018-01-01", "2018-02-28"};
  DateRange test{"2018-03-01", "2018-12-31"};

  /// Ranges must be well-formed, non-empty, disjoint and ordered train < val < test.
  void check() const;
};

struct DataConfig {
  std::string gappy;  // GFF path; empty -> synthesize
  std::string truth;  // optional fully valid reference (informational)
  synth::SynthConfig synth;
};

struct SolverConfig {
  std::size_t window = 5;
  std::size_t width = 32;
  std::size_t hidden = 32;
  int iterations = 12;
  int epochs = 30;
  std::size_t batch = 4;
  std::size_t stride = 1;
  std::size_t max_windows = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
};

struct DineofOptions {
  int rank = 0;  // 0 = cross-validated choice among candidate_ranks
  std::vector<int> candidate_ranks{2, 4, 6, 8, 10, 12, 16, 20};
  double cv_fraction = 0.03;
  int max_outer_iter = 200;
  double tol = 1e-5;
  int filter_width = 3;
};

struct EvalOptions {
  std::string csv = "eval.csv";
  MaskSpec test_mask{RandomPatch{}, 0};     // sub-sampling of the test period
  double holdout_rate = 0.1;                // sensor ablation common holdout
  std::vector<std::string> sensor_pattern{"OLCI-S3A"};  // cross-matrix satellite pattern
};

struct RunConfig {
  DataConfig data;
  Split split;
  std::string method = "varnet-cnn";
  MaskSpec mask{RandomPatch{}, 0};  // training sub-sampling
  SolverConfig solver;
  DineofOptions dineof;
  EvalOptions eval;
  std::string out = "out";
  std::string checkpoint;  // interpolate: trained mapper to apply
  bool resume = false;
  bool export_images = false;
  std::uint64_t seed = 42;
  int threads = 1;
};

/// Strict parse: unknown keys raise ConfigError naming the key. Relative data
/// paths are resolved against `base_dir`; referenced files must exist.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Data

struct FrameRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - begin; }
};

/// Frames of `field` covered by `range`; ConfigError if outside the series.
FrameRange frames_of(const SpatioTemporalField& field, const DateRange& range);

struct Prepared {
  SpatioTemporalField gappy;  // full series (gappy ground truth)
  FrameRange train, val, test;
  SpatioTemporalField train_field, val_field, test_field;
};

/// Loads data.gappy or synthesizes it (seeded by cfg.seed), then splits.
Prepared prepare(const RunConfig& cfg);
Prepared prepare_from(SpatioTemporalField gappy, const Split& split);

/// Frames of a followed by frames of b (same grid and land mask).
SpatioTemporalField concat_time(const SpatioTemporalField& a, const SpatioTemporalField& b);

// ---------------------------------------------------------------------------
// Methods

/// Sub-sampled test observations.
struct TestCase {
  std::string mask_id;
  ObservationMask mask;
  SpatioTemporalField obs;
};

TestCase make_test_case(const SpatioTemporalField& target, const MaskSpec& spec, std::uint64_t seed);

struct DineofRun {
  SpatioTemporalField recon;  // test frames only
  int rank = 0;
  int iterations = 0;
  double final_change = 0.0;
};

/// EOF completion calibrated on the training gappy frames and the test
/// observations jointly; returns the test part.
DineofRun interpolate_dineof(const SpatioTemporalField& train_gappy, const SpatioTemporalField& test_obs,
                             const DineofOptions& opts, bool filtered, std::uint64_t seed);

varnet::MapperSpec mapper_spec(const SolverConfig& s, varnet::MapperKind kind, std::uint64_t seed);
varnet::TrainConfig train_config(const SolverConfig& s, std::uint64_t seed);
/// Training mask with its seed bound to the run seed.
MaskSpec seeded_mask(const MaskSpec& spec, std::uint64_t run_seed);

/// Trains mappers on demand, keeping them in memory and under
/// `root/<kind>-<mask>-<hash>/` so later commands reuse identical models.
class ModelCache {
 public:
  ModelCache(std::filesystem::path root, const RunConfig& cfg, const Prepared& data);

  const varnet::TrainedMapper& get(varnet::MapperKind kind, const MaskSpec& mask);
  /// Training history of the last model trained by this cache (empty when loaded).
  const std::vector<varnet::EpochLog>& history(varnet::MapperKind kind, const MaskSpec& mask);
  std::filesystem::path dir_for(varnet::MapperKind kind, const MaskSpec& mask) const;

 private:
  struct Entry {
    std::unique_ptr<varnet::TrainedMapper> model;
    std::vector<varnet::EpochLog> history;
  };
  Entry& entry(varnet::MapperKind kind, const MaskSpec& mask);

  std::filesystem::path root_;
  const RunConfig& cfg_;
  const Prepared& data_;
  std::string data_hash_;
  std::map<std::string, Entry> entries_;
};

// ---------------------------------------------------------------------------
// Tables

struct BenchRow {
  std::string method;
  metrics::EvalReport report;
  double seconds = 0.0;
};

/// dineof, edineof, direct-cnn, direct-unet, varnet-cnn, varnet-unet on one patch-masked test case.
std::vector<BenchRow> run_bench(const RunConfig& cfg, const Prepared& data, ModelCache& models);
void write_bench_csv(const std::filesystem::path& path, const std::vector<BenchRow>& rows, std::uint64_t seed);

struct CrossCell {
  std::string train_mask;
  std::string test_mask;
  metrics::EvalReport report;
  bool best_in_column = false;
  bool column_diagonal_best = false;
};

/// The three training/testing patterns: random patches, random pixels, one satellite.
std::vector<MaskSpec> cross_patterns(const RunConfig& cfg);
std::vector<CrossCell> run_crossmatrix(const RunConfig& cfg, const Prepared& data, ModelCache& models);
void write_crossmatrix_csv(const std::filesystem::path& path, const std::vector<CrossCell>& cells, std::uint64_t seed);

struct AblationRow {
  std::vector<std::string> sensors;
  std::uint16_t bits = 0;
  metrics::EvalReport report;
};

struct Ablation {
  std::vector<AblationRow> rows;        // all non-empty subsets, by size then index order
  metrics::EvalReport blind;            // reconstruction with no observations at all
  std::size_t holdout_pixels = 0;
};

Ablation run_ablation(const RunConfig& cfg, const Prepared& data, ModelCache& models);
void write_ablation_csv(const std::filesystem::path& path, const Ablation& ablation, std::uint64_t seed);

/// Pairs (with wide-swath sensor, same subset without it); the subset without
/// it may be empty, in which case the blind reconstruction is the counterpart.
struct SwathPair {
  std::string with;
  std::string without;
  double rmsle_with = 0.0;
  double rmsle_without = 0.0;
};
std::vector<SwathPair> wide_swath_pairs(const Ablation& ablation, const std::string& wide_sensor);

/// 8-bit grayscale PGM of frame t; values mapped linearly from [lo, hi], gaps black.
void export_frame_pgm(const SpatioTemporalField& field, std::size_t t, const std::filesystem::path& path,
                      double lo, double hi);

}  // namespace gapfill::experiments
