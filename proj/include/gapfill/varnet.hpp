#pragma once

// Trainable variational reconstruction: the cost
//   U(x) = lambda1 * sum_omega (x - y)^2 + lambda2 * sum (x - phi(x))^2,
// its unrolled recurrent gradient solver, the direct-inversion mappers, and
// the observation-only training loop shared by all of them.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gapfill/grid.hpp"
#include "gapfill/masking.hpp"
#include "gapfill/models.hpp"
#include "gapfill/tensor.hpp"

namespace gapfill::varnet {

using tensor::ParamStore;
using tensor::Tensor;

/// Cost weights stored as logarithms so that exp() keeps them positive.
struct VarCostParams {
  Tensor log_lambda1;  // {1}
  Tensor log_lambda2;  // {1}

  static VarCostParams create(ParamStore& store, const std::string& prefix, double lambda1 = 1.0,
                              double lambda2 = 1.0);
  double lambda1() const;
  double lambda2() const;
};

/// U(x) for a state x (L x H x W). `y` holds observations (NaN allowed where
/// omega is false). An empty omega drops the observation term with a warning.
Tensor var_cost(const Tensor& x, std::span<const double> y, std::span<const std::uint8_t> omega,
                const models::ImageModel& phi, const VarCostParams& params);

struct SolveOptions {
  int iterations = 12;
  /// Bypass the recurrent cell: x <- x - step * grad U.
  bool plain_gradient = false;
  double step = 0.1;
  /// Keep the whole unrolled computation on the current tape (training).
  bool differentiable = false;
  /// When set, receives U(x^k) for k = 0..iterations.
  std::vector<double>* cost_trace = nullptr;
};

/// Unrolled solver started from y with gaps set to 0. `cell` may be null in
/// plain-gradient mode. Throws NumericalError on a non-finite gradient.
Tensor solve(std::span<const double> y, std::span<const std::uint8_t> omega, const tensor::Shape& shape,
             const models::ImageModel& phi, const VarCostParams& params, const models::ConvLstmCell* cell,
             const SolveOptions& opts);

// ---------------------------------------------------------------------------
// Mappers

enum class MapperKind { direct_cnn, direct_unet, varnet_cnn, varnet_unet };

std::string kind_name(MapperKind kind);
MapperKind parse_kind(const std::string& name);  // ConfigError on unknown names
bool is_varnet(MapperKind kind);

struct MapperSpec {
  MapperKind kind = MapperKind::varnet_cnn;
  std::size_t window = 5;      // L
  std::size_t width = 32;      // base channel count of the CNN / UNet
  std::size_t hidden = 32;     // recurrent cell channels
  int iterations = 12;         // K
  std::uint64_t seed = 0;      // weight initialization
};

/// A window-to-window reconstruction network in standardized units.
class Mapper {
 public:
  explicit Mapper(const MapperSpec& spec);
  Mapper(Mapper&&) noexcept;
  Mapper& operator=(Mapper&&) noexcept;
  ~Mapper();

  const MapperSpec& spec() const { return spec_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  /// Architecture identifier written into checkpoints.
  std::string arch() const;

  /// Reconstruct a window (L*H*W, NaN gaps). With `differentiable`, the
  /// computation is recorded on the current tape.
  Tensor reconstruct(std::span<const double> obs, std::size_t h, std::size_t w, bool differentiable) const;

  const models::ImageModel& network() const { return *net_; }
  models::ImageModel& network() { return *net_; }
  const VarCostParams* cost_params() const { return cost_ ? &*cost_ : nullptr; }
  const models::ConvLstmCell* cell() const { return cell_.get(); }
  models::ConvLstmCell* cell() { return cell_.get(); }

 private:
  MapperSpec spec_;
  ParamStore store_;
  std::unique_ptr<models::ImageModel> net_;  // phi for varnet kinds, the direct net otherwise
  std::optional<VarCostParams> cost_;
  std::unique_ptr<models::ConvLstmCell> cell_;
};

/// A mapper together with everything needed to apply it to new data.
struct TrainedMapper {
  Mapper mapper;
  NormStats norm;
  MaskSpec mask_spec;
  std::uint64_t seed = 0;
  int epoch = 0;           // epoch the weights come from (1-based; 0 = untrained)
  double val_rmsle = 0.0;  // NaN when never validated
};

/// Writes `path` (GFW1 weights) and `path` + ".json" (sidecar).
void save_mapper(const TrainedMapper& m, const std::filesystem::path& path, bool with_optimizer_state = false);
TrainedMapper load_mapper(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_rmsle = 0.0;
  double seconds = 0.0;
};

struct TrainConfig {
  int epochs = 100;
  std::size_t batch = 4;             // windows per optimizer step
  std::size_t stride = 1;            // training window stride
  std::size_t max_windows = 0;       // per-epoch cap on training windows (0 = all)
  tensor::AdamConfig adam;
  std::uint64_t seed = 42;           // shuffling, online masks, initialization
  /// Validation sub-sampling; defaults to the training spec, or random
  /// patches when the training spec leaves nothing to score.
  std::optional<MaskSpec> val_mask;
  /// When set: best.gfw, last.gfw (with optimizer state) and log.csv live here,
  /// and an existing last.gfw is resumed from.
  std::optional<std::filesystem::path> checkpoint_dir;
  bool resume = false;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  TrainedMapper best;
  std::vector<EpochLog> history;
};

/// Observation-only training. `train` and `val` are gappy log10 fields; the
/// normalization is fitted on `train` only. Each epoch draws fresh masks per
/// window, runs the mapper on the sub-sampled window, and minimizes the mean
/// squared error over all valid target pixels.
TrainResult train_mapper(const MapperSpec& spec, const SpatioTemporalField& train, const SpatioTemporalField& val,
                         const MaskSpec& mask_spec, const TrainConfig& cfg);

TrainResult train_varnet(const MapperSpec& spec, const SpatioTemporalField& train, const SpatioTemporalField& val,
                         const MaskSpec& mask_spec, const TrainConfig& cfg);
TrainResult train_direct(const MapperSpec& spec, const SpatioTemporalField& train, const SpatioTemporalField& val,
                         const MaskSpec& mask_spec, const TrainConfig& cfg);

/// Mask seed for one training window of one epoch.
std::uint64_t online_mask_seed(std::uint64_t spec_seed, int epoch, std::size_t window_start);

/// Observation mask drawn for `window` (a time slice of the training field).
ObservationMask online_mask(const SpatioTemporalField& window, const MaskSpec& spec, int epoch,
                            std::size_t window_start);

// ---------------------------------------------------------------------------
// Inference

/// Gap-free reconstruction of a gappy log10 field: stride-1 windows averaged
/// with uniform weights. Every sea pixel of the result is valid.
SpatioTemporalField reconstruct_series(const TrainedMapper& m, const SpatioTemporalField& obs, int threads = 1);

/// As reconstruct_series, but windows start every `stride` frames (the final
/// window is aligned with the end of the series).
SpatioTemporalField reconstruct_strided(const TrainedMapper& m, const SpatioTemporalField& obs, std::size_t stride,
                                        int threads = 1);

}  // namespace gapfill::varnet
