#pragma once

// Network architectures: direct-inversion CNN / UNet, the prior of the
// variational cost, and the convolutional LSTM solver cell. All models treat
// the time window as channels (L x H x W).

#include <cstdint>
#include <memory>
#include <string>
#include <utility>

#include "gapfill/tensor.hpp"

namespace gapfill::models {

using tensor::ParamStore;
using tensor::Tensor;

/// Same-padded convolution layer whose parameters live in a ParamStore.
struct Conv {
  Tensor weight;  // out x in x k x k
  Tensor bias;    // out

  static Conv create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
                     std::size_t k, std::uint64_t seed);
  Tensor operator()(const Tensor& x) const { return tensor::conv2d(x, weight, bias); }
  static std::size_t parameter_count(std::size_t in, std::size_t out, std::size_t k) {
    return out * in * k * k + out;
  }
};

/// Shape-preserving image-to-image network.
class ImageModel {
 public:
  virtual ~ImageModel() = default;
  virtual Tensor forward(const Tensor& x) const = 0;
  virtual std::string arch() const = 0;
  virtual std::size_t in_channels() const = 0;
  virtual std::size_t out_channels() const = 0;
};

/// Five 3x3 conv layers: in -> w -> 2w -> 2w -> w -> out, relu between, linear head.
class ConvNet final : public ImageModel {
 public:
  ConvNet(ParamStore& store, const std::string& prefix, std::string arch, std::size_t in, std::size_t out,
          std::size_t width, std::uint64_t seed);

  Tensor forward(const Tensor& x) const override;
  std::string arch() const override { return arch_; }
  std::size_t in_channels() const override { return in_; }
  std::size_t out_channels() const override { return out_; }

  /// Exact identity map (requires in == out and 2*in <= width): channels are
  /// split into positive and negative parts to pass through the relus.
  void init_identity();
  /// Zero the final layer so the output is identically zero.
  void zero_head();

  static std::size_t parameter_count(std::size_t in, std::size_t out, std::size_t width);

 private:
  std::string arch_;
  std::size_t in_, out_, width_;
  Conv layers_[5];
};

/// Two-level UNet with skip connections and a 1x1 output head. Inputs whose
/// H or W are not divisible by 4 are zero-padded and the output cropped.
class UNet final : public ImageModel {
 public:
  UNet(ParamStore& store, const std::string& prefix, std::string arch, std::size_t in, std::size_t out,
       std::size_t width, std::uint64_t seed);

  Tensor forward(const Tensor& x) const override;
  std::string arch() const override { return arch_; }
  std::size_t in_channels() const override { return in_; }
  std::size_t out_channels() const override { return out_; }
  void zero_head();

  static std::size_t parameter_count(std::size_t in, std::size_t out, std::size_t width);

 private:
  std::string arch_;
  std::size_t in_, out_, width_;
  Conv enc1_, enc2_, mid_, dec2_, dec1_, head_;
};

/// Convolutional LSTM driving the gradient-based updates of the solver.
class ConvLstmCell {
 public:
  struct State {
    Tensor hidden;  // hidden x H x W
    Tensor cell;
  };

  ConvLstmCell(ParamStore& store, const std::string& prefix, std::size_t channels, std::size_t hidden,
               std::uint64_t seed);

  State zero_state(std::size_t h, std::size_t w) const;
  /// (increment, next state) for a gradient field `grad_in` (channels x H x W).
  std::pair<Tensor, State> step(const Tensor& grad_in, const State& state) const;

  std::string arch() const { return "convlstm" + std::to_string(hidden_); }
  std::size_t channels() const { return channels_; }
  std::size_t hidden() const { return hidden_; }
  void zero_weights();
  /// Zero output projection: every increment is 0 until trained.
  void zero_head();

  static std::size_t parameter_count(std::size_t channels, std::size_t hidden);

 private:
  std::size_t channels_, hidden_;
  Conv gates_;
  Conv head_;
};

/// Direct-inversion input: NaN gaps -> 0 plus one validity indicator channel
/// per frame (2L channels in total).
Tensor direct_input(std::span<const double> obs, std::size_t length, std::size_t h, std::size_t w);

/// Run a direct model on a gappy window (values standardized, gaps NaN).
Tensor forward_direct(const ImageModel& model, std::span<const double> obs, std::size_t length, std::size_t h,
                      std::size_t w);

}  // namespace gapfill::models
