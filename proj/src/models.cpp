#include "gapfill/models.hpp"

#include <cmath>
#include <stdexcept>

#include "gapfill/rng.hpp"

namespace gapfill::models {

using namespace gapfill::tensor;

namespace {

std::uint64_t layer_seed(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) h = (h ^ c) * 1099511628211ULL;
  return rng::key({seed, h});
}

void set_zero(Tensor& t) {
  for (auto& v : t.data()) v = 0.0;
}

// Centered delta kernel from input channel `from` to output channel `to`.
void set_delta(Tensor& w, std::size_t to, std::size_t from, double value) {
  const auto in = w.dim(1), k = w.dim(2);
  w.data()[((to * in + from) * k + k / 2) * k + k / 2] = value;
}

}  // namespace

Conv Conv::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                  std::uint64_t seed) {
  Conv c;
  c.weight = store.add(name + ".weight", kaiming_uniform({out, in, k, k}, in * k * k, layer_seed(seed, name)));
  c.bias = store.add(name + ".bias", Tensor::zeros({out}));
  return c;
}

// ---------------------------------------------------------------------------

ConvNet::ConvNet(ParamStore& store, const std::string& prefix, std::string arch, std::size_t in,
                 std::size_t out, std::size_t width, std::uint64_t seed)
    : arch_(std::move(arch)), in_(in), out_(out), width_(width) {
  const std::size_t ch[6] = {in, width, 2 * width, 2 * width, width, out};
  for (int i = 0; i < 5; ++i) {
    layers_[i] = Conv::create(store, prefix + "conv" + std::to_string(i + 1), ch[i], ch[i + 1], 3, seed);
  }
}

Tensor ConvNet::forward(const Tensor& x) const {
  if (x.shape().size() != 3 || x.dim(0) != in_) {
    throw std::invalid_argument(arch_ + ": expected " + std::to_string(in_) + " input channels, got " +
                                shape_str(x.shape()));
  }
  Tensor h = x;
  for (int i = 0; i < 4; ++i) h = relu(layers_[i](h));
  return layers_[4](h);
}

void ConvNet::init_identity() {
  if (in_ != out_ || 2 * in_ > width_) {
    throw std::invalid_argument("identity initialization needs in == out and 2*in <= width");
  }
  for (auto& l : layers_) {
    set_zero(l.weight);
    set_zero(l.bias);
  }
  for (std::size_t c = 0; c < in_; ++c) {
    set_delta(layers_[0].weight, c, c, 1.0);
    set_delta(layers_[0].weight, in_ + c, c, -1.0);
    for (int i = 1; i < 4; ++i) {
      set_delta(layers_[i].weight, c, c, 1.0);
      set_delta(layers_[i].weight, in_ + c, in_ + c, 1.0);
    }
    set_delta(layers_[4].weight, c, c, 1.0);
    set_delta(layers_[4].weight, c, in_ + c, -1.0);
  }
}

void ConvNet::zero_head() {
  set_zero(layers_[4].weight);
  set_zero(layers_[4].bias);
}

std::size_t ConvNet::parameter_count(std::size_t in, std::size_t out, std::size_t width) {
  return Conv::parameter_count(in, width, 3) + Conv::parameter_count(width, 2 * width, 3) +
         Conv::parameter_count(2 * width, 2 * width, 3) + Conv::parameter_count(2 * width, width, 3) +
         Conv::parameter_count(width, out, 3);
}

// ---------------------------------------------------------------------------

UNet::UNet(ParamStore& store, const std::string& prefix, std::string arch, std::size_t in, std::size_t out,
           std::size_t width, std::uint64_t seed)
    : arch_(std::move(arch)), in_(in), out_(out), width_(width) {
  enc1_ = Conv::create(store, prefix + "enc1", in, width, 3, seed);
  enc2_ = Conv::create(store, prefix + "enc2", width, 2 * width, 3, seed);
  mid_ = Conv::create(store, prefix + "mid", 2 * width, 2 * width, 3, seed);
  dec2_ = Conv::create(store, prefix + "dec2", 4 * width, width, 3, seed);
  dec1_ = Conv::create(store, prefix + "dec1", 2 * width, width, 3, seed);
  head_ = Conv::create(store, prefix + "head", width, out, 1, seed);
}

Tensor UNet::forward(const Tensor& x) const {
  if (x.shape().size() != 3 || x.dim(0) != in_) {
    throw std::invalid_argument(arch_ + ": expected " + std::to_string(in_) + " input channels, got " +
                                shape_str(x.shape()));
  }
  const auto H = x.dim(1), W = x.dim(2);
  const auto Hp = (H + 3) / 4 * 4, Wp = (W + 3) / 4 * 4;
  const Tensor xin = (Hp != H || Wp != W) ? pad2d(x, Hp, Wp) : x;

  const Tensor e1 = relu(enc1_(xin));                       // w    x H
  const Tensor e2 = relu(enc2_(avg_pool2(e1)));             // 2w   x H/2
  const Tensor m = relu(mid_(avg_pool2(e2)));               // 2w   x H/4
  const Tensor d2 = relu(dec2_(concat_channels(upsample2_nearest(m), e2)));   // w x H/2
  const Tensor d1 = relu(dec1_(concat_channels(upsample2_nearest(d2), e1)));  // w x H
  const Tensor y = head_(d1);
  return (Hp != H || Wp != W) ? crop2d(y, H, W) : y;
}

void UNet::zero_head() {
  set_zero(head_.weight);
  set_zero(head_.bias);
}

std::size_t UNet::parameter_count(std::size_t in, std::size_t out, std::size_t width) {
  return Conv::parameter_count(in, width, 3) + Conv::parameter_count(width, 2 * width, 3) +
         Conv::parameter_count(2 * width, 2 * width, 3) + Conv::parameter_count(4 * width, width, 3) +
         Conv::parameter_count(2 * width, width, 3) + Conv::parameter_count(width, out, 1);
}

// ---------------------------------------------------------------------------

ConvLstmCell::ConvLstmCell(ParamStore& store, const std::string& prefix, std::size_t channels,
                           std::size_t hidden, std::uint64_t seed)
    : channels_(channels), hidden_(hidden) {
  gates_ = Conv::create(store, prefix + "gates", channels + hidden, 4 * hidden, 3, seed);
  head_ = Conv::create(store, prefix + "head", hidden, channels, 3, seed);
}

ConvLstmCell::State ConvLstmCell::zero_state(std::size_t h, std::size_t w) const {
  return State{Tensor::zeros({hidden_, h, w}), Tensor::zeros({hidden_, h, w})};
}

std::pair<Tensor, ConvLstmCell::State> ConvLstmCell::step(const Tensor& grad_in, const State& state) const {
  if (grad_in.shape().size() != 3 || grad_in.dim(0) != channels_) {
    throw std::invalid_argument("convlstm: expected " + std::to_string(channels_) + " input channels, got " +
                                shape_str(grad_in.shape()));
  }
  const Tensor z = gates_(concat_channels(grad_in, state.hidden));
  const Tensor in_gate = sigmoid(slice_channels(z, 0, hidden_));
  const Tensor forget_gate = sigmoid(slice_channels(z, hidden_, hidden_));
  const Tensor candidate = tanh(slice_channels(z, 2 * hidden_, hidden_));
  const Tensor out_gate = sigmoid(slice_channels(z, 3 * hidden_, hidden_));
  State next;
  next.cell = add(mul(forget_gate, state.cell), mul(in_gate, candidate));
  next.hidden = mul(out_gate, tanh(next.cell));
  return {head_(next.hidden), next};
}

void ConvLstmCell::zero_head() {
  set_zero(head_.weight);
  set_zero(head_.bias);
}

void ConvLstmCell::zero_weights() {
  set_zero(gates_.weight);
  set_zero(gates_.bias);
  set_zero(head_.weight);
  set_zero(head_.bias);
}

std::size_t ConvLstmCell::parameter_count(std::size_t channels, std::size_t hidden) {
  return Conv::parameter_count(channels + hidden, 4 * hidden, 3) + Conv::parameter_count(hidden, channels, 3);
}

// ---------------------------------------------------------------------------

Tensor direct_input(std::span<const double> obs, std::size_t length, std::size_t h, std::size_t w) {
  const auto fs = h * w;
  if (obs.size() != length * fs) throw std::invalid_argument("direct_input: window size mismatch");
  std::vector<double> data(2 * length * fs, 0.0);
  for (std::size_t i = 0; i < length * fs; ++i) {
    if (!std::isnan(obs[i])) {
      data[i] = obs[i];
      data[length * fs + i] = 1.0;
    }
  }
  return Tensor::from({2 * length, h, w}, std::move(data));
}

Tensor forward_direct(const ImageModel& model, std::span<const double> obs, std::size_t length, std::size_t h,
                      std::size_t w) {
  if (model.in_channels() != 2 * length || model.out_channels() != length) {
    throw std::invalid_argument("forward_direct: model expects " + std::to_string(model.in_channels()) +
                                " input channels, window provides " + std::to_string(2 * length));
  }
  return model.forward(direct_input(obs, length, h, w));
}

}  // namespace gapfill::models
