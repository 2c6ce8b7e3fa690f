#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// Operations record onto the innermost active Tape when at least one input
// requires a gradient. Backward rules are themselves written with recorded
// operations, so gradients can be differentiated again (create_graph), which
// the unrolled variational solver needs.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace gapfill::tensor {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // leaf accumulator, allocated on demand
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor scalar(double v) { return from({1}, {v}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }
  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  /// Leaf gradient accumulator (empty until a backward pass reaches it).
  std::span<const double> grad() const { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad() { impl_->grad.clear(); }

  /// Copy of the values with no history.
  Tensor detach() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& shared() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// A recorded operation: inputs, output, and a backward rule.
class Node {
 public:
  virtual ~Node() = default;
  /// Gradients w.r.t. inputs; entries may be left undefined where `needed` is false.
  virtual std::vector<Tensor> backward(const Tensor& grad_out, const std::vector<bool>& needed) = 0;
  virtual const char* name() const = 0;

  std::vector<Tensor> inputs;
  Tensor output;
};

/// Ordered record of executed operations. Constructing a Tape makes it the
/// current recording target for this thread until it is destroyed.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  std::size_t size() const { return nodes_.size(); }
  void record(std::shared_ptr<Node> node);
  /// Index of the node that produced `t`, or -1 for leaves / unrecorded values.
  long long producer(const TensorImpl* t) const;
  Node& node(std::size_t i) { return *nodes_[i]; }

  /// Accumulate d(loss)/d(leaf) into every requires_grad leaf reachable from loss.
  void backward(const Tensor& loss, bool create_graph = false);

  /// d(output)/d(wrt[i]) without touching leaf accumulators. Entries are zero
  /// tensors where wrt[i] does not influence output.
  std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& wrt, bool create_graph = false);

 private:
  std::unordered_map<const TensorImpl*, Tensor> sweep(const Tensor& output,
                                                      const std::vector<const TensorImpl*>& seeds,
                                                      bool seeds_are_leaves, bool create_graph);

  std::vector<std::shared_ptr<Node>> nodes_;
  std::unordered_map<const TensorImpl*, std::size_t> producer_;
  Tape* prev_ = nullptr;
};

/// Disables recording for its lifetime (inference, optimizer updates).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Re-enables recording for its lifetime, e.g. an inner gradient evaluation
/// performed while an outer scope has recording disabled.
class EnableGradGuard {
 public:
  EnableGradGuard();
  ~EnableGradGuard();
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

/// Convenience: backward on the current tape.
void backward(const Tensor& loss, bool create_graph = false);

// ---------------------------------------------------------------------------
// Operations. Shapes must match exactly unless noted.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
/// alpha * a + beta, elementwise.
Tensor affine(const Tensor& a, double alpha, double beta);
/// a * s where s is a single-element tensor.
Tensor mul_scalar(const Tensor& a, const Tensor& s);
Tensor sum(const Tensor& a);
/// Broadcast a single-element tensor to `shape`.
Tensor expand(const Tensor& s, const Shape& shape);

Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
/// Elementwise; NumericalError on non-positive / zero entries.
Tensor sqrt(const Tensor& a);
Tensor reciprocal(const Tensor& a);

/// Same-padded stride-1 convolution. input C_in x H x W, kernel C_out x C_in x kh x kw
/// (odd kh, kw), bias C_out or undefined.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias = {});
/// Kernel gradient of conv2d: sum over pixels of grad_out x shifted input.
Tensor conv2d_weight_grad(const Tensor& input, const Tensor& grad_out, std::size_t kh, std::size_t kw);
/// Swap the two channel axes of a kernel and flip it spatially.
Tensor flip_transpose(const Tensor& kernel);
/// Sum over H, W: C x H x W -> C.
Tensor channel_sum(const Tensor& a);
/// C -> C x H x W by repetition.
Tensor channel_expand(const Tensor& a, std::size_t h, std::size_t w);

Tensor avg_pool2(const Tensor& a);
Tensor upsample2_nearest(const Tensor& a);
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& a, std::size_t begin, std::size_t count);
/// Place `a` at channel offset `begin` inside a zero tensor of `total` channels.
Tensor embed_channels(const Tensor& a, std::size_t begin, std::size_t total);
/// Zero-pad bottom/right to h x w, and the matching crop.
Tensor pad2d(const Tensor& a, std::size_t h, std::size_t w);
Tensor crop2d(const Tensor& a, std::size_t h, std::size_t w);

/// Mean of squared differences over mask-true entries. Values of `target`
/// under mask-false entries are ignored (may be NaN). Throws on empty mask.
Tensor masked_mse(const Tensor& pred, std::span<const double> target, std::span<const std::uint8_t> mask);
/// Sum of squared differences over mask-true entries.
Tensor masked_sse(const Tensor& pred, std::span<const double> target, std::span<const std::uint8_t> mask);

// ---------------------------------------------------------------------------
// Parameters and optimization

class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    std::vector<double> m;
    std::vector<double> v;
  };

  /// Registers a leaf parameter (requires_grad is switched on). Names must be unique.
  Tensor& add(const std::string& name, Tensor value);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t parameter_count() const;
  long long step() const { return step_; }
  void set_step(long long s) { step_ = s; }

  void zero_grad();
  /// Euclidean norm of all accumulated gradients.
  double grad_norm() const;
  /// Deep copy of the current values (no optimizer state).
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  long long step_ = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected adaptive-moment update using the accumulated gradients.
void adam_step(ParamStore& params, const AdamConfig& cfg);

/// Kaiming-uniform bound sqrt(6 / fan_in) from a seeded counter stream.
Tensor kaiming_uniform(const Shape& shape, std::size_t fan_in, std::uint64_t seed);

// GFW1 weight container.
void save_params(const ParamStore& params, const std::filesystem::path& path, const std::string& arch,
                 const nlohmann::json& meta = nlohmann::json::object(), bool with_optimizer_state = false);
/// Loads values by name into an existing store; throws FormatError on arch,
/// name or shape mismatch. Returns the header "meta" object.
nlohmann::json load_params(ParamStore& params, const std::filesystem::path& path, const std::string& arch);
/// Reads only the header of a GFW1 file.
nlohmann::json read_params_header(const std::filesystem::path& path);

}  // namespace gapfill::tensor
