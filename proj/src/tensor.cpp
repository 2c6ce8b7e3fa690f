#include "gapfill/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <Eigen/Dense>

#include "gapfill/errors.hpp"
#include "gapfill/rng.hpp"

namespace gapfill::tensor {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

thread_local Tape* g_current_tape = nullptr;
thread_local bool g_grad_enabled = true;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error(op, a.shape(), b.shape());
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.shape().size() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_str(a.shape()));
  }
}

using BackwardFn = std::function<std::vector<Tensor>(const Node&, const Tensor&, const std::vector<bool>&)>;

class FnNode final : public Node {
 public:
  FnNode(const char* name, BackwardFn fn) : name_(name), fn_(std::move(fn)) {}
  std::vector<Tensor> backward(const Tensor& grad_out, const std::vector<bool>& needed) override {
    return fn_(*this, grad_out, needed);
  }
  const char* name() const override { return name_; }

 private:
  const char* name_;
  BackwardFn fn_;
};

Tensor make(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

// Attach history to `out` when recording is on and any input is tracked.
Tensor finish(Tensor out, std::vector<Tensor> inputs, const char* name, BackwardFn fn) {
  Tape* tape = Tape::current();
  if (!tape || !grad_enabled()) return out;
  const bool tracked = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (!tracked) return out;
  auto node = std::make_shared<FnNode>(name, std::move(fn));
  node->inputs = std::move(inputs);
  node->output = out;
  out.impl()->requires_grad = true;
  tape->record(std::move(node));
  return out;
}

template <typename F>
Tensor map_unary(const Tensor& a, F f) {
  std::vector<double> out(a.numel());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make(a.shape(), std::move(out));
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  std::vector<double> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
  return make(a.shape(), std::move(out));
}

// ---- convolution kernels (im2col + GEMM) ----------------------------------

struct ConvGeom {
  std::size_t c, h, w, kh, kw;
  std::size_t rows() const { return c * kh * kw; }
  std::size_t pixels() const { return h * w; }
};

// cols is (C*kh*kw) x (H*W), row-major; same zero padding.
void im2col(const double* x, const ConvGeom& g, std::vector<double>& cols) {
  const auto hw = g.pixels();
  cols.assign(g.rows() * hw, 0.0);
  const long ph = static_cast<long>(g.kh / 2);
  const long pw = static_cast<long>(g.kw / 2);
  const long H = static_cast<long>(g.h);
  const long W = static_cast<long>(g.w);
  for (std::size_t c = 0; c < g.c; ++c) {
    const double* xc = x + c * hw;
    for (std::size_t a = 0; a < g.kh; ++a) {
      for (std::size_t b = 0; b < g.kw; ++b) {
        double* row = cols.data() + ((c * g.kh + a) * g.kw + b) * hw;
        const long dy = static_cast<long>(a) - ph;
        const long dx = static_cast<long>(b) - pw;
        const long x0 = std::max(0L, -dx);
        const long x1 = std::min(W, W - dx);
        if (x1 <= x0) continue;
        for (long y = 0; y < H; ++y) {
          const long yy = y + dy;
          if (yy < 0 || yy >= H) continue;
          std::memcpy(row + y * W + x0, xc + yy * W + x0 + dx, static_cast<std::size_t>(x1 - x0) * sizeof(double));
        }
      }
    }
  }
}

std::vector<double> conv_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  const ConvGeom g{input.dim(0), input.dim(1), input.dim(2), kernel.dim(2), kernel.dim(3)};
  const auto out_c = kernel.dim(0);
  std::vector<double> out(out_c * g.pixels());
  Eigen::Map<RowMat> y(out.data(), static_cast<Eigen::Index>(out_c), static_cast<Eigen::Index>(g.pixels()));
  Eigen::Map<const RowMat> k(kernel.data().data(), static_cast<Eigen::Index>(out_c),
                             static_cast<Eigen::Index>(g.rows()));
  if (g.kh == 1 && g.kw == 1) {
    Eigen::Map<const RowMat> x(input.data().data(), static_cast<Eigen::Index>(g.c),
                               static_cast<Eigen::Index>(g.pixels()));
    y.noalias() = k * x;
  } else {
    thread_local std::vector<double> cols;
    im2col(input.data().data(), g, cols);
    Eigen::Map<const RowMat> x(cols.data(), static_cast<Eigen::Index>(g.rows()),
                               static_cast<Eigen::Index>(g.pixels()));
    y.noalias() = k * x;
  }
  if (bias.defined()) {
    for (std::size_t o = 0; o < out_c; ++o) y.row(static_cast<Eigen::Index>(o)).array() += bias.data()[o];
  }
  return out;
}

std::vector<double> conv_weight_grad(const Tensor& input, const Tensor& grad_out, std::size_t kh, std::size_t kw) {
  const ConvGeom g{input.dim(0), input.dim(1), input.dim(2), kh, kw};
  const auto out_c = grad_out.dim(0);
  std::vector<double> out(out_c * g.rows());
  Eigen::Map<RowMat> gk(out.data(), static_cast<Eigen::Index>(out_c), static_cast<Eigen::Index>(g.rows()));
  Eigen::Map<const RowMat> go(grad_out.data().data(), static_cast<Eigen::Index>(out_c),
                              static_cast<Eigen::Index>(g.pixels()));
  if (kh == 1 && kw == 1) {
    Eigen::Map<const RowMat> x(input.data().data(), static_cast<Eigen::Index>(g.c),
                               static_cast<Eigen::Index>(g.pixels()));
    gk.noalias() = go * x.transpose();
  } else {
    thread_local std::vector<double> cols;
    im2col(input.data().data(), g, cols);
    Eigen::Map<const RowMat> x(cols.data(), static_cast<Eigen::Index>(g.rows()),
                               static_cast<Eigen::Index>(g.pixels()));
    gk.noalias() = go * x.transpose();
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = tensor::numel(shape);
  return make(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  if (tensor::numel(shape) != data.size()) {
    throw std::invalid_argument("Tensor::from: data length does not match shape " + shape_str(shape));
  }
  return make(std::move(shape), std::move(data));
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() on a tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

Tensor Tensor::detach() const { return make(impl_->shape, impl_->data); }

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : prev_(g_current_tape) { g_current_tape = this; }

Tape::~Tape() { g_current_tape = prev_; }

Tape* Tape::current() { return g_current_tape; }

void Tape::record(std::shared_ptr<Node> node) {
  producer_[node->output.impl()] = nodes_.size();
  nodes_.push_back(std::move(node));
}

long long Tape::producer(const TensorImpl* t) const {
  auto it = producer_.find(t);
  return it == producer_.end() ? -1 : static_cast<long long>(it->second);
}

std::unordered_map<const TensorImpl*, Tensor> Tape::sweep(const Tensor& output,
                                                          const std::vector<const TensorImpl*>& seeds,
                                                          bool seeds_are_leaves, bool create_graph) {
  std::unordered_map<const TensorImpl*, Tensor> grads;
  const long long out_idx = producer(output.impl());
  {
    NoGradGuard ng;
    grads[output.impl()] = Tensor::full(output.shape(), 1.0);
  }
  if (out_idx < 0) return grads;
  const auto last = static_cast<std::size_t>(out_idx);

  // Forward pass over the record: which values depend on the seeds.
  std::unordered_set<const TensorImpl*> relevant(seeds.begin(), seeds.end());
  std::vector<char> node_relevant(last + 1, 0);
  for (std::size_t i = 0; i <= last; ++i) {
    const Node& n = *nodes_[i];
    for (const auto& in : n.inputs) {
      if (!in.defined()) continue;
      const bool seed_leaf = seeds_are_leaves && in.requires_grad() && producer(in.impl()) < 0;
      if (seed_leaf) relevant.insert(in.impl());
      if (relevant.count(in.impl())) node_relevant[i] = 1;
    }
    if (node_relevant[i]) relevant.insert(n.output.impl());
  }

  std::unordered_set<const TensorImpl*> keep(seeds.begin(), seeds.end());
  for (std::size_t i = last + 1; i-- > 0;) {
    if (!node_relevant[i]) continue;
    std::shared_ptr<Node> n = nodes_[i];
    auto it = grads.find(n->output.impl());
    if (it == grads.end()) continue;
    Tensor g = it->second;
    if (!keep.count(n->output.impl()) && !(seeds_are_leaves && producer(n->output.impl()) < 0)) {
      grads.erase(it);
    }
    std::vector<bool> needed(n->inputs.size());
    for (std::size_t j = 0; j < n->inputs.size(); ++j) {
      needed[j] = n->inputs[j].defined() && relevant.count(n->inputs[j].impl()) > 0;
    }
    std::vector<Tensor> gin;
    if (create_graph) {
      gin = n->backward(g, needed);
    } else {
      NoGradGuard ng;
      gin = n->backward(g, needed);
    }
    for (std::size_t j = 0; j < n->inputs.size(); ++j) {
      if (!needed[j] || j >= gin.size() || !gin[j].defined()) continue;
      const TensorImpl* key = n->inputs[j].impl();
      auto slot = grads.find(key);
      if (slot == grads.end()) {
        grads.emplace(key, gin[j]);
      } else if (create_graph) {
        slot->second = add(slot->second, gin[j]);
      } else {
        NoGradGuard ng;
        slot->second = add(slot->second, gin[j]);
      }
    }
  }
  return grads;
}

void Tape::backward(const Tensor& loss, bool create_graph) {
  if (loss.numel() != 1) throw std::invalid_argument("backward requires a scalar loss, got " + shape_str(loss.shape()));
  auto grads = sweep(loss, {}, true, create_graph);
  for (auto& [impl, g] : grads) {
    if (producer(impl) >= 0) continue;
    auto* leaf = const_cast<TensorImpl*>(impl);
    if (!leaf->requires_grad) continue;
    if (leaf->grad.empty()) leaf->grad.assign(leaf->data.size(), 0.0);
    const auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i) leaf->grad[i] += gd[i];
  }
}

std::vector<Tensor> Tape::grad(const Tensor& output, const std::vector<Tensor>& wrt, bool create_graph) {
  std::vector<const TensorImpl*> seeds;
  seeds.reserve(wrt.size());
  for (const auto& w : wrt) seeds.push_back(w.impl());
  auto grads = sweep(output, seeds, false, create_graph);
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = grads.find(w.impl());
    out.push_back(it != grads.end() ? it->second : Tensor::zeros(w.shape()));
  }
  return out;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

EnableGradGuard::EnableGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = true; }
EnableGradGuard::~EnableGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Tensor& loss, bool create_graph) {
  Tape* tape = Tape::current();
  if (!tape) throw std::logic_error("backward called with no active tape");
  tape->backward(loss, create_graph);
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  return finish(map_binary(a, b, [](double x, double y) { return x + y; }), {a, b}, "add",
                [](const Node&, const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  return finish(map_binary(a, b, [](double x, double y) { return x - y; }), {a, b}, "sub",
                [](const Node&, const Tensor& g, const std::vector<bool>& need) {
                  return std::vector<Tensor>{g, need[1] ? scale(g, -1.0) : Tensor{}};
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  return finish(map_binary(a, b, [](double x, double y) { return x * y; }), {a, b}, "mul",
                [](const Node& n, const Tensor& g, const std::vector<bool>& need) {
                  return std::vector<Tensor>{need[0] ? mul(g, n.inputs[1]) : Tensor{},
                                             need[1] ? mul(g, n.inputs[0]) : Tensor{}};
                });
}

Tensor scale(const Tensor& a, double c) {
  return finish(map_unary(a, [c](double x) { return c * x; }), {a}, "scale",
                [c](const Node&, const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{scale(g, c)};
                });
}

Tensor affine(const Tensor& a, double alpha, double beta) {
  return finish(map_unary(a, [alpha, beta](double x) { return alpha * x + beta; }), {a}, "affine",
                [alpha](const Node&, const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{scale(g, alpha)};
                });
}

Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw std::invalid_argument("mul_scalar: scale must have one element");
  const double c = s.data()[0];
  return finish(map_unary(a, [c](double x) { return c * x; }), {a, s}, "mul_scalar",
                [](const Node& n, const Tensor& g, const std::vector<bool>& need) {
                  return std::vector<Tensor>{need[0] ? mul_scalar(g, n.inputs[1]) : Tensor{},
                                             need[1] ? sum(mul(g, n.inputs[0])) : Tensor{}};
                });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return finish(make({1}, {s}), {a}, "sum", [](const Node& n, const Tensor& g, const std::vector<bool>&) {
    return std::vector<Tensor>{expand(g, n.inputs[0].shape())};
  });
}

Tensor expand(const Tensor& s, const Shape& shape) {
  if (s.numel() != 1) throw std::invalid_argument("expand: source must have one element");
  return finish(Tensor::full(shape, s.data()[0]), {s}, "expand",
                [](const Node&, const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{sum(g)}; });
}

Tensor relu(const Tensor& a) {
  return finish(map_unary(a, [](double x) { return x > 0.0 ? x : 0.0; }), {a}, "relu",
                [](const Node& n, const Tensor& g, const std::vector<bool>&) {
                  // Subgradient 0 at exactly 0; the step is a constant.
                  auto step = map_unary(n.inputs[0], [](double x) { return x > 0.0 ? 1.0 : 0.0; });
                  return std::vector<Tensor>{mul(g, step)};
                });
}

Tensor tanh(const Tensor& a) {
  return finish(map_unary(a, [](double x) { return std::tanh(x); }), {a}, "tanh",
                [](const Node& n, const Tensor& g, const std::vector<bool>&) {
                  const Tensor& y = n.output;
                  return std::vector<Tensor>{mul(g, affine(mul(y, y), -1.0, 1.0))};
                });
}

Tensor sigmoid(const Tensor& a) {
  return finish(map_unary(a,
                          [](double x) {
                            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
                            const double e = std::exp(x);
                            return e / (1.0 + e);
                          }),
                {a}, "sigmoid", [](const Node& n, const Tensor& g, const std::vector<bool>&) {
                  const Tensor& y = n.output;
                  return std::vector<Tensor>{mul(g, mul(y, affine(y, -1.0, 1.0)))};
                });
}

Tensor exp(const Tensor& a) {
  return finish(map_unary(a, [](double x) { return std::exp(x); }), {a}, "exp",
                [](const Node& n, const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{mul(g, n.output)};
                });
}

Tensor sqrt(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw NumericalError("sqrt: argument must be positive, got " + std::to_string(v));
  }
  return finish(map_unary(a, [](double x) { return std::sqrt(x); }), {a}, "sqrt",
                [](const Node& n, const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{mul(g, scale(reciprocal(n.output), 0.5))};
                });
}

Tensor reciprocal(const Tensor& a) {
  for (double v : a.data()) {
    if (v == 0.0) throw NumericalError("reciprocal: division by zero");
  }
  return finish(map_unary(a, [](double x) { return 1.0 / x; }), {a}, "reciprocal",
                [](const Node& n, const Tensor& g, const std::vector<bool>&) {
                  const Tensor& y = n.output;
                  return std::vector<Tensor>{scale(mul(g, mul(y, y)), -1.0)};
                });
}

// ---------------------------------------------------------------------------
// Convolution family

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  require_rank("conv2d input", input, 3);
  require_rank("conv2d kernel", kernel, 4);
  if (kernel.dim(1) != input.dim(0)) shape_error("conv2d", input.shape(), kernel.shape());
  if (kernel.dim(2) % 2 == 0 || kernel.dim(3) % 2 == 0) {
    throw std::invalid_argument("conv2d: kernel extents must be odd, got " + shape_str(kernel.shape()));
  }
  if (bias.defined() && (bias.shape().size() != 1 || bias.dim(0) != kernel.dim(0))) {
    shape_error("conv2d bias", bias.shape(), kernel.shape());
  }
  auto out = make({kernel.dim(0), input.dim(1), input.dim(2)}, conv_forward(input, kernel, bias));
  std::vector<Tensor> inputs{input, kernel};
  if (bias.defined()) inputs.push_back(bias);
  return finish(std::move(out), std::move(inputs), "conv2d",
                [](const Node& n, const Tensor& g, const std::vector<bool>& need) {
                  const Tensor& x = n.inputs[0];
                  const Tensor& k = n.inputs[1];
                  std::vector<Tensor> r(n.inputs.size());
                  if (need[0]) r[0] = conv2d(g, flip_transpose(k));
                  if (need[1]) r[1] = conv2d_weight_grad(x, g, k.dim(2), k.dim(3));
                  if (n.inputs.size() > 2 && need[2]) r[2] = channel_sum(g);
                  return r;
                });
}

Tensor conv2d_weight_grad(const Tensor& input, const Tensor& grad_out, std::size_t kh, std::size_t kw) {
  require_rank("conv2d_weight_grad input", input, 3);
  require_rank("conv2d_weight_grad grad", grad_out, 3);
  if (input.dim(1) != grad_out.dim(1) || input.dim(2) != grad_out.dim(2)) {
    shape_error("conv2d_weight_grad", input.shape(), grad_out.shape());
  }
  auto out = make({grad_out.dim(0), input.dim(0), kh, kw}, conv_weight_grad(input, grad_out, kh, kw));
  return finish(std::move(out), {input, grad_out}, "conv2d_weight_grad",
                [](const Node& n, const Tensor& g, const std::vector<bool>& need) {
                  const Tensor& x = n.inputs[0];
                  const Tensor& go = n.inputs[1];
                  return std::vector<Tensor>{need[0] ? conv2d(go, flip_transpose(g)) : Tensor{},
                                             need[1] ? conv2d(x, g) : Tensor{}};
                });
}

Tensor flip_transpose(const Tensor& kernel) {
  require_rank("flip_transpose", kernel, 4);
  const auto O = kernel.dim(0), C = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  std::vector<double> out(kernel.numel());
  const auto k = kernel.data();
  for (std::size_t o = 0; o < O; ++o) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t a = 0; a < kh; ++a) {
        for (std::size_t b = 0; b < kw; ++b) {
          out[((c * O + o) * kh + a) * kw + b] = k[((o * C + c) * kh + (kh - 1 - a)) * kw + (kw - 1 - b)];
        }
      }
    }
  }
  return finish(make({C, O, kh, kw}, std::move(out)), {kernel}, "flip_transpose",
                [](const Node&, const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{flip_transpose(g)};
                });
}

Tensor channel_sum(const Tensor& a) {
  require_rank("channel_sum", a, 3);
  const auto C = a.dim(0), hw = a.dim(1) * a.dim(2);
  std::vector<double> out(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += a.data()[c * hw + i];
    out[c] = s;
  }
  return finish(make({C}, std::move(out)), {a}, "channel_sum",
                [](const Node& n, const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{channel_expand(g, n.inputs[0].dim(1), n.inputs[0].dim(2))};
                });
}

Tensor channel_expand(const Tensor& a, std::size_t h, std::size_t w) {
  require_rank("channel_expand", a, 1);
  const auto C = a.dim(0);
  std::vector<double> out(C * h * w);
  for (std::size_t c = 0; c < C; ++c) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(c * h * w), h * w, a.data()[c]);
  return finish(make({C, h, w}, std::move(out)), {a}, "channel_expand",
                [](const Node&, const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{channel_sum(g)};
                });
}

// ---------------------------------------------------------------------------
// Resampling and channel plumbing

Tensor avg_pool2(const Tensor& a) {
  require_rank("avg_pool2", a, 3);
  const auto C = a.dim(0), H = a.dim(1), W = a.dim(2);
  if (H % 2 || W % 2) throw std::invalid_argument("avg_pool2: H and W must be even, got " + shape_str(a.shape()));
  const auto h = H / 2, w = W / 2;
  std::vector<double> out(C * h * w);
  const auto x = a.data();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) {
        const auto base = (c * H + 2 * y) * W + 2 * xx;
        out[(c * h + y) * w + xx] = 0.25 * (x[base] + x[base + 1] + x[base + W] + x[base + W + 1]);
      }
    }
  }
  return finish(make({C, h, w}, std::move(out)), {a}, "avg_pool2",
                [](const Node&, const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{scale(upsample2_nearest(g), 0.25)};
                });
}

Tensor upsample2_nearest(const Tensor& a) {
  require_rank("upsample2_nearest", a, 3);
  const auto C = a.dim(0), h = a.dim(1), w = a.dim(2);
  const auto H = 2 * h, W = 2 * w;
  std::vector<double> out(C * H * W);
  const auto x = a.data();
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t xx = 0; xx < W; ++xx) out[(c * H + y) * W + xx] = x[(c * h + y / 2) * w + xx / 2];
    }
  }
  return finish(make({C, H, W}, std::move(out)), {a}, "upsample2_nearest",
                [](const Node&, const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{scale(avg_pool2(g), 4.0)};
                });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank("concat_channels", a, 3);
  require_rank("concat_channels", b, 3);
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) shape_error("concat_channels", a.shape(), b.shape());
  std::vector<double> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  return finish(make({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)}, std::move(out)), {a, b}, "concat_channels",
                [](const Node& n, const Tensor& g, const std::vector<bool>& need) {
                  const auto ca = n.inputs[0].dim(0), cb = n.inputs[1].dim(0);
                  return std::vector<Tensor>{need[0] ? slice_channels(g, 0, ca) : Tensor{},
                                             need[1] ? slice_channels(g, ca, cb) : Tensor{}};
                });
}

Tensor slice_channels(const Tensor& a, std::size_t begin, std::size_t count) {
  require_rank("slice_channels", a, 3);
  if (begin + count > a.dim(0) || count == 0) throw std::invalid_argument("slice_channels: range out of bounds");
  const auto hw = a.dim(1) * a.dim(2);
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * hw),
                          a.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * hw));
  return finish(make({count, a.dim(1), a.dim(2)}, std::move(out)), {a}, "slice_channels",
                [begin](const Node& n, const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{embed_channels(g, begin, n.inputs[0].dim(0))};
                });
}

Tensor embed_channels(const Tensor& a, std::size_t begin, std::size_t total) {
  require_rank("embed_channels", a, 3);
  if (begin + a.dim(0) > total) throw std::invalid_argument("embed_channels: range out of bounds");
  const auto hw = a.dim(1) * a.dim(2);
  std::vector<double> out(total * hw, 0.0);
  std::copy(a.data().begin(), a.data().end(), out.begin() + static_cast<std::ptrdiff_t>(begin * hw));
  return finish(make({total, a.dim(1), a.dim(2)}, std::move(out)), {a}, "embed_channels",
                [begin](const Node& n, const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{slice_channels(g, begin, n.inputs[0].dim(0))};
                });
}

Tensor pad2d(const Tensor& a, std::size_t h, std::size_t w) {
  require_rank("pad2d", a, 3);
  const auto C = a.dim(0), H = a.dim(1), W = a.dim(2);
  if (h < H || w < W) throw std::invalid_argument("pad2d: target smaller than input");
  std::vector<double> out(C * h * w, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>((c * H + y) * W), W,
                  out.begin() + static_cast<std::ptrdiff_t>((c * h + y) * w));
    }
  }
  return finish(make({C, h, w}, std::move(out)), {a}, "pad2d",
                [](const Node& n, const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{crop2d(g, n.inputs[0].dim(1), n.inputs[0].dim(2))};
                });
}

Tensor crop2d(const Tensor& a, std::size_t h, std::size_t w) {
  require_rank("crop2d", a, 3);
  const auto C = a.dim(0), H = a.dim(1), W = a.dim(2);
  if (h > H || w > W) throw std::invalid_argument("crop2d: target larger than input");
  std::vector<double> out(C * h * w);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>((c * H + y) * W), w,
                  out.begin() + static_cast<std::ptrdiff_t>((c * h + y) * w));
    }
  }
  return finish(make({C, h, w}, std::move(out)), {a}, "crop2d",
                [](const Node& n, const Tensor& g, const std::vector<bool>&) {
                  return std::vector<Tensor>{pad2d(g, n.inputs[0].dim(1), n.inputs[0].dim(2))};
                });
}

// ---------------------------------------------------------------------------
// Losses

Tensor masked_sse(const Tensor& pred, std::span<const double> target, std::span<const std::uint8_t> mask) {
  if (target.size() != pred.numel() || mask.size() != pred.numel()) {
    throw std::invalid_argument("masked loss: target/mask length does not match prediction " +
                                shape_str(pred.shape()));
  }
  std::vector<double> t(pred.numel(), 0.0);
  std::vector<double> m(pred.numel(), 0.0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (mask[i]) {
      t[i] = target[i];
      m[i] = 1.0;
    }
  }
  const auto tt = Tensor::from(pred.shape(), std::move(t));
  const auto mm = Tensor::from(pred.shape(), std::move(m));
  const auto d = mul(sub(pred, tt), mm);
  return sum(mul(d, d));
}

Tensor masked_mse(const Tensor& pred, std::span<const double> target, std::span<const std::uint8_t> mask) {
  const auto count = static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto b) { return b != 0; }));
  if (count == 0) throw std::invalid_argument("masked_mse: mask has no true entries");
  return scale(masked_sse(pred, target, mask), 1.0 / static_cast<double>(count));
}

// ---------------------------------------------------------------------------
// ParamStore / Adam

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  index_[name] = entries_.size();
  entries_.push_back(Entry{name, std::move(value), {}, {}});
  return entries_.back().value;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return entries_[it->second].value;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return entries_[it->second].value;
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) > 0; }

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

double ParamStore::grad_norm() const {
  double s = 0.0;
  for (const auto& e : entries_) {
    for (double g : e.value.grad()) s += g * g;
  }
  return std::sqrt(s);
}

std::vector<std::vector<double>> ParamStore::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.emplace_back(e.value.data().begin(), e.value.data().end());
  return out;
}

void ParamStore::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != entries_.size()) throw std::invalid_argument("snapshot does not match parameter store");
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto d = entries_[i].value.data();
    if (values[i].size() != d.size()) throw std::invalid_argument("snapshot shape mismatch");
    std::copy(values[i].begin(), values[i].end(), d.begin());
  }
}

void adam_step(ParamStore& params, const AdamConfig& cfg) {
  params.set_step(params.step() + 1);
  const double t = static_cast<double>(params.step());
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& e : params.entries()) {
    auto p = e.value.data();
    const auto g = e.value.grad();
    if (e.m.size() != p.size()) e.m.assign(p.size(), 0.0);
    if (e.v.size() != p.size()) e.v.assign(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * gi;
      e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = e.m[i] / bc1;
      const double vhat = e.v[i] / bc2;
      p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

Tensor kaiming_uniform(const Shape& shape, std::size_t fan_in, std::uint64_t seed) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  const rng::Stream stream(seed);
  std::vector<double> data(numel(shape));
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = (2.0 * stream.uniform_at(i) - 1.0) * bound;
  return Tensor::from(shape, std::move(data));
}

// ---------------------------------------------------------------------------
// GFW1 container

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<double>(bits);
}

struct GfwFile {
  nlohmann::json header;
  std::string payload;
};

GfwFile read_gfw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || bytes.compare(0, 4, "GFW1") != 0) throw FormatError("not a GFW1 weight file");
  const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t hlen = u[4] | (u[5] << 8) | (u[6] << 16) | (static_cast<std::uint32_t>(u[7]) << 24);
  if (bytes.size() < 8ull + hlen) throw FormatError("GFW1 header truncated");
  GfwFile f;
  try {
    f.header = nlohmann::json::parse(bytes.substr(8, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed GFW1 header: ") + e.what());
  }
  f.payload = bytes.substr(8 + hlen);
  return f;
}

}  // namespace

void save_params(const ParamStore& params, const std::filesystem::path& path, const std::string& arch,
                 const nlohmann::json& meta, bool with_optimizer_state) {
  nlohmann::json list = nlohmann::json::array();
  std::string payload;
  auto emit = [&](const std::string& name, const Shape& shape, std::span<const double> values) {
    list.push_back({{"name", name}, {"shape", shape}, {"offset", payload.size()}});
    for (double v : values) put_f64(payload, v);
  };
  for (const auto& e : params.entries()) emit(e.name, e.value.shape(), e.value.data());
  if (with_optimizer_state) {
    for (const auto& e : params.entries()) {
      std::vector<double> m = e.m, v = e.v;
      m.resize(e.value.numel(), 0.0);
      v.resize(e.value.numel(), 0.0);
      emit("adam.m:" + e.name, e.value.shape(), m);
      emit("adam.v:" + e.name, e.value.shape(), v);
    }
  }
  nlohmann::json header{{"arch", arch}, {"meta", meta}, {"params", list}, {"step", params.step()}};
  const std::string text = header.dump();
  std::string out = "GFW1";
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out += payload;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed for '" + path.string() + "'");
}

nlohmann::json read_params_header(const std::filesystem::path& path) { return read_gfw(path).header; }

nlohmann::json load_params(ParamStore& params, const std::filesystem::path& path, const std::string& arch) {
  const GfwFile f = read_gfw(path);
  const auto file_arch = f.header.value("arch", std::string{});
  if (file_arch != arch) {
    throw FormatError("architecture mismatch: file holds '" + file_arch + "', expected '" + arch + "'");
  }
  std::unordered_map<std::string, nlohmann::json> by_name;
  for (const auto& p : f.header.at("params")) by_name[p.at("name").get<std::string>()] = p;

  auto read_into = [&](const nlohmann::json& p, std::span<double> dst) {
    const auto off = p.at("offset").get<std::size_t>();
    if (off + dst.size() * 8 > f.payload.size()) throw FormatError("GFW1 payload truncated");
    const auto* base = reinterpret_cast<const unsigned char*>(f.payload.data()) + off;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = get_f64(base + 8 * i);
  };

  std::size_t matched = 0;
  for (auto& e : params.entries()) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) throw FormatError("weight file lacks parameter '" + e.name + "'");
    if (it->second.at("shape").get<Shape>() != e.value.shape()) {
      throw FormatError("shape mismatch for parameter '" + e.name + "'");
    }
    read_into(it->second, e.value.data());
    ++matched;
    auto mi = by_name.find("adam.m:" + e.name);
    auto vi = by_name.find("adam.v:" + e.name);
    if (mi != by_name.end() && vi != by_name.end()) {
      e.m.assign(e.value.numel(), 0.0);
      e.v.assign(e.value.numel(), 0.0);
      read_into(mi->second, e.m);
      read_into(vi->second, e.v);
      matched += 2;
    }
  }
  if (matched != by_name.size()) throw FormatError("weight file holds unexpected parameters");
  params.set_step(f.header.value("step", 0LL));
  return f.header.value("meta", nlohmann::json::object());
}

}  // namespace gapfill::tensor
