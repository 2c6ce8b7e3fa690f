#include "gapfill/varnet.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include "gapfill/errors.hpp"
#include "gapfill/log.hpp"
#include "gapfill/metrics.hpp"
#include "gapfill/rng.hpp"

namespace gapfill::varnet {

using namespace gapfill::tensor;
using nlohmann::json;

namespace {

constexpr std::uint64_t kOnlineDomain = 0x4f4e4c494e45ULL;
constexpr std::uint64_t kShuffleDomain = 0x5348554646ULL;
constexpr std::uint64_t kValidationDomain = 0x56414c4944ULL;

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<std::uint8_t> finite_mask(std::span<const double> y) {
  std::vector<std::uint8_t> m(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) m[i] = std::isfinite(y[i]) ? 1 : 0;
  return m;
}

// Frames [start, start + len) in standardized units, NaN where not valid.
std::vector<double> window_values(const SpatioTemporalField& f, std::size_t start, std::size_t len,
                                  const NormStats& norm) {
  const auto fs = f.dims().frame_size();
  std::vector<double> out(len * fs, std::numeric_limits<double>::quiet_NaN());
  const auto values = f.values();
  const auto valid = f.valid();
  const std::size_t base = start * fs;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (valid[base + i]) out[i] = (static_cast<double>(values[base + i]) - norm.mean) / norm.std;
  }
  return out;
}

std::vector<std::size_t> window_starts(std::size_t t, std::size_t length, std::size_t stride) {
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + length <= t; s += stride) starts.push_back(s);
  if (!starts.empty() && starts.back() + length < t) starts.push_back(t - length);
  return starts;
}

std::string arch_of(const MapperSpec& s) {
  std::string a = kind_name(s.kind) + "/L" + std::to_string(s.window) + "/w" + std::to_string(s.width);
  if (is_varnet(s.kind)) a += "/h" + std::to_string(s.hidden);
  return a;
}

void check_spec(const MapperSpec& s) {
  if (s.window < 1) throw ConfigError("window length must be >= 1");
  if (s.width < 1) throw ConfigError("network width must be >= 1");
  if (s.hidden < 1) throw ConfigError("solver hidden channels must be >= 1");
  if (s.iterations < 1) throw ConfigError("solver iterations must be >= 1");
}

json spec_json(const MapperSpec& s) {
  return json{{"kind", kind_name(s.kind)}, {"window", s.window},         {"width", s.width},
              {"hidden", s.hidden},        {"iterations", s.iterations}, {"init_seed", s.seed}};
}

MapperSpec spec_from_json(const json& j) {
  MapperSpec s;
  s.kind = parse_kind(j.at("kind").get<std::string>());
  s.window = j.at("window").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.hidden = j.at("hidden").get<std::size_t>();
  s.iterations = j.at("iterations").get<int>();
  s.seed = j.at("init_seed").get<std::uint64_t>();
  return s;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double number_from(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json sidecar_json(const TrainedMapper& m) {
  json j = spec_json(m.mapper.spec());
  j["arch"] = m.mapper.arch();
  j["norm"] = {{"mean", m.norm.mean}, {"std", m.norm.std}};
  j["mask_spec"] = mask_spec_to_json(m.mask_spec);
  j["seed"] = m.seed;
  j["epoch"] = m.epoch;
  j["val_rmsle"] = number_or_null(m.val_rmsle);
  return j;
}

std::filesystem::path sidecar_path(const std::filesystem::path& p) { return p.string() + ".json"; }

// Reconstruct every window starting at `starts` and average overlapping frames.
SpatioTemporalField reconstruct_windows(const Mapper& mapper, const NormStats& norm, const SpatioTemporalField& obs,
                                        std::size_t stride, int threads) {
  const auto& d = obs.dims();
  const std::size_t L = mapper.spec().window;
  if (d.t < L) {
    throw ConfigError("series has " + std::to_string(d.t) + " frames, shorter than the window length " +
                      std::to_string(L));
  }
  if (stride < 1) throw ConfigError("window stride must be >= 1");
  const auto starts = window_starts(d.t, L, stride);
  const auto fs = d.frame_size();
  std::vector<double> acc(d.size(), 0.0);
  std::vector<std::size_t> count(d.t, 0);

  const std::size_t workers = static_cast<std::size_t>(std::max(1, threads));
  const std::size_t chunk = workers * 2;
  std::vector<std::vector<double>> preds(chunk);
  for (std::size_t c0 = 0; c0 < starts.size(); c0 += chunk) {
    const std::size_t n = std::min(chunk, starts.size() - c0);
    auto run = [&](std::size_t i) {
      const auto y = window_values(obs, starts[c0 + i], L, norm);
      const Tensor x = mapper.reconstruct(y, d.h, d.w, false);
      preds[i].assign(x.data().begin(), x.data().end());
    };
    if (workers == 1 || n == 1) {
      for (std::size_t i = 0; i < n; ++i) run(i);
    } else {
      std::vector<std::exception_ptr> errors(workers);
      std::vector<std::thread> pool;
      for (std::size_t wkr = 0; wkr < workers; ++wkr) {
        pool.emplace_back([&, wkr] {
          try {
            for (std::size_t i = wkr; i < n; i += workers) run(i);
          } catch (...) {
            errors[wkr] = std::current_exception();
          }
        });
      }
      for (auto& th : pool) th.join();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }
    // Accumulate in window order so the result does not depend on `threads`.
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = starts[c0 + i] * fs;
      for (std::size_t j = 0; j < L * fs; ++j) acc[base + j] += preds[i][j];
      for (std::size_t t = 0; t < L; ++t) ++count[starts[c0 + i] + t];
    }
  }

  SpatioTemporalField out(d, obs.meta());
  std::copy(obs.land().begin(), obs.land().end(), out.land().begin());
  for (std::size_t t = 0; t < d.t; ++t) {
    for (std::size_t h = 0; h < d.h; ++h) {
      for (std::size_t w = 0; w < d.w; ++w) {
        if (out.is_land(h, w)) continue;
        const double z = acc[d.index(t, h, w)] / static_cast<double>(count[t]);
        const double v = z * norm.std + norm.mean;
        if (!std::isfinite(v)) {
          throw NumericalError("non-finite reconstruction at frame " + std::to_string(t));
        }
        out.set(t, h, w, static_cast<float>(v));
      }
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

VarCostParams VarCostParams::create(ParamStore& store, const std::string& prefix, double lambda1, double lambda2) {
  if (!(lambda1 > 0.0) || !(lambda2 > 0.0)) throw std::invalid_argument("cost weights must be positive");
  VarCostParams p;
  p.log_lambda1 = store.add(prefix + "log_lambda1", Tensor::scalar(std::log(lambda1)));
  p.log_lambda2 = store.add(prefix + "log_lambda2", Tensor::scalar(std::log(lambda2)));
  return p;
}

double VarCostParams::lambda1() const { return std::exp(log_lambda1.item()); }
double VarCostParams::lambda2() const { return std::exp(log_lambda2.item()); }

Tensor var_cost(const Tensor& x, std::span<const double> y, std::span<const std::uint8_t> omega,
                const models::ImageModel& phi, const VarCostParams& params) {
  if (y.size() != x.numel() || omega.size() != x.numel()) {
    throw std::invalid_argument("var_cost: observation length does not match state " + shape_str(x.shape()));
  }
  const Tensor residual = sub(x, phi.forward(x));
  Tensor u = mul_scalar(sum(mul(residual, residual)), tensor::exp(params.log_lambda2));
  if (std::any_of(omega.begin(), omega.end(), [](std::uint8_t b) { return b != 0; })) {
    u = add(mul_scalar(masked_sse(x, y, omega), tensor::exp(params.log_lambda1)), u);
  } else {
    log::info("variational cost: window has no observations, observation term dropped");
  }
  return u;
}

Tensor solve(std::span<const double> y, std::span<const std::uint8_t> omega, const Shape& shape,
             const models::ImageModel& phi, const VarCostParams& params, const models::ConvLstmCell* cell,
             const SolveOptions& opts) {
  if (opts.iterations < 1) throw ConfigError("solver needs at least one iteration");
  if (!opts.plain_gradient && cell == nullptr) throw std::invalid_argument("solve: recurrent cell required");
  if (shape.size() != 3) throw std::invalid_argument("solve: state must be L x H x W");
  const auto n = tensor::numel(shape);
  if (y.size() != n || omega.size() != n) throw std::invalid_argument("solve: observation length mismatch");

  std::vector<double> x0(n);
  for (std::size_t i = 0; i < n; ++i) x0[i] = omega[i] ? y[i] : 0.0;
  Tensor x = Tensor::from(shape, std::move(x0));

  Tape* outer = Tape::current();
  if (opts.differentiable && (outer == nullptr || !grad_enabled())) {
    throw std::logic_error("solve: differentiable mode needs an active recording tape");
  }
  if (opts.differentiable) x.set_requires_grad(true);

  models::ConvLstmCell::State state;
  if (cell) state = cell->zero_state(shape[1], shape[2]);
  if (opts.cost_trace) opts.cost_trace->clear();

  for (int k = 1; k <= opts.iterations; ++k) {
    Tensor g;
    if (opts.differentiable) {
      const Tensor u = var_cost(x, y, omega, phi, params);
      if (opts.cost_trace) opts.cost_trace->push_back(u.item());
      g = outer->grad(u, {x}, true)[0];
    } else {
      EnableGradGuard eg;
      Tape tape;
      Tensor xl = x.detach();
      xl.set_requires_grad(true);
      const Tensor u = var_cost(xl, y, omega, phi, params);
      if (opts.cost_trace) opts.cost_trace->push_back(u.item());
      g = tape.grad(u, {xl}, false)[0];
    }
    const double gnorm = l2_norm(g.data());
    if (!std::isfinite(gnorm)) {
      throw NumericalError("solver iteration " + std::to_string(k) + ": non-finite cost gradient (norm " +
                           std::to_string(gnorm) + ")");
    }
    std::optional<NoGradGuard> ng;
    if (!opts.differentiable) ng.emplace();
    if (opts.plain_gradient) {
      x = sub(x, scale(g, opts.step));
    } else {
      auto [increment, next] = cell->step(g, state);
      state = std::move(next);
      x = add(x, increment);
    }
  }
  if (opts.cost_trace) {
    EnableGradGuard eg;
    Tape tape;  // keeps the final evaluation off any outer tape
    NoGradGuard ng;
    opts.cost_trace->push_back(var_cost(x.detach(), y, omega, phi, params).item());
  }
  return x;
}

// ---------------------------------------------------------------------------

std::string kind_name(MapperKind kind) {
  switch (kind) {
    case MapperKind::direct_cnn: return "direct-cnn";
    case MapperKind::direct_unet: return "direct-unet";
    case MapperKind::varnet_cnn: return "varnet-cnn";
    case MapperKind::varnet_unet: return "varnet-unet";
  }
  return "unknown";
}

MapperKind parse_kind(const std::string& name) {
  for (auto k : {MapperKind::direct_cnn, MapperKind::direct_unet, MapperKind::varnet_cnn, MapperKind::varnet_unet}) {
    if (kind_name(k) == name) return k;
  }
  throw ConfigError("unknown method '" + name + "'");
}

bool is_varnet(MapperKind kind) { return kind == MapperKind::varnet_cnn || kind == MapperKind::varnet_unet; }

Mapper::Mapper(const MapperSpec& spec) : spec_(spec) {
  check_spec(spec);
  const auto L = spec.window;
  switch (spec.kind) {
    case MapperKind::direct_cnn:
      net_ = std::make_unique<models::ConvNet>(store_, "net.", "cnn", 2 * L, L, spec.width, spec.seed);
      break;
    case MapperKind::direct_unet:
      net_ = std::make_unique<models::UNet>(store_, "net.", "unet", 2 * L, L, spec.width, spec.seed);
      break;
    case MapperKind::varnet_cnn:
      net_ = std::make_unique<models::ConvNet>(store_, "phi.", "cnn", L, L, spec.width, spec.seed);
      break;
    case MapperKind::varnet_unet:
      net_ = std::make_unique<models::UNet>(store_, "phi.", "unet", L, L, spec.width, spec.seed);
      break;
  }
  if (is_varnet(spec.kind)) {
    cost_ = VarCostParams::create(store_, "cost.");
    cell_ = std::make_unique<models::ConvLstmCell>(store_, "cell.", L, spec.hidden, spec.seed);
    // Zero increments at initialization: the untrained solver returns its starting point.
    cell_->zero_head();
  }
}

Mapper::Mapper(Mapper&&) noexcept = default;
Mapper& Mapper::operator=(Mapper&&) noexcept = default;
Mapper::~Mapper() = default;

std::string Mapper::arch() const { return arch_of(spec_); }

Tensor Mapper::reconstruct(std::span<const double> obs, std::size_t h, std::size_t w, bool differentiable) const {
  const auto L = spec_.window;
  if (obs.size() != L * h * w) throw std::invalid_argument("reconstruct: window length does not match the mapper");
  if (is_varnet(spec_.kind)) {
    const auto omega = finite_mask(obs);
    SolveOptions opts;
    opts.iterations = spec_.iterations;
    opts.differentiable = differentiable;
    return solve(obs, omega, {L, h, w}, *net_, *cost_, cell_.get(), opts);
  }
  if (differentiable) return models::forward_direct(*net_, obs, L, h, w);
  NoGradGuard ng;
  return models::forward_direct(*net_, obs, L, h, w);
}

// ---------------------------------------------------------------------------

void save_mapper(const TrainedMapper& m, const std::filesystem::path& path, bool with_optimizer_state) {
  const json side = sidecar_json(m);
  save_params(m.mapper.params(), path, m.mapper.arch(), side, with_optimizer_state);
  std::ofstream out(sidecar_path(path), std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + sidecar_path(path).string());
  out << side.dump(2) << '\n';
}

TrainedMapper load_mapper(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("checkpoint not found: " + path.string());
  json side;
  const auto sp = sidecar_path(path);
  if (std::filesystem::exists(sp)) {
    std::ifstream in(sp);
    try {
      side = json::parse(in);
    } catch (const json::exception& e) {
      throw FormatError("malformed checkpoint sidecar " + sp.string() + ": " + e.what());
    }
  } else {
    side = read_params_header(path).at("meta");
  }
  try {
    TrainedMapper m{Mapper(spec_from_json(side)), {}, {}, 0, 0, 0.0};
    if (side.contains("arch") && side["arch"].get<std::string>() != m.mapper.arch()) {
      throw FormatError("checkpoint sidecar architecture does not match its mapper description");
    }
    load_params(m.mapper.params(), path, m.mapper.arch());
    m.norm.mean = side.at("norm").at("mean").get<double>();
    m.norm.std = side.at("norm").at("std").get<double>();
    m.mask_spec = mask_spec_from_json(side.at("mask_spec"));
    m.seed = side.at("seed").get<std::uint64_t>();
    m.epoch = side.at("epoch").get<int>();
    m.val_rmsle = number_from(side.at("val_rmsle"));
    return m;
  } catch (const json::exception& e) {
    throw FormatError("malformed checkpoint description in " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

std::uint64_t online_mask_seed(std::uint64_t spec_seed, int epoch, std::size_t window_start) {
  return rng::key({spec_seed, kOnlineDomain, static_cast<std::uint64_t>(epoch), window_start});
}

ObservationMask online_mask(const SpatioTemporalField& window, const MaskSpec& spec, int epoch,
                            std::size_t window_start) {
  MaskSpec s = spec;
  s.seed = online_mask_seed(spec.seed, epoch, window_start);
  return generate_mask(window, s);
}

namespace {

struct Validation {
  SpatioTemporalField truth;
  SpatioTemporalField obs;
  std::vector<std::uint8_t> domain;
  bool usable = false;
};

Validation prepare_validation(const SpatioTemporalField& val, const MaskSpec& train_spec,
                              const std::optional<MaskSpec>& override_spec, std::size_t window) {
  Validation v;
  if (val.dims().t < window || val.valid_count() == 0) return v;
  MaskSpec spec = override_spec.value_or(train_spec);
  if (!override_spec && std::holds_alternative<KeepAll>(spec.strategy)) spec.strategy = RandomPatch{};
  spec.seed = rng::key({spec.seed, kValidationDomain});
  auto split = split_obs_target(val, generate_mask(val, spec));
  if (std::none_of(split.eval_domain.begin(), split.eval_domain.end(), [](auto b) { return b != 0; })) {
    spec.strategy = RandomPatch{};
    split = split_obs_target(val, generate_mask(val, spec));
  }
  v.truth = val;
  v.obs = std::move(split.obs);
  v.domain = std::move(split.eval_domain);
  v.usable = std::any_of(v.domain.begin(), v.domain.end(), [](auto b) { return b != 0; });
  return v;
}

double validate(const Mapper& mapper, const NormStats& norm, const Validation& v) {
  if (!v.usable) return std::numeric_limits<double>::quiet_NaN();
  const auto recon = reconstruct_windows(mapper, norm, v.obs, mapper.spec().window, 1);
  return metrics::rmsle(v.truth, recon, v.domain);
}

void append_log_row(const std::filesystem::path& path, const EpochLog& e) {
  metrics::append_atomic(path, "epoch,train_loss,val_rmsle",
                         std::to_string(e.epoch) + "," + metrics::format_number(e.train_loss) + "," +
                             metrics::format_number(e.val_rmsle) + "\n");
}

}  // namespace

TrainResult train_mapper(const MapperSpec& spec, const SpatioTemporalField& train, const SpatioTemporalField& val,
                         const MaskSpec& mask_spec, const TrainConfig& cfg) {
  check_spec(spec);
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.batch < 1) throw ConfigError("batch must be >= 1");
  if (cfg.stride < 1) throw ConfigError("training stride must be >= 1");
  const auto& d = train.dims();
  const std::size_t L = spec.window;
  if (d.t < L) {
    throw ConfigError("empty training set: " + std::to_string(d.t) + " training frames for window length " +
                      std::to_string(L));
  }
  if (!(val.dims().h == d.h && val.dims().w == d.w)) throw ConfigError("validation grid differs from training grid");
  mask_spec.check(d.h, d.w);

  const NormStats norm = compute_norm_stats(train);
  TrainedMapper current{Mapper(spec), norm, mask_spec, cfg.seed, 0, std::numeric_limits<double>::quiet_NaN()};
  Mapper& mapper = current.mapper;
  ParamStore& store = mapper.params();

  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + L <= d.t; s += cfg.stride) starts.push_back(s);
  const Validation validation = prepare_validation(val, mask_spec, cfg.val_mask, L);

  TrainResult result{TrainedMapper{Mapper(spec), norm, mask_spec, cfg.seed, 0, std::numeric_limits<double>::quiet_NaN()},
                     {}};
  std::vector<std::vector<double>> best_values = store.snapshot();
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int first_epoch = 1;

  std::optional<std::filesystem::path> last_path, best_path, log_path;
  if (cfg.checkpoint_dir) {
    std::filesystem::create_directories(*cfg.checkpoint_dir);
    last_path = *cfg.checkpoint_dir / "last.gfw";
    best_path = *cfg.checkpoint_dir / "best.gfw";
    log_path = *cfg.checkpoint_dir / "log.csv";
    if (cfg.resume && std::filesystem::exists(*last_path)) {
      const json meta = load_params(store, *last_path, mapper.arch());
      first_epoch = meta.at("epoch").get<int>() + 1;
      best_epoch = meta.value("best_epoch", 0);
      best_val = meta.contains("best_val_rmsle") ? number_from(meta["best_val_rmsle"])
                                                 : std::numeric_limits<double>::infinity();
      if (!std::isfinite(best_val)) best_val = std::numeric_limits<double>::infinity();
      if (std::filesystem::exists(*best_path)) {
        Mapper best(spec);
        load_params(best.params(), *best_path, best.arch());
        best_values = best.params().snapshot();
      } else {
        best_values = store.snapshot();
      }
      log::info("resuming training at epoch " + std::to_string(first_epoch));
    } else if (std::filesystem::exists(*log_path)) {
      std::filesystem::remove(*log_path);
    }
  }

  for (int epoch = first_epoch; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order = starts;
    rng::Stream shuffle(rng::key({cfg.seed, kShuffleDomain, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<long long>(i) - 1))]);
    }
    if (cfg.max_windows > 0 && order.size() > cfg.max_windows) order.resize(cfg.max_windows);

    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch) {
      const std::size_t nb = std::min(cfg.batch, order.size() - b0);
      store.zero_grad();
      std::size_t used = 0;
      for (std::size_t i = 0; i < nb; ++i) {
        const std::size_t start = order[b0 + i];
        const SpatioTemporalField window = train.slice_time(start, L);
        if (window.valid_count() == 0) continue;
        const auto split = split_obs_target(window, online_mask(window, mask_spec, epoch, start));
        const auto y = window_values(split.obs, 0, L, norm);
        const auto target = window_values(window, 0, L, norm);
        const std::vector<std::uint8_t> target_mask(window.valid().begin(), window.valid().end());

        Tape tape;
        const Tensor xhat = mapper.reconstruct(y, d.h, d.w, true);
        const Tensor loss = masked_mse(xhat, target, target_mask);
        const double lv = loss.item();
        if (!std::isfinite(lv)) {
          throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                               std::to_string(b0 / cfg.batch + 1) + " (window start " + std::to_string(start) + ")");
        }
        tape.backward(scale(loss, 1.0 / static_cast<double>(nb)));
        loss_sum += lv;
        ++loss_count;
        ++used;
      }
      if (used > 0) adam_step(store, cfg.adam);
    }
    store.zero_grad();

    EpochLog log_row;
    log_row.epoch = epoch;
    log_row.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count)
                                    : std::numeric_limits<double>::quiet_NaN();
    log_row.val_rmsle = validate(mapper, norm, validation);
    log_row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(log_row);

    const bool improved = validation.usable ? log_row.val_rmsle < best_val : true;
    if (improved) {
      best_val = validation.usable ? log_row.val_rmsle : best_val;
      best_epoch = epoch;
      best_values = store.snapshot();
    }
    current.epoch = epoch;
    current.val_rmsle = log_row.val_rmsle;

    if (cfg.checkpoint_dir) {
      append_log_row(*log_path, log_row);
      if (improved) save_mapper(current, *best_path);
      json meta = sidecar_json(current);
      meta["best_epoch"] = best_epoch;
      meta["best_val_rmsle"] = number_or_null(best_val);
      save_params(store, *last_path, mapper.arch(), meta, true);
    }
    if (cfg.on_epoch) cfg.on_epoch(log_row);
    log::info(kind_name(spec.kind) + " epoch " + std::to_string(epoch) + ": loss " +
              metrics::format_number(log_row.train_loss) + ", val rmsle " +
              metrics::format_number(log_row.val_rmsle));
  }

  result.best.mapper.params().restore(best_values);
  result.best.epoch = best_epoch;
  result.best.val_rmsle = std::isfinite(best_val) ? best_val : std::numeric_limits<double>::quiet_NaN();
  return result;
}

TrainResult train_varnet(const MapperSpec& spec, const SpatioTemporalField& train, const SpatioTemporalField& val,
                         const MaskSpec& mask_spec, const TrainConfig& cfg) {
  if (!is_varnet(spec.kind)) throw ConfigError("train_varnet needs a varnet-* mapper kind");
  return train_mapper(spec, train, val, mask_spec, cfg);
}

TrainResult train_direct(const MapperSpec& spec, const SpatioTemporalField& train, const SpatioTemporalField& val,
                         const MaskSpec& mask_spec, const TrainConfig& cfg) {
  if (is_varnet(spec.kind)) throw ConfigError("train_direct needs a direct-* mapper kind");
  return train_mapper(spec, train, val, mask_spec, cfg);
}

// ---------------------------------------------------------------------------

SpatioTemporalField reconstruct_series(const TrainedMapper& m, const SpatioTemporalField& obs, int threads) {
  return reconstruct_windows(m.mapper, m.norm, obs, 1, threads);
}

SpatioTemporalField reconstruct_strided(const TrainedMapper& m, const SpatioTemporalField& obs, std::size_t stride,
                                        int threads) {
  return reconstruct_windows(m.mapper, m.norm, obs, stride, threads);
}

}  // namespace gapfill::varnet
