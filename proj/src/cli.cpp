#include "gapfill/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>

#include "gapfill/errors.hpp"
#include "gapfill/experiments.hpp"
#include "gapfill/log.hpp"

namespace gapfill::cli {

using nlohmann::json;
namespace fs = std::filesystem;
namespace ex = gapfill::experiments;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  int threads = 0;
  bool verbose = false;
  bool quiet = false;
  CLI::Option* seed_opt = nullptr;
};

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json report_json(const metrics::EvalReport& r) {
  return {{"method", r.method},           {"mask_spec", r.mask_spec}, {"rmsle", number(r.rmsle)},
          {"mre_percent", number(r.mre_percent)}, {"mv_prop", number(r.mv_prop)}, {"n_pixels", r.n_pixels}};
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

std::string file_id(std::string s) {
  for (auto& c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) c = '_';
  }
  return s;
}

ex::RunConfig load_config(const Globals& g) {
  ex::RunConfig cfg = g.config.empty() ? ex::RunConfig{} : ex::load_run_config(g.config);
  if (g.seed_opt && g.seed_opt->count() > 0) cfg.seed = g.seed;
  if (!g.out.empty()) cfg.out = g.out;
  if (g.threads > 0) cfg.threads = g.threads;
  return cfg;
}

fs::path in_out(const ex::RunConfig& cfg, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : fs::path(cfg.out) / path;
}

void export_images(const ex::RunConfig& cfg, const SpatioTemporalField& field, const std::string& stem) {
  const double lo = cfg.data.synth.truth.mean_log10 - cfg.data.synth.truth.half_range;
  const double hi = cfg.data.synth.truth.mean_log10 + cfg.data.synth.truth.half_range;
  const std::size_t T = field.dims().t;
  for (std::size_t t : {std::size_t{0}, T / 2, T - 1}) {
    ex::export_frame_pgm(field, t, fs::path(cfg.out) / "images" / (stem + "_" + std::to_string(t) + ".pgm"), lo, hi);
  }
}

// ---------------------------------------------------------------------------

void cmd_synth(const ex::RunConfig& cfg, std::ostream& out) {
  synth::SynthConfig sc = cfg.data.synth;
  sc.seed = cfg.seed;
  const synth::Dataset ds = synth::generate(sc);
  const fs::path dir(cfg.out);
  fs::create_directories(dir);
  save_field(ds.truth, dir / "truth.gff");
  save_field(ds.gappy, dir / "gappy.gff");
  write_frame_stats_csv(ds.gappy, dir / "frame_stats.csv");
  const auto& d = ds.gappy.dims();
  const auto sea = static_cast<double>(std::count(ds.gappy.land().begin(), ds.gappy.land().end(), 0));
  const double missing = 1.0 - static_cast<double>(ds.gappy.valid_count()) / (sea * static_cast<double>(d.t));
  const json manifest{{"seed", cfg.seed},
                      {"dims", {d.t, d.h, d.w}},
                      {"time_origin", ds.gappy.meta().time_origin},
                      {"files", {{"truth", "truth.gff"}, {"gappy", "gappy.gff"}, {"frame_stats", "frame_stats.csv"}}},
                      {"sensors", ds.gappy.sensors()->sensor_names},
                      {"missing_ratio", number(missing)},
                      {"synth", synth::to_json(sc)}};
  write_json(dir / "manifest.json", manifest);
  if (cfg.export_images) {
    export_images(cfg, ds.truth, "truth");
    export_images(cfg, ds.gappy, "gappy");
  }
  out << manifest.dump() << "\n";
}

void cmd_train(const ex::RunConfig& cfg, std::ostream& out) {
  if (cfg.method == "dineof" || cfg.method == "edineof") {
    throw ConfigError("train: method '" + cfg.method + "' has no trainable parameters");
  }
  const auto kind = varnet::parse_kind(cfg.method);
  const ex::Prepared data = ex::prepare(cfg);
  const MaskSpec mask = ex::seeded_mask(cfg.mask, cfg.seed);
  const fs::path dir = fs::path(cfg.out) / "train" / (varnet::kind_name(kind) + "-" + file_id(mask.id()));
  auto tc = ex::train_config(cfg.solver, cfg.seed);
  tc.checkpoint_dir = dir;
  tc.resume = cfg.resume;
  const auto result =
      varnet::train_mapper(ex::mapper_spec(cfg.solver, kind, cfg.seed), data.train_field, data.val_field, mask, tc);
  out << json{{"method", varnet::kind_name(kind)},
              {"checkpoint", (dir / "best.gfw").string()},
              {"log", (dir / "log.csv").string()},
              {"epochs_run", result.history.size()},
              {"best_epoch", result.best.epoch},
              {"val_rmsle", number(result.best.val_rmsle)}}
             .dump()
      << "\n";
}

void cmd_interpolate(const ex::RunConfig& cfg, std::ostream& out) {
  const bool eof = cfg.method == "dineof" || cfg.method == "edineof";
  std::optional<varnet::TrainedMapper> model;
  if (!eof) {
    if (cfg.checkpoint.empty()) throw ConfigError("interpolate: method '" + cfg.method + "' needs --checkpoint");
    if (!fs::exists(cfg.checkpoint)) throw ConfigError("interpolate: checkpoint not found: " + cfg.checkpoint);
    model.emplace(varnet::load_mapper(cfg.checkpoint));
  }
  const ex::Prepared data = ex::prepare(cfg);
  const ex::TestCase tc = ex::make_test_case(data.test_field, cfg.eval.test_mask, cfg.seed);

  json report;
  SpatioTemporalField recon;
  std::string method = cfg.method;
  if (eof) {
    auto run = ex::interpolate_dineof(data.train_field, tc.obs, cfg.dineof, cfg.method == "edineof", cfg.seed);
    recon = std::move(run.recon);
    report["rank"] = run.rank;
    report["iterations"] = run.iterations;
    report["final_change"] = number(run.final_change);
  } else {
    method = varnet::kind_name(model->mapper.spec().kind);
    recon = varnet::reconstruct_series(*model, tc.obs, cfg.threads);
    report["checkpoint"] = cfg.checkpoint;
    report["checkpoint_epoch"] = model->epoch;
  }
  const fs::path dir(cfg.out);
  fs::create_directories(dir);
  save_field(recon, dir / "recon.gff");
  save_field(tc.obs, dir / "obs.gff");
  save_field(data.test_field, dir / "target.gff");
  save_field(mask_as_field(data.test_field, tc.mask), dir / "mask.gff");
  if (cfg.export_images) {
    export_images(cfg, recon, "recon");
    export_images(cfg, tc.obs, "obs");
  }
  const auto scores = metrics::evaluate(data.test_field, recon, tc.mask, method, tc.mask_id);
  report.update(report_json(scores));
  out << report.dump() << "\n";
}

struct EvalArgs {
  std::string truth, recon, obs, csv, method, mask_id = "obs";
};

void cmd_eval(const ex::RunConfig& cfg, const EvalArgs& a, std::ostream& out) {
  const auto truth = load_field(a.truth);
  const auto recon = load_field(a.recon);
  const auto obs = load_field(a.obs);
  if (!(truth.dims() == recon.dims() && truth.dims() == obs.dims())) {
    throw ConfigError("eval: truth, recon and obs grids differ");
  }
  ObservationMask keep{obs.dims(), std::vector<std::uint8_t>(obs.valid().begin(), obs.valid().end())};
  const auto report = metrics::evaluate(truth, recon, keep, a.method.empty() ? cfg.method : a.method, a.mask_id);
  metrics::append_report_csv(in_out(cfg, a.csv.empty() ? cfg.eval.csv : a.csv), report, cfg.seed);
  out << report_json(report).dump() << "\n";
}

void cmd_bench(const ex::RunConfig& cfg, std::ostream& out) {
  const ex::Prepared data = ex::prepare(cfg);
  ex::ModelCache models(fs::path(cfg.out) / "models", cfg, data);
  const auto rows = ex::run_bench(cfg, data, models);
  ex::write_bench_csv(fs::path(cfg.out) / "bench.csv", rows, cfg.seed);
  json j = json::array();
  for (const auto& r : rows) {
    auto o = report_json(r.report);
    o["seconds"] = r.seconds;
    j.push_back(o);
  }
  out << j.dump() << "\n";
}

void cmd_crossmatrix(const ex::RunConfig& cfg, std::ostream& out) {
  const ex::Prepared data = ex::prepare(cfg);
  ex::ModelCache models(fs::path(cfg.out) / "models", cfg, data);
  const auto cells = ex::run_crossmatrix(cfg, data, models);
  ex::write_crossmatrix_csv(fs::path(cfg.out) / "crossmatrix.csv", cells, cfg.seed);
  json j = json::array();
  for (const auto& c : cells) {
    j.push_back({{"train_mask", c.train_mask},
                 {"test_mask", c.test_mask},
                 {"rmsle", number(c.report.rmsle)},
                 {"best_in_column", c.best_in_column}});
  }
  out << j.dump() << "\n";
}

void cmd_ablate(const ex::RunConfig& cfg, std::ostream& out) {
  const ex::Prepared data = ex::prepare(cfg);
  ex::ModelCache models(fs::path(cfg.out) / "models", cfg, data);
  const auto ablation = ex::run_ablation(cfg, data, models);
  ex::write_ablation_csv(fs::path(cfg.out) / "ablation.csv", ablation, cfg.seed);
  const auto pairs = ex::wide_swath_pairs(ablation, cfg.data.synth.sensors.wide_swath);
  std::size_t wins = 0;
  for (const auto& p : pairs) wins += p.rmsle_with < p.rmsle_without ? 1 : 0;
  out << json{{"subsets", ablation.rows.size()},
              {"holdout_pixels", ablation.holdout_pixels},
              {"blind_rmsle", number(ablation.blind.rmsle)},
              {"wide_swath_pairs", pairs.size()},
              {"wide_swath_wins", wins}}
             .dump()
      << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gap filling of gappy satellite time series", "gapfill"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON run configuration");
  g.seed_opt = app.add_option("--seed", g.seed, "run seed (overrides the config)");
  app.add_option("--out", g.out, "output directory (overrides the config)");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_flag("-v,--verbose", g.verbose, "progress messages");
  app.add_flag("-q,--quiet", g.quiet, "errors only");

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic truth and gappy multi-sensor record");
  auto* train_cmd = app.add_subcommand("train", "train a mapper with observation-only sub-sampling");
  auto* interp_cmd = app.add_subcommand("interpolate", "reconstruct the test period");
  auto* eval_cmd = app.add_subcommand("eval", "score a reconstruction and append a CSV row");
  auto* bench_cmd = app.add_subcommand("bench", "benchmark all six methods");
  auto* cross_cmd = app.add_subcommand("crossmatrix", "train/test sub-sampling pattern cross-matrix");
  auto* ablate_cmd = app.add_subcommand("ablate", "sensor combination ablation");

  std::string method;
  bool resume = false;
  std::string checkpoint;
  train_cmd->add_option("--method", method, "direct-cnn, direct-unet, varnet-cnn or varnet-unet");
  train_cmd->add_flag("--resume", resume, "continue from the last checkpoint");
  interp_cmd->add_option("--method", method, "dineof, edineof or a neural method");
  interp_cmd->add_option("--checkpoint", checkpoint, "trained mapper (.gfw)");
  EvalArgs eval_args;
  eval_cmd->add_option("--truth", eval_args.truth, "reference field")->required();
  eval_cmd->add_option("--recon", eval_args.recon, "reconstruction")->required();
  eval_cmd->add_option("--obs", eval_args.obs, "observations given to the method")->required();
  eval_cmd->add_option("--csv", eval_args.csv, "report CSV (relative paths are under --out)");
  eval_cmd->add_option("--method", eval_args.method, "method label");
  eval_cmd->add_option("--mask-id", eval_args.mask_id, "mask label");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  log::set_level(g.quiet ? log::Level::quiet : g.verbose ? log::Level::info : log::Level::warn);

  try {
    ex::RunConfig cfg = load_config(g);
    if (!method.empty()) cfg.method = method;
    if (resume) cfg.resume = true;
    if (!checkpoint.empty()) cfg.checkpoint = checkpoint;

    if (synth_cmd->parsed()) cmd_synth(cfg, out);
    else if (train_cmd->parsed()) cmd_train(cfg, out);
    else if (interp_cmd->parsed()) cmd_interpolate(cfg, out);
    else if (eval_cmd->parsed()) cmd_eval(cfg, eval_args, out);
    else if (bench_cmd->parsed()) cmd_bench(cfg, out);
    else if (cross_cmd->parsed()) cmd_crossmatrix(cfg, out);
    else if (ablate_cmd->parsed()) cmd_ablate(cfg, out);
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const FormatError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace gapfill::cli
