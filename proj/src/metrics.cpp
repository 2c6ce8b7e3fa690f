#include "gapfill/metrics.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "gapfill/errors.hpp"

namespace gapfill::metrics {

namespace {

void check_sizes(std::size_t a, std::size_t b, std::size_t d) {
  if (a != b || a != d) throw std::invalid_argument("metric inputs have different lengths");
}

// Applies f(truth, recon) to every domain entry and returns (sum, count).
template <typename F>
std::pair<double, std::size_t> masked_sum(std::span<const double> truth, std::span<const double> recon,
                                          std::span<const std::uint8_t> domain, F f) {
  check_sizes(truth.size(), recon.size(), domain.size());
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!domain[i]) continue;
    sum += f(truth[i], recon[i]);
    ++n;
  }
  if (n == 0) throw NumericalError("empty evaluation domain");
  return {sum, n};
}

std::vector<double> widen(std::span<const float> v) { return {v.begin(), v.end()}; }

void check_field_pair(const SpatioTemporalField& truth, const SpatioTemporalField& recon) {
  if (!(truth.dims() == recon.dims())) throw std::invalid_argument("truth and reconstruction extents differ");
  if (truth.meta().log10 != recon.meta().log10) {
    throw std::invalid_argument("truth and reconstruction use different value scales");
  }
}

void check_csv_field(const std::string& s) {
  if (s.find_first_of(",\n\r\"") != std::string::npos) {
    throw std::invalid_argument("CSV field contains a reserved character: '" + s + "'");
  }
}

}  // namespace

double rmsle_from_linear(std::span<const double> truth, std::span<const double> recon,
                         std::span<const std::uint8_t> domain) {
  auto [sum, n] = masked_sum(truth, recon, domain, [](double t, double r) {
    if (!(t > 0.0) || !(r > 0.0)) throw NumericalError("non-positive value inside the evaluation domain");
    const double d = std::log10(t) - std::log10(r);
    return d * d;
  });
  return std::sqrt(sum / static_cast<double>(n));
}

double rmsle_from_log10(std::span<const double> truth, std::span<const double> recon,
                        std::span<const std::uint8_t> domain) {
  auto [sum, n] = masked_sum(truth, recon, domain, [](double t, double r) {
    const double d = t - r;
    return d * d;
  });
  if (!std::isfinite(sum)) throw NumericalError("non-finite value inside the evaluation domain");
  return std::sqrt(sum / static_cast<double>(n));
}

double mre_from_linear(std::span<const double> truth, std::span<const double> recon,
                       std::span<const std::uint8_t> domain) {
  auto [sum, n] = masked_sum(truth, recon, domain, [](double t, double r) {
    if (t == 0.0) throw NumericalError("zero truth value inside the evaluation domain");
    return 100.0 * std::abs(t - r) / std::abs(t);
  });
  return sum / static_cast<double>(n);
}

double mre_from_log10(std::span<const double> truth, std::span<const double> recon,
                      std::span<const std::uint8_t> domain) {
  auto [sum, n] = masked_sum(truth, recon, domain, [](double t, double r) {
    // |10^t - 10^r| / 10^t == |1 - 10^(r - t)|
    return 100.0 * std::abs(1.0 - std::pow(10.0, r - t));
  });
  if (!std::isfinite(sum)) throw NumericalError("non-finite value inside the evaluation domain");
  return sum / static_cast<double>(n);
}

double rmsle(const SpatioTemporalField& truth, const SpatioTemporalField& recon,
             std::span<const std::uint8_t> domain) {
  check_field_pair(truth, recon);
  const auto t = widen(truth.values()), r = widen(recon.values());
  return truth.meta().log10 ? rmsle_from_log10(t, r, domain) : rmsle_from_linear(t, r, domain);
}

double mre(const SpatioTemporalField& truth, const SpatioTemporalField& recon,
           std::span<const std::uint8_t> domain) {
  check_field_pair(truth, recon);
  const auto t = widen(truth.values()), r = widen(recon.values());
  return truth.meta().log10 ? mre_from_log10(t, r, domain) : mre_from_linear(t, r, domain);
}

double missing_value_proportion(const SpatioTemporalField& truth, std::span<const std::uint8_t> keep) {
  const auto& d = truth.dims();
  if (keep.size() != d.size()) throw std::invalid_argument("observation mask extents differ from the field");
  const std::size_t sea_days = truth.sea_pixel_count() * d.t;
  if (sea_days == 0) return 1.0;
  std::size_t present = 0;
  const auto valid = truth.valid();
  for (std::size_t i = 0; i < keep.size(); ++i) present += (keep[i] && valid[i]) ? 1 : 0;
  return 1.0 - static_cast<double>(present) / static_cast<double>(sea_days);
}

EvalReport evaluate_on(const SpatioTemporalField& truth, const SpatioTemporalField& recon,
                       std::span<const std::uint8_t> domain, std::span<const std::uint8_t> keep,
                       std::string method, std::string mask_spec) {
  check_field_pair(truth, recon);
  if (domain.size() != truth.dims().size()) throw std::invalid_argument("evaluation domain extents differ");
  const auto valid = truth.valid();
  EvalReport r;
  r.method = std::move(method);
  r.mask_spec = std::move(mask_spec);
  for (std::size_t i = 0; i < domain.size(); ++i) {
    if (!domain[i]) continue;
    if (!valid[i]) throw std::invalid_argument("evaluation domain contains a pixel without ground truth");
    ++r.n_pixels;
  }
  r.rmsle = rmsle(truth, recon, domain);
  r.mre_percent = mre(truth, recon, domain);
  r.mv_prop = missing_value_proportion(truth, keep);
  return r;
}

EvalReport evaluate(const SpatioTemporalField& truth, const SpatioTemporalField& recon,
                    const ObservationMask& obs_mask, std::string method, std::string mask_spec) {
  if (!(obs_mask.dims == truth.dims())) throw std::invalid_argument("observation mask extents differ");
  const auto valid = truth.valid();
  std::vector<std::uint8_t> domain(valid.size());
  for (std::size_t i = 0; i < domain.size(); ++i) domain[i] = (valid[i] && !obs_mask.keep[i]) ? 1 : 0;
  return evaluate_on(truth, recon, domain, obs_mask.keep, std::move(method), std::move(mask_spec));
}

// ---------------------------------------------------------------------------

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string report_row(const EvalReport& r, std::uint64_t seed) {
  check_csv_field(r.method);
  check_csv_field(r.mask_spec);
  std::ostringstream os;
  os << r.method << ',' << r.mask_spec << ',' << format_number(r.rmsle) << ',' << format_number(r.mre_percent)
     << ',' << format_number(r.mv_prop) << ',' << r.n_pixels << ',' << seed << '\n';
  return os.str();
}

void append_atomic(const std::filesystem::path& path, const std::string& header, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw std::runtime_error("cannot open " + path.string() + ": " + std::strerror(errno));
  const off_t size = ::lseek(fd, 0, SEEK_END);
  const std::string payload = (size == 0 && !header.empty()) ? header + "\n" + text : text;
  const ssize_t written = ::write(fd, payload.data(), payload.size());
  const int err = errno;
  ::close(fd);
  if (written != static_cast<ssize_t>(payload.size())) {
    throw std::runtime_error("short write to " + path.string() + ": " + std::strerror(err));
  }
}

void append_report_csv(const std::filesystem::path& path, const EvalReport& report, std::uint64_t seed) {
  append_atomic(path, kReportHeader, report_row(report, seed));
}

std::vector<ReportRow> read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) {
    throw FormatError(path.string() + ": missing or unexpected CSV header");
  }
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 7) throw FormatError(path.string() + ": malformed row '" + line + "'");
    ReportRow r;
    r.report.method = f[0];
    r.report.mask_spec = f[1];
    r.report.rmsle = std::stod(f[2]);
    r.report.mre_percent = std::stod(f[3]);
    r.report.mv_prop = std::stod(f[4]);
    r.report.n_pixels = std::stoull(f[5]);
    r.seed = std::stoull(f[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace gapfill::metrics
