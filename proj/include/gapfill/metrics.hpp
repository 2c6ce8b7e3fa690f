#pragma once

// Reconstruction scores over an evaluation domain: root mean squared log10
// error and mean relative error, plus CSV report rows.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gapfill/grid.hpp"
#include "gapfill/masking.hpp"

namespace gapfill::metrics {

// Flat-array forms. `domain` selects the scored entries; an empty domain throws.

double rmsle_from_linear(std::span<const double> truth, std::span<const double> recon,
                         std::span<const std::uint8_t> domain);
double rmsle_from_log10(std::span<const double> truth, std::span<const double> recon,
                        std::span<const std::uint8_t> domain);
/// Percent.
double mre_from_linear(std::span<const double> truth, std::span<const double> recon,
                       std::span<const std::uint8_t> domain);
double mre_from_log10(std::span<const double> truth, std::span<const double> recon,
                      std::span<const std::uint8_t> domain);

// Field forms; the stored unit (log10 or linear) is taken from the metadata.

double rmsle(const SpatioTemporalField& truth, const SpatioTemporalField& recon,
             std::span<const std::uint8_t> domain);
double mre(const SpatioTemporalField& truth, const SpatioTemporalField& recon,
           std::span<const std::uint8_t> domain);

struct EvalReport {
  std::string method;
  std::string mask_spec;
  double rmsle = 0.0;
  double mre_percent = 0.0;
  double mv_prop = 0.0;  // missing share of the input observations over sea pixel-days
  std::size_t n_pixels = 0;
};

/// Share of sea pixel-days not present in the observations `keep` (restricted to valid).
double missing_value_proportion(const SpatioTemporalField& truth, std::span<const std::uint8_t> keep);

/// Scores on valid && !keep.
EvalReport evaluate(const SpatioTemporalField& truth, const SpatioTemporalField& recon,
                    const ObservationMask& obs_mask, std::string method = {}, std::string mask_spec = {});

/// Scores on an explicit domain (must be a subset of truth's valid pixels).
EvalReport evaluate_on(const SpatioTemporalField& truth, const SpatioTemporalField& recon,
                       std::span<const std::uint8_t> domain, std::span<const std::uint8_t> keep,
                       std::string method = {}, std::string mask_spec = {});

// ---------------------------------------------------------------------------
// CSV export: method,mask_spec,rmsle,mre_percent,mv_prop,n_pixels,seed

inline constexpr const char* kReportHeader = "method,mask_spec,rmsle,mre_percent,mv_prop,n_pixels,seed";

/// Six significant digits, as used in every CSV output.
std::string format_number(double v);

std::string report_row(const EvalReport& r, std::uint64_t seed);

/// Appends one row with a single write; the header is written with the first row.
void append_report_csv(const std::filesystem::path& path, const EvalReport& report, std::uint64_t seed);

struct ReportRow {
  EvalReport report;
  std::uint64_t seed = 0;
};

std::vector<ReportRow> read_report_csv(const std::filesystem::path& path);

/// Appends `text` to `path` with one write call, creating parent directories.
void append_atomic(const std::filesystem::path& path, const std::string& header, const std::string& text);

}  // namespace gapfill::metrics
