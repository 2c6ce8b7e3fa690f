#pragma once

// EOF-based matrix completion (DInEOF) and its temporally filtered variant.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "gapfill/grid.hpp"

namespace gapfill::dineof {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Mask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// m x n data matrix: rows are sea pixels, columns are frames.
struct DataMatrix {
  Matrix x;
  Mask observed;  // 1 where x holds an observation

  Eigen::Index rows() const { return x.rows(); }
  Eigen::Index cols() const { return x.cols(); }
  std::size_t observed_count() const;
};

struct SvdResult {
  Matrix u;  // m x k
  Vector s;  // k, non-increasing
  Matrix v;  // n x k
  int iterations = 0;
};

struct SvdOptions {
  int oversample = 8;
  int min_iterations = 2;
  int max_iterations = 300;
  double tol = 1e-10;
  std::uint64_t seed = 0x5eed;
};

/// Rank-k SVD by randomized block power iteration. `warm_start` (n x l), when
/// non-null, replaces the random starting block.
SvdResult truncated_svd(const Matrix& m, int k, const SvdOptions& opts = {},
                        const Matrix* warm_start = nullptr);

struct DineofConfig {
  int rank = 4;
  int max_outer_iter = 200;
  double tol = 1e-5;
  int temporal_filter_width = 3;  // eDInEOF only; odd
};

struct DineofResult {
  Matrix completed;
  int rank = 0;
  int iterations = 0;
  double final_change = 0.0;
  /// Frobenius misfit of the rank-k model on observed entries, per outer iteration.
  std::vector<double> observed_misfit;
};

DineofResult dineof(const DataMatrix& data, const DineofConfig& cfg);
DineofResult edineof(const DataMatrix& data, const DineofConfig& cfg);

/// Cross-validated rank choice; ties go to the smaller rank.
int select_rank(const DataMatrix& data, std::vector<int> candidate_ranks, double cv_fraction,
                std::uint64_t seed, const DineofConfig& base = {}, bool filtered = false);

/// Centered binomial smoothing of each row, reflect-padded. Width 1 is the identity.
Matrix binomial_filter_rows(const Matrix& coeffs, int width);

// Field <-> matrix plumbing. Columns follow frame order; rows enumerate sea pixels
// in (h, w) row-major order.
DataMatrix to_data_matrix(const SpatioTemporalField& field);
/// Writes a completed matrix back as a gap-free field shaped like `like`.
SpatioTemporalField from_data_matrix(const Matrix& completed, const SpatioTemporalField& like);

}  // namespace gapfill::dineof
