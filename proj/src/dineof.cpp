#include "gapfill/dineof.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gapfill/errors.hpp"
#include "gapfill/rng.hpp"

namespace gapfill::dineof {

namespace {

constexpr std::uint64_t kHoldoutDomain = 0x43564844ULL;

Matrix orthonormalize(const Matrix& y) {
  Eigen::HouseholderQR<Matrix> qr(y);
  return qr.householderQ() * Matrix::Identity(y.rows(), y.cols());
}

Matrix gaussian_block(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  rng::Stream stream(seed);
  Matrix out(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = stream.normal();
  }
  return out;
}

void check_rank(const Matrix& m, int k) {
  const auto lim = std::min(m.rows(), m.cols());
  if (k < 1 || k > lim) {
    throw ConfigError("rank " + std::to_string(k) + " outside [1, " + std::to_string(lim) + "]");
  }
}

// Rank-k reconstruction hook: the identity for DInEOF, temporal smoothing of
// the expansion coefficients for eDInEOF.
DineofResult complete(const DataMatrix& data, const DineofConfig& cfg, int filter_width) {
  const auto m = data.rows();
  const auto n = data.cols();
  if (m < 1 || n < 1) throw ConfigError("data matrix must be at least 1x1");
  check_rank(data.x, cfg.rank);
  if (cfg.tol <= 0.0) throw ConfigError("tol must be > 0");
  if (filter_width < 1 || filter_width % 2 == 0) throw ConfigError("temporal filter width must be odd");

  const auto n_obs = data.observed_count();
  if (n_obs == 0) throw NumericalError("all entries missing");

  double mean = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < m; ++i) {
      if (data.observed(i, j)) mean += data.x(i, j);
    }
  }
  mean /= static_cast<double>(n_obs);

  // Missing entries start at the observed mean; the SVD sees the uncentered matrix.
  Matrix x(m, n);
  std::vector<Eigen::Index> missing;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < m; ++i) {
      if (data.observed(i, j)) {
        x(i, j) = data.x(i, j);
      } else {
        x(i, j) = mean;
        missing.push_back(j * m + i);
      }
    }
  }

  DineofResult res;
  res.rank = cfg.rank;
  SvdOptions opts;
  Matrix warm;
  const Matrix* warm_ptr = nullptr;

  auto reconstruct = [&](Matrix& r) {
    SvdResult svd = truncated_svd(x, cfg.rank, opts, warm_ptr);
    warm = svd.v;
    Matrix coeffs = svd.s.asDiagonal() * svd.v.transpose();  // k x n
    if (filter_width > 1) coeffs = binomial_filter_rows(coeffs, filter_width);
    r.noalias() = svd.u * coeffs;
    double misfit = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < m; ++i) {
        if (data.observed(i, j)) {
          const double d = x(i, j) - r(i, j);
          misfit += d * d;
        }
      }
    }
    res.observed_misfit.push_back(std::sqrt(misfit));
  };

  Matrix r(m, n);
  if (missing.empty()) {
    reconstruct(r);
    res.iterations = 1;
    res.completed = data.x;
    return res;
  }

  for (int it = 1; it <= cfg.max_outer_iter; ++it) {
    reconstruct(r);
    // Warm-start the next SVD from the current right singular subspace plus
    // a few fresh directions.
    const auto l = std::min<Eigen::Index>(cfg.rank + opts.oversample, std::min(m, n));
    Matrix start(n, l);
    start.leftCols(warm.cols()) = warm;
    if (l > warm.cols()) {
      start.rightCols(l - warm.cols()) =
          gaussian_block(n, l - warm.cols(), rng::key({opts.seed, static_cast<std::uint64_t>(it)}));
    }
    warm = std::move(start);
    warm_ptr = &warm;

    double diff = 0.0;
    double* xd = x.data();
    const double* rd = r.data();
    for (auto idx : missing) {
      const double d = rd[idx] - xd[idx];
      diff += d * d;
      xd[idx] = rd[idx];
    }
    if (!std::isfinite(diff)) throw NumericalError("non-finite values during DInEOF iteration");
    res.iterations = it;
    // RMS change of the filled entries relative to the RMS of the whole matrix.
    const double scale = std::sqrt(x.squaredNorm() / static_cast<double>(m * n));
    const double rms = std::sqrt(diff / static_cast<double>(missing.size()));
    res.final_change = scale > 0.0 ? rms / scale : rms;
    if (res.final_change < cfg.tol) break;
  }

  res.completed = data.x;
  double* out = res.completed.data();
  const double* xd = x.data();
  for (auto idx : missing) out[idx] = xd[idx];
  return res;
}

}  // namespace

std::size_t DataMatrix::observed_count() const {
  std::size_t c = 0;
  for (Eigen::Index j = 0; j < observed.cols(); ++j) {
    for (Eigen::Index i = 0; i < observed.rows(); ++i) c += observed(i, j) != 0;
  }
  return c;
}

SvdResult truncated_svd(const Matrix& a, int k, const SvdOptions& opts, const Matrix* warm_start) {
  check_rank(a, k);
  const auto m = a.rows();
  const auto n = a.cols();
  const auto l = std::min<Eigen::Index>(k + opts.oversample, std::min(m, n));

  Matrix omega;
  if (warm_start && warm_start->rows() == n && warm_start->cols() == l) {
    omega = *warm_start;
  } else {
    omega = gaussian_block(n, l, opts.seed);
  }

  Matrix q = orthonormalize(a * omega);
  Vector prev = Vector::Zero(k);
  SvdResult out;
  int it = 0;
  Eigen::JacobiSVD<Matrix> svd;
  for (;;) {
    Matrix b = q.transpose() * a;  // l x n
    svd.compute(b.transpose(), Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector s = svd.singularValues().head(k);
    const double scale = std::max(s(0), std::numeric_limits<double>::min());
    const double change = (s - prev).cwiseAbs().maxCoeff() / scale;
    prev = s;
    if (l == std::min(m, n) && it == 0) break;  // full subspace, exact at once
    if (it >= opts.min_iterations && change < opts.tol) break;
    if (it >= opts.max_iterations) break;
    ++it;
    const Matrix qz = orthonormalize(a.transpose() * q);
    q = orthonormalize(a * qz);
  }
  // b^T = V_b S U_b^T, so a ~= q b = (q U_b) S V_b^T with U_b = svd.matrixV().
  out.u = q * svd.matrixV().leftCols(k);
  out.s = svd.singularValues().head(k);
  out.v = svd.matrixU().leftCols(k);
  out.iterations = it;
  return out;
}

DineofResult dineof(const DataMatrix& data, const DineofConfig& cfg) { return complete(data, cfg, 1); }

DineofResult edineof(const DataMatrix& data, const DineofConfig& cfg) {
  return complete(data, cfg, cfg.temporal_filter_width);
}

Matrix binomial_filter_rows(const Matrix& coeffs, int width) {
  if (width < 1 || width % 2 == 0) throw ConfigError("temporal filter width must be odd");
  if (width == 1) return coeffs;
  const int half = width / 2;
  std::vector<double> kernel(static_cast<std::size_t>(width));
  kernel[0] = 1.0;
  for (int i = 1; i < width; ++i) {
    for (int j = i; j > 0; --j) kernel[static_cast<std::size_t>(j)] += kernel[static_cast<std::size_t>(j - 1)];
  }
  const double norm = std::ldexp(1.0, width - 1);
  for (auto& c : kernel) c /= norm;

  const auto n = coeffs.cols();
  auto reflect = [n](Eigen::Index j) {
    if (n == 1) return Eigen::Index{0};
    const Eigen::Index period = 2 * (n - 1);
    j %= period;
    if (j < 0) j += period;
    return j < n ? j : period - j;
  };
  Matrix out = Matrix::Zero(coeffs.rows(), n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (int o = -half; o <= half; ++o) {
      out.col(j) += kernel[static_cast<std::size_t>(o + half)] * coeffs.col(reflect(j + o));
    }
  }
  return out;
}

int select_rank(const DataMatrix& data, std::vector<int> candidate_ranks, double cv_fraction,
                std::uint64_t seed, const DineofConfig& base, bool filtered) {
  if (candidate_ranks.empty()) throw ConfigError("no candidate ranks");
  std::sort(candidate_ranks.begin(), candidate_ranks.end());
  candidate_ranks.erase(std::unique(candidate_ranks.begin(), candidate_ranks.end()), candidate_ranks.end());
  for (int k : candidate_ranks) check_rank(data.x, k);
  if (candidate_ranks.size() == 1) return candidate_ranks.front();
  if (!(cv_fraction > 0.0 && cv_fraction < 1.0)) throw ConfigError("cv_fraction must be in (0, 1)");

  DataMatrix train = data;
  std::vector<Eigen::Index> held;
  const rng::Stream stream(rng::key({seed, kHoldoutDomain}));
  for (Eigen::Index j = 0; j < data.cols(); ++j) {
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
      const auto idx = j * data.rows() + i;
      if (data.observed(i, j) && stream.uniform_at(static_cast<std::uint64_t>(idx)) < cv_fraction) {
        train.observed(i, j) = 0;
        held.push_back(idx);
      }
    }
  }
  if (held.empty()) throw ConfigError("cross-validation holdout is empty");
  if (train.observed_count() == 0) throw ConfigError("cross-validation leaves no observed entries");

  int best = candidate_ranks.front();
  double best_rmse = std::numeric_limits<double>::infinity();
  for (int k : candidate_ranks) {
    DineofConfig cfg = base;
    cfg.rank = k;
    const auto res = filtered ? edineof(train, cfg) : dineof(train, cfg);
    double ss = 0.0;
    for (auto idx : held) {
      const double d = res.completed.data()[idx] - data.x.data()[idx];
      ss += d * d;
    }
    const double rmse = std::sqrt(ss / static_cast<double>(held.size()));
    if (rmse < best_rmse) {
      best_rmse = rmse;
      best = k;
    }
  }
  return best;
}

DataMatrix to_data_matrix(const SpatioTemporalField& field) {
  const auto& d = field.dims();
  std::vector<std::size_t> sea;
  for (std::size_t p = 0; p < d.frame_size(); ++p) {
    if (!field.land()[p]) sea.push_back(p);
  }
  DataMatrix out;
  const auto m = static_cast<Eigen::Index>(sea.size());
  const auto n = static_cast<Eigen::Index>(d.t);
  out.x = Matrix::Zero(m, n);
  out.observed = Mask::Zero(m, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto idx = static_cast<std::size_t>(j) * d.frame_size() + sea[static_cast<std::size_t>(i)];
      if (field.valid()[idx]) {
        out.x(i, j) = field.values()[idx];
        out.observed(i, j) = 1;
      }
    }
  }
  return out;
}

SpatioTemporalField from_data_matrix(const Matrix& completed, const SpatioTemporalField& like) {
  const auto& d = like.dims();
  SpatioTemporalField out(d, like.meta());
  std::copy(like.land().begin(), like.land().end(), out.land().begin());
  Eigen::Index row = 0;
  for (std::size_t p = 0; p < d.frame_size(); ++p) {
    if (like.land()[p]) continue;
    if (row >= completed.rows()) throw ConfigError("completed matrix has too few rows");
    for (std::size_t t = 0; t < d.t; ++t) {
      out.values()[t * d.frame_size() + p] = static_cast<float>(completed(row, static_cast<Eigen::Index>(t)));
      out.valid()[t * d.frame_size() + p] = 1;
    }
    ++row;
  }
  if (row != completed.rows() || completed.cols() != static_cast<Eigen::Index>(d.t)) {
    throw ConfigError("completed matrix shape does not match the field");
  }
  return out;
}

}  // namespace gapfill::dineof
