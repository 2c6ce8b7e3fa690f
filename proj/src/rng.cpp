#include "gapfill/rng.hpp"

#include <cmath>
#include <limits>

namespace gapfill::rng {

namespace {

constexpr double kHalfPiHi = 1.57079632679489655800e+00;
constexpr double kHalfPiLo = 6.12323399573676603587e-17;
constexpr double kLn2Hi = 6.93147180369123816490e-01;
constexpr double kLn2Lo = 1.90821492927058770002e-10;
constexpr double kLn2 = 0.693147180559945309417;
constexpr double kTwoPi = 6.283185307179586476925;

// sin/cos on [-pi/4, pi/4] by Taylor series.
double sin_kernel(double r) {
  const double r2 = r * r;
  double term = r;
  double sum = r;
  for (int n = 1; n <= 9; ++n) {
    term *= -r2 / static_cast<double>((2 * n) * (2 * n + 1));
    sum += term;
  }
  return sum;
}

double cos_kernel(double r) {
  const double r2 = r * r;
  double term = 1.0;
  double sum = 1.0;
  for (int n = 1; n <= 9; ++n) {
    term *= -r2 / static_cast<double>((2 * n - 1) * (2 * n));
    sum += term;
  }
  return sum;
}

double sincos(double x, bool want_sin) {
  if (!std::isfinite(x)) return std::numeric_limits<double>::quiet_NaN();
  const double k = std::nearbyint(x / kHalfPiHi);
  const double r = (x - k * kHalfPiHi) - k * kHalfPiLo;
  auto quadrant = static_cast<long long>(std::fmod(k, 4.0));
  if (quadrant < 0) quadrant += 4;
  if (!want_sin) quadrant = (quadrant + 1) % 4;
  switch (quadrant) {
    case 0: return sin_kernel(r);
    case 1: return cos_kernel(r);
    case 2: return -sin_kernel(r);
    default: return -cos_kernel(r);
  }
}

}  // namespace

double det_sin(double x) { return sincos(x, true); }
double det_cos(double x) { return sincos(x, false); }

double det_exp(double x) {
  if (std::isnan(x)) return x;
  if (x > 709.0) return std::numeric_limits<double>::infinity();
  if (x < -745.0) return 0.0;
  const double k = std::nearbyint(x / kLn2);
  const double r = (x - k * kLn2Hi) - k * kLn2Lo;
  double term = 1.0;
  double sum = 1.0;
  for (int n = 1; n <= 14; ++n) {
    term *= r / static_cast<double>(n);
    sum += term;
  }
  return std::ldexp(sum, static_cast<int>(k));
}

double det_log(double x) {
  if (std::isnan(x) || x < 0.0) return std::numeric_limits<double>::quiet_NaN();
  if (x == 0.0) return -std::numeric_limits<double>::infinity();
  if (std::isinf(x)) return x;
  int e = 0;
  double m = std::frexp(x, &e);  // m in [0.5, 1)
  if (m < 0.70710678118654752440) {
    m *= 2.0;
    e -= 1;
  }
  const double s = (m - 1.0) / (m + 1.0);
  const double s2 = s * s;
  double term = s;
  double sum = s;
  for (int n = 1; n <= 11; ++n) {
    term *= s2;
    sum += term / static_cast<double>(2 * n + 1);
  }
  return 2.0 * sum + static_cast<double>(e) * kLn2Hi + static_cast<double>(e) * kLn2Lo;
}

double Stream::normal() {
  // u1 in (0, 1] keeps the log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * det_log(u1)) * det_cos(kTwoPi * u2);
}

}  // namespace gapfill::rng
