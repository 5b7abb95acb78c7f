#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "overlap/errors.hpp"

namespace overlap {

inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Upper tail 1 - Phi(x), accurate for large x.
inline double normal_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

// Inverse of normal_cdf via safeguarded Newton on a bisection bracket.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InputError("normal_quantile: p must lie in (0,1)");
  if (p < 0.5) return -normal_quantile(1.0 - p);
  // Solve sf(x) = 1 - p for x >= 0.
  const double target = 1.0 - p;
  double lo = 0.0, hi = 40.0;
  double x = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double f = normal_sf(x) - target;
    if (f > 0) lo = x; else hi = x;
    double next = x + f / normal_pdf(x);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) <= 1e-15 * std::max(1.0, std::abs(x))) return next;
    x = next;
  }
  return x;
}

// P(|N(b,1)| > c).
inline double folded_normal_sf(double c, double b) { return normal_sf(c - b) + normal_sf(c + b); }

// 1-alpha quantile of |N(b,1)|: the c >= 0 with P(|N(b,1)| > c) = alpha.
inline double cv_quantile(double b, double alpha) {
  if (!(b >= 0.0) || !std::isfinite(b)) throw InputError("cv_quantile: b must be finite and >= 0");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("cv_quantile: alpha must lie in (0,1)");
  double lo = 0.0;
  double hi = b + 40.0;
  double c = b + normal_quantile(1.0 - alpha / 2.0);
  for (int it = 0; it < 300; ++it) {
    const double f = folded_normal_sf(c, b) - alpha;  // decreasing in c
    if (f > 0) lo = c; else hi = c;
    const double slope = -(normal_pdf(c - b) + normal_pdf(c + b));
    double next = c - f / slope;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - c) <= 1e-14 * std::max(1.0, c) || hi - lo <= 1e-14 * std::max(1.0, c))
      return next;
    c = next;
  }
  return c;
}

}  // namespace overlap
