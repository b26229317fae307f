#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "varsurv/diagnostics.hpp"
#include "varsurv/types.hpp"

namespace varsurv::testing {

/// Two-sample Kolmogorov-Smirnov p-value (asymptotic Kolmogorov law).
inline double ks_pvalue(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  const double ne = double(a.size()) * b.size() / (a.size() + b.size());
  const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  if (lambda < 1e-3) return 1.0;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) p += 2.0 * (k % 2 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

/// Monte Carlo standard error of a posterior mean from its effective draws.
inline double mc_se(const PosteriorSamples& s, const std::string& name) {
  const auto sum = summarize(s, name);
  return sum.sd / std::sqrt(std::max(sum.ess, 1.0));
}

}  // namespace varsurv::testing
