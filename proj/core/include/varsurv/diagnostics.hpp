#pragma once

#include <span>
#include <string>
#include <vector>

#include "varsurv/types.hpp"

namespace varsurv {

/// Brooks-Gelman corrected potential scale reduction factor,
///   sqrt( (d+3)/(d+1) * V / W ),
/// with d the method-of-moments degrees of freedom of the pooled variance V.
/// Needs >= 2 chains of >= 50 equal-length draws; throws NumericalError on
/// zero within-chain variance.
double gelman_rubin(const std::vector<std::vector<double>>& chains);
double gelman_rubin(const PosteriorSamples& samples, const std::string& parameter);

/// Sample autocorrelation at lags 0..max_lag (element 0 is 1) of one series.
std::vector<double> autocorrelation(std::span<const double> series, int max_lag);

/// Chain-averaged autocorrelation at lags 1..max_lag. Needs >= 100 draws per chain.
std::vector<double> autocorrelation(const PosteriorSamples& samples, const std::string& parameter, int max_lag);

/// Effective number of draws from Geyer's initial positive sequence of the
/// chain-averaged autocorrelations.
double effective_draws(const PosteriorSamples& samples, const std::string& parameter);

/// Type-7 (linear interpolation) empirical quantile of unsorted data.
double quantile(std::vector<double> values, double p);

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  /// NaN when unavailable (single chain, too few draws, constant draws).
  double rhat = 0.0;
  double acf1 = 0.0;
  double ess = 0.0;
};

ParameterSummary summarize(const PosteriorSamples& samples, const std::string& parameter);
std::vector<ParameterSummary> summarize(const PosteriorSamples& samples);

}  // namespace varsurv
