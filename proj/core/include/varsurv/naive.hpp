#pragma once

#include <span>
#include <string>
#include <vector>

#include "varsurv/types.hpp"

namespace varsurv {

/// Arithmetic mean of an individual's measurements.
double naive_level(std::span<const double> values);

/// Within-individual SD with denominator n (not n - 1):
///   sqrt( sum_j (mean - y_j)^2 / n ).
/// The population-style denominator is what the two-stage naive estimator
/// uses; it is deliberately not the sample SD. Requires at least 2 values.
double naive_sd(std::span<const double> values);

/// Denominator of the per-individual SD in naive_table. N is naive_sd;
/// NMinusOne is the usual sample SD, sqrt(n / (n - 1)) times larger.
enum class SdDenominator { N, NMinusOne };

std::string to_string(SdDenominator d);
SdDenominator sd_denominator_from_string(const std::string& s);

struct NaiveEstimate {
  IndividualId id = 0;
  double level = 0.0;
  double sd = 0.0;
  int n_measurements = 0;
};

struct NaiveTable {
  std::vector<NaiveEstimate> rows;
  /// Individuals with fewer than min_measurements values.
  std::vector<IndividualId> excluded;
};

/// Per-individual (level, sd) in first-appearance order of ids.
NaiveTable naive_table(const LongitudinalDataset& lon, int min_measurements = 2,
                       SdDenominator denominator = SdDenominator::N);

}  // namespace varsurv
