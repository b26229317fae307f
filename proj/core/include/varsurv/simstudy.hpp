#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "varsurv/datagen.hpp"
#include "varsurv/mcmc.hpp"
#include "varsurv/naive.hpp"

namespace varsurv {

enum class Method { TrueValues, Naive, LMM1, LMM2, JM1, JM2 };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

/// Cartesian product of the sweeps over `base`; an empty sweep keeps the base value.
struct StudyGrid {
  SimConfig base;
  std::vector<int> n_measurements;
  std::vector<std::pair<double, double>> associations;  // (alpha0, alpha_sigma)
  std::vector<double> rho;
  std::vector<Method> methods = {Method::TrueValues, Method::Naive, Method::LMM1,
                                 Method::LMM2,       Method::JM1,   Method::JM2};
  int n_replications = 200;
  McmcSettings lmm_mcmc;
  McmcSettings jm_mcmc;
  int K = 15;
  /// Individuals with fewer measurements are left out of the naive stage one.
  int min_measurements = 2;
  /// SD denominator of the naive stage one.
  SdDenominator naive_sd_denominator = SdDenominator::N;
};

/// Throws InvalidInput if any grid point is not a valid SimConfig.
void validate(const StudyGrid& grid);
std::vector<SimConfig> grid_points(const StudyGrid& grid);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

/// One method's output for one parameter of one replication.
struct ReplicateEstimate {
  int point = 0;
  int replication = 0;
  Method method = Method::Naive;
  std::string parameter;  // alpha0 or alpha_sigma
  double estimate = 0.0;
  Interval interval;
  bool failed = false;
  std::string error;
};

struct MetricsRow {
  int point = 0;
  Method method = Method::Naive;
  std::string parameter;
  double true_value = 0.0;
  double mean_estimate = 0.0;
  /// Sample SD (denominator R - 1); empty for a single replicate.
  std::optional<double> sd_estimate;
  double rmse = 0.0;
  double coverage = 0.0;
  int n_used = 0;
  int n_failed = 0;
  /// Set when the SD is undefined or more than 5% of replications failed.
  bool flagged = false;
  std::string note;
};

/// Mean, SD (R - 1), RMSE against `truth` and the fraction of intervals
/// containing `truth`. Needs at least one estimate.
MetricsRow metrics(const std::vector<double>& estimates, const std::vector<Interval>& intervals, double truth);

/// rho * beta1 * sigma1 / sigma2: the large-sample bias of the OLS slope on x2
/// when a correlated regressor x1 (effect beta1) is left out.
double omitted_correlation_bias(double beta1, double sigma1, double sigma2, double rho);

/// Seed of replication r's dataset; grid points share it (common random numbers).
std::uint64_t replication_seed(std::uint64_t base_seed, int replication);

/// Point estimates and 95% intervals for (alpha0, alpha_sigma) from one method
/// on one dataset. Throws on failure (monotone likelihood, non-convergence).
std::vector<ReplicateEstimate> run_method(Method method, const SimulatedData& data, const StudyGrid& grid,
                                          std::uint64_t seed);

struct StudyResult {
  std::vector<SimConfig> points;
  /// Sorted by (point, replication, method, parameter).
  std::vector<ReplicateEstimate> raw;
  std::vector<MetricsRow> rows;
  std::vector<std::string> flags;
};

struct StudyOptions {
  int parallelism = 1;
  /// Previously completed estimates; their (point, replication, method) units are skipped.
  std::vector<ReplicateEstimate> completed;
  /// Called (serialised) after each finished (point, replication) unit.
  std::function<void(const std::vector<ReplicateEstimate>&)> on_unit_done;
};

StudyResult run_study(const StudyGrid& grid, const StudyOptions& options = {});

/// Aggregates raw estimates per (point, method, parameter); failed entries are
/// counted and excluded.
std::vector<MetricsRow> aggregate(const std::vector<SimConfig>& points, const std::vector<ReplicateEstimate>& raw,
                                  std::vector<std::string>* flags = nullptr);

}  // namespace varsurv
