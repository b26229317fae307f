#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "varsurv/naive.hpp"
#include "varsurv/types.hpp"

namespace varsurv {

/// A coefficient runs off to infinity (separation / monotone partial likelihood).
class MonotoneLikelihood : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

struct CoxFit {
  std::vector<std::string> names;
  std::vector<double> coefficients;
  std::vector<double> standard_errors;
  Eigen::MatrixXd covariance;
  double log_partial_likelihood = 0.0;
  int n_events = 0;
  int iterations = 0;

  std::size_t index_of(const std::string& name) const;
  double coefficient(const std::string& name) const { return coefficients[index_of(name)]; }
  double standard_error(const std::string& name) const { return standard_errors[index_of(name)]; }
  /// Wald interval estimate +/- z * SE.
  std::pair<double, double> wald_interval(const std::string& name, double z = 1.959963984540054) const;
};

/// Breslow log partial likelihood at `beta`; rows of x align with surv.rows.
double cox_log_partial_likelihood(const Eigen::MatrixXd& x, const SurvivalDataset& surv,
                                  const Eigen::VectorXd& beta);

/// Score (gradient of the Breslow log partial likelihood) at `beta`.
Eigen::VectorXd cox_score(const Eigen::MatrixXd& x, const SurvivalDataset& surv, const Eigen::VectorXd& beta);

/// Newton-Raphson maximiser of the Breslow partial likelihood on internally
/// standardised covariates. Converges when the gradient max-norm drops below
/// 1e-8 or the relative log-PL change below 1e-10. Throws InvalidInput for no
/// events, constant or collinear columns (naming the covariate), and
/// MonotoneLikelihood when a coefficient diverges.
CoxFit cox_fit(const Eigen::MatrixXd& x, const SurvivalDataset& surv, std::vector<std::string> names = {});

/// Cox regression of survival on [level, sd, (slope), extra covariates].
/// Stage-one ids must be a subset of the survival ids; survival rows without a
/// stage-one estimate are left out.
CoxFit two_stage_fit(const Stage1Estimates& stage1, const SurvivalDataset& surv, const CovariateTable& extra = {},
                     const std::vector<std::string>& extra_names = {});

Stage1Estimates to_stage1(const NaiveTable& table);

/// exp(linear_predictor) * integral_0^t h0(u) du.
double cumulative_hazard(const PiecewiseHazard& ph, double t, double linear_predictor = 0.0);

/// Cut-points 0, the type-7 empirical quantiles j/K (j = 1..K-1) of the event
/// times, and max_followup. Throws InvalidInput when the interior cut-points
/// are not strictly increasing inside (0, max_followup).
std::vector<double> quantile_cutpoints(std::span<const double> event_times, int k, double max_followup);

/// Fixed-origin split at the separation time: measurements at or after t_sep
/// and individuals with follow-up <= t_sep are dropped, survivors' clocks
/// restart at t_sep.
std::pair<LongitudinalDataset, SurvivalDataset> landmark_split(const LongitudinalDataset& lon,
                                                               const SurvivalDataset& surv, double t_sep);

}  // namespace varsurv
