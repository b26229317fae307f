#pragma once

#include <map>
#include <string>
#include <vector>

#include "varsurv/lmm.hpp"
#include "varsurv/mcmc.hpp"
#include "varsurv/types.hpp"

namespace varsurv {

/// Shared-random-effects joint model. The hazard is
///   h_i(t) = h0(t) exp(alpha0 level_i + alpha_sigma sigma_i [+ alpha_slope slope_i] + gamma' W_i)
/// with level_i = beta0 + b0_i, slope_i = beta_t + b1_i and a piecewise
/// constant h0 cut at the K-quantiles of the observed event times.
struct JointSpec {
  LmmSpec lmm;
  int K = 15;
  /// Baseline covariates W_i (by name) in the hazard.
  std::vector<std::string> survival_covariates;
  /// Holds alpha = gamma = 0 and the baseline hazard at its initial value, so
  /// the longitudinal part is sampled exactly as in fit_lmm.
  bool fix_survival = false;
};

/// Log posterior of the joint model at explicit parameter values.
/// `params.alpha` is [alpha0, alpha_sigma, (alpha_slope)], `params.gamma`
/// aligns with spec.survival_covariates and the prior on each log height is
/// N(0, location_sd^2).
LogPosteriorTerms joint_log_posterior(const PopulationParams& params, const std::vector<IndividualEffects>& effects,
                                      const Cohort& data, const JointSpec& spec, const PriorSpec& priors,
                                      bool include_priors = true);

struct JointFit {
  PosteriorSamples samples;
  std::vector<double> cutpoints;
  /// Posterior means per individual, same convention as LmmFit::stage1.
  Stage1Estimates effects;
  std::vector<BlockStats> blocks;
  std::map<std::string, double> rhat;
  /// Posterior mean deviance, variance-based effective parameters, and their sum.
  double mean_deviance = 0.0;
  double p_d = 0.0;
  double dic = 0.0;
  std::vector<std::string> warnings;
};

JointFit fit_joint(const Cohort& data, const JointSpec& spec, const PriorSpec& priors, const McmcSettings& settings,
                   const FitOptions& options = {});

/// Monitored population-parameter names in draw-column order.
std::vector<std::string> joint_parameter_names(const JointSpec& spec);

}  // namespace varsurv
