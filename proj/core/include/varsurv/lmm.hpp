#pragma once

#include <map>
#include <string>
#include <vector>

#include "varsurv/mcmc.hpp"
#include "varsurv/types.hpp"

namespace varsurv {

/// Mixed location-scale model choice. The slope fixed effect beta_t is present
/// exactly for the random-slope variants (LMM3, LMM4).
struct LmmSpec {
  LmmVariant variant = LmmVariant::LMM2;
  /// Baseline covariates X_i (by name) entering the longitudinal mean besides
  /// the intercept.
  std::vector<std::string> fixed_covariates;

  EffectsStructure structure() const { return structure_of(variant); }
  bool correlated() const { return correlated_of(variant); }
  bool include_slope_fixed_effect() const { return structure() == EffectsStructure::InterceptSlope; }
};

/// Diffuse priors: U[0, sd_upper] on every SD, U[-1, 1] on every correlation
/// and N(0, location_sd^2) on every location-type parameter.
struct PriorSpec {
  double sd_upper = 100.0;
  double location_sd = 100.0;
};

void validate(const PriorSpec& p);

struct LogPosteriorTerms {
  double longitudinal = 0.0;
  double random_effects = 0.0;
  double survival = 0.0;
  double prior = 0.0;
  double total() const { return longitudinal + random_effects + survival + prior; }
};

/// Log posterior of the mixed location-scale model at explicit parameter
/// values. `params.beta` holds [intercept, fixed covariates..., (beta_t)];
/// `effects` align with `data.subjects`. Throws InvalidInput if any sigma is
/// not positive and NumericalError (naming the individual) if a term is not
/// finite.
LogPosteriorTerms lmm_log_posterior(const PopulationParams& params, const std::vector<IndividualEffects>& effects,
                                    const Cohort& data, const LmmSpec& spec, const PriorSpec& priors,
                                    bool include_priors = true);

struct FitOptions {
  /// Also monitor b0/sigma(/b1) of every individual (large output).
  bool keep_individual_draws = false;
  /// Parameters whose R-hat above this triggers a convergence warning.
  double rhat_threshold = 1.1;
};

struct LmmFit {
  PosteriorSamples samples;
  Stage1Estimates stage1;
  std::vector<BlockStats> blocks;
  std::map<std::string, double> rhat;
  std::vector<IndividualId> excluded;  // individuals without measurements
  std::vector<std::string> warnings;
};

/// Fits the model by Metropolis-within-Gibbs and reports per-individual
/// posterior means: level = E[beta0 + b0], sd = E[sigma], slope = E[beta_t + b1].
/// Non-convergence (R-hat above the threshold) is reported in `warnings`.
LmmFit fit_lmm(const Cohort& data, const LmmSpec& spec, const PriorSpec& priors, const McmcSettings& settings,
               const FitOptions& options = {});

/// Monitored population-parameter names for a specification, in draw-column order.
std::vector<std::string> lmm_parameter_names(const LmmSpec& spec);

}  // namespace varsurv
