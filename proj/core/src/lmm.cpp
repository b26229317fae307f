#include "varsurv/lmm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Cholesky>

#include "location_scale.hpp"
#include "varsurv/covariance.hpp"

namespace varsurv {

namespace detail {

constexpr double kLog2Pi = 1.8378770664093454836;

int correlation_count(LmmVariant v) {
  switch (v) {
    case LmmVariant::LMM1:
      return 0;
    case LmmVariant::LMM2:
    case LmmVariant::LMM3:
      return 1;
    case LmmVariant::LMM4:
      return 3;
  }
  return 0;
}

/// Longitudinal, random-effect and prior terms shared by both log posteriors.
LogPosteriorTerms longitudinal_terms(const PopulationParams& params, const std::vector<IndividualEffects>& effects,
                                     const Cohort& data, const LmmSpec& spec, const PriorSpec& priors,
                                     bool include_priors) {
  validate(priors);
  const bool slope = spec.include_slope_fixed_effect();
  const std::size_t px = 1 + spec.fixed_covariates.size();
  if (params.beta.size() != px + (slope ? 1 : 0))
    throw InvalidInput("beta must hold the intercept, one value per fixed covariate and (for slope models) beta_t");
  if (effects.size() != data.subjects.size()) throw InvalidInput("one set of effects per individual required");
  if (params.law.structure != spec.structure()) throw InvalidInput("random-effects law does not match the model variant");
  std::vector<std::size_t> cols;
  for (const auto& name : spec.fixed_covariates) {
    auto it = std::find(data.covariate_names.begin(), data.covariate_names.end(), name);
    if (it == data.covariate_names.end()) throw InvalidInput("unknown covariate '" + name + "'");
    cols.push_back(static_cast<std::size_t>(it - data.covariate_names.begin()));
  }
  const Eigen::MatrixXd sigma = effects_covariance(params.law);
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw InvalidInput("random-effects covariance is singular");
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const int d = params.law.dimension();
  const double beta_t = slope ? params.beta.back() : 0.0;

  LogPosteriorTerms out;
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    const Subject& s = data.subjects[i];
    const IndividualEffects& ef = effects[i];
    if (!(ef.sigma > 0.0) || !std::isfinite(ef.sigma))
      throw InvalidInput("residual SD of individual " + std::to_string(s.id) + " must be positive");
    if (slope && !ef.b1) throw InvalidInput("missing random slope for individual " + std::to_string(s.id));
    double xb = params.beta[0];
    for (std::size_t k = 0; k < cols.size(); ++k) xb += params.beta[k + 1] * s.covariates[cols[k]];
    const double b1 = slope ? *ef.b1 : 0.0;
    double lon = 0.0;
    for (std::size_t j = 0; j < s.values.size(); ++j) {
      const double mean = xb + ef.b0 + (beta_t + b1) * s.times[j];
      const double z = (s.values[j] - mean) / ef.sigma;
      lon += -0.5 * kLog2Pi - std::log(ef.sigma) - 0.5 * z * z;
    }
    Eigen::VectorXd r(d);
    r(0) = ef.b0;
    if (slope) r(1) = b1;
    r(d - 1) = std::log(ef.sigma) - params.law.mu_sigma;
    const double re = -0.5 * (d * kLog2Pi + logdet) - 0.5 * r.dot(llt.solve(r));
    if (!std::isfinite(lon) || !std::isfinite(re))
      throw NumericalError("log posterior is not finite for individual " + std::to_string(s.id));
    out.longitudinal += lon;
    out.random_effects += re;
  }
  if (include_priors) {
    const double s2 = priors.location_sd * priors.location_sd;
    auto normal_prior = [&](double x) { return -0.5 * (std::log(2.0 * std::numbers::pi * s2) + x * x / s2); };
    for (double b : params.beta) out.prior += normal_prior(b);
    out.prior += normal_prior(params.law.mu_sigma);
    std::vector<double> taus = {params.law.tau0, params.law.tau_sigma};
    if (params.law.tau1) taus.push_back(*params.law.tau1);
    for (double t : taus) {
      if (t > priors.sd_upper) out.prior = -std::numeric_limits<double>::infinity();
      out.prior -= std::log(priors.sd_upper);
    }
    out.prior -= correlation_count(spec.variant) * std::log(2.0);
  }
  return out;
}

}  // namespace detail

void validate(const PriorSpec& p) {
  if (!(p.sd_upper > 0.0) || !std::isfinite(p.sd_upper)) throw InvalidInput("prior SD upper bound must be positive");
  if (!(p.location_sd > 0.0) || !std::isfinite(p.location_sd)) throw InvalidInput("prior location SD must be positive");
}

LogPosteriorTerms lmm_log_posterior(const PopulationParams& params, const std::vector<IndividualEffects>& effects,
                                    const Cohort& data, const LmmSpec& spec, const PriorSpec& priors,
                                    bool include_priors) {
  return detail::longitudinal_terms(params, effects, data, spec, priors, include_priors);
}

std::vector<std::string> lmm_parameter_names(const LmmSpec& spec) { return detail::population_names(spec, nullptr); }

LmmFit fit_lmm(const Cohort& data, const LmmSpec& spec, const PriorSpec& priors, const McmcSettings& settings,
               const FitOptions& options) {
  validate(settings);
  auto prepared = detail::prepare(data, spec, priors, options, nullptr);
  auto res = detail::run_sampler(prepared, settings, options.rhat_threshold, {});
  LmmFit fit;
  fit.samples = std::move(res.run.samples);
  fit.blocks = std::move(res.run.blocks);
  fit.stage1 = std::move(res.means);
  fit.rhat = std::move(res.rhat);
  fit.excluded = prepared->excluded;
  fit.warnings = std::move(res.warnings);
  if (!fit.excluded.empty())
    fit.warnings.push_back(std::to_string(fit.excluded.size()) + " individual(s) without measurements were left out");
  return fit;
}

}  // namespace varsurv
