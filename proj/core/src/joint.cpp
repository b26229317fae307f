#include "varsurv/joint.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "location_scale.hpp"
#include "varsurv/diagnostics.hpp"
#include "varsurv/survival.hpp"

namespace varsurv {

LogPosteriorTerms joint_log_posterior(const PopulationParams& params, const std::vector<IndividualEffects>& effects,
                                      const Cohort& data, const JointSpec& spec, const PriorSpec& priors,
                                      bool include_priors) {
  LogPosteriorTerms out = detail::longitudinal_terms(params, effects, data, spec.lmm, priors, include_priors);
  const bool slope = spec.lmm.include_slope_fixed_effect();
  if (params.alpha.size() != (slope ? 3u : 2u)) throw InvalidInput("alpha must hold alpha0, alpha_sigma[, alpha_slope]");
  if (params.gamma.size() != spec.survival_covariates.size())
    throw InvalidInput("one gamma per survival covariate required");
  validate(params.baseline_hazard);
  std::vector<std::size_t> cols;
  for (const auto& name : spec.survival_covariates) {
    auto it = std::find(data.covariate_names.begin(), data.covariate_names.end(), name);
    if (it == data.covariate_names.end()) throw InvalidInput("unknown covariate '" + name + "'");
    cols.push_back(static_cast<std::size_t>(it - data.covariate_names.begin()));
  }
  const auto& ph = params.baseline_hazard;
  const double beta_t = slope ? params.beta.back() : 0.0;
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    const Subject& s = data.subjects[i];
    const IndividualEffects& ef = effects[i];
    double lp = params.alpha[0] * (params.beta[0] + ef.b0) + params.alpha[1] * ef.sigma;
    if (slope) lp += params.alpha[2] * (beta_t + *ef.b1);
    for (std::size_t k = 0; k < cols.size(); ++k) lp += params.gamma[k] * s.covariates[cols[k]];
    double term = -cumulative_hazard(ph, s.followup_time, lp);
    if (s.event) term += std::log(ph.heights[ph.interval_of(s.followup_time)]) + lp;
    if (!std::isfinite(term))
      throw NumericalError("survival log likelihood is not finite for individual " + std::to_string(s.id));
    out.survival += term;
  }
  if (include_priors) {
    const double s2 = priors.location_sd * priors.location_sd;
    auto normal_prior = [&](double x) { return -0.5 * (std::log(2.0 * std::numbers::pi * s2) + x * x / s2); };
    for (double a : params.alpha) out.prior += normal_prior(a);
    for (double g : params.gamma) out.prior += normal_prior(g);
    for (double h : ph.heights) out.prior += normal_prior(std::log(h));
  }
  return out;
}

std::vector<std::string> joint_parameter_names(const JointSpec& spec) { return detail::population_names(spec.lmm, &spec); }

JointFit fit_joint(const Cohort& data, const JointSpec& spec, const PriorSpec& priors, const McmcSettings& settings,
                   const FitOptions& options) {
  validate(settings);
  auto prepared = detail::prepare(data, spec.lmm, priors, options, &spec);
  const std::vector<std::string> key = {"alpha0", "alpha_sigma"};
  auto res = detail::run_sampler(prepared, settings, options.rhat_threshold, key);
  JointFit fit;
  fit.samples = std::move(res.run.samples);
  fit.blocks = std::move(res.run.blocks);
  fit.effects = std::move(res.means);
  fit.rhat = std::move(res.rhat);
  fit.cutpoints = prepared->cut;
  fit.warnings = std::move(res.warnings);

  const auto dev = fit.samples.column("deviance");
  double mean = 0.0;
  for (double x : dev) mean += x;
  mean /= static_cast<double>(dev.size());
  double var = 0.0;
  for (double x : dev) var += (x - mean) * (x - mean);
  var = dev.size() > 1 ? var / static_cast<double>(dev.size() - 1) : 0.0;
  fit.mean_deviance = mean;
  fit.p_d = 0.5 * var;
  fit.dic = mean + fit.p_d;

  if (!spec.fix_survival && settings.n_samples >= 100) {
    for (const auto& name : key) {
      try {
        const double acf1 = autocorrelation(fit.samples, name, 1).front();
        if (acf1 > 0.9) {
          std::ostringstream msg;
          msg << "lag-1 autocorrelation of " << name << " is " << acf1
              << "; increase the thinning interval or the number of draws";
          fit.warnings.push_back(msg.str());
        }
      } catch (const std::exception&) {
      }
    }
  }
  return fit;
}

}  // namespace varsurv
