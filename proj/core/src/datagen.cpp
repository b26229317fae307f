#include "varsurv/datagen.hpp"

#include <cmath>

namespace varsurv {

std::string to_string(Scenario s) {
  return s == Scenario::FixedSchedule ? "fixed" : "truncated";
}

Scenario scenario_from_string(const std::string& s) {
  if (s == "fixed" || s == "FixedSchedule" || s == "1" || s == "scenario1") return Scenario::FixedSchedule;
  if (s == "truncated" || s == "EventTruncated" || s == "2" || s == "scenario2") return Scenario::EventTruncated;
  throw InvalidInput("unknown scenario '" + s + "'");
}

std::vector<std::string> validate(const SimConfig& c) {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw InvalidInput(msg);
  };
  require(c.n_individuals > 0, "n_individuals must be positive");
  require(c.n_measurements > 0, "n_measurements must be positive");
  require(std::isfinite(c.tau0) && c.tau0 >= 0.0, "tau0 must be >= 0");
  require(std::isfinite(c.tau_sigma) && c.tau_sigma >= 0.0, "tau_sigma must be >= 0");
  require(std::isfinite(c.rho) && std::abs(c.rho) <= 1.0, "rho must lie in [-1, 1]");
  require(std::isfinite(c.weibull_shape) && c.weibull_shape > 0.0, "weibull_shape must be positive");
  require(std::isfinite(c.censor_time) && c.censor_time > 0.0, "censor_time must be positive");
  require(std::isfinite(c.measurement_span) && c.measurement_span >= 0.0, "measurement_span must be >= 0");
  require(std::isfinite(c.mu0) && std::isfinite(c.mu_sigma) && std::isfinite(c.gamma0) && std::isfinite(c.alpha0) &&
              std::isfinite(c.alpha_sigma),
          "model parameters must be finite");
  for (const auto& cov : c.covariates) {
    require(!cov.name.empty(), "covariate name must be non-empty");
    if (cov.kind == SimCovariate::Kind::Bernoulli)
      require(cov.mean >= 0.0 && cov.mean <= 1.0, "Bernoulli covariate probability must lie in [0, 1]");
    else
      require(cov.sd >= 0.0, "covariate sd must be >= 0");
  }
  std::vector<std::string> warnings;
  if (c.measurement_span > c.censor_time)
    warnings.push_back("measurement_span exceeds censor_time; late measurements are never observed before censoring");
  return warnings;
}

std::vector<double> measurement_schedule(const SimConfig& c) {
  std::vector<double> times(static_cast<std::size_t>(c.n_measurements));
  for (int j = 0; j < c.n_measurements; ++j)
    times[static_cast<std::size_t>(j)] =
        c.n_measurements == 1 ? 0.0 : c.measurement_span * j / static_cast<double>(c.n_measurements - 1);
  return times;
}

IndividualEffects draw_individual_effects(const SimConfig& c, CounterRng& rng) {
  const double z1 = rng.normal();
  const double z2 = rng.normal();
  IndividualEffects e;
  e.b0 = c.mu0 + c.tau0 * z1;
  const double log_sigma = c.mu_sigma + c.tau_sigma * (c.rho * z1 + std::sqrt(1.0 - c.rho * c.rho) * z2);
  e.sigma = std::exp(log_sigma);
  return e;
}

double draw_event_time(const IndividualEffects& e, const SimConfig& c, CounterRng& rng, double extra_log_hazard) {
  const double log_lambda = c.gamma0 + c.alpha0 * e.b0 + c.alpha_sigma * e.sigma + extra_log_hazard;
  const double u = rng.uniform();
  return std::pow(-std::log(u) * std::exp(-log_lambda), 1.0 / c.weibull_shape);
}

SimulatedData generate_dataset(const SimConfig& c) {
  SimulatedData out;
  out.warnings = validate(c);
  const auto schedule = measurement_schedule(c);
  const auto n = static_cast<std::size_t>(c.n_individuals);
  out.survival.rows.reserve(n);
  out.truth.reserve(n);
  out.longitudinal.rows.reserve(n * schedule.size());
  for (const auto& cov : c.covariates) out.covariates.names.push_back(cov.name);

  const CounterRng root(c.seed);
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng = root.substream(i);
    const IndividualId id = static_cast<IndividualId>(i + 1);

    double long_shift = 0.0;
    double hazard_shift = 0.0;
    CovariateRow row{id, {}};
    for (const auto& cov : c.covariates) {
      double x;
      if (cov.kind == SimCovariate::Kind::Bernoulli)
        x = rng.uniform() < cov.mean ? 1.0 : 0.0;
      else
        x = rng.normal(cov.mean, cov.sd);
      row.values.push_back(x);
      long_shift += cov.longitudinal_effect * x;
      hazard_shift += cov.hazard_effect * x;
    }

    IndividualEffects eff = draw_individual_effects(c, rng);
    eff.id = id;
    const double t_event = draw_event_time(eff, c, rng, hazard_shift);
    const double followup = std::min(t_event, c.censor_time);
    out.survival.rows.push_back({id, followup, t_event <= c.censor_time});
    out.truth.push_back({id, eff.b0, eff.sigma, t_event});
    if (!c.covariates.empty()) out.covariates.rows.push_back(std::move(row));

    std::size_t kept = 0;
    for (double t : schedule) {
      // noise is drawn for every scheduled visit so truncation never shifts the stream
      const double y = eff.b0 + long_shift + eff.sigma * rng.normal();
      if (c.scenario == Scenario::EventTruncated && t > 0.0 && t > followup) continue;
      out.longitudinal.rows.push_back({id, t, y});
      ++kept;
    }
    if (kept == 0) out.no_measurements.push_back(id);
  }
  return out;
}

}  // namespace varsurv
