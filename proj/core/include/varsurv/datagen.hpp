#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "varsurv/random.hpp"
#include "varsurv/types.hpp"

namespace varsurv {

enum class Scenario {
  /// Every scheduled measurement is kept regardless of the event time.
  FixedSchedule,
  /// Measurements after min(T_i, censor_time) are discarded.
  EventTruncated,
};

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

/// Optional baseline covariate for ARIC-like data. Enters the longitudinal
/// mean with `longitudinal_effect` and the log hazard with `hazard_effect`.
struct SimCovariate {
  std::string name;
  enum class Kind { Normal, Bernoulli } kind = Kind::Normal;
  double mean = 0.0;  // Bernoulli: success probability
  double sd = 1.0;
  double longitudinal_effect = 0.0;
  double hazard_effect = 0.0;
};

struct SimConfig {
  int n_individuals = 1500;
  int n_measurements = 4;
  double mu0 = 120.0;
  double tau0 = 15.0;
  double mu_sigma = 2.0;
  double tau_sigma = 0.5;
  double rho = 0.5;
  double gamma0 = -10.26;
  double weibull_shape = 2.0;
  double alpha0 = 0.02;
  double alpha_sigma = 0.05;
  double censor_time = 20.0;
  double measurement_span = 18.0;
  Scenario scenario = Scenario::FixedSchedule;
  std::uint64_t seed = 20190101;
  std::vector<SimCovariate> covariates;
};

/// Throws InvalidInput for unusable settings; returns human-readable warnings.
std::vector<std::string> validate(const SimConfig& config);

/// Scheduled measurement times: equidistant on [0, measurement_span].
std::vector<double> measurement_schedule(const SimConfig& config);

/// True per-individual quantities kept for oracle evaluation.
struct TruthRow {
  IndividualId id = 0;
  double b0 = 0.0;
  double sigma = 0.0;
  double event_time = 0.0;
};

struct SimulatedData {
  LongitudinalDataset longitudinal;
  SurvivalDataset survival;
  CovariateTable covariates;
  std::vector<TruthRow> truth;
  /// EventTruncated individuals left without any measurement.
  std::vector<IndividualId> no_measurements;
  std::vector<std::string> warnings;
};

/// (b0, log sigma) from the bivariate normal with means (mu0, mu_sigma), SDs
/// (tau0, tau_sigma) and correlation rho.
IndividualEffects draw_individual_effects(const SimConfig& config, CounterRng& rng);

/// Weibull event time with hazard lambda k t^(k-1),
/// lambda = exp(gamma0 + alpha0 b0 + alpha_sigma sigma + extra_log_hazard),
/// drawn by inversion.
double draw_event_time(const IndividualEffects& effects, const SimConfig& config, CounterRng& rng,
                       double extra_log_hazard = 0.0);

/// Bit-reproducible for a given config (including seed); individual i uses
/// substream i of the config seed.
SimulatedData generate_dataset(const SimConfig& config);

}  // namespace varsurv
