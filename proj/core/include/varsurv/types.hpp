#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace varsurv {

using IndividualId = std::int64_t;

/// Raised when caller-supplied data or settings violate a documented precondition.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical routine cannot produce a finite, well-defined answer.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LongitudinalRecord {
  IndividualId id = 0;
  double time = 0.0;
  double value = 0.0;
};

struct SurvivalRecord {
  IndividualId id = 0;
  double followup_time = 0.0;
  bool event = false;
};

struct CovariateRow {
  IndividualId id = 0;
  std::vector<double> values;
};

struct LongitudinalDataset {
  std::vector<LongitudinalRecord> rows;
};

struct SurvivalDataset {
  std::vector<SurvivalRecord> rows;
};

struct CovariateTable {
  std::vector<std::string> names;
  std::vector<CovariateRow> rows;

  bool empty() const { return rows.empty(); }
  /// Column index of `name`; throws InvalidInput if absent.
  std::size_t column(const std::string& name) const;
};

void validate(const LongitudinalRecord& r);
void validate(const SurvivalRecord& r);

enum class EffectsStructure { InterceptOnly, InterceptSlope };

/// Joint normal law of (b0[, b1], log sigma). Optional members are present
/// exactly when the structure/correlation choice uses them:
///   InterceptOnly, uncorrelated   -> none
///   InterceptOnly, correlated     -> rho
///   InterceptSlope, uncorrelated  -> tau1, rho01
///   InterceptSlope, correlated    -> tau1, rho01, rho0sigma, rho1sigma
struct RandomEffectsLaw {
  EffectsStructure structure = EffectsStructure::InterceptOnly;
  bool correlated_with_sd = false;
  double mu_sigma = 0.0;
  double tau0 = 1.0;
  std::optional<double> tau1;
  double tau_sigma = 1.0;
  std::optional<double> rho;
  std::optional<double> rho01;
  std::optional<double> rho0sigma;
  std::optional<double> rho1sigma;

  /// Number of jointly normal coordinates (2 or 3).
  int dimension() const { return structure == EffectsStructure::InterceptOnly ? 2 : 3; }
};

/// Checks field presence and ranges, then PSD-ness of the implied covariance.
void validate(const RandomEffectsLaw& law);

/// The four longitudinal model variants.
enum class LmmVariant { LMM1, LMM2, LMM3, LMM4 };

EffectsStructure structure_of(LmmVariant v);
bool correlated_of(LmmVariant v);
std::string to_string(LmmVariant v);
LmmVariant lmm_variant_from_string(const std::string& s);

/// A law of the given variant with every present parameter set to a neutral
/// value (unit SDs, zero correlations).
RandomEffectsLaw default_law(LmmVariant v);

/// Baseline hazard constant on (t_{k-1}, t_k]; extended beyond t_K by the last height.
struct PiecewiseHazard {
  std::vector<double> cutpoints;  // t_0 = 0 < t_1 < ... < t_K
  std::vector<double> heights;    // K positive values

  std::size_t intervals() const { return heights.size(); }
  /// Index k (0-based) of the interval containing t; t beyond t_K maps to K-1.
  std::size_t interval_of(double t) const;
};

void validate(const PiecewiseHazard& ph);

struct PopulationParams {
  std::vector<double> beta;
  RandomEffectsLaw law;
  std::vector<double> alpha;
  std::vector<double> gamma;
  PiecewiseHazard baseline_hazard;
};

struct IndividualEffects {
  IndividualId id = 0;
  double b0 = 0.0;
  std::optional<double> b1;
  double sigma = 1.0;
};

/// MCMC output: rows are retained draws, columns parameters.
struct PosteriorSamples {
  std::vector<std::string> parameter_names;
  Eigen::MatrixXd draws;
  std::vector<int> chain_ids;
  int thinning = 1;
  int burn_in = 0;

  std::size_t n_draws() const { return static_cast<std::size_t>(draws.rows()); }
  int n_chains() const;
  /// Column index of a named parameter; throws InvalidInput if absent.
  std::size_t index_of(const std::string& name) const;
  bool has(const std::string& name) const;
  /// All retained draws of one parameter, chains concatenated.
  std::vector<double> column(const std::string& name) const;
  /// Retained draws of one parameter split by chain, in chain-id order.
  std::vector<std::vector<double>> chains(const std::string& name) const;
};

/// Checks finiteness, positivity of SD-type draws (tau*, sigma*, h0_*) and
/// [-1, 1] range of correlation draws (rho*).
void validate(const PosteriorSamples& s);

struct ValidationReport {
  std::map<IndividualId, int> measurement_counts;
  std::vector<IndividualId> missing_from_survival;
  std::vector<IndividualId> missing_from_longitudinal;
  std::vector<IndividualId> missing_from_covariates;
  std::vector<IndividualId> measurement_after_followup;
  std::vector<IndividualId> zero_measurements;

  bool clean() const {
    return missing_from_survival.empty() && missing_from_longitudinal.empty() &&
           missing_from_covariates.empty() && measurement_after_followup.empty() &&
           zero_measurements.empty();
  }
};

/// Cross-table consistency check. Fatal conditions (empty data, duplicate
/// (id, time) pairs, longitudinal ids absent from the survival table, invalid
/// records) throw InvalidInput; the rest are reported as flags.
ValidationReport validate_dataset(const LongitudinalDataset& lon, const SurvivalDataset& surv,
                                  const CovariateTable& cov = {});

/// One individual with everything the fitters need, measurements sorted by time.
struct Subject {
  IndividualId id = 0;
  std::vector<double> times;
  std::vector<double> values;
  double followup_time = 0.0;
  bool event = false;
  std::vector<double> covariates;
};

/// Survival-table-ordered join of the three inputs. Individuals without
/// measurements are kept with empty series.
struct Cohort {
  std::vector<std::string> covariate_names;
  std::vector<Subject> subjects;

  std::size_t size() const { return subjects.size(); }
  std::size_t n_events() const;
};

/// Per-individual stage-one output consumed by the hazard regression:
/// usual level, residual SD and (for slope models) the individual slope.
struct Stage1Row {
  IndividualId id = 0;
  double level = 0.0;
  double sd = 0.0;
  std::optional<double> slope;
};

struct Stage1Estimates {
  std::vector<Stage1Row> rows;
  bool has_slope() const { return !rows.empty() && rows.front().slope.has_value(); }
};

Cohort make_cohort(const LongitudinalDataset& lon, const SurvivalDataset& surv,
                   const CovariateTable& cov = {});

}  // namespace varsurv
