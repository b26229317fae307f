#include "varsurv/types.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_map>

#include "varsurv/covariance.hpp"

namespace varsurv {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInput(msg);
}

void check_correlation(const std::optional<double>& r, const char* name) {
  if (r) require(std::isfinite(*r) && *r >= -1.0 && *r <= 1.0, std::string(name) + " must lie in [-1, 1]");
}

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

std::size_t CovariateTable::column(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw InvalidInput("unknown covariate '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

void validate(const LongitudinalRecord& r) {
  require(std::isfinite(r.time) && r.time >= 0.0,
          "measurement time must be finite and >= 0 (id " + std::to_string(r.id) + ")");
  require(std::isfinite(r.value), "measurement value must be finite (id " + std::to_string(r.id) + ")");
}

void validate(const SurvivalRecord& r) {
  require(std::isfinite(r.followup_time) && r.followup_time > 0.0,
          "follow-up time must be finite and > 0 (id " + std::to_string(r.id) + ")");
}

void validate(const RandomEffectsLaw& law) {
  const bool slope = law.structure == EffectsStructure::InterceptSlope;
  require(std::isfinite(law.mu_sigma), "mu_sigma must be finite");
  require(std::isfinite(law.tau0) && law.tau0 > 0.0, "tau0 must be positive");
  require(std::isfinite(law.tau_sigma) && law.tau_sigma > 0.0, "tau_sigma must be positive");
  require(law.tau1.has_value() == slope, slope ? "tau1 required for slope models" : "tau1 not allowed without slope");
  if (law.tau1) require(std::isfinite(*law.tau1) && *law.tau1 > 0.0, "tau1 must be positive");
  require(law.rho.has_value() == (!slope && law.correlated_with_sd),
          "rho is present exactly for correlated intercept-only laws");
  require(law.rho01.has_value() == slope, "rho01 is present exactly for slope laws");
  require(law.rho0sigma.has_value() == (slope && law.correlated_with_sd),
          "rho0sigma is present exactly for correlated slope laws");
  require(law.rho1sigma.has_value() == (slope && law.correlated_with_sd),
          "rho1sigma is present exactly for correlated slope laws");
  check_correlation(law.rho, "rho");
  check_correlation(law.rho01, "rho01");
  check_correlation(law.rho0sigma, "rho0sigma");
  check_correlation(law.rho1sigma, "rho1sigma");
  effects_covariance(law);
}

EffectsStructure structure_of(LmmVariant v) {
  return (v == LmmVariant::LMM1 || v == LmmVariant::LMM2) ? EffectsStructure::InterceptOnly
                                                            : EffectsStructure::InterceptSlope;
}

bool correlated_of(LmmVariant v) { return v == LmmVariant::LMM2 || v == LmmVariant::LMM4; }

std::string to_string(LmmVariant v) {
  switch (v) {
    case LmmVariant::LMM1: return "lmm1";
    case LmmVariant::LMM2: return "lmm2";
    case LmmVariant::LMM3: return "lmm3";
    case LmmVariant::LMM4: return "lmm4";
  }
  return "?";
}

LmmVariant lmm_variant_from_string(const std::string& s) {
  std::string t = s;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "lmm1" || t == "jm1" || t == "1") return LmmVariant::LMM1;
  if (t == "lmm2" || t == "jm2" || t == "2") return LmmVariant::LMM2;
  if (t == "lmm3" || t == "jm3" || t == "3") return LmmVariant::LMM3;
  if (t == "lmm4" || t == "jm4" || t == "4") return LmmVariant::LMM4;
  throw InvalidInput("unknown model variant '" + s + "'");
}

RandomEffectsLaw default_law(LmmVariant v) {
  RandomEffectsLaw law;
  law.structure = structure_of(v);
  law.correlated_with_sd = correlated_of(v);
  if (law.structure == EffectsStructure::InterceptSlope) {
    law.tau1 = 1.0;
    law.rho01 = 0.0;
    if (law.correlated_with_sd) {
      law.rho0sigma = 0.0;
      law.rho1sigma = 0.0;
    }
  } else if (law.correlated_with_sd) {
    law.rho = 0.0;
  }
  return law;
}

std::size_t PiecewiseHazard::interval_of(double t) const {
  // first k with t <= t_{k+1}
  auto it = std::lower_bound(cutpoints.begin() + 1, cutpoints.end(), t);
  if (it == cutpoints.end()) return heights.size() - 1;
  return static_cast<std::size_t>(it - cutpoints.begin()) - 1;
}

void validate(const PiecewiseHazard& ph) {
  require(!ph.heights.empty(), "piecewise hazard needs at least one interval");
  require(ph.cutpoints.size() == ph.heights.size() + 1, "cut-point count must be intervals + 1");
  require(ph.cutpoints.front() == 0.0, "first cut-point must be 0");
  for (std::size_t k = 1; k < ph.cutpoints.size(); ++k)
    require(ph.cutpoints[k] > ph.cutpoints[k - 1], "cut-points must be strictly increasing");
  for (double h : ph.heights) require(std::isfinite(h) && h > 0.0, "hazard heights must be positive");
}

int PosteriorSamples::n_chains() const {
  std::set<int> ids(chain_ids.begin(), chain_ids.end());
  return static_cast<int>(ids.size());
}

std::size_t PosteriorSamples::index_of(const std::string& name) const {
  auto it = std::find(parameter_names.begin(), parameter_names.end(), name);
  if (it == parameter_names.end()) throw InvalidInput("unknown parameter '" + name + "'");
  return static_cast<std::size_t>(it - parameter_names.begin());
}

bool PosteriorSamples::has(const std::string& name) const {
  return std::find(parameter_names.begin(), parameter_names.end(), name) != parameter_names.end();
}

std::vector<double> PosteriorSamples::column(const std::string& name) const {
  const auto j = static_cast<Eigen::Index>(index_of(name));
  std::vector<double> out(static_cast<std::size_t>(draws.rows()));
  for (Eigen::Index i = 0; i < draws.rows(); ++i) out[static_cast<std::size_t>(i)] = draws(i, j);
  return out;
}

std::vector<std::vector<double>> PosteriorSamples::chains(const std::string& name) const {
  const auto j = static_cast<Eigen::Index>(index_of(name));
  std::map<int, std::vector<double>> by_chain;
  for (Eigen::Index i = 0; i < draws.rows(); ++i)
    by_chain[chain_ids[static_cast<std::size_t>(i)]].push_back(draws(i, j));
  std::vector<std::vector<double>> out;
  for (auto& [id, v] : by_chain) out.push_back(std::move(v));
  return out;
}

void validate(const PosteriorSamples& s) {
  require(static_cast<std::size_t>(s.draws.cols()) == s.parameter_names.size(),
          "draw matrix width must match parameter names");
  require(static_cast<std::size_t>(s.draws.rows()) == s.chain_ids.size(), "one chain id per draw required");
  require(s.thinning >= 1 && s.burn_in >= 0, "thinning must be >= 1 and burn-in >= 0");
  require(s.draws.allFinite(), "posterior draws must be finite");
  for (std::size_t j = 0; j < s.parameter_names.size(); ++j) {
    const auto& name = s.parameter_names[j];
    const auto col = s.draws.col(static_cast<Eigen::Index>(j));
    if (starts_with(name, "tau") || starts_with(name, "sigma") || starts_with(name, "h0_"))
      require((col.array() > 0.0).all(), "draws of " + name + " must be positive");
    if (starts_with(name, "rho"))
      require((col.array().abs() <= 1.0).all(), "draws of " + name + " must lie in [-1, 1]");
  }
}

ValidationReport validate_dataset(const LongitudinalDataset& lon, const SurvivalDataset& surv,
                                  const CovariateTable& cov) {
  require(!lon.rows.empty(), "longitudinal dataset is empty");
  require(!surv.rows.empty(), "survival dataset is empty");

  std::unordered_map<IndividualId, const SurvivalRecord*> surv_by_id;
  for (const auto& r : surv.rows) {
    validate(r);
    require(surv_by_id.emplace(r.id, &r).second, "duplicate survival record for id " + std::to_string(r.id));
  }

  ValidationReport report;
  std::set<std::pair<IndividualId, double>> seen;
  std::set<IndividualId> flagged_late;
  for (const auto& r : lon.rows) {
    validate(r);
    require(seen.emplace(r.id, r.time).second, "duplicate (id, time) pair: id " + std::to_string(r.id) +
                                                   ", time " + std::to_string(r.time));
    auto it = surv_by_id.find(r.id);
    require(it != surv_by_id.end(), "longitudinal id " + std::to_string(r.id) + " absent from survival table");
    ++report.measurement_counts[r.id];
    if (r.time > it->second->followup_time && flagged_late.insert(r.id).second)
      report.measurement_after_followup.push_back(r.id);
  }
  for (const auto& r : surv.rows) {
    if (!report.measurement_counts.count(r.id)) {
      report.missing_from_longitudinal.push_back(r.id);
      report.zero_measurements.push_back(r.id);
    }
  }
  if (!cov.empty()) {
    std::set<IndividualId> cov_ids;
    for (const auto& row : cov.rows) {
      require(row.values.size() == cov.names.size(),
              "covariate row length mismatch for id " + std::to_string(row.id));
      for (double v : row.values) require(std::isfinite(v), "non-finite covariate for id " + std::to_string(row.id));
      cov_ids.insert(row.id);
    }
    for (const auto& r : surv.rows)
      if (!cov_ids.count(r.id)) report.missing_from_covariates.push_back(r.id);
    for (IndividualId id : cov_ids)
      if (!surv_by_id.count(id)) report.missing_from_survival.push_back(id);
  }
  return report;
}

std::size_t Cohort::n_events() const {
  return static_cast<std::size_t>(
      std::count_if(subjects.begin(), subjects.end(), [](const Subject& s) { return s.event; }));
}

Cohort make_cohort(const LongitudinalDataset& lon, const SurvivalDataset& surv, const CovariateTable& cov) {
  Cohort cohort;
  cohort.covariate_names = cov.names;
  std::unordered_map<IndividualId, std::size_t> index;
  cohort.subjects.reserve(surv.rows.size());
  for (const auto& r : surv.rows) {
    validate(r);
    require(index.emplace(r.id, cohort.subjects.size()).second,
            "duplicate survival record for id " + std::to_string(r.id));
    Subject s;
    s.id = r.id;
    s.followup_time = r.followup_time;
    s.event = r.event;
    cohort.subjects.push_back(std::move(s));
  }
  for (const auto& r : lon.rows) {
    validate(r);
    auto it = index.find(r.id);
    require(it != index.end(), "longitudinal id " + std::to_string(r.id) + " absent from survival table");
    auto& s = cohort.subjects[it->second];
    s.times.push_back(r.time);
    s.values.push_back(r.value);
  }
  for (auto& s : cohort.subjects) {
    std::vector<std::size_t> order(s.times.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.times[a] < s.times[b]; });
    std::vector<double> t(order.size()), y(order.size());
    for (std::size_t j = 0; j < order.size(); ++j) {
      t[j] = s.times[order[j]];
      y[j] = s.values[order[j]];
      require(j == 0 || t[j] > t[j - 1], "duplicate (id, time) pair: id " + std::to_string(s.id));
    }
    s.times = std::move(t);
    s.values = std::move(y);
  }
  if (!cov.empty()) {
    std::vector<bool> filled(cohort.subjects.size(), false);
    for (const auto& row : cov.rows) {
      auto it = index.find(row.id);
      if (it == index.end()) continue;
      require(row.values.size() == cov.names.size(), "covariate row length mismatch for id " + std::to_string(row.id));
      cohort.subjects[it->second].covariates = row.values;
      filled[it->second] = true;
    }
    for (std::size_t i = 0; i < filled.size(); ++i)
      require(filled[i], "no covariates for id " + std::to_string(cohort.subjects[i].id));
  }
  return cohort;
}

}  // namespace varsurv
