#include <cmath>
#include <numbers>

#include <Eigen/LU>

#include "doctest.h"
#include "location_scale.hpp"
#include "test_support.hpp"
#include "varsurv/datagen.hpp"
#include "varsurv/diagnostics.hpp"
#include "varsurv/lmm.hpp"
#include "varsurv/naive.hpp"

using namespace varsurv;

namespace {

Cohort random_cohort(std::uint64_t seed, int n_individuals) {
  CounterRng rng(seed);
  Cohort c;
  c.covariate_names = {"x"};
  for (int i = 0; i < n_individuals; ++i) {
    Subject s;
    s.id = 100 + i;
    const int n = 1 + static_cast<int>(rng.uniform() * 5);
    for (int j = 0; j < n; ++j) {
      s.times.push_back(j * 2.5 + rng.uniform());
      s.values.push_back(rng.normal(120.0, 15.0));
    }
    s.followup_time = 20.0;
    s.covariates = {rng.normal()};
    c.subjects.push_back(s);
  }
  return c;
}

RandomEffectsLaw lmm4_law() {
  RandomEffectsLaw law = default_law(LmmVariant::LMM4);
  law.mu_sigma = 2.0;
  law.tau0 = 14.0;
  law.tau1 = 0.7;
  law.tau_sigma = 0.45;
  law.rho01 = -0.2;
  law.rho0sigma = 0.5;
  law.rho1sigma = 0.1;
  return law;
}

// Term-by-term evaluation with its own covariance assembly.
double direct_log_posterior(const PopulationParams& p, const std::vector<IndividualEffects>& ef, const Cohort& c,
                            bool slope) {
  const auto& law = p.law;
  Eigen::MatrixXd s;
  if (slope) {
    const double t0 = law.tau0, t1 = *law.tau1, ts = law.tau_sigma;
    s.resize(3, 3);
    s << t0 * t0, *law.rho01 * t0 * t1, *law.rho0sigma * t0 * ts, *law.rho01 * t0 * t1, t1 * t1,
        *law.rho1sigma * t1 * ts, *law.rho0sigma * t0 * ts, *law.rho1sigma * t1 * ts, ts * ts;
  } else {
    const double r = law.rho.value_or(0.0);
    s.resize(2, 2);
    s << law.tau0 * law.tau0, r * law.tau0 * law.tau_sigma, r * law.tau0 * law.tau_sigma,
        law.tau_sigma * law.tau_sigma;
  }
  const Eigen::MatrixXd inv = s.inverse();
  const double det = s.determinant();
  const int d = static_cast<int>(s.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < c.subjects.size(); ++i) {
    const auto& sub = c.subjects[i];
    const double beta_t = slope ? p.beta[2] : 0.0;
    const double b1 = slope ? *ef[i].b1 : 0.0;
    for (std::size_t j = 0; j < sub.values.size(); ++j) {
      const double mean = p.beta[0] + p.beta[1] * sub.covariates[0] + ef[i].b0 + (beta_t + b1) * sub.times[j];
      const double z = (sub.values[j] - mean) / ef[i].sigma;
      total += -0.5 * std::log(2 * std::numbers::pi) - std::log(ef[i].sigma) - 0.5 * z * z;
    }
    Eigen::VectorXd r(d);
    r(0) = ef[i].b0;
    if (slope) r(1) = b1;
    r(d - 1) = std::log(ef[i].sigma) - law.mu_sigma;
    total += -0.5 * d * std::log(2 * std::numbers::pi) - 0.5 * std::log(det) - 0.5 * r.dot(inv * r);
  }
  auto normal = [](double x) { return -0.5 * std::log(2 * std::numbers::pi * 1e4) - 0.5 * x * x / 1e4; };
  for (double b : p.beta) total += normal(b);
  total += normal(law.mu_sigma);
  total += (slope ? 3 : 2) * -std::log(100.0);
  total += (slope ? 3 : (law.rho ? 1 : 0)) * -std::log(2.0);
  return total;
}

McmcSettings quick(std::uint64_t seed) {
  McmcSettings s;
  s.n_chains = 2;
  s.burn_in = 1000;
  s.n_samples = 1000;
  s.seed = seed;
  s.max_threads = 2;
  return s;
}

double mean_of(const PosteriorSamples& s, const std::string& name) { return summarize(s, name).mean; }

}  // namespace

TEST_CASE("log posterior of a single standard-normal measurement") {
  Cohort c;
  Subject s;
  s.id = 1;
  s.times = {0.0};
  s.values = {0.0};
  s.followup_time = 1.0;
  c.subjects = {s};
  PopulationParams p;
  p.beta = {0.0};
  p.law = default_law(LmmVariant::LMM1);
  const std::vector<IndividualEffects> ef = {{1, 0.0, std::nullopt, 1.0}};
  const auto terms = lmm_log_posterior(p, ef, c, LmmSpec{LmmVariant::LMM1, {}}, {}, false);
  CHECK(terms.longitudinal == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)).epsilon(1e-15));
  CHECK(terms.prior == 0.0);
}

TEST_CASE("log posterior equals direct summation") {
  const Cohort c = random_cohort(3, 40);
  CounterRng rng(9);
  for (bool slope : {false, true}) {
    PopulationParams p;
    p.law = slope ? lmm4_law() : default_law(LmmVariant::LMM2);
    if (!slope) {
      p.law.mu_sigma = 2.1;
      p.law.tau0 = 13.0;
      p.law.tau_sigma = 0.4;
      p.law.rho = 0.45;
    }
    p.beta = {118.0, 1.5};
    if (slope) p.beta.push_back(0.3);
    std::vector<IndividualEffects> ef;
    for (const auto& s : c.subjects)
      ef.push_back({s.id, rng.normal(0, 10), slope ? std::optional<double>(rng.normal(0, 0.5)) : std::nullopt,
                    std::exp(rng.normal(2.0, 0.4))});
    const LmmSpec spec{slope ? LmmVariant::LMM4 : LmmVariant::LMM2, {"x"}};
    const double got = lmm_log_posterior(p, ef, c, spec, {}).total();
    const double want = direct_log_posterior(p, ef, c, slope);
    CHECK(std::abs(got - want) <= 1e-10 * std::abs(want));
  }
}

TEST_CASE("non-positive residual SD is rejected") {
  const Cohort c = random_cohort(4, 3);
  PopulationParams p;
  p.beta = {120.0};
  p.law = default_law(LmmVariant::LMM1);
  std::vector<IndividualEffects> ef;
  for (const auto& s : c.subjects) ef.push_back({s.id, 0.0, std::nullopt, 5.0});
  ef[1].sigma = 0.0;
  CHECK_THROWS_AS(lmm_log_posterior(p, ef, c, {LmmVariant::LMM1, {}}, {}), InvalidInput);
  ef[1].sigma = -1.0;
  CHECK_THROWS_AS(lmm_log_posterior(p, ef, c, {LmmVariant::LMM1, {}}, {}), InvalidInput);
}

TEST_CASE("sampler state agrees with the public log posterior") {
  SimConfig cfg;
  cfg.n_individuals = 200;
  cfg.seed = 31;
  cfg.covariates = {{"x", SimCovariate::Kind::Normal, 0.0, 1.0, 2.0, 0.0}};
  const auto d = generate_dataset(cfg);
  const Cohort c = make_cohort(d.longitudinal, d.survival, d.covariates);
  for (auto v : {LmmVariant::LMM1, LmmVariant::LMM2, LmmVariant::LMM3, LmmVariant::LMM4}) {
    const LmmSpec spec{v, {"x"}};
    auto prepared = detail::prepare(c, spec, {}, {}, nullptr);
    McmcSettings s = quick(5);
    s.burn_in = 50;
    s.n_samples = 20;
    auto res = detail::run_sampler(prepared, s, 1.1, {});
    auto* chain = dynamic_cast<detail::LocationScaleChain*>(res.run.chains[0].get());
    REQUIRE(chain != nullptr);
    const double want = lmm_log_posterior(chain->population(), chain->effects(), c, spec, {}).total();
    CHECK(chain->log_posterior() == doctest::Approx(want).epsilon(1e-10));

    // random-walk densities are consistent with the full posterior
    for (auto& b : chain->blocks()) {
      if (b.name != "log_sigma") continue;
      for (std::size_t i = 0; i < 5; ++i) {
        double x[1];
        b.get(i, x);
        const double ld0 = b.log_density(i, x), lp0 = chain->log_posterior();
        const double y[1] = {x[0] + 0.3};
        const double ld1 = b.log_density(i, y);
        b.set(i, y);
        CHECK(ld1 - ld0 == doctest::Approx(chain->log_posterior() - lp0).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("LMM2 recovers the effects law at the defaults") {
  SimConfig cfg;
  cfg.seed = 7;
  const auto d = generate_dataset(cfg);
  const auto fit = fit_lmm(make_cohort(d.longitudinal, d.survival), {LmmVariant::LMM2, {}}, {}, quick(11));
  CHECK(std::abs(mean_of(fit.samples, "rho") - 0.5) < 0.1);
  CHECK(std::abs(mean_of(fit.samples, "tau_sigma") - 0.5) < 0.05);
  CHECK(std::abs(mean_of(fit.samples, "tau0") - 15.0) < 1.5);
  CHECK(std::abs(mean_of(fit.samples, "mu_sigma") - 2.0) < 0.1);
  CHECK(fit.stage1.rows.size() == 1500);
  CHECK(fit.warnings.empty());

  // lmm SDs are shrunk towards the centre relative to the naive SDs
  const auto naive = naive_table(d.longitudinal);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(naive.rows.size());
  for (std::size_t i = 0; i < naive.rows.size(); ++i) {
    const double x = naive.rows[i].sd, y = fit.stage1.rows[i].sd;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (sxy - sx * sy / n) / (sxx - sx * sx / n);
  CHECK(slope > 0.0);
  CHECK(slope < 1.0);
}

TEST_CASE("homoscedastic data give near-constant SDs and BLUP shrinkage") {
  SimConfig cfg;
  cfg.n_individuals = 400;
  cfg.tau_sigma = 1e-4;
  cfg.rho = 0.0;
  cfg.seed = 12;
  const auto d = generate_dataset(cfg);
  const auto fit = fit_lmm(make_cohort(d.longitudinal, d.survival), {LmmVariant::LMM1, {}}, {}, quick(13));
  double m = 0, m2 = 0;
  for (const auto& r : fit.stage1.rows) {
    m += r.sd;
    m2 += r.sd * r.sd;
  }
  m /= fit.stage1.rows.size();
  const double cv = std::sqrt(m2 / fit.stage1.rows.size() - m * m) / m;
  CHECK(cv < 0.05);

  // level_i follows the closed-form BLUP at the posterior means
  const double beta0 = mean_of(fit.samples, "beta0"), tau0 = mean_of(fit.samples, "tau0");
  const double sigma = m;
  const auto naive = naive_table(d.longitudinal);
  for (std::size_t i = 0; i < naive.rows.size(); ++i) {
    const double w = tau0 * tau0 / (tau0 * tau0 + sigma * sigma / naive.rows[i].n_measurements);
    const double blup = beta0 + w * (naive.rows[i].level - beta0);
    const double level = fit.stage1.rows[i].level;
    CHECK(std::abs(level - blup) < 0.5);
    CHECK(std::abs(level - beta0) <= std::abs(naive.rows[i].level - beta0) + 0.5);
  }
}

TEST_CASE("location equivariance") {
  SimConfig cfg;
  cfg.n_individuals = 400;
  cfg.seed = 14;
  auto d = generate_dataset(cfg);
  const Cohort c0 = make_cohort(d.longitudinal, d.survival);
  for (auto& r : d.longitudinal.rows) r.value += 50.0;
  const Cohort c1 = make_cohort(d.longitudinal, d.survival);
  const auto f0 = fit_lmm(c0, {LmmVariant::LMM2, {}}, {}, quick(15));
  const auto f1 = fit_lmm(c1, {LmmVariant::LMM2, {}}, {}, quick(15));
  const double shift = mean_of(f1.samples, "beta0") - mean_of(f0.samples, "beta0");
  const double se = std::hypot(testing::mc_se(f0.samples, "beta0"), testing::mc_se(f1.samples, "beta0"));
  CHECK(std::abs(shift - 50.0) < 4 * se + 1e-9);
  for (const auto* name : {"tau_sigma", "mu_sigma"})
    CHECK(testing::ks_pvalue(f0.samples.column(name), f1.samples.column(name)) > 0.01);
  std::vector<double> sd0, sd1;
  for (std::size_t i = 0; i < f0.stage1.rows.size(); ++i) {
    sd0.push_back(f0.stage1.rows[i].sd);
    sd1.push_back(f1.stage1.rows[i].sd);
  }
  CHECK(testing::ks_pvalue(sd0, sd1) > 0.01);
}

TEST_CASE("LMM1 and LMM2 agree on uncorrelated data") {
  SimConfig cfg;
  cfg.rho = 0.0;
  cfg.seed = 16;
  const auto d = generate_dataset(cfg);
  const Cohort c = make_cohort(d.longitudinal, d.survival);
  McmcSettings s = quick(17);
  s.n_samples = 2000;
  const auto f1 = fit_lmm(c, {LmmVariant::LMM1, {}}, {}, s);
  const auto f2 = fit_lmm(c, {LmmVariant::LMM2, {}}, {}, s);
  for (const auto* name : {"tau0", "tau_sigma", "mu_sigma"}) {
    const double se = std::hypot(testing::mc_se(f1.samples, name), testing::mc_se(f2.samples, name));
    CHECK(std::abs(mean_of(f1.samples, name) - mean_of(f2.samples, name)) < 3 * se);
  }
  CHECK(std::abs(mean_of(f2.samples, "rho")) < 0.15);
}

TEST_CASE("single measurements and excluded individuals") {
  SimConfig cfg;
  cfg.n_individuals = 150;
  cfg.n_measurements = 1;
  cfg.seed = 18;
  auto d = generate_dataset(cfg);
  // individual 0 loses its only measurement
  d.longitudinal.rows.erase(d.longitudinal.rows.begin());
  McmcSettings s = quick(19);
  s.burn_in = 200;
  s.n_samples = 200;
  const auto fit = fit_lmm(make_cohort(d.longitudinal, d.survival), {LmmVariant::LMM1, {}}, {}, s);
  CHECK(fit.excluded.size() == 1);
  CHECK(fit.stage1.rows.size() == 149);
  for (const auto& r : fit.stage1.rows) CHECK(r.sd > 0.0);
}

TEST_CASE("parameter names per variant") {
  CHECK(lmm_parameter_names({LmmVariant::LMM1, {}}) ==
        std::vector<std::string>{"beta0", "mu_sigma", "tau0", "tau_sigma"});
  CHECK(lmm_parameter_names({LmmVariant::LMM4, {"age"}}) ==
        std::vector<std::string>{"beta0", "beta_age", "beta_t", "mu_sigma", "tau0", "tau1", "tau_sigma", "rho01",
                                 "rho0sigma", "rho1sigma"});
}
