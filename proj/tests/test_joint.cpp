#include <cmath>
#include <functional>
#include <numbers>

#include "doctest.h"
#include "location_scale.hpp"
#include "test_support.hpp"
#include "varsurv/datagen.hpp"
#include "varsurv/diagnostics.hpp"
#include "varsurv/joint.hpp"
#include "varsurv/survival.hpp"

using namespace varsurv;

namespace {

double log_normal_prior(double x) { return -0.5 * std::log(2 * std::numbers::pi * 1e4) - 0.5 * x * x / 1e4; }

PopulationParams lmm2_params(std::vector<double> cut, std::vector<double> heights) {
  PopulationParams p;
  p.beta = {120.0};
  p.law = default_law(LmmVariant::LMM2);
  p.law.mu_sigma = 2.0;
  p.law.tau0 = 15.0;
  p.law.tau_sigma = 0.5;
  p.law.rho = 0.5;
  p.alpha = {0.0, 0.0};
  p.baseline_hazard = {std::move(cut), std::move(heights)};
  return p;
}

double simpson(const std::function<double(double)>& f, double a, double b, double fa, double fm, double fb,
               double whole, double tol, int depth) {
  const double m = 0.5 * (a + b), lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6 * (fa + 4 * flm + fm), right = (b - m) / 6 * (fm + 4 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15 * tol) return left + right + (left + right - whole) / 15;
  return simpson(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) +
         simpson(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  return simpson(f, a, b, fa, fm, fb, (b - a) / 6 * (fa + 4 * fm + fb), 1e-14, 50);
}

SimulatedData small_dataset(std::uint64_t seed, int n = 300) {
  SimConfig cfg;
  cfg.n_individuals = n;
  cfg.seed = seed;
  return generate_dataset(cfg);
}

}  // namespace

TEST_CASE("one individual with a single interval") {
  Cohort c;
  Subject s;
  s.id = 1;
  s.followup_time = 5.0;
  s.event = true;
  c.subjects = {s};
  auto p = lmm2_params({0.0, 10.0}, {0.1});
  p.beta = {0.0};
  const std::vector<IndividualEffects> ef = {{1, 0.0, std::nullopt, 1.0}};
  const auto terms = joint_log_posterior(p, ef, c, {{LmmVariant::LMM2, {}}, 1}, {}, false);
  CHECK(terms.survival == doctest::Approx(std::log(0.1) - 0.5).epsilon(1e-14));
}

TEST_CASE("zero individuals leave only the prior") {
  const auto p = lmm2_params({0.0, 4.0, 10.0}, {0.05, 0.2});
  const auto terms = joint_log_posterior(p, {}, Cohort{}, {{LmmVariant::LMM2, {}}, 2}, {});
  CHECK(terms.longitudinal == 0.0);
  CHECK(terms.random_effects == 0.0);
  CHECK(terms.survival == 0.0);
  double prior = log_normal_prior(120.0) + log_normal_prior(2.0) - 2 * std::log(100.0) - std::log(2.0);
  prior += 2 * log_normal_prior(0.0) + log_normal_prior(std::log(0.05)) + log_normal_prior(std::log(0.2));
  CHECK(terms.total() == doctest::Approx(prior).epsilon(1e-12));
}

TEST_CASE("without associations the survival part is piecewise exponential") {
  const auto d = small_dataset(21);
  const Cohort c = make_cohort(d.longitudinal, d.survival);
  const std::vector<double> cut = {0.0, 3.0, 7.5, 12.0, 20.0};
  const std::vector<double> h = {0.002, 0.01, 0.03, 0.05};
  const auto p = lmm2_params(cut, h);
  const JointSpec spec{{LmmVariant::LMM2, {}}, 4};
  double want = 0.0;
  for (const auto& s : c.subjects) {
    double H = 0.0;
    std::size_t k_event = 0;
    for (std::size_t k = 0; k < h.size(); ++k) {
      const double hi = k + 1 == h.size() ? std::max(cut[k + 1], s.followup_time) : cut[k + 1];
      const double overlap = std::min(s.followup_time, hi) - cut[k];
      if (overlap > 0) {
        H += h[k] * overlap;
        k_event = k;
      }
    }
    want += (s.event ? std::log(h[k_event]) : 0.0) - H;
  }
  CounterRng rng(3);
  for (int rep = 0; rep < 2; ++rep) {
    std::vector<IndividualEffects> ef;
    for (const auto& s : c.subjects) ef.push_back({s.id, rng.normal(0, 15), std::nullopt, std::exp(rng.normal(2, 0.5))});
    const double got = joint_log_posterior(p, ef, c, spec, {}).survival;
    CHECK(std::abs(got - want) <= 1e-10 * std::abs(want));
  }
}

TEST_CASE("survival likelihood matches quadrature of the hazard") {
  const auto d = small_dataset(22, 20);
  const Cohort c = make_cohort(d.longitudinal, d.survival);
  CounterRng rng(4);
  const JointSpec spec{{LmmVariant::LMM2, {}}, 3};
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> cut = {0.0, 2 + 6 * rng.uniform(), 0.0, 20.0};
    cut[2] = cut[1] + 1 + 8 * rng.uniform();
    const std::vector<double> h = {0.01 * rng.uniform() + 1e-4, 0.02 * rng.uniform() + 1e-4,
                                   0.05 * rng.uniform() + 1e-4};
    auto p = lmm2_params(cut, h);
    p.alpha = {rng.normal(0.02, 0.02), rng.normal(0.05, 0.05)};
    std::vector<IndividualEffects> ef;
    for (const auto& s : c.subjects) ef.push_back({s.id, rng.normal(0, 15), std::nullopt, std::exp(rng.normal(2, 0.5))});
    const double got = joint_log_posterior(p, ef, c, spec, {}, false).survival;
    const PiecewiseHazard ph{cut, h};
    double want = 0.0;
    for (std::size_t i = 0; i < c.subjects.size(); ++i) {
      const auto& s = c.subjects[i];
      const double lp = p.alpha[0] * (p.beta[0] + ef[i].b0) + p.alpha[1] * ef[i].sigma;
      auto hazard = [&](double t) { return ph.heights[ph.interval_of(t)] * std::exp(lp); };
      // integrate piecewise so the quadrature never straddles a jump
      double H = 0.0, lo = 0.0;
      for (double b : {cut[1], cut[2], s.followup_time}) {
        const double hi = std::min(b, s.followup_time);
        // the hazard is right-continuous at cut-points, so evaluate inside (lo, hi]
        const double inner = std::nextafter(lo, hi);
        if (hi > lo) H += integrate([&](double t) { return hazard(std::max(t, inner)); }, lo, hi);
        lo = std::max(lo, hi);
      }
      want += (s.event ? std::log(hazard(s.followup_time)) : 0.0) - H;
    }
    CHECK(std::abs(got - want) <= 1e-10 * std::abs(want));
  }
}

TEST_CASE("joint sampler state agrees with the public log posterior") {
  const auto d = small_dataset(23);
  const Cohort c = make_cohort(d.longitudinal, d.survival);
  for (auto v : {LmmVariant::LMM1, LmmVariant::LMM2, LmmVariant::LMM4}) {
    const JointSpec spec{{v, {}}, 5};
    auto prepared = detail::prepare(c, spec.lmm, {}, {}, &spec);
    McmcSettings s;
    s.n_chains = 1;
    s.burn_in = 50;
    s.n_samples = 20;
    s.seed = 6;
    auto res = detail::run_sampler(prepared, s, 1.1, {});
    auto* chain = dynamic_cast<detail::LocationScaleChain*>(res.run.chains[0].get());
    REQUIRE(chain != nullptr);
    const double want = joint_log_posterior(chain->population(), chain->effects(), c, spec, {}).total();
    CHECK(chain->log_posterior() == doctest::Approx(want).epsilon(1e-10));
    for (auto& b : chain->blocks()) {
      if (b.name != "association" && b.name != "log_sigma") continue;
      std::vector<double> x(b.dimension), y(b.dimension);
      for (std::size_t i = 0; i < std::min<std::size_t>(b.units, 3); ++i) {
        b.get(i, x);
        const double ld0 = b.log_density(i, x), lp0 = chain->log_posterior();
        for (std::size_t k = 0; k < x.size(); ++k) y[k] = x[k] + 0.01 * (k + 1);
        const double ld1 = b.log_density(i, y);
        b.set(i, y);
        CHECK(ld1 - ld0 == doctest::Approx(chain->log_posterior() - lp0).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("fixed survival part reproduces the longitudinal fit") {
  const auto d = small_dataset(24, 500);
  const Cohort c = make_cohort(d.longitudinal, d.survival);
  McmcSettings s;
  s.n_chains = 2;
  s.burn_in = 1000;
  s.n_samples = 2000;
  s.seed = 25;
  s.max_threads = 2;
  JointSpec spec{{LmmVariant::LMM2, {}}, 15};
  spec.fix_survival = true;
  const auto jf = fit_joint(c, spec, {}, s);
  const auto lf = fit_lmm(c, spec.lmm, {}, s);
  for (const auto* name : {"beta0", "tau0", "tau_sigma", "mu_sigma", "rho"}) {
    const double se = std::hypot(testing::mc_se(jf.samples, name), testing::mc_se(lf.samples, name));
    CHECK(std::abs(summarize(jf.samples, name).mean - summarize(lf.samples, name).mean) < 3 * se);
  }
  CHECK(summarize(jf.samples, "alpha_sigma").sd == 0.0);
}

TEST_CASE("JM2 fit recovers the associations and reports DIC") {
  SimConfig cfg;
  cfg.seed = 7;
  const auto d = generate_dataset(cfg);
  McmcSettings s;
  s.n_chains = 2;
  s.burn_in = 1500;
  s.n_samples = 1000;
  s.thinning = 2;
  s.seed = 27;
  s.max_threads = 2;
  FitOptions opt;
  opt.keep_individual_draws = true;
  const auto fit = fit_joint(make_cohort(d.longitudinal, d.survival), {{LmmVariant::LMM2, {}}, 15}, {}, s, opt);
  const auto a0 = summarize(fit.samples, "alpha0"), as = summarize(fit.samples, "alpha_sigma");
  // one dataset: a 3-SD band; calibration over replications is an acceptance check
  CHECK(std::abs(a0.mean - 0.02) < 3 * a0.sd);
  CHECK(std::abs(as.mean - 0.05) < 3 * as.sd);
  CHECK(fit.rhat.at("alpha_sigma") < 1.1);
  CHECK(fit.cutpoints.size() == 16);
  CHECK(fit.cutpoints.front() == 0.0);
  CHECK(std::isfinite(fit.dic));
  CHECK(fit.p_d > 0.0);
  CHECK(fit.dic == doctest::Approx(fit.mean_deviance + fit.p_d));
  CHECK(fit.effects.rows.size() == 1500);
  CHECK(fit.samples.has("sigma[" + std::to_string(d.survival.rows[0].id) + "]"));
  for (int k = 1; k <= 15; ++k) CHECK(fit.samples.has("h0_" + std::to_string(k)));
}

TEST_CASE("joint parameter names") {
  JointSpec spec{{LmmVariant::LMM3, {}}, 2};
  spec.survival_covariates = {"age"};
  CHECK(joint_parameter_names(spec) ==
        std::vector<std::string>{"beta0", "beta_t", "mu_sigma", "tau0", "tau1", "tau_sigma", "rho01", "alpha0",
                                 "alpha_sigma", "alpha_slope", "gamma_age", "h0_1", "h0_2"});
}
