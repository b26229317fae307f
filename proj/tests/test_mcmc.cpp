#include <cmath>
#include <functional>
#include <memory>

#include "doctest.h"
#include "varsurv/diagnostics.hpp"
#include "varsurv/mcmc.hpp"
#include "varsurv/random.hpp"

using namespace varsurv;

namespace {

// Random-walk chain on an arbitrary log density over R^d.
class DensityChain final : public ChainModel {
 public:
  DensityChain(std::function<double(std::span<const double>)> f, std::vector<double> x0, double scale = 1.0)
      : f_(std::move(f)), x_(std::move(x0)), scale_(scale) {}

  std::vector<BlockUpdater> blocks() override {
    BlockUpdater b;
    b.name = "x";
    b.dimension = x_.size();
    b.proposal_scale = scale_;
    b.get = [this](std::size_t, std::span<double> out) { std::copy(x_.begin(), x_.end(), out.begin()); };
    b.log_density = [this](std::size_t, std::span<const double> v) { return f_(v); };
    b.set = [this](std::size_t, std::span<const double> v) { std::copy(v.begin(), v.end(), x_.begin()); };
    return {b};
  }
  void monitored(std::span<double> out) const override { std::copy(x_.begin(), x_.end(), out.begin()); }
  double log_posterior() const override { return f_(x_); }

 private:
  std::function<double(std::span<const double>)> f_;
  std::vector<double> x_;
  double scale_;
};

McmcTarget density_target(std::function<double(std::span<const double>)> f, std::size_t d, double scale = 1.0) {
  McmcTarget t;
  for (std::size_t k = 0; k < d; ++k) t.parameter_names.push_back("x" + std::to_string(k));
  t.make_chain = [f, d, scale](int, CounterRng& rng) {
    std::vector<double> x0(d);
    for (auto& v : x0) v = 0.5 * rng.normal();
    return std::make_unique<DensityChain>(f, x0, scale);
  };
  return t;
}

double column_mean(const PosteriorSamples& s, Eigen::Index j) { return s.draws.col(j).mean(); }
double column_var(const PosteriorSamples& s, Eigen::Index j) {
  const double m = column_mean(s, j);
  return (s.draws.col(j).array() - m).square().sum() / static_cast<double>(s.draws.rows() - 1);
}

// Normal mean with known unit variance and N(0, 10^2) prior, sampled by an exact Gibbs draw.
class ConjugateChain final : public ChainModel {
 public:
  ConjugateChain(double post_mean, double post_sd) : m_(post_mean), s_(post_sd) {}
  std::vector<BlockUpdater> blocks() override {
    BlockUpdater b;
    b.name = "mean";
    b.kind = BlockKind::ConjugateGibbs;
    b.sample = [this](CounterRng& rng) {
      mu_ = rng.normal(m_, s_);
      return std::size_t{1};
    };
    return {b};
  }
  void monitored(std::span<double> out) const override { out[0] = mu_; }
  double log_posterior() const override { return -0.5 * (mu_ - m_) * (mu_ - m_) / (s_ * s_); }

 private:
  double m_, s_, mu_ = 0.0;
};

}  // namespace

TEST_CASE("standard bivariate normal target") {
  auto f = [](std::span<const double> x) { return -0.5 * (x[0] * x[0] + x[1] * x[1]); };
  McmcSettings s;
  s.n_chains = 2;
  s.burn_in = 2000;
  s.n_samples = 5000;
  s.thinning = 5;
  s.seed = 21;
  const McmcRun run = run_chains(density_target(f, 2), s);
  REQUIRE(run.samples.draws.rows() == 10000);
  for (Eigen::Index j = 0; j < 2; ++j) {
    CHECK(std::abs(column_mean(run.samples, j)) < 0.05);
    CHECK(std::abs(column_var(run.samples, j) - 1.0) < 0.1);
  }
  CHECK(run.blocks.size() == 1);
}

TEST_CASE("conjugate Gibbs matches the analytic posterior") {
  // y-bar = 1.3 from n = 20 unit-variance observations, prior N(0, 100)
  const double n = 20, ybar = 1.3, prior_var = 100.0;
  const double post_var = 1.0 / (n + 1.0 / prior_var);
  const double post_mean = post_var * n * ybar;
  McmcTarget t;
  t.parameter_names = {"mu"};
  t.make_chain = [&](int, CounterRng&) { return std::make_unique<ConjugateChain>(post_mean, std::sqrt(post_var)); };
  McmcSettings s;
  s.n_chains = 2;
  s.burn_in = 0;
  s.n_samples = 20000;
  const McmcRun run = run_chains(t, s);
  const double se = std::sqrt(post_var / 40000.0);
  CHECK(std::abs(column_mean(run.samples, 0) - post_mean) < 4.0 * se);
  CHECK(run.blocks[0].acceptance == 1.0);
}

TEST_CASE("settings validation") {
  McmcSettings s;
  s.n_samples = 0;
  CHECK_THROWS_AS(validate(s), InvalidInput);
  auto f = [](std::span<const double> x) { return -0.5 * x[0] * x[0]; };
  CHECK_THROWS_AS(run_chains(density_target(f, 1), s), InvalidInput);
  McmcSettings t;
  t.thinning = 0;
  CHECK_THROWS_AS(validate(t), InvalidInput);
}

TEST_CASE("non-finite initial log posterior is reported") {
  auto f = [](std::span<const double>) { return std::nan(""); };
  McmcSettings s;
  s.n_samples = 10;
  try {
    run_chains(density_target(f, 1), s);
    FAIL("expected an error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("re-initialise") != std::string::npos);
  }
}

TEST_CASE("block that never accepts is flagged") {
  // density finite only on a lattice, so continuous proposals always land off it
  auto f = [](std::span<const double> x) { return x[0] == std::round(x[0]) ? 0.0 : -INFINITY; };
  McmcTarget t;
  t.parameter_names = {"x"};
  t.make_chain = [f](int, CounterRng&) { return std::make_unique<DensityChain>(f, std::vector<double>{0.0}); };
  McmcSettings s;
  s.n_chains = 1;
  s.burn_in = 10;
  s.n_samples = 100;
  const McmcRun run = run_chains(t, s);
  CHECK(run.blocks[0].acceptance == 0.0);
  REQUIRE(run.warnings.size() == 1);
  CHECK(run.warnings[0].find("rejected every proposal") != std::string::npos);
}

TEST_CASE("three-state target through a rounded random walk") {
  const double p[3] = {0.2, 0.5, 0.3};
  auto f = [p](std::span<const double> x) -> double {
    const double r = std::round(x[0]);
    if (r < 0 || r > 2) return -INFINITY;
    return std::log(p[static_cast<int>(r)]);
  };
  McmcTarget t;
  t.parameter_names = {"x"};
  t.make_chain = [f](int, CounterRng&) { return std::make_unique<DensityChain>(f, std::vector<double>{1.0}, 1.5); };
  McmcSettings s;
  s.n_chains = 1;
  s.adapt = false;
  s.burn_in = 1000;
  s.n_samples = 200000;
  s.seed = 3;
  const McmcRun run = run_chains(t, s);
  double h[3] = {0, 0, 0};
  for (Eigen::Index r = 0; r < run.samples.draws.rows(); ++r) h[static_cast<int>(std::round(run.samples.draws(r, 0)))] += 1;
  for (int k = 0; k < 3; ++k) CHECK(std::abs(h[k] / s.n_samples - p[k]) < 0.02);
}

TEST_CASE("runs are bit-reproducible and independent of threading") {
  auto f = [](std::span<const double> x) { return -0.5 * (x[0] * x[0] + 4.0 * x[1] * x[1]); };
  McmcSettings s;
  s.n_chains = 3;
  s.burn_in = 200;
  s.n_samples = 300;
  s.seed = 99;
  s.adapt = false;
  const auto a = run_chains(density_target(f, 2), s);
  const auto b = run_chains(density_target(f, 2), s);
  CHECK(a.samples.draws == b.samples.draws);
  s.max_threads = 3;
  const auto c = run_chains(density_target(f, 2), s);
  CHECK(a.samples.draws == c.samples.draws);
  CHECK(a.samples.chain_ids == c.samples.chain_ids);
  s.adapt = true;
  const auto d1 = run_chains(density_target(f, 2), s);
  s.max_threads = 1;
  const auto d2 = run_chains(density_target(f, 2), s);
  CHECK(d1.samples.draws == d2.samples.draws);
}

TEST_CASE("adaptation reaches the acceptance targets") {
  McmcSettings s;
  s.n_chains = 2;
  s.burn_in = 3000;
  s.n_samples = 5000;
  s.seed = 8;
  auto f1 = [](std::span<const double> x) { return -0.5 * x[0] * x[0] / 0.01; };
  const auto r1 = run_chains(density_target(f1, 1, 10.0), s);
  CHECK(r1.blocks[0].acceptance > s.target_accept - 0.15);
  CHECK(r1.blocks[0].acceptance < s.target_accept + 0.15);
  auto f3 = [](std::span<const double> x) {
    return -0.5 * (x[0] * x[0] + 100.0 * x[1] * x[1] + (x[2] - x[0]) * (x[2] - x[0]) / 0.04);
  };
  const auto r3 = run_chains(density_target(f3, 3, 0.01), s);
  CHECK(r3.blocks[0].acceptance > s.target_accept_multi - 0.15);
  CHECK(r3.blocks[0].acceptance < s.target_accept_multi + 0.15);
}

TEST_CASE("gelman_rubin on iid, separated and constant chains") {
  CounterRng rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<std::vector<double>> iid(3, std::vector<double>(1000));
    for (auto& c : iid)
      for (auto& v : c) v = rng.normal(2.0, 3.0);
    const double r = gelman_rubin(iid);
    CHECK(r >= 0.99);
    CHECK(r <= 1.05);
  }
  std::vector<std::vector<double>> apart(2, std::vector<double>(1000));
  for (auto& v : apart[0]) v = rng.normal();
  for (auto& v : apart[1]) v = 10.0 + rng.normal();
  CHECK(gelman_rubin(apart) > 2.0);
  std::vector<std::vector<double>> flat(2, std::vector<double>(100, 1.0));
  try {
    gelman_rubin(flat);
    FAIL("expected an error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("degenerate variance") != std::string::npos);
  }
  CHECK_THROWS_AS(gelman_rubin(std::vector<std::vector<double>>{apart[0]}), InvalidInput);
}

TEST_CASE("gelman_rubin equals the textbook formula") {
  CounterRng rng(5);
  std::vector<std::vector<double>> ch(4, std::vector<double>(200));
  for (std::size_t c = 0; c < ch.size(); ++c)
    for (auto& v : ch[c]) v = rng.normal(0.1 * c, 1.0 + 0.2 * c);
  const double m = 4, n = 200;
  std::vector<double> mean(4), var(4);
  double grand = 0;
  for (int c = 0; c < 4; ++c) {
    for (double v : ch[c]) mean[c] += v / n;
    for (double v : ch[c]) var[c] += (v - mean[c]) * (v - mean[c]) / (n - 1);
    grand += mean[c] / m;
  }
  double B = 0, W = 0;
  for (int c = 0; c < 4; ++c) {
    B += n * (mean[c] - grand) * (mean[c] - grand) / (m - 1);
    W += var[c] / m;
  }
  const double V = (n - 1) / n * W + (m + 1) / (m * n) * B;
  double var_w = 0, cov_s2_x2 = 0, cov_s2_x = 0;
  double mean_s2 = W, mean_x2 = 0, mean_x = grand;
  for (int c = 0; c < 4; ++c) mean_x2 += mean[c] * mean[c] / m;
  for (int c = 0; c < 4; ++c) {
    var_w += (var[c] - mean_s2) * (var[c] - mean_s2) / (m - 1);
    cov_s2_x2 += (var[c] - mean_s2) * (mean[c] * mean[c] - mean_x2) / (m - 1);
    cov_s2_x += (var[c] - mean_s2) * (mean[c] - mean_x) / (m - 1);
  }
  const double var_V = ((n - 1) / n) * ((n - 1) / n) / m * var_w +
                       ((m + 1) / (m * n)) * ((m + 1) / (m * n)) * 2.0 / (m - 1) * B * B +
                       2.0 * (m + 1) * (n - 1) / (m * n * n) * (n / m) * (cov_s2_x2 - 2.0 * grand * cov_s2_x);
  const double d = 2.0 * V * V / var_V;
  const double expect = std::sqrt((d + 3.0) / (d + 1.0) * V / W);
  CHECK(gelman_rubin(ch) == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("autocorrelation of iid and AR(1) series") {
  CounterRng rng(6);
  std::vector<double> iid(10000), ar(10000);
  double prev = 0;
  for (std::size_t k = 0; k < iid.size(); ++k) {
    iid[k] = rng.normal();
    prev = 0.9 * prev + rng.normal();
    ar[k] = prev;
  }
  const auto a = autocorrelation(iid, 3);
  CHECK(a[0] == 1.0);
  CHECK(std::abs(a[1]) < 0.1);
  const auto b = autocorrelation(ar, 1);
  CHECK(b[1] > 0.85);
  CHECK(b[1] < 0.95);
}

TEST_CASE("posterior summaries and effective draws") {
  auto f = [](std::span<const double> x) { return -0.5 * x[0] * x[0]; };
  McmcSettings s;
  s.n_chains = 2;
  s.burn_in = 500;
  s.n_samples = 2000;
  const auto run = run_chains(density_target(f, 1), s);
  const auto sum = summarize(run.samples, "x0");
  CHECK(sum.q025 < sum.mean);
  CHECK(sum.mean < sum.q975);
  CHECK(sum.ess > 100.0);
  CHECK(sum.ess < 4000.0);
  CHECK(std::abs(sum.rhat - 1.0) < 0.05);
  CHECK(quantile({1.0, 2.0, 3.0, 4.0}, 0.5) == 2.5);
  CHECK(quantile({5.0}, 0.3) == 5.0);
}
