#include "varsurv/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace varsurv {

namespace {

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// sample variance / covariance with denominator n - 1
double sample_cov(std::span<const double> a, std::span<const double> b) {
  const double ma = mean_of(a), mb = mean_of(b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / static_cast<double>(a.size() - 1);
}

}  // namespace

double gelman_rubin(const std::vector<std::vector<double>>& chains) {
  const std::size_t m = chains.size();
  if (m < 2) throw InvalidInput("gelman_rubin needs at least two chains");
  const std::size_t n = chains.front().size();
  for (const auto& c : chains) {
    if (c.size() != n) throw InvalidInput("gelman_rubin needs chains of equal length");
  }
  if (n < 50) throw InvalidInput("gelman_rubin needs at least 50 draws per chain");

  std::vector<double> xbar(m), s2(m), xbar2(m);
  for (std::size_t i = 0; i < m; ++i) {
    xbar[i] = mean_of(chains[i]);
    s2[i] = sample_cov(chains[i], chains[i]);
    xbar2[i] = xbar[i] * xbar[i];
  }
  const double dn = static_cast<double>(n), dm = static_cast<double>(m);
  const double w = mean_of(s2);
  if (!(w > 0.0)) throw NumericalError("gelman_rubin: degenerate variance (constant chains)");
  const double muhat = mean_of(xbar);
  const double b = dn * sample_cov(xbar, xbar);

  const double var_w = sample_cov(s2, s2) / dm;
  const double var_b = 2.0 * b * b / (dm - 1.0);
  const double cov_wb = (dn / dm) * (sample_cov(s2, xbar2) - 2.0 * muhat * sample_cov(s2, xbar));
  const double v = (dn - 1.0) / dn * w + (1.0 + 1.0 / dm) * b / dn;
  const double var_v = ((dn - 1.0) * (dn - 1.0) * var_w + (1.0 + 1.0 / dm) * (1.0 + 1.0 / dm) * var_b +
                        2.0 * (dn - 1.0) * (1.0 + 1.0 / dm) * cov_wb) /
                       (dn * dn);
  const double df = var_v > 0.0 ? 2.0 * v * v / var_v : std::numeric_limits<double>::infinity();
  const double df_adj = std::isfinite(df) ? (df + 3.0) / (df + 1.0) : 1.0;
  const double r2 = (dn - 1.0) / dn + (1.0 + 1.0 / dm) * (1.0 / dn) * (b / w);
  return std::sqrt(df_adj * r2);
}

double gelman_rubin(const PosteriorSamples& samples, const std::string& parameter) {
  return gelman_rubin(samples.chains(parameter));
}

std::vector<double> autocorrelation(std::span<const double> x, int max_lag) {
  if (max_lag < 0) throw InvalidInput("max_lag must be >= 0");
  const std::size_t n = x.size();
  std::vector<double> acf(static_cast<std::size_t>(max_lag) + 1, 0.0);
  if (n == 0) return acf;
  const double mu = mean_of(x);
  double c0 = 0.0;
  for (double v : x) c0 += (v - mu) * (v - mu);
  acf[0] = 1.0;
  if (c0 <= 0.0) return acf;
  for (int lag = 1; lag <= max_lag; ++lag) {
    double c = 0.0;
    for (std::size_t t = static_cast<std::size_t>(lag); t < n; ++t) c += (x[t] - mu) * (x[t - static_cast<std::size_t>(lag)] - mu);
    acf[static_cast<std::size_t>(lag)] = c / c0;
  }
  return acf;
}

std::vector<double> autocorrelation(const PosteriorSamples& samples, const std::string& parameter, int max_lag) {
  const auto chains = samples.chains(parameter);
  std::vector<double> avg(static_cast<std::size_t>(std::max(max_lag, 0)), 0.0);
  if (chains.empty()) return avg;
  for (const auto& c : chains) {
    if (c.size() < 100) throw InvalidInput("autocorrelation needs at least 100 draws per chain");
    const auto a = autocorrelation(c, max_lag);
    for (std::size_t k = 0; k < avg.size(); ++k) avg[k] += a[k + 1];
  }
  for (auto& v : avg) v /= static_cast<double>(chains.size());
  return avg;
}

double effective_draws(const PosteriorSamples& samples, const std::string& parameter) {
  const auto chains = samples.chains(parameter);
  if (chains.empty()) return 0.0;
  const std::size_t n = chains.front().size();
  const std::size_t total = n * chains.size();
  if (n < 4) return static_cast<double>(total);
  const int max_lag = static_cast<int>(std::min<std::size_t>(n - 1, 1000));
  std::vector<double> rho(static_cast<std::size_t>(max_lag) + 1, 0.0);
  for (const auto& c : chains) {
    const auto a = autocorrelation(c, max_lag);
    for (std::size_t k = 0; k < rho.size(); ++k) rho[k] += a[k] / static_cast<double>(chains.size());
  }
  // Geyer: sum consecutive pairs while positive
  double tau = -1.0;
  for (std::size_t k = 0; k + 1 < rho.size(); k += 2) {
    const double pair = rho[k] + rho[k + 1];
    if (pair <= 0.0) break;
    tau += 2.0 * pair;
  }
  tau = std::max(tau, 1.0 / static_cast<double>(total));
  return static_cast<double>(total) / tau;
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw InvalidInput("quantile of empty data");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

ParameterSummary summarize(const PosteriorSamples& samples, const std::string& parameter) {
  ParameterSummary s;
  s.name = parameter;
  const auto all = samples.column(parameter);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (all.empty()) {
    s.mean = s.sd = s.q025 = s.q975 = s.rhat = s.acf1 = nan;
    return s;
  }
  s.mean = mean_of(all);
  s.sd = all.size() > 1 ? std::sqrt(sample_cov(all, all)) : nan;
  s.q025 = quantile(all, 0.025);
  s.q975 = quantile(all, 0.975);
  s.rhat = nan;
  try {
    s.rhat = gelman_rubin(samples, parameter);
  } catch (const std::exception&) {
  }
  const auto chains = samples.chains(parameter);
  double acf1 = 0.0;
  for (const auto& c : chains) acf1 += autocorrelation(c, 1)[1];
  s.acf1 = acf1 / static_cast<double>(chains.size());
  s.ess = effective_draws(samples, parameter);
  return s;
}

std::vector<ParameterSummary> summarize(const PosteriorSamples& samples) {
  std::vector<ParameterSummary> out;
  for (const auto& name : samples.parameter_names) out.push_back(summarize(samples, name));
  return out;
}

}  // namespace varsurv
