#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "varsurv/survival.hpp"

namespace varsurv {

namespace {

struct PartialLikelihood {
  double loglik = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd information;
};

/// Indices sorted by decreasing follow-up time.
std::vector<std::size_t> descending_order(const SurvivalDataset& surv) {
  std::vector<std::size_t> order(surv.rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return surv.rows[a].followup_time > surv.rows[b].followup_time;
  });
  return order;
}

PartialLikelihood evaluate(const Eigen::MatrixXd& x, const SurvivalDataset& surv, const Eigen::VectorXd& beta,
                           const std::vector<std::size_t>& order, bool derivatives) {
  const Eigen::Index p = x.cols();
  const Eigen::VectorXd eta = x * beta;
  const double shift = eta.size() ? eta.maxCoeff() : 0.0;
  PartialLikelihood out;
  if (derivatives) {
    out.score = Eigen::VectorXd::Zero(p);
    out.information = Eigen::MatrixXd::Zero(p, p);
  }
  double s0 = 0.0;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
  std::size_t pos = 0;
  const std::size_t n = order.size();
  while (pos < n) {
    const double t = surv.rows[order[pos]].followup_time;
    std::size_t end = pos;
    while (end < n && surv.rows[order[end]].followup_time == t) {
      const auto i = static_cast<Eigen::Index>(order[end]);
      const double w = std::exp(eta(i) - shift);
      s0 += w;
      if (derivatives) {
        s1 += w * x.row(i).transpose();
        s2.noalias() += w * x.row(i).transpose() * x.row(i);
      }
      ++end;
    }
    for (std::size_t k = pos; k < end; ++k) {
      const auto i = static_cast<Eigen::Index>(order[k]);
      if (!surv.rows[order[k]].event) continue;
      out.loglik += eta(i) - (std::log(s0) + shift);
      if (derivatives) {
        const Eigen::VectorXd xbar = s1 / s0;
        out.score += x.row(i).transpose() - xbar;
        out.information += s2 / s0 - xbar * xbar.transpose();
      }
    }
    pos = end;
  }
  return out;
}

void check_inputs(const Eigen::MatrixXd& x, const SurvivalDataset& surv) {
  if (static_cast<std::size_t>(x.rows()) != surv.rows.size())
    throw InvalidInput("covariate matrix rows must match survival records");
  if (!x.allFinite()) throw InvalidInput("covariate matrix contains non-finite values");
  for (const auto& r : surv.rows) validate(r);
}

}  // namespace

std::size_t CoxFit::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw InvalidInput("no coefficient named '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

std::pair<double, double> CoxFit::wald_interval(const std::string& name, double z) const {
  const auto k = index_of(name);
  return {coefficients[k] - z * standard_errors[k], coefficients[k] + z * standard_errors[k]};
}

double cox_log_partial_likelihood(const Eigen::MatrixXd& x, const SurvivalDataset& surv, const Eigen::VectorXd& beta) {
  check_inputs(x, surv);
  return evaluate(x, surv, beta, descending_order(surv), false).loglik;
}

Eigen::VectorXd cox_score(const Eigen::MatrixXd& x, const SurvivalDataset& surv, const Eigen::VectorXd& beta) {
  check_inputs(x, surv);
  return evaluate(x, surv, beta, descending_order(surv), true).score;
}

CoxFit cox_fit(const Eigen::MatrixXd& x, const SurvivalDataset& surv, std::vector<std::string> names) {
  check_inputs(x, surv);
  const Eigen::Index p = x.cols();
  const Eigen::Index n = x.rows();
  if (names.empty())
    for (Eigen::Index j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
  if (static_cast<Eigen::Index>(names.size()) != p) throw InvalidInput("one name per covariate column required");
  const int n_events = static_cast<int>(
      std::count_if(surv.rows.begin(), surv.rows.end(), [](const SurvivalRecord& r) { return r.event; }));
  if (n_events == 0) throw InvalidInput("Cox regression needs at least one event");
  if (p == 0) throw InvalidInput("Cox regression needs at least one covariate");

  // standardise columns
  Eigen::VectorXd center = x.colwise().mean().transpose();
  Eigen::VectorXd scale(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double var = (x.col(j).array() - center(j)).square().sum() / static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
    scale(j) = std::sqrt(var);
    if (!(scale(j) > 0.0)) throw InvalidInput("covariate '" + names[static_cast<std::size_t>(j)] + "' is constant");
  }
  const Eigen::MatrixXd z = (x.rowwise() - center.transpose()).array().rowwise() / scale.transpose().array();

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) {
    const Eigen::Index dropped = qr.colsPermutation().indices()(p - 1);
    throw InvalidInput("covariate matrix is rank deficient; '" + names[static_cast<std::size_t>(dropped)] +
                       "' is collinear with the others");
  }

  const auto order = descending_order(surv);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  PartialLikelihood cur = evaluate(z, surv, beta, order, true);
  int iter = 0;
  constexpr int kMaxIter = 200;
  constexpr double kDiverged = 50.0;
  bool converged = false;
  for (; iter < kMaxIter; ++iter) {
    if (cur.score.cwiseAbs().maxCoeff() < 1e-8) {
      converged = true;
      break;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cur.information);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
      throw NumericalError("Cox information matrix is not positive definite");
    Eigen::VectorXd step = ldlt.solve(cur.score);
    double factor = 1.0;
    PartialLikelihood next;
    Eigen::VectorXd candidate;
    for (int halving = 0; halving < 30; ++halving) {
      candidate = beta + factor * step;
      next = evaluate(z, surv, candidate, order, true);
      if (std::isfinite(next.loglik) && next.loglik >= cur.loglik - 1e-12 * std::abs(cur.loglik)) break;
      factor *= 0.5;
    }
    const double rel_change = std::abs(next.loglik - cur.loglik) / std::max(std::abs(cur.loglik), 1e-300);
    beta = candidate;
    cur = std::move(next);
    for (Eigen::Index j = 0; j < p; ++j) {
      if (std::abs(beta(j)) > kDiverged)
        throw MonotoneLikelihood("partial likelihood is monotone in '" + names[static_cast<std::size_t>(j)] +
                                 "'; its coefficient diverges");
    }
    if (rel_change < 1e-10) {
      converged = true;
      ++iter;
      break;
    }
  }
  if (!converged) throw NumericalError("Cox Newton-Raphson did not converge");

  Eigen::LDLT<Eigen::MatrixXd> ldlt(cur.information);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw NumericalError("Cox information matrix is singular at the optimum");
  const Eigen::MatrixXd cov_std = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
  // a large remaining Newton step means the optimum sits at infinity
  const Eigen::VectorXd remaining = cov_std * cur.score;
  for (Eigen::Index j = 0; j < p; ++j) {
    if (std::abs(remaining(j)) > 1e-4 * std::max(1.0, std::abs(beta(j))))
      throw MonotoneLikelihood("partial likelihood is monotone in '" + names[static_cast<std::size_t>(j)] +
                               "'; its coefficient diverges");
  }

  CoxFit fit;
  fit.names = std::move(names);
  fit.n_events = n_events;
  fit.iterations = iter;
  fit.log_partial_likelihood = cur.loglik;
  const Eigen::VectorXd inv_scale = scale.cwiseInverse();
  fit.covariance = inv_scale.asDiagonal() * cov_std * inv_scale.asDiagonal();
  fit.covariance = 0.5 * (fit.covariance + fit.covariance.transpose()).eval();
  for (Eigen::Index j = 0; j < p; ++j) {
    fit.coefficients.push_back(beta(j) / scale(j));
    fit.standard_errors.push_back(std::sqrt(fit.covariance(j, j)));
  }
  return fit;
}

Stage1Estimates to_stage1(const NaiveTable& table) {
  Stage1Estimates s;
  s.rows.reserve(table.rows.size());
  for (const auto& r : table.rows) s.rows.push_back({r.id, r.level, r.sd, std::nullopt});
  return s;
}

CoxFit two_stage_fit(const Stage1Estimates& stage1, const SurvivalDataset& surv, const CovariateTable& extra,
                     const std::vector<std::string>& extra_names) {
  std::unordered_map<IndividualId, std::size_t> surv_index;
  for (std::size_t i = 0; i < surv.rows.size(); ++i) surv_index.emplace(surv.rows[i].id, i);
  std::unordered_map<IndividualId, std::size_t> cov_index;
  for (std::size_t i = 0; i < extra.rows.size(); ++i) cov_index.emplace(extra.rows[i].id, i);
  std::vector<std::size_t> cols;
  for (const auto& name : extra_names) cols.push_back(extra.column(name));

  const bool slope = stage1.has_slope();
  const auto p = static_cast<Eigen::Index>(2 + (slope ? 1 : 0) + cols.size());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(stage1.rows.size()), p);
  SurvivalDataset matched;
  matched.rows.reserve(stage1.rows.size());
  Eigen::Index r = 0;
  for (const auto& row : stage1.rows) {
    auto it = surv_index.find(row.id);
    if (it == surv_index.end())
      throw InvalidInput("stage-one id " + std::to_string(row.id) + " has no survival record");
    matched.rows.push_back(surv.rows[it->second]);
    Eigen::Index c = 0;
    x(r, c++) = row.level;
    x(r, c++) = row.sd;
    if (slope) {
      if (!row.slope) throw InvalidInput("missing slope estimate for id " + std::to_string(row.id));
      x(r, c++) = *row.slope;
    }
    if (!cols.empty()) {
      auto ct = cov_index.find(row.id);
      if (ct == cov_index.end()) throw InvalidInput("no covariates for id " + std::to_string(row.id));
      for (std::size_t k : cols) x(r, c++) = extra.rows[ct->second].values[k];
    }
    ++r;
  }
  std::vector<std::string> names = {"level", "sd"};
  if (slope) names.push_back("slope");
  names.insert(names.end(), extra_names.begin(), extra_names.end());
  return cox_fit(x, matched, std::move(names));
}

}  // namespace varsurv
