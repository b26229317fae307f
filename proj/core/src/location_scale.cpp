#include "location_scale.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>

#include "varsurv/diagnostics.hpp"
#include "varsurv/naive.hpp"
#include "varsurv/survival.hpp"

namespace varsurv::detail {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return quantile(std::move(v), 0.5);
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

Layout make_layout(const LmmSpec& lmm, int px, const JointSpec* joint) {
  Layout L;
  L.slope = lmm.structure() == EffectsStructure::InterceptSlope;
  L.correlated = lmm.correlated();
  L.d = L.slope ? 3 : 2;
  L.dl = L.d - 1;
  L.px = px;
  L.ptheta = px + (L.slope ? 1 : 0) + 1;
  L.n_tau = L.d;
  switch (lmm.variant) {
    case LmmVariant::LMM1:
      break;
    case LmmVariant::LMM2:
      L.corr_pairs = {{0, 1}};
      L.corr_names = {"rho"};
      break;
    case LmmVariant::LMM3:
      L.corr_pairs = {{0, 1}};
      L.corr_names = {"rho01"};
      break;
    case LmmVariant::LMM4:
      L.corr_pairs = {{0, 1}, {0, 2}, {1, 2}};
      L.corr_names = {"rho01", "rho0sigma", "rho1sigma"};
      break;
  }
  if (joint) {
    L.joint = true;
    L.survival_active = !joint->fix_survival;
    L.n_alpha = L.slope ? 3 : 2;
    L.n_gamma = static_cast<int>(joint->survival_covariates.size());
    L.K = joint->K;
  }
  return L;
}

std::vector<std::string> tau_names(const Layout& L) {
  if (L.slope) return {"tau0", "tau1", "tau_sigma"};
  return {"tau0", "tau_sigma"};
}

std::vector<std::string> alpha_names(const Layout& L) {
  if (L.slope) return {"alpha0", "alpha_sigma", "alpha_slope"};
  return {"alpha0", "alpha_sigma"};
}

}  // namespace

std::vector<std::string> population_names(const LmmSpec& lmm, const JointSpec* joint) {
  const Layout L = make_layout(lmm, 1 + static_cast<int>(lmm.fixed_covariates.size()), joint);
  std::vector<std::string> names = {"beta0"};
  for (const auto& name : lmm.fixed_covariates) names.push_back("beta_" + name);
  if (L.slope) names.push_back("beta_t");
  names.push_back("mu_sigma");
  for (const auto& n : tau_names(L)) names.push_back(n);
  for (const auto& n : L.corr_names) names.push_back(n);
  if (joint) {
    for (const auto& n : alpha_names(L)) names.push_back(n);
    for (const auto& n : joint->survival_covariates) names.push_back("gamma_" + n);
    for (int k = 1; k <= L.K; ++k) names.push_back("h0_" + std::to_string(k));
  }
  return names;
}

std::shared_ptr<const Prepared> prepare(const Cohort& data, const LmmSpec& lmm, const PriorSpec& priors,
                                        const FitOptions& options, const JointSpec* joint) {
  validate(priors);
  if (data.subjects.empty()) throw InvalidInput("no individuals to fit");
  auto P = std::make_shared<Prepared>();
  P->priors = priors;
  P->keep_individual = options.keep_individual_draws;

  std::vector<std::size_t> xcols, wcols;
  auto find_col = [&](const std::string& name) {
    auto it = std::find(data.covariate_names.begin(), data.covariate_names.end(), name);
    if (it == data.covariate_names.end()) throw InvalidInput("unknown covariate '" + name + "'");
    return static_cast<std::size_t>(it - data.covariate_names.begin());
  };
  for (const auto& name : lmm.fixed_covariates) xcols.push_back(find_col(name));
  if (joint)
    for (const auto& name : joint->survival_covariates) wcols.push_back(find_col(name));

  P->layout = make_layout(lmm, 1 + static_cast<int>(xcols.size()), joint);
  const Layout& L = P->layout;
  if (joint && joint->K < 1) throw InvalidInput("number of hazard intervals K must be >= 1");

  std::vector<const Subject*> kept;
  for (const auto& s : data.subjects) {
    if (s.times.empty() && !joint) {
      P->excluded.push_back(s.id);
      continue;
    }
    kept.push_back(&s);
  }
  if (kept.empty()) throw InvalidInput("no individual has a measurement");
  const std::size_t N = kept.size();

  P->ids.resize(N);
  P->n.resize(N);
  P->sy.assign(N, 0.0);
  P->syy.assign(N, 0.0);
  P->st.assign(N, 0.0);
  P->stt.assign(N, 0.0);
  P->sty.assign(N, 0.0);
  P->X.resize(static_cast<Eigen::Index>(N), L.px);
  for (std::size_t i = 0; i < N; ++i) {
    const Subject& s = *kept[i];
    P->ids[i] = s.id;
    P->n[i] = static_cast<int>(s.values.size());
    for (std::size_t j = 0; j < s.values.size(); ++j) {
      const double t = s.times[j], y = s.values[j];
      P->sy[i] += y;
      P->syy[i] += y * y;
      P->st[i] += t;
      P->stt[i] += t * t;
      P->sty[i] += t * y;
    }
    const auto ii = static_cast<Eigen::Index>(i);
    P->X(ii, 0) = 1.0;
    for (std::size_t k = 0; k < xcols.size(); ++k) P->X(ii, static_cast<Eigen::Index>(k + 1)) = s.covariates[xcols[k]];
  }
  if (!P->X.allFinite()) throw InvalidInput("fixed-effect covariates contain non-finite values");
  if (L.px > 1) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(P->X);
    qr.setThreshold(1e-10);
    if (qr.rank() < L.px) {
      const Eigen::Index dropped = qr.colsPermutation().indices()(L.px - 1);
      const std::string name = dropped == 0 ? "(intercept)" : lmm.fixed_covariates[static_cast<std::size_t>(dropped - 1)];
      throw InvalidInput("fixed-effect design is rank deficient; '" + name + "' is collinear with the others");
    }
  }

  // design cross-products: precision of theta = sum_rs Q_rs G_rs
  {
    const int d = L.d;
    const Eigen::MatrixXd XtX = P->X.transpose() * P->X;
    const Eigen::VectorXd sumX = P->X.colwise().sum().transpose();
    auto slot = [&](int r) { return r == d - 1 ? L.ptheta - 1 : L.px; };
    P->G.assign(static_cast<std::size_t>(d * d), Eigen::MatrixXd::Zero(L.ptheta, L.ptheta));
    for (int r = 0; r < d; ++r) {
      for (int s = 0; s < d; ++s) {
        Eigen::MatrixXd& G = P->G[static_cast<std::size_t>(r * d + s)];
        if (r == 0 && s == 0) {
          G.topLeftCorner(L.px, L.px) = XtX;
        } else if (r == 0) {
          G.block(0, slot(s), L.px, 1) = sumX;
        } else if (s == 0) {
          G.block(slot(r), 0, 1, L.px) = sumX.transpose();
        } else {
          G(slot(r), slot(s)) = static_cast<double>(N);
        }
      }
    }
  }

  // names
  P->beta_names.push_back("beta0");
  for (const auto& name : lmm.fixed_covariates) P->beta_names.push_back("beta_" + name);
  if (L.slope) P->beta_names.push_back("beta_t");
  if (joint)
    for (const auto& n : joint->survival_covariates) P->gamma_names.push_back("gamma_" + n);
  auto& names = P->parameter_names;
  names = population_names(lmm, joint);
  names.push_back("deviance");
  if (P->keep_individual) {
    for (auto id : P->ids) {
      names.push_back("b0[" + std::to_string(id) + "]");
      if (L.slope) names.push_back("b1[" + std::to_string(id) + "]");
      names.push_back("sigma[" + std::to_string(id) + "]");
    }
  }

  // naive starting values
  std::vector<double> a0(N, std::numeric_limits<double>::quiet_NaN()), c0 = a0, s0 = a0;
  for (std::size_t i = 0; i < N; ++i) {
    const Subject& s = *kept[i];
    const int n = P->n[i];
    if (n == 0) continue;
    const double ybar = P->sy[i] / n;
    const double tbar = P->st[i] / n;
    const double stt_c = P->stt[i] - n * tbar * tbar;
    if (L.slope && n >= 2 && stt_c > 1e-12 * std::max(1.0, P->stt[i])) {
      const double slope = (P->sty[i] - n * tbar * ybar) / stt_c;
      const double icept = ybar - slope * tbar;
      c0[i] = slope;
      a0[i] = icept;
      double r2 = 0.0;
      for (std::size_t j = 0; j < s.values.size(); ++j) {
        const double r = s.values[j] - icept - slope * s.times[j];
        r2 += r * r;
      }
      if (r2 > 0.0) s0[i] = std::sqrt(r2 / n);
    } else {
      a0[i] = ybar;
      if (n >= 2) {
        const double sd = naive_sd(s.values);
        if (sd > 0.0) s0[i] = sd;
      }
    }
  }
  auto valid = [](const std::vector<double>& v) {
    std::vector<double> out;
    for (double x : v)
      if (std::isfinite(x)) out.push_back(x);
    return out;
  };
  const auto a_ok = valid(a0), s_ok = valid(s0), c_ok = valid(c0);
  double sd_fill = median(s_ok);
  if (!std::isfinite(sd_fill)) sd_fill = std::max(1e-3, sd_of(a_ok));
  if (!(sd_fill > 0.0)) sd_fill = 1.0;
  double a_fill = 0.0;
  for (double x : a_ok) a_fill += x;
  a_fill /= static_cast<double>(a_ok.size());
  double c_fill = 0.0;
  for (double x : c_ok) c_fill += x;
  if (!c_ok.empty()) c_fill /= static_cast<double>(c_ok.size());
  for (std::size_t i = 0; i < N; ++i) {
    if (!std::isfinite(a0[i])) a0[i] = a_fill;
    if (!std::isfinite(c0[i])) c0[i] = c_fill;
    if (!std::isfinite(s0[i])) s0[i] = sd_fill;
    s0[i] = std::max(s0[i], 1e-3 * sd_fill);
  }

  InitialState& I = P->init;
  const int d = L.d;
  I.e.assign(N * static_cast<std::size_t>(d), 0.0);
  std::vector<double> l0(N);
  for (std::size_t i = 0; i < N; ++i) {
    l0[i] = std::log(s0[i]);
    I.e[i * d] = a0[i];
    if (L.slope) I.e[i * d + 1] = c0[i];
    I.e[i * d + d - 1] = l0[i];
  }
  I.theta = Eigen::VectorXd::Zero(L.ptheta);
  Eigen::Map<const Eigen::VectorXd> amap(a0.data(), static_cast<Eigen::Index>(N));
  const Eigen::VectorXd beta = P->X.colPivHouseholderQr().solve(amap);
  I.theta.head(L.px) = beta;
  std::vector<double> ares(N);
  for (std::size_t i = 0; i < N; ++i) ares[i] = a0[i] - P->X.row(static_cast<Eigen::Index>(i)).dot(beta);
  double lmean = 0.0;
  for (double x : l0) lmean += x;
  lmean /= static_cast<double>(N);
  if (L.slope) I.theta(L.px) = c_fill;
  I.theta(L.ptheta - 1) = lmean;

  const double cap = 0.9 * priors.sd_upper;
  auto tau_init = [&](double v) { return std::log(std::clamp(v, 1e-3, cap)); };
  I.cov_u = Eigen::VectorXd::Zero(L.n_cov());
  I.cov_u(0) = tau_init(sd_of(ares) > 0 ? sd_of(ares) : sd_fill);
  if (L.slope) I.cov_u(1) = tau_init(std::max(sd_of(c0), 1e-2));
  I.cov_u(L.n_tau - 1) = tau_init(std::max(sd_of(l0), 0.05));

  if (joint) {
    P->T.resize(N);
    P->event.resize(N);
    P->W.resize(static_cast<Eigen::Index>(N), L.n_gamma);
    std::vector<double> event_times;
    double tmax = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      const Subject& s = *kept[i];
      P->T[i] = s.followup_time;
      P->event[i] = s.event ? 1 : 0;
      if (s.event) event_times.push_back(s.followup_time);
      tmax = std::max(tmax, s.followup_time);
      for (std::size_t k = 0; k < wcols.size(); ++k)
        P->W(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = s.covariates[wcols[k]];
    }
    if (event_times.empty()) throw InvalidInput("the joint model needs at least one event");
    if (!P->W.allFinite()) throw InvalidInput("survival covariates contain non-finite values");
    P->cut = quantile_cutpoints(event_times, L.K, tmax);
    PiecewiseHazard ph{P->cut, std::vector<double>(static_cast<std::size_t>(L.K), 1.0)};
    P->interval.resize(N);
    P->events_in.assign(static_cast<std::size_t>(L.K), 0);
    for (std::size_t i = 0; i < N; ++i) {
      P->interval[i] = static_cast<int>(ph.interval_of(P->T[i]));
      if (P->event[i]) ++P->events_in[static_cast<std::size_t>(P->interval[i])];
    }
    P->W_mean = L.n_gamma ? Eigen::VectorXd(P->W.colwise().mean().transpose()) : Eigen::VectorXd();
    if (L.n_gamma) P->W.rowwise() -= P->W_mean.transpose();

    std::vector<double> level0(N);
    for (std::size_t i = 0; i < N; ++i)
      level0[i] = a0[i] - (P->X.row(static_cast<Eigen::Index>(i)).dot(beta) - beta(0));
    for (std::size_t i = 0; i < N; ++i) {
      P->level_center += level0[i];
      P->sd_center += s0[i];
      P->slope_center += c0[i];
    }
    P->level_center /= static_cast<double>(N);
    P->sd_center /= static_cast<double>(N);
    P->slope_center = L.slope ? P->slope_center / static_cast<double>(N) : 0.0;

    I.assoc = Eigen::VectorXd::Zero(L.n_assoc());
    if (L.survival_active) {
      // two-stage Cox fit on the naive values as a starting point
      Eigen::MatrixXd Z(static_cast<Eigen::Index>(N), L.n_assoc());
      SurvivalDataset sd;
      for (std::size_t i = 0; i < N; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        Z(ii, 0) = level0[i];
        Z(ii, 1) = s0[i];
        if (L.slope) Z(ii, 2) = c0[i];
        for (int k = 0; k < L.n_gamma; ++k) Z(ii, L.n_alpha + k) = P->W(ii, k);
        sd.rows.push_back({P->ids[i], P->T[i], P->event[i] != 0});
      }
      try {
        const CoxFit fit = cox_fit(Z, sd);
        for (int k = 0; k < L.n_assoc(); ++k) I.assoc(k) = fit.coefficients[static_cast<std::size_t>(k)];
      } catch (const std::exception&) {
        I.assoc.setZero();
      }
    }
    // event/exposure ratios given the starting linear predictor
    std::vector<double> expo(static_cast<std::size_t>(L.K), 0.0);
    for (std::size_t i = 0; i < N; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      double lp = I.assoc(0) * (level0[i] - P->level_center) + I.assoc(1) * (s0[i] - P->sd_center);
      if (L.slope) lp += I.assoc(2) * (c0[i] - P->slope_center);
      for (int k = 0; k < L.n_gamma; ++k) lp += I.assoc(L.n_alpha + k) * P->W(ii, k);
      const double w = std::exp(lp);
      const int ki = P->interval[i];
      for (int k = 0; k < ki; ++k) expo[static_cast<std::size_t>(k)] += w * (P->cut[k + 1] - P->cut[k]);
      expo[static_cast<std::size_t>(ki)] += w * (P->T[i] - P->cut[ki]);
    }
    I.eta.resize(L.K);
    for (int k = 0; k < L.K; ++k) {
      const double dk = std::max(0.5, static_cast<double>(P->events_in[static_cast<std::size_t>(k)]));
      I.eta(k) = std::log(dk / std::max(expo[static_cast<std::size_t>(k)], 1e-300));
    }
  }
  return P;
}

LocationScaleChain::LocationScaleChain(std::shared_ptr<const Prepared> data, int chain, CounterRng& rng)
    : data_(std::move(data)), L_(data_->layout), d_(L_.d), N_(data_->size()) {
  const Prepared& P = *data_;
  e_ = P.init.e;
  theta_ = P.init.theta;
  cov_u_ = P.init.cov_u;
  if (L_.joint) {
    assoc_ = P.init.assoc;
    eta_ = P.init.eta;
  }
  if (chain > 0) {
    // overdispersed starts for the population-level parameters
    for (Eigen::Index j = 0; j < theta_.size(); ++j) theta_(j) += 0.05 * (std::abs(theta_(j)) + 0.1) * rng.normal();
    for (Eigen::Index j = 0; j < L_.n_tau; ++j)
      cov_u_(j) = std::min(cov_u_(j) + 0.2 * rng.normal(), std::log(0.95 * P.priors.sd_upper));
    for (Eigen::Index j = L_.n_tau; j < cov_u_.size(); ++j) cov_u_(j) += 0.2 * rng.normal();
    if (L_.survival_active) {
      for (Eigen::Index j = 0; j < assoc_.size(); ++j) assoc_(j) += 0.2 * (std::abs(assoc_(j)) + 0.01) * rng.normal();
      for (Eigen::Index j = 0; j < eta_.size(); ++j) eta_(j) += 0.1 * rng.normal();
    }
  }
  // free covariance blocks: correlated coordinates share a block
  for (int r = 0; r < d_; ++r) {
    bool placed = false;
    for (auto& g : cov_groups_)
      for (int m : g)
        if (!placed && std::any_of(L_.corr_pairs.begin(), L_.corr_pairs.end(), [&](const auto& pr) {
              return (pr.first == m && pr.second == r) || (pr.first == r && pr.second == m);
            })) {
          g.push_back(r);
          placed = true;
        }
    if (!placed) cov_groups_.push_back({r});
  }
  for (const auto& g : cov_groups_) {
    if (g.size() < 2 || std::find(g.begin(), g.end(), d_ - 1) == g.end()) continue;
    const std::size_t pairs = g.size() * (g.size() - 1) / 2;
    std::size_t free_pairs = 0;
    for (const auto& pr : L_.corr_pairs)
      free_pairs += std::count(g.begin(), g.end(), pr.first) && std::count(g.begin(), g.end(), pr.second);
    if (free_pairs != pairs) continue;
    for (int r : g)
      if (r != d_ - 1) shear_coords_.push_back(r);
    shear_power_ = static_cast<int>(g.size());
  }
  xb_.resize(N_);
  xrest_.resize(N_);
  refresh_theta_cache();
  if (!sigma_from(std::span<const double>(cov_u_.data(), static_cast<std::size_t>(cov_u_.size())), sigma_))
    throw NumericalError("initial effects covariance is not positive definite");
  refresh_covariance();
  if (L_.joint) {
    wg_.assign(N_, 0.0);
    lp_.assign(N_, 0.0);
    w_.assign(N_, 1.0);
    H0_.assign(N_, 0.0);
    set_association(std::span<const double>(assoc_.data(), static_cast<std::size_t>(assoc_.size())));
  }
  sum_level_.assign(N_, 0.0);
  sum_sd_.assign(N_, 0.0);
  sum_slope_.assign(N_, 0.0);
}

double LocationScaleChain::mean_of(std::size_t i, int r) const {
  if (r == 0) return xb_[i];
  if (r == d_ - 1) return theta_(L_.ptheta - 1);
  return theta_(L_.px);
}

double LocationScaleChain::rss(std::size_t i, double av, double cv) const {
  const Prepared& P = *data_;
  double r = P.syy[i] - 2.0 * av * P.sy[i] + av * av * P.n[i];
  if (L_.slope) r += -2.0 * cv * P.sty[i] + 2.0 * av * cv * P.st[i] + cv * cv * P.stt[i];
  return std::max(r, 0.0);
}

double LocationScaleChain::lp_at(std::size_t i, double av, double cv, double lv) const {
  const Prepared& P = *data_;
  double lp = assoc_(0) * (av - xrest_[i] - P.level_center) + assoc_(1) * (std::exp(lv) - P.sd_center) + wg_[i];
  if (L_.slope) lp += assoc_(2) * (cv - P.slope_center);
  return lp;
}

double LocationScaleChain::survival_term(std::size_t i, double lp) const {
  return (data_->event[i] ? lp : 0.0) - std::exp(lp) * H0_[i];
}

double LocationScaleChain::height_shift() const {
  const Prepared& P = *data_;
  double s = assoc_(0) * P.level_center + assoc_(1) * P.sd_center;
  if (L_.slope) s += assoc_(2) * P.slope_center;
  for (int k = 0; k < L_.n_gamma; ++k) s += assoc_(L_.n_alpha + k) * P.W_mean(k);
  return s;
}

bool LocationScaleChain::sigma_from(std::span<const double> u, Eigen::MatrixXd& sigma) const {
  sigma = Eigen::MatrixXd::Identity(d_, d_);
  for (std::size_t k = 0; k < L_.corr_pairs.size(); ++k) {
    const double rho = std::tanh(u[static_cast<std::size_t>(L_.n_tau) + k]);
    if (!(std::abs(rho) < 1.0)) return false;
    const auto [r, s] = L_.corr_pairs[k];
    sigma(r, s) = sigma(s, r) = rho;
  }
  for (int r = 0; r < d_; ++r) {
    const double tr = std::exp(u[static_cast<std::size_t>(r)]);
    if (!std::isfinite(tr) || !(tr > 0.0)) return false;
    sigma.row(r) *= tr;
    sigma.col(r) *= tr;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  return llt.info() == Eigen::Success;
}

void LocationScaleChain::refresh_covariance() {
  Eigen::LLT<Eigen::MatrixXd> llt(sigma_);
  q_ = llt.solve(Eigen::MatrixXd::Identity(d_, d_));
  logdet_ = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const int dl = L_.dl;
  const int li = d_ - 1;
  const double sll = sigma_(li, li);
  // location | l
  for (int r = 0; r < dl; ++r) kl_[r] = sigma_(r, li) / sll;
  Eigen::MatrixXd vc(dl, dl);
  for (int r = 0; r < dl; ++r)
    for (int s = 0; s < dl; ++s) vc(r, s) = sigma_(r, s) - sigma_(r, li) * sigma_(s, li) / sll;
  const Eigen::MatrixXd vci = vc.inverse();
  for (int r = 0; r < dl; ++r)
    for (int s = 0; s < dl; ++s) vci_[r * 2 + s] = vci(r, s);
  // l | location
  const Eigen::MatrixXd sLL = sigma_.topLeftCorner(dl, dl);
  const Eigen::VectorXd sLl = sigma_.block(0, li, dl, 1);
  const Eigen::VectorXd g = sLL.ldlt().solve(sLl);
  for (int r = 0; r < dl; ++r) g_[r] = g(r);
  vl_ = sll - sLl.dot(g);
}

void LocationScaleChain::refresh_theta_cache() {
  const Eigen::VectorXd beta = theta_.head(L_.px);
  for (std::size_t i = 0; i < N_; ++i) {
    xb_[i] = data_->X.row(static_cast<Eigen::Index>(i)).dot(beta);
    xrest_[i] = xb_[i] - beta(0);
  }
}

void LocationScaleChain::refresh_hazard_cache() {
  const Prepared& P = *data_;
  const int K = L_.K;
  std::vector<double> cum(static_cast<std::size_t>(K) + 1, 0.0);
  for (int k = 0; k < K; ++k)
    cum[static_cast<std::size_t>(k) + 1] = cum[static_cast<std::size_t>(k)] + std::exp(eta_(k)) * (P.cut[k + 1] - P.cut[k]);
  for (std::size_t i = 0; i < N_; ++i) {
    const int k = P.interval[i];
    H0_[i] = cum[static_cast<std::size_t>(k)] + std::exp(eta_(k)) * (P.T[i] - P.cut[k]);
  }
}

void LocationScaleChain::compute_scatter() {
  scatter_ = Eigen::MatrixXd::Zero(d_, d_);
  double r[3];
  for (std::size_t i = 0; i < N_; ++i) {
    for (int k = 0; k < d_; ++k) r[k] = e_[i * d_ + k] - mean_of(i, k);
    for (int p = 0; p < d_; ++p)
      for (int q = 0; q <= p; ++q) scatter_(p, q) += r[p] * r[q];
  }
  for (int p = 0; p < d_; ++p)
    for (int q = p + 1; q < d_; ++q) scatter_(p, q) = scatter_(q, p);
}

std::size_t LocationScaleChain::sample_locations(CounterRng& rng) {
  const Prepared& P = *data_;
  const double mu_l = theta_(L_.ptheta - 1);
  std::size_t accepted = 0;
  for (std::size_t i = 0; i < N_; ++i) {
    const double lv = l(i);
    const double prec_y = std::exp(-2.0 * lv);
    const double dev = lv - mu_l;
    double na, nc = 0.0;
    if (!L_.slope) {
      const double mc = xb_[i] + kl_[0] * dev;
      const double prec = vci_[0] + P.n[i] * prec_y;
      const double mean = (vci_[0] * mc + P.sy[i] * prec_y) / prec;
      na = mean + rng.normal() / std::sqrt(prec);
    } else {
      const double m0 = xb_[i] + kl_[0] * dev;
      const double m1 = theta_(L_.px) + kl_[1] * dev;
      const double p00 = vci_[0] + P.n[i] * prec_y;
      const double p01 = vci_[1] + P.st[i] * prec_y;
      const double p11 = vci_[3] + P.stt[i] * prec_y;
      const double r0 = vci_[0] * m0 + vci_[1] * m1 + P.sy[i] * prec_y;
      const double r1 = vci_[2] * m0 + vci_[3] * m1 + P.sty[i] * prec_y;
      const double det = p00 * p11 - p01 * p01;
      const double mean0 = (p11 * r0 - p01 * r1) / det;
      const double mean1 = (p00 * r1 - p01 * r0) / det;
      // P = L L', draw mean + L^{-T} z
      const double l11 = std::sqrt(p00);
      const double l21 = p01 / l11;
      const double l22 = std::sqrt(p11 - l21 * l21);
      const double z0 = rng.normal(), z1 = rng.normal();
      const double x1 = z1 / l22;
      const double x0 = (z0 - l21 * x1) / l11;
      na = mean0 + x0;
      nc = mean1 + x1;
    }
    bool accept = true;
    double new_lp = 0.0;
    if (L_.survival_active) {
      new_lp = lp_at(i, na, nc, lv);
      const double log_ratio = survival_term(i, new_lp) - survival_term(i, lp_[i]);
      accept = log_ratio >= 0.0 || rng.uniform() < std::exp(log_ratio);
    }
    if (accept) {
      e_[i * d_] = na;
      if (L_.slope) e_[i * d_ + 1] = nc;
      if (L_.survival_active) {
        lp_[i] = new_lp;
        w_[i] = std::exp(new_lp);
      }
      ++accepted;
    }
  }
  return accepted;
}

double LocationScaleChain::log_sigma_density(std::size_t i, double lv) const {
  const Prepared& P = *data_;
  double cm = theta_(L_.ptheta - 1) + g_[0] * (a(i) - xb_[i]);
  if (L_.slope) cm += g_[1] * (c(i) - theta_(L_.px));
  const double cv = L_.slope ? c(i) : 0.0;
  double v = -P.n[i] * lv - 0.5 * rss(i, a(i), cv) * std::exp(-2.0 * lv) - 0.5 * (lv - cm) * (lv - cm) / vl_;
  if (L_.survival_active) v += survival_term(i, lp_at(i, a(i), cv, lv));
  return v;
}

void LocationScaleChain::set_log_sigma(std::size_t i, double lv) {
  e_[i * d_ + d_ - 1] = lv;
  if (L_.survival_active) {
    lp_[i] = lp_at(i, a(i), L_.slope ? c(i) : 0.0, lv);
    w_[i] = std::exp(lp_[i]);
  }
}

std::size_t LocationScaleChain::sample_theta(CounterRng& rng) {
  const Prepared& P = *data_;
  const int pt = L_.ptheta;
  Eigen::MatrixXd prec = Eigen::MatrixXd::Identity(pt, pt) / (P.priors.location_sd * P.priors.location_sd);
  for (int r = 0; r < d_; ++r)
    for (int s = 0; s < d_; ++s) prec += q_(r, s) * P.G[static_cast<std::size_t>(r * d_ + s)];
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(pt);
  double qe[3];
  for (std::size_t i = 0; i < N_; ++i) {
    for (int r = 0; r < d_; ++r) {
      qe[r] = 0.0;
      for (int s = 0; s < d_; ++s) qe[r] += q_(r, s) * e_[i * d_ + s];
    }
    if (L_.px == 1)
      rhs(0) += qe[0];
    else
      rhs.head(L_.px) += qe[0] * P.X.row(static_cast<Eigen::Index>(i)).transpose();
    if (L_.slope) rhs(L_.px) += qe[1];
    rhs(pt - 1) += qe[d_ - 1];
  }
  Eigen::LLT<Eigen::MatrixXd> llt(prec);
  if (llt.info() != Eigen::Success) throw NumericalError("fixed-effect precision is not positive definite");
  Eigen::VectorXd z(pt);
  for (int j = 0; j < pt; ++j) z(j) = rng.normal();
  const Eigen::VectorXd proposal = llt.solve(rhs) + llt.matrixU().solve(z);

  if (L_.survival_active && L_.px > 1 && assoc_(0) != 0.0) {
    // covariate effects shift level_i = a_i - X_i beta_rest, which enters the hazard
    const Eigen::VectorXd rest = proposal.segment(1, L_.px - 1);
    double log_ratio = 0.0;
    std::vector<double> new_lp(N_);
    for (std::size_t i = 0; i < N_; ++i) {
      const double xr = P.X.row(static_cast<Eigen::Index>(i)).tail(L_.px - 1).dot(rest);
      new_lp[i] = lp_[i] - assoc_(0) * (xr - xrest_[i]);
      log_ratio += survival_term(i, new_lp[i]) - survival_term(i, lp_[i]);
    }
    if (!(log_ratio >= 0.0 || rng.uniform() < std::exp(log_ratio))) return 0;
    theta_ = proposal;
    refresh_theta_cache();
    for (std::size_t i = 0; i < N_; ++i) {
      lp_[i] = new_lp[i];
      w_[i] = std::exp(new_lp[i]);
    }
    return 1;
  }
  theta_ = proposal;
  refresh_theta_cache();
  return 1;
}

namespace {

/// Sum of log tau_j over the block plus log(tau_j tau_k) over its free pairs:
/// the log Jacobian of (tau, rho) -> covariance entries, up to a constant.
double log_jacobian(const Eigen::MatrixXd& sigma, bool full) {
  const Eigen::Index p = sigma.rows();
  double out = 0.0;
  for (Eigen::Index j = 0; j < p; ++j) out += 0.5 * std::log(sigma(j, j));
  if (full) out += static_cast<double>(p - 1) * 0.5 * sigma.diagonal().array().log().sum();
  return out;
}

}  // namespace

std::size_t LocationScaleChain::sample_covariance(CounterRng& rng) {
  compute_scatter();
  const double upper2 = data_->priors.sd_upper * data_->priors.sd_upper;
  std::size_t accepted = 0;
  for (const auto& group : cov_groups_) {
    const auto p = static_cast<Eigen::Index>(group.size());
    Eigen::MatrixXd s(p, p), cur(p, p);
    for (Eigen::Index r = 0; r < p; ++r)
      for (Eigen::Index c = 0; c < p; ++c) {
        s(r, c) = scatter_(group[static_cast<std::size_t>(r)], group[static_cast<std::size_t>(c)]);
        cur(r, c) = sigma_(group[static_cast<std::size_t>(r)], group[static_cast<std::size_t>(c)]);
      }
    // Sigma^{-1} ~ Wishart(nu, S^{-1}) by the Bartlett decomposition; nu makes
    // the inverse-Wishart density match the Gaussian likelihood of the effects
    const double nu = static_cast<double>(N_) - static_cast<double>(p) - 1.0;
    Eigen::LLT<Eigen::MatrixXd> llt_s(s);
    if (llt_s.info() != Eigen::Success || !(nu > static_cast<double>(p) - 1.0)) continue;
    const Eigen::MatrixXd lv = Eigen::LLT<Eigen::MatrixXd>(llt_s.solve(Eigen::MatrixXd::Identity(p, p))).matrixL();
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index r = 0; r < p; ++r) {
      A(r, r) = std::sqrt(rng.gamma(0.5 * (nu - static_cast<double>(r)), 0.5));
      for (Eigen::Index c = 0; c < r; ++c) A(r, c) = rng.normal();
    }
    const Eigen::MatrixXd LA = lv * A;
    const Eigen::MatrixXd prop = (LA * LA.transpose()).inverse();
    if (!prop.allFinite() || (prop.diagonal().array() >= upper2).any()) continue;
    const bool full = p > 1;
    const double log_ratio = log_jacobian(cur, full) - log_jacobian(prop, full);
    if (!(log_ratio >= 0.0 || rng.uniform() < std::exp(log_ratio))) continue;
    for (Eigen::Index r = 0; r < p; ++r)
      for (Eigen::Index c = 0; c < p; ++c)
        sigma_(group[static_cast<std::size_t>(r)], group[static_cast<std::size_t>(c)]) = prop(r, c);
    ++accepted;
  }
  sync_cov_u();
  refresh_covariance();
  return accepted;
}

// keeps the (log tau, atanh rho) representation in step with sigma_
void LocationScaleChain::sync_cov_u() {
  for (int r = 0; r < d_; ++r) cov_u_(r) = 0.5 * std::log(sigma_(r, r));
  for (std::size_t k = 0; k < L_.corr_pairs.size(); ++k) {
    const auto [r, c] = L_.corr_pairs[k];
    cov_u_(L_.n_tau + static_cast<Eigen::Index>(k)) = std::atanh(sigma_(r, c) / std::sqrt(sigma_(r, r) * sigma_(c, c)));
  }
}

// Joint move of (mu_sigma, log tau_sigma) carrying every l_i along:
//   l_i' = mu' + s (l_i - mu),  s = tau_sigma' / tau_sigma.
// Standardised residuals are unchanged, so the effects density ratio s^-N
// cancels the Jacobian s^N; what remains is the data term, the mu_sigma prior
// and the log-scale Jacobian of tau_sigma. Without it the centred l_i hold
// mu_sigma and tau_sigma in place when individuals have few measurements.
double LocationScaleChain::sigma_process_density(std::span<const double> y) const {
  const Prepared& P = *data_;
  if (!(y[1] < std::log(P.priors.sd_upper))) return kNegInf;
  const double mu = theta_(L_.ptheta - 1);
  const double s = std::exp(y[1] - cov_u_(d_ - 1));
  const double s2 = P.priors.location_sd * P.priors.location_sd;
  double out = -0.5 * y[0] * y[0] / s2 + y[1];
  for (std::size_t i = 0; i < N_; ++i) {
    const double lv = y[0] + s * (l(i) - mu);
    const double cv = L_.slope ? c(i) : 0.0;
    out += -P.n[i] * lv - 0.5 * rss(i, a(i), cv) * std::exp(-2.0 * lv);
    if (L_.survival_active) out += survival_term(i, lp_at(i, a(i), cv, lv));
  }
  return out;
}

void LocationScaleChain::set_sigma_process(std::span<const double> y) {
  const double mu = theta_(L_.ptheta - 1);
  const double s = std::exp(y[1] - cov_u_(d_ - 1));
  for (std::size_t i = 0; i < N_; ++i) set_log_sigma(i, y[0] + s * (l(i) - mu));
  theta_(L_.ptheta - 1) = y[0];
  sigma_.row(d_ - 1) *= s;
  sigma_.col(d_ - 1) *= s;
  cov_u_(d_ - 1) = y[1];
  refresh_covariance();
}

// Shear l_i' = l_i + sum_k kappa_k (location residual k) with Sigma' = S Sigma S^T.
// The map has unit Jacobian in (l, covariance entries); the prior on (tau, rho)
// contributes tau_sigma^-p in those coordinates, p the size of l's block.
double LocationScaleChain::shear_density(std::span<const double> k) const {
  const Prepared& P = *data_;
  const int li = d_ - 1;
  double var_l = sigma_(li, li);
  for (std::size_t m = 0; m < shear_coords_.size(); ++m) {
    const int r = shear_coords_[m];
    var_l += 2.0 * k[m] * sigma_(li, r);
    for (std::size_t q = 0; q < shear_coords_.size(); ++q) var_l += k[m] * k[q] * sigma_(r, shear_coords_[q]);
  }
  if (!(var_l < P.priors.sd_upper * P.priors.sd_upper)) return kNegInf;
  double out = -0.5 * shear_power_ * std::log(var_l);
  for (std::size_t i = 0; i < N_; ++i) {
    double lv = l(i);
    for (std::size_t m = 0; m < shear_coords_.size(); ++m) {
      const int r = shear_coords_[m];
      lv += k[m] * (e_[i * d_ + r] - mean_of(i, r));
    }
    const double cv = L_.slope ? c(i) : 0.0;
    out += -P.n[i] * lv - 0.5 * rss(i, a(i), cv) * std::exp(-2.0 * lv);
    if (L_.survival_active) out += survival_term(i, lp_at(i, a(i), cv, lv));
  }
  return out;
}

void LocationScaleChain::set_shear(std::span<const double> k) {
  const int li = d_ - 1;
  for (std::size_t i = 0; i < N_; ++i) {
    double lv = l(i);
    for (std::size_t m = 0; m < shear_coords_.size(); ++m) {
      const int r = shear_coords_[m];
      lv += k[m] * (e_[i * d_ + r] - mean_of(i, r));
    }
    set_log_sigma(i, lv);
  }
  Eigen::MatrixXd S = Eigen::MatrixXd::Identity(d_, d_);
  for (std::size_t m = 0; m < shear_coords_.size(); ++m) S(li, shear_coords_[m]) = k[m];
  sigma_ = S * sigma_ * S.transpose();
  sync_cov_u();
  refresh_covariance();
}

double LocationScaleChain::association_density(std::span<const double> v) const {
  const Prepared& P = *data_;
  const double s2 = P.priors.location_sd * P.priors.location_sd;
  double out = 0.0;
  for (double x : v) out -= 0.5 * x * x / s2;
  double shift = v[0] * P.level_center + v[1] * P.sd_center;
  if (L_.slope) shift += v[2] * P.slope_center;
  for (int k = 0; k < L_.n_gamma; ++k) shift += v[static_cast<std::size_t>(L_.n_alpha + k)] * P.W_mean(k);
  for (int k = 0; k < L_.K; ++k) {
    const double raw = eta_(k) - shift;
    out -= 0.5 * raw * raw / s2;
  }
  for (std::size_t i = 0; i < N_; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    double lp = v[0] * (a(i) - xrest_[i] - P.level_center) + v[1] * (std::exp(l(i)) - P.sd_center);
    if (L_.slope) lp += v[2] * (c(i) - P.slope_center);
    for (int k = 0; k < L_.n_gamma; ++k) lp += v[static_cast<std::size_t>(L_.n_alpha + k)] * P.W(ii, k);
    out += survival_term(i, lp);
  }
  return out;
}

void LocationScaleChain::set_association(std::span<const double> v) {
  const Prepared& P = *data_;
  for (std::size_t k = 0; k < v.size(); ++k) assoc_(static_cast<Eigen::Index>(k)) = v[k];
  for (std::size_t i = 0; i < N_; ++i) {
    double s = 0.0;
    for (int k = 0; k < L_.n_gamma; ++k) s += assoc_(L_.n_alpha + k) * P.W(static_cast<Eigen::Index>(i), k);
    wg_[i] = s;
    lp_[i] = lp_at(i, a(i), L_.slope ? c(i) : 0.0, l(i));
    w_[i] = std::exp(lp_[i]);
  }
  refresh_hazard_cache();
}

std::size_t LocationScaleChain::sample_heights(CounterRng& rng) {
  const Prepared& P = *data_;
  const int K = L_.K;
  std::vector<double> at(static_cast<std::size_t>(K), 0.0), partial(static_cast<std::size_t>(K), 0.0);
  for (std::size_t i = 0; i < N_; ++i) {
    const auto k = static_cast<std::size_t>(P.interval[i]);
    at[k] += w_[i];
    partial[k] += w_[i] * (P.T[i] - P.cut[k]);
  }
  const double s2 = P.priors.location_sd * P.priors.location_sd;
  const double shift = height_shift();
  std::size_t accepted = 0;
  double beyond = 0.0;  // sum of w_i over individuals past interval k
  for (int k = K - 1; k >= 0; --k) {
    const auto ku = static_cast<std::size_t>(k);
    const double exposure = beyond * (P.cut[ku + 1] - P.cut[ku]) + partial[ku];
    beyond += at[ku];
    const double dk = static_cast<double>(P.events_in[ku]);
    const double shape = std::max(dk, 1.0);
    // Gamma(shape, exposure) proposal; exact for the likelihood when d_k >= 1
    const double h_new = rng.gamma(shape, exposure);
    const double eta_new = std::log(h_new);
    if (!std::isfinite(eta_new)) continue;
    const double raw_old = eta_(k) - shift, raw_new = eta_new - shift;
    const double log_ratio = (dk - shape) * (eta_new - eta_(k)) - 0.5 * (raw_new * raw_new - raw_old * raw_old) / s2;
    if (log_ratio >= 0.0 || rng.uniform() < std::exp(log_ratio)) {
      eta_(k) = eta_new;
      ++accepted;
    }
  }
  refresh_hazard_cache();
  return accepted;
}

std::vector<BlockUpdater> LocationScaleChain::blocks() {
  std::vector<BlockUpdater> out;
  {
    BlockUpdater b;
    b.name = "locations";
    b.kind = BlockKind::ConjugateGibbs;
    b.dimension = static_cast<std::size_t>(L_.dl);
    b.units = N_;
    b.sample = [this](CounterRng& rng) { return sample_locations(rng); };
    out.push_back(std::move(b));
  }
  {
    BlockUpdater b;
    b.name = "log_sigma";
    b.kind = BlockKind::RandomWalkMetropolis;
    b.units = N_;
    b.proposal_scale = 0.3;
    b.get = [this](std::size_t i, std::span<double> x) { x[0] = l(i); };
    b.log_density = [this](std::size_t i, std::span<const double> x) { return log_sigma_density(i, x[0]); };
    b.set = [this](std::size_t i, std::span<const double> x) { set_log_sigma(i, x[0]); };
    out.push_back(std::move(b));
  }
  {
    BlockUpdater b;
    b.name = "fixed_effects";
    b.kind = BlockKind::ConjugateGibbs;
    b.dimension = static_cast<std::size_t>(L_.ptheta);
    b.sample = [this](CounterRng& rng) { return sample_theta(rng); };
    out.push_back(std::move(b));
  }
  {
    BlockUpdater b;
    b.name = "covariance";
    b.kind = BlockKind::ConjugateGibbs;
    b.dimension = static_cast<std::size_t>(L_.n_cov());
    b.units = cov_groups_.size();
    b.sample = [this](CounterRng& rng) { return sample_covariance(rng); };
    out.push_back(std::move(b));
  }
  {
    BlockUpdater b;
    b.name = "sigma_process";
    b.kind = BlockKind::RandomWalkMetropolis;
    b.dimension = 2;
    b.proposal_scale = 0.02;
    b.get = [this](std::size_t, std::span<double> x) {
      x[0] = theta_(L_.ptheta - 1);
      x[1] = cov_u_(d_ - 1);
    };
    b.log_density = [this](std::size_t, std::span<const double> x) { return sigma_process_density(x); };
    b.set = [this](std::size_t, std::span<const double> x) { set_sigma_process(x); };
    out.push_back(std::move(b));
  }
  if (!shear_coords_.empty()) {
    BlockUpdater b;
    b.name = "sigma_shear";
    b.kind = BlockKind::RandomWalkMetropolis;
    b.dimension = shear_coords_.size();
    b.proposal_scale = 1e-3;
    b.get = [](std::size_t, std::span<double> x) { std::fill(x.begin(), x.end(), 0.0); };
    b.log_density = [this](std::size_t, std::span<const double> x) { return shear_density(x); };
    b.set = [this](std::size_t, std::span<const double> x) { set_shear(x); };
    out.push_back(std::move(b));
  }
  if (L_.survival_active) {
    BlockUpdater b;
    b.name = "association";
    b.kind = BlockKind::RandomWalkMetropolis;
    b.dimension = static_cast<std::size_t>(L_.n_assoc());
    b.proposal_scale = 0.01;
    b.get = [this](std::size_t, std::span<double> x) {
      for (std::size_t k = 0; k < x.size(); ++k) x[k] = assoc_(static_cast<Eigen::Index>(k));
    };
    b.log_density = [this](std::size_t, std::span<const double> x) { return association_density(x); };
    b.set = [this](std::size_t, std::span<const double> x) { set_association(x); };
    out.push_back(std::move(b));

    BlockUpdater h;
    h.name = "baseline_hazard";
    h.kind = BlockKind::ConjugateGibbs;
    h.units = static_cast<std::size_t>(L_.K);
    h.sample = [this](CounterRng& rng) { return sample_heights(rng); };
    out.push_back(std::move(h));
  }
  return out;
}

double LocationScaleChain::longitudinal_loglik() const {
  const Prepared& P = *data_;
  double out = 0.0;
  for (std::size_t i = 0; i < N_; ++i) {
    const double lv = l(i);
    out += -0.5 * P.n[i] * kLog2Pi - P.n[i] * lv - 0.5 * rss(i, a(i), L_.slope ? c(i) : 0.0) * std::exp(-2.0 * lv);
  }
  return out;
}

double LocationScaleChain::survival_loglik() const {
  const Prepared& P = *data_;
  double out = 0.0;
  for (std::size_t i = 0; i < N_; ++i) {
    out += survival_term(i, lp_[i]);
    if (P.event[i]) out += eta_(P.interval[i]);
  }
  return out;
}

double LocationScaleChain::log_posterior() const {
  const Prepared& P = *data_;
  double out = longitudinal_loglik();
  // random effects
  double quad = 0.0;
  double r[3];
  for (std::size_t i = 0; i < N_; ++i) {
    for (int k = 0; k < d_; ++k) r[k] = e_[i * d_ + k] - mean_of(i, k);
    for (int p = 0; p < d_; ++p)
      for (int q = 0; q < d_; ++q) quad += r[p] * q_(p, q) * r[q];
  }
  out += -0.5 * static_cast<double>(N_) * (d_ * kLog2Pi + logdet_) - 0.5 * quad;
  // priors
  const double s2 = P.priors.location_sd * P.priors.location_sd;
  auto normal_prior = [&](double x) { return -0.5 * (std::log(2.0 * std::numbers::pi * s2) + x * x / s2); };
  for (Eigen::Index j = 0; j < theta_.size(); ++j) out += normal_prior(theta_(j));
  for (int k = 0; k < L_.n_tau; ++k) {
    if (std::exp(cov_u_(k)) >= P.priors.sd_upper) return kNegInf;
    out -= std::log(P.priors.sd_upper);
  }
  out -= static_cast<double>(L_.corr_pairs.size()) * std::log(2.0);
  if (L_.joint) {
    out += survival_loglik();
    for (Eigen::Index j = 0; j < assoc_.size(); ++j) out += normal_prior(assoc_(j));
    const double shift = height_shift();
    for (Eigen::Index k = 0; k < eta_.size(); ++k) out += normal_prior(eta_(k) - shift);
  }
  return out;
}

void LocationScaleChain::monitored(std::span<double> out) const {
  std::size_t j = 0;
  for (Eigen::Index k = 0; k < theta_.size(); ++k) out[j++] = theta_(k);
  for (int k = 0; k < L_.n_tau; ++k) out[j++] = std::exp(cov_u_(k));
  for (std::size_t k = 0; k < L_.corr_pairs.size(); ++k) out[j++] = std::tanh(cov_u_(L_.n_tau + static_cast<Eigen::Index>(k)));
  double dev = -2.0 * longitudinal_loglik();
  if (L_.joint) {
    for (Eigen::Index k = 0; k < assoc_.size(); ++k) out[j++] = assoc_(k);
    const double shift = height_shift();
    for (Eigen::Index k = 0; k < eta_.size(); ++k) out[j++] = std::exp(eta_(k) - shift);
    dev -= 2.0 * survival_loglik();
  }
  out[j++] = dev;
  if (data_->keep_individual) {
    for (std::size_t i = 0; i < N_; ++i) {
      out[j++] = a(i) - xb_[i];
      if (L_.slope) out[j++] = c(i) - theta_(L_.px);
      out[j++] = std::exp(l(i));
    }
  }
}

void LocationScaleChain::on_retained_draw() {
  for (std::size_t i = 0; i < N_; ++i) {
    sum_level_[i] += a(i) - xrest_[i];
    sum_sd_[i] += std::exp(l(i));
    if (L_.slope) sum_slope_[i] += c(i);
  }
  ++retained_;
}

PopulationParams LocationScaleChain::population() const {
  PopulationParams p;
  for (Eigen::Index k = 0; k < L_.ptheta - 1; ++k) p.beta.push_back(theta_(k));
  RandomEffectsLaw& law = p.law;
  law.structure = L_.slope ? EffectsStructure::InterceptSlope : EffectsStructure::InterceptOnly;
  law.correlated_with_sd = L_.correlated;
  law.mu_sigma = theta_(L_.ptheta - 1);
  law.tau0 = std::exp(cov_u_(0));
  if (L_.slope) law.tau1 = std::exp(cov_u_(1));
  law.tau_sigma = std::exp(cov_u_(L_.n_tau - 1));
  for (std::size_t k = 0; k < L_.corr_names.size(); ++k) {
    const double rho = std::tanh(cov_u_(L_.n_tau + static_cast<Eigen::Index>(k)));
    const auto& name = L_.corr_names[k];
    if (name == "rho") law.rho = rho;
    if (name == "rho01") law.rho01 = rho;
    if (name == "rho0sigma") law.rho0sigma = rho;
    if (name == "rho1sigma") law.rho1sigma = rho;
  }
  if (L_.slope && !law.rho01) law.rho01 = 0.0;
  if (L_.joint) {
    for (int k = 0; k < L_.n_alpha; ++k) p.alpha.push_back(assoc_(k));
    for (int k = 0; k < L_.n_gamma; ++k) p.gamma.push_back(assoc_(L_.n_alpha + k));
    p.baseline_hazard.cutpoints = data_->cut;
    const double shift = height_shift();
    for (Eigen::Index k = 0; k < eta_.size(); ++k) p.baseline_hazard.heights.push_back(std::exp(eta_(k) - shift));
  }
  return p;
}

std::vector<IndividualEffects> LocationScaleChain::effects() const {
  std::vector<IndividualEffects> out(N_);
  for (std::size_t i = 0; i < N_; ++i) {
    out[i].id = data_->ids[i];
    out[i].b0 = a(i) - xb_[i];
    if (L_.slope) out[i].b1 = c(i) - theta_(L_.px);
    out[i].sigma = std::exp(l(i));
  }
  return out;
}

SamplerResult run_sampler(std::shared_ptr<const Prepared> data, const McmcSettings& settings, double rhat_threshold,
                          const std::vector<std::string>& key_parameters) {
  McmcTarget target;
  target.parameter_names = data->parameter_names;
  target.make_chain = [data](int chain, CounterRng& rng) -> std::unique_ptr<ChainModel> {
    return std::make_unique<LocationScaleChain>(data, chain, rng);
  };
  SamplerResult res;
  res.run = run_chains(target, settings);
  res.data = data;
  res.warnings = res.run.warnings;

  const std::size_t N = data->size();
  const bool slope = data->layout.slope;
  std::vector<double> lvl(N, 0.0), sd(N, 0.0), sl(N, 0.0);
  long total = 0;
  for (const auto& m : res.run.chains) {
    const auto& ch = static_cast<const LocationScaleChain&>(*m);
    for (std::size_t i = 0; i < N; ++i) {
      lvl[i] += ch.sum_level()[i];
      sd[i] += ch.sum_sd()[i];
      sl[i] += ch.sum_slope()[i];
    }
    total += ch.retained();
  }
  for (std::size_t i = 0; i < N; ++i) {
    Stage1Row row{data->ids[i], lvl[i] / total, sd[i] / total, std::nullopt};
    if (slope) row.slope = sl[i] / total;
    res.means.rows.push_back(row);
  }

  std::vector<std::string> over;
  for (const auto& name : data->parameter_names) {
    if (name == "deviance" || name.find('[') != std::string::npos) continue;
    double r = std::numeric_limits<double>::quiet_NaN();
    if (settings.n_chains >= 2 && settings.n_samples >= 50) {
      try {
        r = gelman_rubin(res.run.samples, name);
      } catch (const NumericalError&) {
      }
    }
    res.rhat[name] = r;
    const bool key = key_parameters.empty() ||
                     std::find(key_parameters.begin(), key_parameters.end(), name) != key_parameters.end();
    if (key && std::isfinite(r) && r > rhat_threshold) over.push_back(name);
  }
  if (!over.empty()) {
    std::ostringstream msg;
    msg << "chains have not converged (R-hat > " << rhat_threshold << ") for:";
    for (const auto& n : over) msg << ' ' << n << " (" << res.rhat[n] << ")";
    res.warnings.push_back(msg.str());
  }
  return res;
}

}  // namespace varsurv::detail
