#pragma once

// Metropolis-within-Gibbs sampler shared by fit_lmm and fit_joint.
//
// The sampler works on hierarchically centred effects
//   e_i = (a_i, [c_i], l_i),  a_i = X_i beta + b0_i,  c_i = beta_t + b1_i,  l_i = log sigma_i,
// which are jointly normal around M_i theta with theta = (beta, [beta_t], mu_sigma).
// Every per-individual update is O(1) through the sufficient statistics of the
// individual's measurements. The joint model adds a piecewise-constant hazard
// whose linear predictor is evaluated with fixed centring constants; the
// reported baseline heights are transformed back to the uncentred scale.

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "varsurv/joint.hpp"
#include "varsurv/lmm.hpp"
#include "varsurv/mcmc.hpp"

namespace varsurv::detail {

struct Layout {
  bool slope = false;
  bool correlated = false;
  int d = 2;       // effect dimension
  int dl = 1;      // location effects (a[, c])
  int px = 1;      // longitudinal fixed-effect columns, intercept first
  int ptheta = 2;  // px + slope + 1
  int n_tau = 2;
  std::vector<std::pair<int, int>> corr_pairs;
  std::vector<std::string> corr_names;
  bool joint = false;
  bool survival_active = false;
  int n_alpha = 0;
  int n_gamma = 0;
  int K = 0;

  int n_cov() const { return n_tau + static_cast<int>(corr_pairs.size()); }
  int n_assoc() const { return n_alpha + n_gamma; }
};

struct InitialState {
  std::vector<double> e;  // N x d, row-major
  Eigen::VectorXd theta;
  Eigen::VectorXd cov_u;  // log taus, then Fisher-z correlations
  Eigen::VectorXd assoc;  // alphas then gammas
  Eigen::VectorXd eta;    // internal log heights
};

struct Prepared {
  Layout layout;
  PriorSpec priors;
  bool keep_individual = false;

  std::vector<IndividualId> ids;
  std::vector<int> n;
  std::vector<double> sy, syy, st, stt, sty;
  Eigen::MatrixXd X;  // N x px
  std::vector<Eigen::MatrixXd> G;  // d*d design cross-products

  // survival part
  std::vector<double> T;
  std::vector<char> event;
  std::vector<int> interval;
  Eigen::MatrixXd W;  // centred survival covariates, N x n_gamma
  Eigen::VectorXd W_mean;
  std::vector<double> cut;
  std::vector<int> events_in;
  double level_center = 0.0;
  double sd_center = 0.0;
  double slope_center = 0.0;

  std::vector<std::string> beta_names;
  std::vector<std::string> gamma_names;
  std::vector<std::string> parameter_names;
  std::vector<IndividualId> excluded;

  InitialState init;

  std::size_t size() const { return ids.size(); }
};

/// Monitored population-level parameter names in draw-column order.
std::vector<std::string> population_names(const LmmSpec& lmm, const JointSpec* joint);

/// Longitudinal, random-effect and prior terms of the log posterior by direct
/// summation over measurements.
LogPosteriorTerms longitudinal_terms(const PopulationParams& params, const std::vector<IndividualEffects>& effects,
                                     const Cohort& data, const LmmSpec& spec, const PriorSpec& priors,
                                     bool include_priors);

/// Builds the sampler input. For the longitudinal-only model individuals
/// without measurements are dropped (listed in `excluded`).
std::shared_ptr<const Prepared> prepare(const Cohort& data, const LmmSpec& lmm, const PriorSpec& priors,
                                        const FitOptions& options, const JointSpec* joint);

class LocationScaleChain final : public ChainModel {
 public:
  LocationScaleChain(std::shared_ptr<const Prepared> data, int chain, CounterRng& rng);

  std::vector<BlockUpdater> blocks() override;
  void monitored(std::span<double> out) const override;
  double log_posterior() const override;
  void on_retained_draw() override;

  /// Current state in the public parameterisation.
  PopulationParams population() const;
  std::vector<IndividualEffects> effects() const;

  const std::vector<double>& sum_level() const { return sum_level_; }
  const std::vector<double>& sum_sd() const { return sum_sd_; }
  const std::vector<double>& sum_slope() const { return sum_slope_; }
  long retained() const { return retained_; }

 private:
  double a(std::size_t i) const { return e_[i * d_]; }
  double c(std::size_t i) const { return e_[i * d_ + 1]; }
  double l(std::size_t i) const { return e_[i * d_ + d_ - 1]; }
  double mean_of(std::size_t i, int r) const;
  double rss(std::size_t i, double a, double c) const;
  double lp_at(std::size_t i, double a, double c, double l) const;
  double survival_term(std::size_t i, double lp) const;
  double height_shift() const;

  bool sigma_from(std::span<const double> u, Eigen::MatrixXd& sigma) const;
  void refresh_covariance();
  void refresh_theta_cache();
  void refresh_hazard_cache();
  void compute_scatter();

  std::size_t sample_locations(CounterRng& rng);
  double log_sigma_density(std::size_t i, double lval) const;
  void set_log_sigma(std::size_t i, double lval);
  std::size_t sample_theta(CounterRng& rng);
  std::size_t sample_covariance(CounterRng& rng);
  double sigma_process_density(std::span<const double> y) const;
  void set_sigma_process(std::span<const double> y);
  double shear_density(std::span<const double> k) const;
  void set_shear(std::span<const double> k);
  void sync_cov_u();
  double association_density(std::span<const double> v) const;
  void set_association(std::span<const double> v);
  std::size_t sample_heights(CounterRng& rng);
  double longitudinal_loglik() const;
  double survival_loglik() const;

  std::shared_ptr<const Prepared> data_;
  const Layout& L_;
  int d_;
  std::size_t N_;

  std::vector<double> e_;
  Eigen::VectorXd theta_;
  Eigen::VectorXd cov_u_;
  Eigen::MatrixXd sigma_, q_;
  double logdet_ = 0.0;
  Eigen::MatrixXd scatter_;
  std::vector<std::vector<int>> cov_groups_;
  std::vector<int> shear_coords_;  // location coordinates sharing a full block with l
  int shear_power_ = 0;
  std::vector<double> xb_, xrest_;

  // location | l and l | location conditionals
  double kl_[2] = {0, 0};
  double vci_[4] = {0, 0, 0, 0};
  double g_[2] = {0, 0};
  double vl_ = 1.0;

  // survival state
  Eigen::VectorXd assoc_;
  Eigen::VectorXd eta_;
  std::vector<double> wg_, lp_, w_, H0_;

  std::vector<double> sum_level_, sum_sd_, sum_slope_;
  long retained_ = 0;
};

/// Runs the chains and gathers the common outputs.
struct SamplerResult {
  McmcRun run;
  std::shared_ptr<const Prepared> data;
  Stage1Estimates means;
  std::map<std::string, double> rhat;
  std::vector<std::string> warnings;
};

SamplerResult run_sampler(std::shared_ptr<const Prepared> data, const McmcSettings& settings, double rhat_threshold,
                          const std::vector<std::string>& key_parameters);

}  // namespace varsurv::detail
