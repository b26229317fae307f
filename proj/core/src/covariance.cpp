#include "varsurv/covariance.hpp"

#include <sstream>

#include <Eigen/Eigenvalues>

namespace varsurv {

Eigen::MatrixXd assemble_effects_covariance(const RandomEffectsLaw& law) {
  const int d = law.dimension();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  const int is = d - 1;  // log sigma is always last
  cov(0, 0) = law.tau0 * law.tau0;
  cov(is, is) = law.tau_sigma * law.tau_sigma;
  if (law.structure == EffectsStructure::InterceptOnly) {
    if (law.correlated_with_sd) {
      cov(0, is) = cov(is, 0) = law.rho.value_or(0.0) * law.tau0 * law.tau_sigma;
    }
    return cov;
  }
  const double tau1 = law.tau1.value_or(1.0);
  cov(1, 1) = tau1 * tau1;
  cov(0, 1) = cov(1, 0) = law.rho01.value_or(0.0) * law.tau0 * tau1;
  if (law.correlated_with_sd) {
    cov(0, is) = cov(is, 0) = law.rho0sigma.value_or(0.0) * law.tau0 * law.tau_sigma;
    cov(1, is) = cov(is, 1) = law.rho1sigma.value_or(0.0) * tau1 * law.tau_sigma;
  }
  return cov;
}

bool is_psd(const Eigen::MatrixXd& m, double rel_tol) {
  if (m.rows() != m.cols()) return false;
  if (!m.allFinite()) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  const double largest = std::max(ev.maxCoeff(), 0.0);
  return ev.minCoeff() >= -rel_tol * largest;
}

Eigen::MatrixXd effects_covariance(const RandomEffectsLaw& law) {
  Eigen::MatrixXd cov = assemble_effects_covariance(law);
  if (!is_psd(cov)) {
    std::ostringstream msg;
    msg << "effects covariance is not positive semi-definite for";
    if (law.rho) msg << " rho=" << *law.rho;
    if (law.rho01) msg << " rho01=" << *law.rho01;
    if (law.rho0sigma) msg << " rho0sigma=" << *law.rho0sigma;
    if (law.rho1sigma) msg << " rho1sigma=" << *law.rho1sigma;
    throw InvalidInput(msg.str());
  }
  return cov;
}

}  // namespace varsurv
