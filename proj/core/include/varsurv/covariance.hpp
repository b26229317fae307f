#pragma once

#include <Eigen/Core>

#include "varsurv/types.hpp"

namespace varsurv {

/// Relative tolerance of the PSD test: the smallest eigenvalue may fall to
/// -kPsdTolerance * (largest eigenvalue).
inline constexpr double kPsdTolerance = 1e-10;

/// Covariance of (b0[, b1], log sigma), in that order. Off-diagonal entries
/// linking log sigma are zero for uncorrelated laws. Throws InvalidInput when
/// the assembled matrix is not PSD, naming the correlation values involved.
Eigen::MatrixXd effects_covariance(const RandomEffectsLaw& law);

/// Same assembly without the PSD check.
Eigen::MatrixXd assemble_effects_covariance(const RandomEffectsLaw& law);

bool is_psd(const Eigen::MatrixXd& m, double rel_tol = kPsdTolerance);

}  // namespace varsurv
