#pragma once

// Batch majorization-minimization solver for sparse gamma-linear regression.
// Each outer iteration freezes the normalized kernel weights alpha_i at the
// current iterate and performs one coordinate sweep over the weighted
// majorizer
//
//   log(sigma2) / (2(1+gamma)) + sum_i alpha_i r_i^2 / (2 sigma2) + lambda ||beta||_1,
//
// in the order intercept, beta_1..beta_p, sigma2. Every coordinate update is
// an exact minimiser, so d_gamma + lambda ||beta||_1 never increases.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "gammaglm/gamma_objective.hpp"
#include "gammaglm/rspg.hpp"

namespace gammaglm {

/// Normalized kernel weights alpha_i = K_i / sum_l K_l.
inline Vector mm_weights(const Dataset& data, const Theta& theta, double gamma) {
  if (data.empty()) throw ConfigError("dataset is empty");
  Vector w(static_cast<Eigen::Index>(data.size()));
  // Kernels share the factor ((1+gamma)/(2 pi sigma2))^(...), so only the
  // exponent matters; shifting by its max keeps the ratios exact.
  if (data.family() == Family::Linear) {
    const double s2 = theta.sigma2.value();
    double max_e = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double r = data.y(i) - linear_predictor(data.family(), data.x_row(i), 0.0, theta);
      w[static_cast<Eigen::Index>(i)] = -gamma * r * r / (2.0 * s2);
      max_e = std::max(max_e, w[static_cast<Eigen::Index>(i)]);
    }
    w = (w.array() - max_e).exp();
  } else {
    for (std::size_t i = 0; i < data.size(); ++i)
      w[static_cast<Eigen::Index>(i)] = gamma_kernel(data, i, theta, gamma);
  }
  CompensatedSum total;
  for (Eigen::Index i = 0; i < w.size(); ++i) total.add(w[i]);
  return w / total.value();
}

struct MmOptions {
  std::size_t max_iter = 500;
  double tol = 1e-8;  // max-norm parameter change
};

struct MmResult {
  Theta theta;
  std::vector<double> objective;  // d_gamma + lambda ||beta||_1, index 0 = init
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<std::size_t> frozen;  // zero-variance columns left at init
  std::vector<std::string> warnings;
};

inline MmResult mm_coordinate_descent(const Dataset& data, double gamma, double lambda, const Theta& init,
                                      const MmOptions& opt = {}) {
  if (data.family() != Family::Linear) throw ConfigError("the MM solver supports the linear family only");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
  if (data.p() < 1) throw ConfigError("MM solver needs at least one covariate");
  validate(init, data.family(), data.p());

  const auto p = static_cast<Eigen::Index>(data.p());
  const RowMatrix& X = data.x();
  const Vector& y = data.y();

  MmResult res;
  res.theta = init;
  res.objective.push_back(penalized_cross_entropy(data, init, gamma, lambda));

  Theta& th = res.theta;
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    const Theta prev = th;
    const Vector alpha = mm_weights(data, th, gamma);

    th.beta0 = alpha.dot(y - X * prev.beta);

    // partial = X beta with current coordinates; updated in place per column.
    Vector fitted = X * th.beta;
    const double s2 = *prev.sigma2;
    std::vector<std::size_t> frozen;
    for (Eigen::Index j = 0; j < p; ++j) {
      const auto col = X.col(j);
      const double denom = alpha.dot(col.cwiseAbs2());
      if (!(denom > 0.0)) {
        frozen.push_back(static_cast<std::size_t>(j));
        continue;
      }
      const double old = th.beta[j];
      // r_{i,-j} = fitted_i - x_ij beta_j
      const Vector partial_res = y.array() - th.beta0 - (fitted - col * old).array();
      const double num = alpha.dot(partial_res.cwiseProduct(col));
      const double nb = soft_threshold(num, s2 * lambda) / denom;
      if (nb != old) {
        fitted += col * (nb - old);
        th.beta[j] = nb;
      }
    }
    if (it == 0) res.frozen = frozen;

    const Vector r = y.array() - th.beta0 - fitted.array();
    th.sigma2 = std::max((1.0 + gamma) * alpha.dot(r.cwiseAbs2()), kSigma2Min);

    res.objective.push_back(penalized_cross_entropy(data, th, gamma, lambda));
    res.iterations = it + 1;
    const double change = (to_flat(th) - to_flat(prev)).lpNorm<Eigen::Infinity>();
    if (change < opt.tol) {
      res.converged = true;
      break;
    }
  }
  for (const auto j : res.frozen)
    res.warnings.push_back("covariate " + std::to_string(j + 1) + " has zero weighted variance; frozen at init");
  return res;
}

/// The penalty weight under which a stationary point of
/// d_gamma + lambda ||beta||_1 is also stationary for the transformed risk
/// E[-K] + lambda' ||beta||_1: lambda' = lambda * gamma * mean K(theta).
inline double transformed_lambda(const Dataset& data, const Theta& theta, double gamma, double lambda) {
  return lambda * gamma * mean_kernel(data, theta, gamma);
}

}  // namespace gammaglm
