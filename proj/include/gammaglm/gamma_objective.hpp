#pragma once

#include <cmath>
#include <cstddef>

#include "gammaglm/model_family.hpp"

namespace gammaglm {

struct RiskValue {
  double value = 0.0;
  std::size_t n_samples = 0;
  double lambda = 0.0;
  double gamma = 0.0;
};

inline double l1_norm(const Vector& v) { return v.lpNorm<1>(); }

/// Mean kernel over the whole dataset (compensated summation).
inline double mean_kernel(const Dataset& data, const Theta& theta, double gamma,
                          const SeriesTolerance& tol = {}) {
  if (data.empty()) throw ConfigError("dataset is empty");
  CompensatedSum sum;
  for (std::size_t i = 0; i < data.size(); ++i) sum.add(gamma_kernel(data, i, theta, gamma, tol));
  const double mean = sum.value() / static_cast<double>(data.size());
  if (!std::isfinite(mean)) throw NumericalError("non-finite mean kernel");
  return mean;
}

/// Empirical gamma-cross entropy: -(1/gamma) log(mean kernel).
inline double empirical_gamma_cross_entropy(const Dataset& data, const Theta& theta, double gamma,
                                            const SeriesTolerance& tol = {}) {
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
  const double v = -std::log(mean_kernel(data, theta, gamma, tol)) / gamma;
  if (!std::isfinite(v)) throw NumericalError("non-finite gamma-cross entropy");
  return v;
}

/// Mean negated kernel plus lambda * ||beta||_1 (the transformed objective).
inline RiskValue emp_risk(const Dataset& data, const Theta& theta, double gamma, double lambda,
                          const SeriesTolerance& tol = {}) {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
  RiskValue r;
  r.value = -mean_kernel(data, theta, gamma, tol) + lambda * l1_norm(theta.beta);
  r.n_samples = data.size();
  r.lambda = lambda;
  r.gamma = gamma;
  return r;
}

/// Held-out version of emp_risk; identical formula on test samples.
inline RiskValue exp_risk(const Dataset& test_data, const Theta& theta, double gamma, double lambda,
                          const SeriesTolerance& tol = {}) {
  return emp_risk(test_data, theta, gamma, lambda, tol);
}

// d_gamma + lambda ||beta||_1: the objective the MM iteration decreases.
inline double penalized_cross_entropy(const Dataset& data, const Theta& theta, double gamma, double lambda,
                                      const SeriesTolerance& tol = {}) {
  return empirical_gamma_cross_entropy(data, theta, gamma, tol) + lambda * l1_norm(theta.beta);
}

}  // namespace gammaglm
