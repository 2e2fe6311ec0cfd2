#pragma once

// Conditional densities of the three families, the density-power kernel
//
//   K(y|x; theta) = f(y|x)^gamma / (int f(y'|x)^(1+gamma) dy')^(gamma/(1+gamma))
//
// and the mini-batch gradients of -K (xi for linear, nu for logistic, zeta for
// Poisson). The stochastic loss minimised by the optimisers is -K averaged over
// a mini-batch; these functions are its exact gradients.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>

#include "gammaglm/poisson_series.hpp"
#include "gammaglm/types.hpp"

namespace gammaglm {

namespace detail {

inline double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double clamp_poisson_eta(double eta) {
  return std::clamp(eta, -kPoissonEtaClamp, kPoissonEtaClamp);
}

}  // namespace detail

/// Kernel value and the derivatives of -K for one observation. The gradient
/// with respect to the coefficients is `d_eta * x` (intercept: `d_eta`).
struct SampleTerm {
  double kernel = 0.0;
  double d_eta = 0.0;
  double d_sigma2 = 0.0;
};

inline SampleTerm linear_term(double residual, double sigma2, double gamma) {
  const double a = 1.0 + gamma;
  const double expo = -gamma * residual * residual / (2.0 * sigma2);
  const double k = std::pow(a / (2.0 * std::numbers::pi * sigma2), gamma / (2.0 * a)) * std::exp(expo);
  SampleTerm s;
  s.kernel = k;
  s.d_eta = -gamma * k * residual / sigma2;
  s.d_sigma2 = 0.5 * gamma * k * (1.0 / (a * sigma2) - residual * residual / (sigma2 * sigma2));
  return s;
}

inline SampleTerm logistic_term(double u, double y, double gamma) {
  const double a = 1.0 + gamma;
  const double log_k = gamma * y * u - (gamma / a) * detail::softplus(a * u);
  const double k = std::exp(log_k);
  SampleTerm s;
  s.kernel = k;
  s.d_eta = -gamma * k * (y - detail::sigmoid(a * u));
  return s;
}

inline SampleTerm poisson_term(double eta, double y, double gamma, const SeriesTolerance& tol) {
  const double a = 1.0 + gamma;
  const double e = detail::clamp_poisson_eta(eta);
  const double mu = std::exp(e);
  const auto m = poisson_moments(mu, gamma, tol);
  const double log_f = -mu + y * e - std::lgamma(y + 1.0);
  const double log_k = gamma * log_f - (gamma / a) * m.log_normalizer();
  const double k = std::exp(log_k);
  SampleTerm s;
  s.kernel = k;
  s.d_eta = gamma * k * (m.tilted_mean() - y);
  return s;
}

/// Linear predictor beta0 + x'beta, plus the offset for the Poisson family.
template <typename Row>
double linear_predictor(Family family, const Row& x, double offset, const Theta& theta) {
  double eta = theta.beta0 + x.dot(theta.beta);
  if (family == Family::Poisson) eta += offset;
  return eta;
}

template <typename Row>
SampleTerm sample_term(Family family, const Row& x, double y, double offset, const Theta& theta,
                       double gamma, const SeriesTolerance& tol = {}) {
  const double eta = linear_predictor(family, x, offset, theta);
  switch (family) {
    case Family::Linear:
      return linear_term(y - eta, theta.sigma2.value(), gamma);
    case Family::Logistic:
      return logistic_term(eta, y, gamma);
    case Family::Poisson:
      return poisson_term(eta, y, gamma, tol);
  }
  return {};
}

inline SampleTerm sample_term(const Dataset& data, std::size_t i, const Theta& theta, double gamma,
                              const SeriesTolerance& tol = {}) {
  SampleTerm s = sample_term(data.family(), data.x_row(i), data.y(i), data.offset(i), theta, gamma, tol);
  if (!std::isfinite(s.kernel) || !std::isfinite(s.d_eta) || !std::isfinite(s.d_sigma2))
    throw NumericalError("non-finite kernel or gradient at sample " + std::to_string(i));
  return s;
}

/// Density-power kernel of a single observation.
inline double gamma_kernel(Family family, const Observation& obs, const Theta& theta, double gamma,
                           const SeriesTolerance& tol = {}) {
  const auto s = sample_term(family, obs.x, obs.y, obs.offset, theta, gamma, tol);
  if (!std::isfinite(s.kernel)) throw NumericalError("non-finite kernel");
  return s.kernel;
}

inline double gamma_kernel(const Dataset& data, std::size_t i, const Theta& theta, double gamma,
                           const SeriesTolerance& tol = {}) {
  return sample_term(data, i, theta, gamma, tol).kernel;
}

/// Average gradient of -K over the rows of a mini-batch, summed left to right.
inline Gradient batch_gradient(const Dataset& data, std::span<const std::size_t> rows,
                               const Theta& theta, double gamma, const SeriesTolerance& tol = {}) {
  if (rows.empty()) throw ConfigError("mini-batch must be nonempty");
  Gradient g = Gradient::zeros(data.p());
  for (const auto i : rows) {
    const auto s = sample_term(data, i, theta, gamma, tol);
    g.intercept += s.d_eta;
    g.beta.noalias() += s.d_eta * data.x_row(i).transpose();
    g.sigma2 += s.d_sigma2;
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  g.intercept *= inv;
  g.beta *= inv;
  g.sigma2 *= inv;
  return g;
}

inline Gradient full_gradient(const Dataset& data, const Theta& theta, double gamma,
                              const SeriesTolerance& tol = {}) {
  const auto rows = all_rows(data);
  return batch_gradient(data, rows, theta, gamma, tol);
}

struct XiLinear {
  double xi1 = 0.0;
  Vector xi2;
  double xi3 = 0.0;
};

struct NuLogistic {
  double nu1 = 0.0;
  Vector nu2;
};

struct ZetaPoisson {
  double zeta1 = 0.0;
  Vector zeta2;
};

inline XiLinear xi_linear(const Dataset& batch, std::span<const std::size_t> rows, const Theta& theta,
                          double gamma) {
  if (batch.family() != Family::Linear) throw ConfigError("xi_linear needs a linear dataset");
  const auto g = batch_gradient(batch, rows, theta, gamma);
  return {g.intercept, g.beta, g.sigma2};
}

inline NuLogistic nu_logistic(const Dataset& batch, std::span<const std::size_t> rows, const Theta& theta,
                              double gamma) {
  if (batch.family() != Family::Logistic) throw ConfigError("nu_logistic needs a logistic dataset");
  const auto g = batch_gradient(batch, rows, theta, gamma);
  return {g.intercept, g.beta};
}

inline ZetaPoisson zeta_poisson(const Dataset& batch, std::span<const std::size_t> rows,
                                const Theta& theta, double gamma, const SeriesTolerance& tol = {}) {
  if (batch.family() != Family::Poisson) throw ConfigError("zeta_poisson needs a Poisson dataset");
  const auto g = batch_gradient(batch, rows, theta, gamma, tol);
  return {g.intercept, g.beta};
}

// Whole-dataset conveniences.
inline XiLinear xi_linear(const Dataset& batch, const Theta& theta, double gamma) {
  const auto rows = all_rows(batch);
  return xi_linear(batch, rows, theta, gamma);
}
inline NuLogistic nu_logistic(const Dataset& batch, const Theta& theta, double gamma) {
  const auto rows = all_rows(batch);
  return nu_logistic(batch, rows, theta, gamma);
}
inline ZetaPoisson zeta_poisson(const Dataset& batch, const Theta& theta, double gamma,
                                const SeriesTolerance& tol = {}) {
  const auto rows = all_rows(batch);
  return zeta_poisson(batch, rows, theta, gamma, tol);
}

}  // namespace gammaglm
