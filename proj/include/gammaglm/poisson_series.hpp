#pragma once

// Power sums of the Poisson pmf:
//
//   S0(mu, gamma) = sum_y f(y|mu)^(1+gamma)
//   S1(mu, gamma) = sum_y y f(y|mu)^(1+gamma)
//
// Terms are generated by the log-domain recurrence
//   log t(y+1) = log t(y) + (1+gamma) (log mu - log(y+1))
// walking outward from the mode floor(mu), so y! never overflows and large
// means need O(sqrt(mu)) terms instead of O(mu). Each direction stops once a
// geometric bound on its remaining tail drops below half the relative
// tolerance; the ratio of consecutive terms is monotone on both sides of the
// mode, which is what makes the bound valid.

#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>

#include "gammaglm/types.hpp"

namespace gammaglm {

struct SeriesTolerance {
  double rel_tol = 1e-12;
  std::size_t max_terms = 10000;

  void validate() const {
    if (!(rel_tol > 0.0 && rel_tol < 1.0)) throw ConfigError("series rel_tol must lie in (0, 1)");
    if (max_terms < 10) throw ConfigError("series max_terms must be at least 10");
  }
};

/// Both sums scaled by exp(-log_scale), plus bookkeeping about where the upward
/// walk stopped.
struct PoissonMoments {
  double log_scale = 0.0;
  double s0 = 1.0;
  double s1 = 0.0;
  std::size_t terms = 1;
  std::size_t last_index = 0;  // largest y summed
  double last_ratio = 0.0;     // t(last_index + 1) / t(last_index)

  double normalizer() const { return std::exp(log_scale) * s0; }
  double log_normalizer() const { return log_scale + std::log(s0); }
  // Mean of the tilted distribution proportional to f^(1+gamma).
  double tilted_mean() const { return s1 / s0; }
};

namespace detail {

[[noreturn]] inline void throw_truncation(double mu, double gamma, std::size_t cap) {
  std::ostringstream os;
  os << "Poisson series did not converge within " << cap << " terms (mu = " << mu
     << ", gamma = " << gamma << ")";
  throw TruncationError(mu, gamma, os.str());
}

}  // namespace detail

inline PoissonMoments poisson_moments(double mu, double gamma, const SeriesTolerance& tol = {}) {
  tol.validate();
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw ConfigError("Poisson mean must be finite and >= 0");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be finite and >= 0");

  PoissonMoments m;
  if (mu == 0.0) return m;  // point mass at y = 0

  // Extended precision: log_scale cancels terms of size ~ mu log mu, and the
  // sums feed differences like s1 - y s0. The walk continues until the
  // certified tail is below both rel_tol and the long double resolution.
  using real = long double;
  const real a = 1.0L + gamma;
  const real lmu = static_cast<real>(mu);
  const real log_mu = std::log(lmu);
  const real mode = std::floor(lmu);
  const real half_tol = std::min<real>(0.5L * tol.rel_tol, std::numeric_limits<double>::epsilon() / 8.0L);

  m.log_scale = static_cast<double>(a * (-lmu + mode * log_mu - std::lgamma(mode + 1.0L)));
  real s0 = 1.0L;
  real s1 = mode;
  m.terms = 1;

  // Upward walk: y = mode+1, mode+2, ...
  real log_rel = 0.0L;
  real y = mode;
  while (true) {
    y += 1.0L;
    log_rel += a * (log_mu - std::log(y));
    const real t = std::exp(log_rel);
    s0 += t;
    s1 += y * t;
    if (++m.terms > tol.max_terms) detail::throw_truncation(mu, gamma, tol.max_terms);
    if (y <= lmu) continue;
    const real q = std::pow(lmu / (y + 1.0L), a);
    const real rho = q * (y + 1.0L) / y;
    if (rho >= 1.0L) continue;
    const real tail0 = t * q / (1.0L - q);
    const real tail1 = y * t * rho / (1.0L - rho);
    if (tail0 <= half_tol * s0 && tail1 <= half_tol * s1) {
      m.last_index = static_cast<std::size_t>(y);
      m.last_ratio = static_cast<double>(q);
      break;
    }
  }

  // Downward walk: y = mode-1, ..., 0.
  log_rel = 0.0L;
  y = mode;
  while (y > 0.0L) {
    log_rel += a * (std::log(y) - log_mu);
    y -= 1.0L;
    const real t = std::exp(log_rel);
    s0 += t;
    s1 += y * t;
    if (++m.terms > tol.max_terms) detail::throw_truncation(mu, gamma, tol.max_terms);
    if (y == 0.0L) break;
    const real q = std::pow(y / lmu, a);
    if (q >= 1.0L) continue;
    const real tail0 = t * q / (1.0L - q);
    if (tail0 <= half_tol * s0 && y * tail0 <= half_tol * s1) break;
  }
  m.s0 = static_cast<double>(s0);
  m.s1 = static_cast<double>(s1);
  return m;
}

/// sum_y f(y|mu)^(1+gamma).
inline double power_normalizer(double mu, double gamma, const SeriesTolerance& tol = {}) {
  return poisson_moments(mu, gamma, tol).normalizer();
}

/// sum_y (y - y_obs) f(y|mu)^(1+gamma).
inline double weighted_sum(double mu, double y_obs, double gamma, const SeriesTolerance& tol = {}) {
  if (!(y_obs >= 0.0)) throw ConfigError("observed count must be >= 0");
  const auto m = poisson_moments(mu, gamma, tol);
  return std::exp(m.log_scale) * (m.s1 - y_obs * m.s0);
}

}  // namespace gammaglm
