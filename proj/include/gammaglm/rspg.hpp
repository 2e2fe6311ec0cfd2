#pragma once

// Randomized stochastic projected gradient (RSPG), its two-phase variant and a
// plain proximal SGD baseline over the transformed objective
//
//   Psi(theta) = E[-K(y|x; theta)] + lambda ||beta||_1,
//
// with V(a, b) = ||a - b||^2 / 2 so that every step is a closed-form prox.

#include <algorithm>
#include <limits>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gammaglm/gamma_objective.hpp"
#include "gammaglm/model_family.hpp"
#include "gammaglm/random.hpp"

namespace gammaglm {

struct RspgConfig {
  double gamma = 0.1;
  double lambda = 0.0;
  std::size_t n_total = 0;  // sample budget N = m * T
  double L = 1.0;           // smoothness estimate
  double tau2 = 0.0;        // stochastic-gradient variance estimate
  double d_tilde = 1.0;
  std::optional<double> psi_star;  // known lower bound of Psi; switches to D_Psi
  std::size_t n_cand = 5;
  std::optional<std::size_t> n_post;  // defaults to ceil(N / 10)
  std::uint64_t seed = 0;
  double alpha = 1.0;  // strong convexity of w(theta) = ||theta||^2 / 2
  SeriesTolerance series;
  bool record_trace = false;

  std::size_t post_samples() const { return n_post.value_or((n_total + 9) / 10); }
};

struct StepPolicy {
  std::size_t m = 1;
  std::size_t T = 1;
  double eta = 0.0;
};

struct TraceEntry {
  std::size_t t = 0;
  double eta = 0.0;
  double grad_norm = 0.0;
  std::size_t nonzeros = 0;
};

struct Candidate {
  std::size_t stop_index = 0;
  double score = 0.0;  // ||theta(R_s) - theta(R_s+)|| / eta on post samples
};

struct FitReport {
  Theta theta_hat;
  std::size_t stop_index_R = 1;
  double pg_norm = 0.0;  // full-data projected-gradient norm at theta_hat
  double emp_risk = 0.0;
  StepPolicy policy;
  std::vector<Candidate> candidates;  // two-phase runs only
  std::size_t selected = 0;
  std::vector<TraceEntry> trace;
};

// ---------------------------------------------------------------------------

inline double soft_threshold(double t, double a) {
  const double mag = std::abs(t) - a;
  return mag > 0.0 ? std::copysign(mag, t) : 0.0;
}

/// Closed-form minimiser of <g, theta> + lambda ||beta||_1 + ||theta - theta_t||^2 / (2 eta),
/// with sigma2 projected onto [kSigma2Min, inf).
inline Theta prox_step(const Theta& theta, const Gradient& grad, double eta, double lambda) {
  if (!(eta > 0.0)) throw ConfigError("step size must be positive");
  Theta out;
  out.beta0 = theta.beta0 - eta * grad.intercept;
  out.beta.resize(theta.beta.size());
  const double thr = eta * lambda;
  for (Eigen::Index j = 0; j < theta.beta.size(); ++j)
    out.beta[j] = soft_threshold(theta.beta[j] - eta * grad.beta[j], thr);
  if (theta.sigma2) out.sigma2 = std::max(*theta.sigma2 - eta * grad.sigma2, kSigma2Min);
  return out;
}

/// P_R(t) proportional to alpha eta_t - L eta_t^2.
inline std::vector<double> stopping_distribution(std::span<const double> etas, double L, double alpha = 1.0) {
  if (etas.empty()) throw ConfigError("empty step-size schedule");
  if (!(L > 0.0) || !(alpha > 0.0)) throw ConfigError("L and alpha must be positive");
  const double cap = alpha / L;
  std::vector<double> w(etas.size());
  double total = 0.0;
  for (std::size_t t = 0; t < etas.size(); ++t) {
    const double e = etas[t];
    if (!(e > 0.0) || e > cap * (1.0 + 1e-12))
      throw ConfigError("step size " + std::to_string(t + 1) + " outside (0, alpha/L]");
    w[t] = std::max(alpha * e - L * e * e, 0.0);
    total += w[t];
  }
  if (!(total > 0.0)) throw ConfigError("invalid schedule: every step equals alpha/L");
  for (auto& v : w) v /= total;
  return w;
}

inline std::vector<double> stopping_distribution(std::size_t T, double eta, double L, double alpha = 1.0) {
  std::vector<double> etas(T, eta);
  return stopping_distribution(etas, L, alpha);
}

/// Constant step alpha/(2L) and mini-batch size tied to the sample budget.
inline StepPolicy minibatch_policy(std::size_t N, double L, double tau, double d_tilde, double alpha = 1.0) {
  if (N < 1) throw ConfigError("sample budget must be >= 1");
  if (!(L > 0.0) || !(d_tilde > 0.0) || !(tau >= 0.0)) throw ConfigError("invalid policy inputs");
  const double n = static_cast<double>(N);
  const double raw = std::min(std::max(1.0, tau * std::sqrt(6.0 * n) / (4.0 * L * d_tilde)), n);
  StepPolicy p;
  p.m = static_cast<std::size_t>(std::ceil(raw));
  p.m = std::clamp<std::size_t>(p.m, 1, N);
  p.T = std::max<std::size_t>(N / p.m, 1);
  p.eta = alpha / (2.0 * L);
  return p;
}

/// ||theta - prox(theta, full gradient)|| / eta over all coordinates.
inline double projected_gradient_norm(const Dataset& data, const Theta& theta, double eta, double gamma,
                                      double lambda, const SeriesTolerance& tol = {}) {
  const auto g = full_gradient(data, theta, gamma, tol);
  const auto plus = prox_step(theta, g, eta, lambda);
  return (to_flat(theta) - to_flat(plus)).norm() / eta;
}

namespace detail {

inline double resolve_d(const Dataset& data, const Theta& init, const RspgConfig& c) {
  if (!c.psi_star) return c.d_tilde;
  const double psi1 = emp_risk(data, init, c.gamma, c.lambda, c.series).value;
  const double gap = std::max(psi1 - *c.psi_star, 0.0);
  const double d = std::sqrt(gap / c.L);
  return d > 0.0 ? d : c.d_tilde;
}

inline void check_config(const RspgConfig& c) {
  if (!(c.gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (!(c.lambda >= 0.0)) throw ConfigError("lambda must be nonnegative");
  if (c.n_total < 1) throw ConfigError("sample budget must be >= 1");
  if (c.n_cand < 1) throw ConfigError("N_cand must be >= 1");
  if (c.post_samples() < 1) throw ConfigError("N_post must be >= 1");
}

template <BatchStream Stream>
Theta step(Stream& stream, const Theta& theta, std::size_t m, double eta, const RspgConfig& c,
           std::size_t t, std::vector<TraceEntry>* trace) {
  const auto rows = stream.next(m);
  Gradient g;
  try {
    g = batch_gradient(stream.data(), rows, theta, c.gamma, c.series);
  } catch (const NumericalError& e) {
    throw NumericalError("iteration " + std::to_string(t) + ": " + e.what());
  }
  Theta next = prox_step(theta, g, eta, c.lambda);
  if (trace) {
    const std::size_t nnz = static_cast<std::size_t>((next.beta.array() != 0.0).count());
    trace->push_back({t, eta, to_flat(g, theta).norm(), nnz});
  }
  return next;
}

inline void finish(FitReport& r, const Dataset& data, const RspgConfig& c) {
  r.pg_norm = projected_gradient_norm(data, r.theta_hat, r.policy.eta, c.gamma, c.lambda, c.series);
  r.emp_risk = emp_risk(data, r.theta_hat, c.gamma, c.lambda, c.series).value;
}

}  // namespace detail

/// Step policy a run with this config will use.
inline StepPolicy resolve_policy(const Dataset& data, const Theta& init, const RspgConfig& c) {
  return minibatch_policy(c.n_total, c.L, std::sqrt(c.tau2), detail::resolve_d(data, init, c), c.alpha);
}

/// Single-output RSPG: draw R ~ P_R, take R-1 prox steps, return theta(R).
template <BatchStream Stream>
FitReport rspg_run(Stream& stream, const Theta& init, const RspgConfig& c) {
  detail::check_config(c);
  const Dataset& data = stream.data();
  validate(init, data.family(), data.p());

  FitReport r;
  r.policy = resolve_policy(data, init, c);
  const auto probs = stopping_distribution(r.policy.T, r.policy.eta, c.L, c.alpha);
  Rng rng(derive_seed(c.seed, 0));
  std::discrete_distribution<std::size_t> draw(probs.begin(), probs.end());
  r.stop_index_R = draw(rng) + 1;

  Theta theta = init;
  auto* trace = c.record_trace ? &r.trace : nullptr;
  for (std::size_t t = 1; t < r.stop_index_R; ++t)
    theta = detail::step(stream, theta, r.policy.m, r.policy.eta, c, t, trace);
  r.theta_hat = std::move(theta);
  detail::finish(r, data, c);
  return r;
}

/// Two-phase RSPG: N_cand stop indices from one forward pass, then the
/// candidate with the smallest post-sample projected-gradient proxy wins
/// (ties go to the earliest candidate).
template <BatchStream Stream>
FitReport two_phase_rspg_run(Stream& stream, const Theta& init, const RspgConfig& c) {
  detail::check_config(c);
  const Dataset& data = stream.data();
  validate(init, data.family(), data.p());

  FitReport r;
  r.policy = resolve_policy(data, init, c);
  const auto probs = stopping_distribution(r.policy.T, r.policy.eta, c.L, c.alpha);
  Rng rng(derive_seed(c.seed, 0));
  std::discrete_distribution<std::size_t> draw(probs.begin(), probs.end());
  r.candidates.resize(c.n_cand);
  std::size_t r_max = 1;
  for (auto& cand : r.candidates) {
    cand.stop_index = draw(rng) + 1;
    r_max = std::max(r_max, cand.stop_index);
  }

  std::vector<Theta> snapshots(c.n_cand);
  auto capture = [&](std::size_t t, const Theta& th) {
    for (std::size_t s = 0; s < c.n_cand; ++s)
      if (r.candidates[s].stop_index == t) snapshots[s] = th;
  };

  Theta theta = init;
  capture(1, theta);
  auto* trace = c.record_trace ? &r.trace : nullptr;
  for (std::size_t t = 1; t < r_max; ++t) {
    theta = detail::step(stream, theta, r.policy.m, r.policy.eta, c, t, trace);
    capture(t + 1, theta);
  }

  // Post-optimisation on a shared set of fresh samples.
  const auto post_rows = stream.next(c.post_samples());
  const double eta = r.policy.eta;
  for (std::size_t s = 0; s < c.n_cand; ++s) {
    const auto g = batch_gradient(data, post_rows, snapshots[s], c.gamma, c.series);
    const auto plus = prox_step(snapshots[s], g, eta, c.lambda);
    r.candidates[s].score = (to_flat(snapshots[s]) - to_flat(plus)).norm() / eta;
  }
  std::size_t best = 0;
  for (std::size_t s = 1; s < c.n_cand; ++s)
    if (r.candidates[s].score < r.candidates[best].score) best = s;
  r.selected = best;
  r.stop_index_R = r.candidates[best].stop_index;
  r.theta_hat = snapshots[best];
  detail::finish(r, data, c);
  return r;
}

using StepSchedule = std::function<double(std::size_t)>;

/// eta_t = eta0 / sqrt(t).
inline StepSchedule inverse_sqrt_schedule(double eta0) {
  return [eta0](std::size_t t) { return eta0 / std::sqrt(static_cast<double>(t)); };
}

/// Proximal SGD with a fixed mini-batch size; returns the last iterate after
/// floor(N / m) updates. The reported pg_norm uses eta = alpha / (2L).
template <BatchStream Stream>
FitReport sgd_run(Stream& stream, const Theta& init, const RspgConfig& c, std::size_t batch_size,
                  const StepSchedule& schedule) {
  detail::check_config(c);
  if (batch_size < 1) throw ConfigError("SGD mini-batch size must be >= 1");
  const Dataset& data = stream.data();
  validate(init, data.family(), data.p());

  FitReport r;
  r.policy.m = std::min(batch_size, c.n_total);
  r.policy.T = std::max<std::size_t>(c.n_total / r.policy.m, 1);
  r.policy.eta = c.alpha / (2.0 * c.L);
  Theta theta = init;
  auto* trace = c.record_trace ? &r.trace : nullptr;
  for (std::size_t t = 1; t <= r.policy.T; ++t) {
    const double eta = schedule(t);
    if (!(eta > 0.0)) throw ConfigError("SGD step size must be positive");
    theta = detail::step(stream, theta, r.policy.m, eta, c, t, trace);
  }
  r.stop_index_R = r.policy.T;
  r.theta_hat = std::move(theta);
  detail::finish(r, data, c);
  return r;
}

// Convenience overloads drawing mini-batches with replacement from `data`.
inline FitReport rspg_run(const Dataset& data, const Theta& init, const RspgConfig& c) {
  ResamplingStream s(data, derive_seed(c.seed, 1));
  return rspg_run(s, init, c);
}
inline FitReport two_phase_rspg_run(const Dataset& data, const Theta& init, const RspgConfig& c) {
  ResamplingStream s(data, derive_seed(c.seed, 1));
  return two_phase_rspg_run(s, init, c);
}
inline FitReport sgd_run(const Dataset& data, const Theta& init, const RspgConfig& c, std::size_t batch_size,
                         const StepSchedule& schedule) {
  ResamplingStream s(data, derive_seed(c.seed, 1));
  return sgd_run(s, init, c, batch_size, schedule);
}

// ---------------------------------------------------------------------------
// Smoothness and variance estimates from a pilot sample.

struct SmoothnessEstimate {
  double L = 0.0;
  double tau2 = 0.0;
  std::vector<std::string> warnings;
};

/// L: largest gradient-difference ratio of the pilot objective over random
/// pairs within `radius` of theta0. tau2: mean squared deviation of
/// single-sample gradients from the pilot gradient at theta0.
inline SmoothnessEstimate estimate_L_tau2(const Dataset& pilot, const Theta& theta0, double gamma,
                                          std::size_t n_probe, std::uint64_t seed, double radius = 0.1,
                                          const SeriesTolerance& tol = {}) {
  if (pilot.size() < 2) throw ConfigError("pilot sample needs at least two rows");
  if (n_probe < 1) throw ConfigError("n_probe must be >= 1");
  if (!(radius > 0.0)) throw ConfigError("probe radius must be positive");
  validate(theta0, pilot.family(), pilot.p());

  SmoothnessEstimate est;
  Rng rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  auto perturb = [&](const Theta& base) {
    Theta t = base;
    t.beta0 += radius * z(rng);
    for (Eigen::Index j = 0; j < t.beta.size(); ++j) t.beta[j] += radius * z(rng);
    if (t.sigma2) t.sigma2 = std::max(*t.sigma2 * std::exp(radius * z(rng)), kSigma2Min);
    return t;
  };

  for (std::size_t k = 0; k < n_probe; ++k) {
    const Theta a = perturb(theta0);
    const Theta b = perturb(theta0);
    const double dist = (to_flat(a) - to_flat(b)).norm();
    if (dist == 0.0) continue;
    const Vector ga = to_flat(full_gradient(pilot, a, gamma, tol), a);
    const Vector gb = to_flat(full_gradient(pilot, b, gamma, tol), b);
    est.L = std::max(est.L, (ga - gb).norm() / dist);
  }
  if (!(est.L > 0.0)) {
    est.L = 1e-8;
    est.warnings.push_back("pilot gradient is locally constant; L floored at 1e-8");
  }

  const Vector mean = to_flat(full_gradient(pilot, theta0, gamma, tol), theta0);
  CompensatedSum ss;
  for (std::size_t i = 0; i < pilot.size(); ++i) {
    const std::size_t row[1] = {i};
    const Vector gi = to_flat(batch_gradient(pilot, row, theta0, gamma, tol), theta0);
    ss.add((gi - mean).squaredNorm());
  }
  est.tau2 = ss.value() / static_cast<double>(pilot.size());
  // Identical rows still leave rounding residue from averaging.
  const double eps = 64.0 * std::numeric_limits<double>::epsilon();
  if (est.tau2 <= eps * eps * std::max(mean.squaredNorm(), 1e-300)) {
    est.tau2 = 0.0;
    est.warnings.push_back("degenerate pilot: single-sample gradients are identical, tau2 = 0");
  }
  return est;
}

}  // namespace gammaglm
