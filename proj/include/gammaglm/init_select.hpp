#pragma once

// Initial points (RANSAC over unpenalized maximum-likelihood fits), the
// end-to-end fitting pipeline, and robust cross-validation of lambda.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "gammaglm/data.hpp"
#include "gammaglm/mm.hpp"
#include "gammaglm/rspg.hpp"

namespace gammaglm {

// ---------------------------------------------------------------------------
// Unpenalized maximum likelihood

namespace detail {

inline RowMatrix with_intercept(const Dataset& d) {
  RowMatrix Z(d.x().rows(), d.x().cols() + 1);
  Z.col(0).setOnes();
  Z.rightCols(d.x().cols()) = d.x();
  return Z;
}

inline Theta theta_from_coef(Family family, const Vector& coef) {
  Theta t;
  t.beta0 = coef[0];
  t.beta = coef.tail(coef.size() - 1);
  if (family == Family::Linear) t.sigma2 = 1.0;
  return t;
}

}  // namespace detail

/// Maximum-likelihood fit without penalty: least squares for the linear
/// family, Newton-IRLS otherwise. Returns nullopt when the fit does not
/// produce finite parameters (e.g. separable logistic subsets).
inline std::optional<Theta> ml_fit(const Dataset& d) {
  const RowMatrix Z = detail::with_intercept(d);
  const auto k = Z.cols();
  if (d.family() == Family::Linear) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Z);
    const Vector coef = qr.solve(d.y());
    if (!coef.allFinite()) return std::nullopt;
    Theta t = detail::theta_from_coef(Family::Linear, coef);
    const Vector r = d.y() - Z * coef;
    t.sigma2 = std::max(r.squaredNorm() / static_cast<double>(d.size()), kSigma2Min);
    return t;
  }

  Vector coef = Vector::Zero(k);
  if (d.family() == Family::Poisson) {
    const double mean_rate = (d.y().array() + 0.5).mean();
    coef[0] = std::log(mean_rate) - d.offset().mean();
  }
  for (int it = 0; it < 50; ++it) {
    Vector eta = Z * coef;
    Vector w(eta.size());
    Vector score_res(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      if (d.family() == Family::Logistic) {
        const double pr = detail::sigmoid(eta[i]);
        w[i] = std::max(pr * (1.0 - pr), 1e-12);
        score_res[i] = d.y()[i] - pr;
      } else {
        const double mu = std::exp(detail::clamp_poisson_eta(eta[i] + d.offset()[i]));
        w[i] = std::max(mu, 1e-12);
        score_res[i] = d.y()[i] - mu;
      }
    }
    Eigen::MatrixXd H = Z.transpose() * w.asDiagonal() * Z;
    H.diagonal().array() += 1e-8;
    const Vector step = H.ldlt().solve(Z.transpose() * score_res);
    if (!step.allFinite()) return std::nullopt;
    coef += step;
    if (!coef.allFinite() || coef.lpNorm<Eigen::Infinity>() > 1e3) return std::nullopt;
    if (step.lpNorm<Eigen::Infinity>() < 1e-10) break;
  }
  return detail::theta_from_coef(d.family(), coef);
}

/// Signed deviance residual of one observation under theta.
inline double deviance_residual(const Dataset& d, std::size_t i, const Theta& theta) {
  const double eta = linear_predictor(d.family(), d.x_row(i), d.offset(i), theta);
  const double y = d.y(i);
  switch (d.family()) {
    case Family::Linear:
      return y - eta;
    case Family::Logistic: {
      const double pr = std::clamp(detail::sigmoid(eta), 1e-15, 1.0 - 1e-15);
      const double dev = -2.0 * (y * std::log(pr) + (1.0 - y) * std::log(1.0 - pr));
      return std::copysign(std::sqrt(std::max(dev, 0.0)), y - pr);
    }
    case Family::Poisson: {
      const double mu = std::exp(detail::clamp_poisson_eta(eta));
      const double dev = 2.0 * ((y > 0.0 ? y * std::log(y / mu) : 0.0) - (y - mu));
      return std::copysign(std::sqrt(std::max(dev, 0.0)), y - mu);
    }
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// RANSAC

struct RansacConfig {
  std::size_t n_trials = 100;
  std::optional<std::size_t> subset_size;      // default p + 2, clamped to the pilot size
  std::optional<double> inlier_threshold;      // default 2.5 x median |deviance residual| per trial
  double noise_scale = 0.0;
  std::size_t refine_steps = 10;               // consensus refits after the best trial
  std::uint64_t seed = 0;
};

struct RansacResult {
  Theta theta;
  std::size_t trial_consensus = 0;  // inliers of the best random-subset fit
  std::size_t inliers = 0;          // inliers of the refined fit
  std::vector<std::string> warnings;
};

namespace detail {

inline double consensus_threshold(const Dataset& d, const Theta& th, const RansacConfig& c) {
  if (c.inlier_threshold) return *c.inlier_threshold;
  std::vector<double> absr(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) absr[i] = std::abs(deviance_residual(d, i, th));
  const auto mid = absr.begin() + static_cast<std::ptrdiff_t>(absr.size() / 2);
  std::nth_element(absr.begin(), mid, absr.end());
  return 2.5 * *mid;
}

inline std::vector<std::size_t> consensus_set(const Dataset& d, const Theta& th, const RansacConfig& c) {
  const double thr = consensus_threshold(d, th, c);
  std::vector<std::size_t> in;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (std::abs(deviance_residual(d, i, th)) <= thr) in.push_back(i);
  return in;
}

// Error variance from a least-squares fit on the consensus set. Two biases
// are removed: residual degrees of freedom, and the truncation of normal
// errors at +-thr, whose variance is sigma2 * kappa(thr / sigma).
inline double consensus_variance(const Dataset& d, const std::vector<std::size_t>& in, const Theta& fit,
                                 double thr) {
  const std::size_t k = d.p() + 1;
  if (in.size() <= k) return *fit.sigma2;
  CompensatedSum rss;
  for (auto i : in) {
    const double r = d.y(i) - linear_predictor(d.family(), d.x_row(i), 0.0, fit);
    rss.add(r * r);
  }
  const double v = rss.value() / static_cast<double>(in.size() - k);
  if (!(thr > 0.0) || !(v > 0.0)) return std::max(v, kSigma2Min);
  double s2 = v;
  for (int it = 0; it < 50; ++it) {
    const double z = thr / std::sqrt(s2);
    const double phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
    const double mass = std::erf(z / std::sqrt(2.0));
    const double kappa = std::max(1.0 - 2.0 * z * phi / mass, 1e-3);
    const double next = v / kappa;
    if (std::abs(next - s2) <= 1e-12 * s2) {
      s2 = next;
      break;
    }
    s2 = next;
  }
  return std::max(s2, kSigma2Min);
}

}  // namespace detail

inline RansacResult ransac_init(const Dataset& pilot, const RansacConfig& c) {
  if (pilot.empty()) throw ConfigError("RANSAC needs a nonempty pilot sample");
  if (c.n_trials < 1) throw ConfigError("RANSAC needs at least one trial");
  const std::size_t s = std::min(c.subset_size.value_or(pilot.p() + 2), pilot.size());
  if (s < 1) throw ConfigError("RANSAC subset size must be >= 1");

  Rng rng(c.seed);
  RansacResult res;
  std::optional<Theta> best;
  std::vector<std::size_t> best_set;
  std::vector<std::size_t> idx = all_rows(pilot);
  for (std::size_t trial = 0; trial < c.n_trials; ++trial) {
    // Partial Fisher-Yates: the first s entries form the subset.
    for (std::size_t k = 0; k < s; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
      std::swap(idx[k], idx[pick(rng)]);
    }
    std::vector<std::size_t> subset(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(s));
    std::sort(subset.begin(), subset.end());
    const auto fit = ml_fit(pilot.subset(subset));
    if (!fit) continue;
    auto in = detail::consensus_set(pilot, *fit, c);
    if (!best || in.size() > best_set.size()) {
      best = *fit;
      best_set = std::move(in);
    }
  }
  if (!best) {
    const auto fit = ml_fit(pilot);
    if (!fit) throw NumericalError("RANSAC: no trial produced a finite fit");
    best = *fit;
    best_set = detail::consensus_set(pilot, *best, c);
    res.warnings.push_back("RANSAC: every subset fit failed; used the full pilot fit");
  }
  res.trial_consensus = best_set.size();
  if (best_set.size() < s)
    res.warnings.push_back("RANSAC: low consensus (" + std::to_string(best_set.size()) + " inliers < subset size " +
                           std::to_string(s) + ")");

  // Refit on the consensus set until it stops changing.
  for (std::size_t step = 0; step < c.refine_steps && best_set.size() > pilot.p() + 1; ++step) {
    const auto fit = ml_fit(pilot.subset(best_set));
    if (!fit) break;
    auto in = detail::consensus_set(pilot, *fit, c);
    best = *fit;
    if (in == best_set) break;
    best_set = std::move(in);
  }
  res.inliers = best_set.size();
  if (best->sigma2)
    best->sigma2 = detail::consensus_variance(pilot, best_set, *best, detail::consensus_threshold(pilot, *best, c));

  Theta th = *best;
  if (c.noise_scale > 0.0) {
    std::normal_distribution<double> z(0.0, c.noise_scale);
    th.beta0 += z(rng);
    for (Eigen::Index j = 0; j < th.beta.size(); ++j) th.beta[j] += z(rng);
  }
  res.theta = std::move(th);
  return res;
}

// ---------------------------------------------------------------------------
// Fitting pipeline: pilot -> RANSAC init -> (L, tau2) -> optimiser

enum class Optimizer { Rspg, TwoPhaseRspg, Sgd, Mm };

inline std::string_view to_string(Optimizer o) {
  switch (o) {
    case Optimizer::Rspg:
      return "rspg";
    case Optimizer::TwoPhaseRspg:
      return "2rspg";
    case Optimizer::Sgd:
      return "sgd";
    case Optimizer::Mm:
      return "mm";
  }
  return "unknown";
}

inline Optimizer optimizer_from_string(std::string_view s) {
  if (s == "rspg") return Optimizer::Rspg;
  if (s == "2rspg") return Optimizer::TwoPhaseRspg;
  if (s == "sgd") return Optimizer::Sgd;
  if (s == "mm") return Optimizer::Mm;
  throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

struct PipelineOptions {
  Optimizer optimizer = Optimizer::TwoPhaseRspg;
  double gamma = 0.1;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  std::size_t n_init = 200;
  std::size_t ransac_trials = 100;
  double init_noise = 0.1;
  std::size_t n_probe = 20;
  double probe_radius = 0.1;
  std::optional<std::size_t> n_total;  // default: training-set size
  double d_tilde = 1.0;
  std::optional<double> psi_star;
  std::size_t n_cand = 5;
  std::optional<std::size_t> n_post;
  std::size_t sgd_batch = 10;
  std::optional<double> sgd_eta0;  // default alpha / (2L)
  MmOptions mm;
  SeriesTolerance series;
};

struct PipelineResult {
  FitReport report;
  Theta init;
  SmoothnessEstimate smoothness;
  RansacResult ransac;
  std::vector<std::string> warnings;
};

/// Initial point and (L, tau2) from a seeded pilot subsample of `data`.
struct PilotSetup {
  Theta init;
  SmoothnessEstimate smoothness;
  RansacResult ransac;
};

inline PilotSetup pilot_setup(const Dataset& data, const PipelineOptions& o) {
  Rng rng(derive_seed(o.seed, 10));
  auto perm = permutation(data.size(), rng);
  perm.resize(std::min(o.n_init, data.size()));
  std::sort(perm.begin(), perm.end());
  const Dataset pilot = data.subset(perm);

  PilotSetup s;
  RansacConfig rc;
  rc.n_trials = o.ransac_trials;
  rc.noise_scale = o.init_noise;
  rc.seed = derive_seed(o.seed, 11);
  s.ransac = ransac_init(pilot, rc);
  s.init = s.ransac.theta;
  s.smoothness = estimate_L_tau2(pilot, s.init, o.gamma, o.n_probe, derive_seed(o.seed, 12), o.probe_radius, o.series);
  return s;
}

inline RspgConfig rspg_config(const Dataset& data, const PipelineOptions& o, const SmoothnessEstimate& sm) {
  RspgConfig c;
  c.gamma = o.gamma;
  c.lambda = o.lambda;
  c.n_total = o.n_total.value_or(data.size());
  c.L = sm.L;
  c.tau2 = sm.tau2;
  c.d_tilde = o.d_tilde;
  c.psi_star = o.psi_star;
  c.n_cand = o.n_cand;
  c.n_post = o.n_post;
  c.seed = derive_seed(o.seed, 20);
  c.series = o.series;
  return c;
}

/// Runs the chosen optimiser from a given start point and smoothness estimate.
inline FitReport run_optimizer(const Dataset& data, const Theta& init, const SmoothnessEstimate& sm,
                               const PipelineOptions& o) {
  const RspgConfig c = rspg_config(data, o, sm);
  switch (o.optimizer) {
    case Optimizer::Rspg:
      return rspg_run(data, init, c);
    case Optimizer::TwoPhaseRspg:
      return two_phase_rspg_run(data, init, c);
    case Optimizer::Sgd:
      return sgd_run(data, init, c, o.sgd_batch, inverse_sqrt_schedule(o.sgd_eta0.value_or(c.alpha / (2.0 * c.L))));
    case Optimizer::Mm: {
      const auto mm = mm_coordinate_descent(data, o.gamma, o.lambda, init, o.mm);
      FitReport r;
      r.theta_hat = mm.theta;
      r.stop_index_R = mm.iterations;
      r.policy.eta = c.alpha / (2.0 * c.L);
      r.pg_norm = projected_gradient_norm(data, r.theta_hat, r.policy.eta, o.gamma, o.lambda, o.series);
      r.emp_risk = emp_risk(data, r.theta_hat, o.gamma, o.lambda, o.series).value;
      return r;
    }
  }
  throw ConfigError("unknown optimizer");
}

inline PipelineResult fit_pipeline(const Dataset& data, const PipelineOptions& o) {
  if (data.empty()) throw DataError("training data is empty");
  PipelineResult res;
  auto setup = pilot_setup(data, o);
  res.init = setup.init;
  res.smoothness = std::move(setup.smoothness);
  res.ransac = std::move(setup.ransac);
  res.warnings = res.ransac.warnings;
  res.warnings.insert(res.warnings.end(), res.smoothness.warnings.begin(), res.smoothness.warnings.end());
  res.report = run_optimizer(data, res.init, res.smoothness, o);
  return res;
}

// ---------------------------------------------------------------------------
// Robust cross-validation

/// Number of worker threads from GAMMAGLM_THREADS (default 1).
inline std::size_t thread_count() {
  if (const char* env = std::getenv("GAMMAGLM_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

/// Runs fn(0..n-1) on up to `threads` workers; results must be written to
/// per-index slots so the outcome is independent of scheduling.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

using Fitter = std::function<Theta(const Dataset& train, double lambda, std::uint64_t seed)>;

/// Fitter that runs the full pipeline with the given options (lambda and
/// seed overridden per call).
inline Fitter pipeline_fitter(PipelineOptions base) {
  return [base](const Dataset& train, double lambda, std::uint64_t seed) {
    PipelineOptions o = base;
    o.lambda = lambda;
    o.seed = seed;
    return fit_pipeline(train, o).report.theta_hat;
  };
}

struct RocvResult {
  double lambda_star = 0.0;
  std::size_t best_index = 0;
  std::vector<double> scores;
  std::vector<std::string> warnings;
};

/// RoCV(lambda) = -(1/n) sum_i K(y_i | x_i; theta_hat^[-fold(i)], gamma0).
inline RocvResult rocv_select(const Dataset& data, std::span<const double> grid, double gamma0, std::size_t folds,
                              const Fitter& fit, std::uint64_t seed, std::size_t threads = thread_count()) {
  if (grid.empty()) throw ConfigError("lambda grid is empty");
  if (folds < 2 || folds > data.size()) throw ConfigError("folds must lie in [2, n]");
  if (!(gamma0 > 0.0)) throw ConfigError("gamma0 must be positive");

  Rng rng(derive_seed(seed, 30));
  const auto perm = permutation(data.size(), rng);
  std::vector<std::vector<std::size_t>> test(folds);
  for (std::size_t k = 0; k < perm.size(); ++k) test[k % folds].push_back(perm[k]);
  for (auto& t : test) std::sort(t.begin(), t.end());

  const std::size_t n_tasks = grid.size() * folds;
  std::vector<double> fold_sum(n_tasks, 0.0);
  std::vector<std::string> fold_err(n_tasks);
  parallel_for(n_tasks, threads, [&](std::size_t task) {
    const std::size_t g = task / folds;
    const std::size_t f = task % folds;
    std::vector<std::size_t> train;
    train.reserve(data.size() - test[f].size());
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (cursor < test[f].size() && test[f][cursor] == i) {
        ++cursor;
        continue;
      }
      train.push_back(i);
    }
    try {
      const Theta th = fit(data.subset(train), grid[g], derive_seed(seed, 100 + f));
      CompensatedSum s;
      for (auto i : test[f]) s.add(gamma_kernel(data, i, th, gamma0));
      fold_sum[task] = s.value();
      if (!std::isfinite(fold_sum[task])) throw NumericalError("non-finite held-out kernel");
    } catch (const Error& e) {
      fold_sum[task] = std::numeric_limits<double>::quiet_NaN();
      fold_err[task] = e.what();
    }
  });

  RocvResult res;
  res.scores.assign(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    CompensatedSum s;
    bool failed = false;
    for (std::size_t f = 0; f < folds; ++f) {
      const std::size_t task = g * folds + f;
      if (!fold_err[task].empty()) {
        failed = true;
        res.warnings.push_back("lambda " + std::to_string(grid[g]) + ", fold " + std::to_string(f) +
                               ": fit failed (" + fold_err[task] + "); scored +inf");
        continue;
      }
      s.add(fold_sum[task]);
    }
    res.scores[g] = failed ? std::numeric_limits<double>::infinity() : -s.value() / static_cast<double>(data.size());
  }
  for (std::size_t g = 1; g < grid.size(); ++g) {
    const double a = res.scores[g];
    const double b = res.scores[res.best_index];
    if (a < b || (a == b && grid[g] < grid[res.best_index])) res.best_index = g;
  }
  res.lambda_star = grid[res.best_index];
  return res;
}

}  // namespace gammaglm
