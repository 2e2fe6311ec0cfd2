#pragma once

// Simulation generators, contamination schemes, CSV I/O and prediction
// metrics.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gammaglm/model_family.hpp"
#include "gammaglm/random.hpp"

namespace gammaglm {

// 0-based positions of the nonzero true coefficients (1, 2, 4, 7, 11 in
// 1-based covariate numbering) and their values.
inline constexpr std::size_t kTrueSupport[] = {0, 1, 3, 6, 10};
inline constexpr double kTrueValues[] = {1.0, 2.0, 4.0, 7.0, 11.0};

struct SimSpec {
  std::size_t N = 1000;
  std::size_t p = 20;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  Family family = Family::Linear;
};

struct Simulation {
  Dataset data;
  Theta truth;
  std::vector<std::size_t> contaminated;  // sorted row indices
};

namespace detail {

inline void check_spec(const SimSpec& s) {
  if (s.N < 1) throw ConfigError("N must be >= 1");
  if (s.p < 11) throw ConfigError("p must be >= 11 to hold the true support");
  if (!(s.epsilon >= 0.0 && s.epsilon < 1.0)) throw ConfigError("epsilon must lie in [0, 1)");
}

// AR(1) recursion with unit marginals reproduces Sigma_ij = rho^|i-j|.
inline void draw_ar1(Eigen::Ref<Vector> x, double rho, Rng& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  const double s = std::sqrt(1.0 - rho * rho);
  x[0] = z(rng);
  for (Eigen::Index j = 1; j < x.size(); ++j) x[j] = rho * x[j - 1] + s * z(rng);
}

inline std::vector<std::size_t> pick_rows(std::size_t n, std::size_t k, Rng& rng) {
  auto perm = permutation(n, rng);
  perm.resize(k);
  std::sort(perm.begin(), perm.end());
  return perm;
}

}  // namespace detail

inline Theta true_theta(Family family, std::size_t p, double sigma2 = 0.25) {
  Theta t = Theta::zeros(family, p, sigma2);
  for (std::size_t k = 0; k < std::size(kTrueSupport); ++k)
    t.beta[static_cast<Eigen::Index>(kTrueSupport[k])] = kTrueValues[k];
  return t;
}

/// y = x'beta* + e, e ~ N(0, 0.5^2), x ~ N(0, (0.2^|i-j|)). floor(eps N)
/// rows at random positions instead get x ~ N(0, 0.5^2 I), e ~ N(20, 0.5^2).
inline Simulation simulate_linear(const SimSpec& spec) {
  detail::check_spec(spec);
  Rng rng(spec.seed);
  const auto n = static_cast<Eigen::Index>(spec.N);
  const auto p = static_cast<Eigen::Index>(spec.p);

  Simulation sim;
  sim.truth = true_theta(Family::Linear, spec.p);
  const auto n_out = static_cast<std::size_t>(std::floor(spec.epsilon * static_cast<double>(spec.N)));
  sim.contaminated = detail::pick_rows(spec.N, n_out, rng);
  std::vector<char> is_out(spec.N, 0);
  for (auto i : sim.contaminated) is_out[i] = 1;

  RowMatrix X(n, p);
  Vector y(n);
  std::normal_distribution<double> z(0.0, 1.0);
  Vector row(p);
  for (Eigen::Index i = 0; i < n; ++i) {
    double e;
    if (is_out[static_cast<std::size_t>(i)]) {
      for (Eigen::Index j = 0; j < p; ++j) row[j] = 0.5 * z(rng);
      e = 20.0 + 0.5 * z(rng);
    } else {
      detail::draw_ar1(row, 0.2, rng);
      e = 0.5 * z(rng);
    }
    X.row(i) = row.transpose();
    y[i] = sim.truth.beta0 + row.dot(sim.truth.beta) + e;
  }
  sim.data = Dataset(Family::Linear, std::move(X), std::move(y));
  return sim;
}

/// Logistic and Poisson analogues used for end-to-end checks. The true
/// coefficients are scaled by `coef_scale` (default 0.1) to keep linear
/// predictors moderate. Logistic outliers flip the label; Poisson outliers add
/// `scale * t` to the count, where t = exp(offset) is the exposure.
inline Simulation simulate_glm(const SimSpec& spec, double coef_scale = 0.1, double poisson_scale = 100.0) {
  detail::check_spec(spec);
  if (spec.family == Family::Linear) return simulate_linear(spec);
  Rng rng(spec.seed);
  const auto n = static_cast<Eigen::Index>(spec.N);
  const auto p = static_cast<Eigen::Index>(spec.p);

  Simulation sim;
  sim.truth = true_theta(spec.family, spec.p);
  sim.truth.beta *= coef_scale;
  const auto n_out = static_cast<std::size_t>(std::floor(spec.epsilon * static_cast<double>(spec.N)));
  sim.contaminated = detail::pick_rows(spec.N, n_out, rng);
  std::vector<char> is_out(spec.N, 0);
  for (auto i : sim.contaminated) is_out[i] = 1;

  RowMatrix X(n, p);
  Vector y(n);
  Vector off = Vector::Zero(n);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector row(p);
  for (Eigen::Index i = 0; i < n; ++i) {
    detail::draw_ar1(row, 0.2, rng);
    X.row(i) = row.transpose();
    const double eta = sim.truth.beta0 + row.dot(sim.truth.beta);
    const bool out = is_out[static_cast<std::size_t>(i)];
    if (spec.family == Family::Logistic) {
      double yi = unif(rng) < detail::sigmoid(eta) ? 1.0 : 0.0;
      if (out) yi = 1.0 - yi;
      y[i] = yi;
    } else {
      const double exposure = 1.0 + 4.0 * unif(rng);
      off[i] = std::log(exposure);
      std::poisson_distribution<long long> pois(std::exp(eta + off[i]));
      double yi = static_cast<double>(pois(rng));
      if (out) yi += std::floor(poisson_scale * exposure);
      y[i] = yi;
    }
  }
  sim.data = Dataset(spec.family, std::move(X), std::move(y), std::move(off));
  return sim;
}

inline Simulation simulate(const SimSpec& spec) {
  return spec.family == Family::Linear ? simulate_linear(spec) : simulate_glm(spec);
}

struct Contamination {
  Dataset data;
  std::vector<std::size_t> rows;
};

/// y <- y + floor(scale * t) on floor(rate * N) random rows, t = exp(offset).
inline Contamination contaminate_poisson(const Dataset& data, double rate, double scale, std::uint64_t seed) {
  if (data.family() != Family::Poisson) throw ConfigError("contaminate_poisson needs a Poisson dataset");
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("contamination rate must lie in [0, 1]");
  if (!(scale >= 0.0)) throw ConfigError("contamination scale must be nonnegative");
  Contamination out{data, {}};
  const auto k = static_cast<std::size_t>(std::floor(rate * static_cast<double>(data.size())));
  if (k == 0 || scale == 0.0) return out;
  Rng rng(seed);
  out.rows = detail::pick_rows(data.size(), k, rng);
  Vector& y = out.data.mutable_y();
  for (auto i : out.rows) {
    const auto ii = static_cast<Eigen::Index>(i);
    y[ii] += std::floor(scale * std::exp(data.offset(i)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

/// floor(exp(offset + beta0 + x'beta)), offset being the log exposure.
inline std::vector<double> predict_counts(const Dataset& data, const Theta& theta) {
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double eta = theta.beta0 + data.x_row(i).dot(theta.beta) + data.offset(i);
    out[i] = std::floor(std::exp(std::min(eta, 700.0)));
  }
  return out;
}

/// Root mean of the h smallest squared errors, h = floor((n+1)(1-alpha))
/// capped at n.
inline double rtmspe(std::span<const double> predictions, std::span<const double> truths, double alpha_trim) {
  if (predictions.size() != truths.size() || predictions.empty())
    throw ConfigError("rtmspe needs equal, nonempty prediction and truth lists");
  if (!(alpha_trim >= 0.0 && alpha_trim < 1.0)) throw ConfigError("trim fraction must lie in [0, 1)");
  const std::size_t n = predictions.size();
  // The 1e-9 guard keeps products like 5 * 0.6 from flooring to 2.
  const double raw = std::floor(static_cast<double>(n + 1) * (1.0 - alpha_trim) + 1e-9);
  const std::size_t h = std::min<std::size_t>(static_cast<std::size_t>(raw), n);
  if (h == 0) throw ConfigError("trim fraction leaves no errors (h = 0)");
  std::vector<double> sq(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double e = truths[i] - predictions[i];
    sq[i] = e * e;
  }
  std::nth_element(sq.begin(), sq.begin() + static_cast<std::ptrdiff_t>(h - 1), sq.end());
  std::sort(sq.begin(), sq.begin() + static_cast<std::ptrdiff_t>(h));
  CompensatedSum s;
  for (std::size_t j = 0; j < h; ++j) s.add(sq[j]);
  return std::sqrt(s.value() / static_cast<double>(h));
}

// ---------------------------------------------------------------------------
// CSV

struct CsvSchema {
  std::string response = "y";
  std::vector<std::string> covariates;  // empty: every column not otherwise claimed
  std::optional<std::string> offset;
  bool log_offset = false;  // offset column holds exposures, take logs
  std::vector<std::string> ignore;
};

struct CsvTable {
  Dataset data;
  std::vector<std::string> covariate_names;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\"");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\"");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? pos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_number(const std::string& cell, std::size_t line, const std::string& column) {
  double v = 0.0;
  const char* b = cell.data();
  const char* e = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(b, e, v);
  if (cell.empty() || ec != std::errc() || ptr != e)
    throw DataError("line " + std::to_string(line) + ": non-numeric value '" + cell + "' in column '" +
                    column + "'");
  return v;
}

}  // namespace detail

inline CsvTable load_csv(std::istream& in, Family family, const CsvSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("line 1: missing header row");
  const auto header = detail::split_csv(line);
  auto find = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (header[k] == name) return k;
    return std::nullopt;
  };
  auto require = [&](const std::string& name, const char* role) {
    auto k = find(name);
    if (!k) throw DataError(std::string(role) + " column '" + name + "' not found in header");
    return *k;
  };

  const std::size_t resp = require(schema.response, "response");
  std::optional<std::size_t> off;
  if (schema.offset) off = require(*schema.offset, "offset");
  for (const auto& ig : schema.ignore) (void)require(ig, "ignored");

  std::vector<std::size_t> cov;
  CsvTable table;
  if (!schema.covariates.empty()) {
    for (const auto& c : schema.covariates) cov.push_back(require(c, "covariate"));
  } else {
    for (std::size_t k = 0; k < header.size(); ++k) {
      if (k == resp || (off && k == *off)) continue;
      if (std::find(schema.ignore.begin(), schema.ignore.end(), header[k]) != schema.ignore.end()) continue;
      cov.push_back(k);
    }
  }
  for (auto k : cov) table.covariate_names.push_back(header[k]);

  std::vector<double> xs;
  std::vector<double> ys;
  std::vector<double> offs;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != header.size())
      throw DataError("line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                      " fields, found " + std::to_string(cells.size()));
    for (auto k : cov) xs.push_back(detail::parse_number(cells[k], lineno, header[k]));
    ys.push_back(detail::parse_number(cells[resp], lineno, header[resp]));
    if (off) {
      double v = detail::parse_number(cells[*off], lineno, header[*off]);
      if (schema.log_offset) {
        if (!(v > 0.0))
          throw DataError("line " + std::to_string(lineno) + ": exposure must be positive to take its log");
        v = std::log(v);
      }
      offs.push_back(v);
    } else {
      offs.push_back(0.0);
    }
  }
  if (ys.empty()) throw DataError("no data rows after the header");

  const auto n = static_cast<Eigen::Index>(ys.size());
  const auto p = static_cast<Eigen::Index>(cov.size());
  RowMatrix X = Eigen::Map<RowMatrix>(xs.data(), n, p);
  try {
    table.data = Dataset(family, std::move(X), Eigen::Map<Vector>(ys.data(), n),
                         Eigen::Map<Vector>(offs.data(), n));
  } catch (const DataError& e) {
    throw DataError(std::string("invalid data: ") + e.what());
  }
  return table;
}

inline CsvTable load_csv(const std::string& path, Family family, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return load_csv(in, family, schema);
}

/// Writes covariates x1..xp (or the given names), then y, then `offset` when
/// any offset is nonzero. Values use 17 significant digits.
inline void write_csv(std::ostream& out, const Dataset& data, std::vector<std::string> names = {}) {
  if (names.empty())
    for (std::size_t j = 0; j < data.p(); ++j) names.push_back("x" + std::to_string(j + 1));
  const bool with_offset = (data.offset().array() != 0.0).any();
  for (const auto& n : names) out << n << ',';
  out << 'y';
  if (with_offset) out << ",offset";
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t j = 0; j < data.p(); ++j) out << data.x_row(i)[static_cast<Eigen::Index>(j)] << ',';
    out << data.y(i);
    if (with_offset) out << ',' << data.offset(i);
    out << '\n';
  }
}

inline void write_csv(const std::string& path, const Dataset& data, std::vector<std::string> names = {}) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_csv(out, data, std::move(names));
}

/// Ground-truth sidecar: JSON with the family, seed, true parameters
/// (coefficients listed densely, support 1-based) and contaminated rows.
inline nlohmann::ordered_json truth_json(const Simulation& sim, const SimSpec& spec) {
  nlohmann::ordered_json j;
  j["family"] = std::string(to_string(spec.family));
  j["n"] = spec.N;
  j["p"] = spec.p;
  j["epsilon"] = spec.epsilon;
  j["seed"] = spec.seed;
  j["beta0"] = sim.truth.beta0;
  j["beta"] = std::vector<double>(sim.truth.beta.data(), sim.truth.beta.data() + sim.truth.beta.size());
  std::vector<std::size_t> support;
  for (Eigen::Index k = 0; k < sim.truth.beta.size(); ++k)
    if (sim.truth.beta[k] != 0.0) support.push_back(static_cast<std::size_t>(k) + 1);
  j["support"] = support;
  if (sim.truth.sigma2) j["sigma2"] = *sim.truth.sigma2;
  j["contaminated_rows"] = sim.contaminated;
  return j;
}

}  // namespace gammaglm
