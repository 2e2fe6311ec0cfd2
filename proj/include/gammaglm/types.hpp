#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace gammaglm {

using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Lower bound of the error-variance domain for the linear family.
inline constexpr double kSigma2Min = 1e-6;

// Poisson linear predictors are clamped to this range before exponentiation.
inline constexpr double kPoissonEtaClamp = 30.0;

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files, wrong response types, dimension mismatches.
class DataError : public Error {
 public:
  using Error::Error;
};

// Overflow / non-finite values in kernels or gradients.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// A hypergeometric series did not converge under its term cap.
class TruncationError : public NumericalError {
 public:
  TruncationError(double mu, double gamma, const std::string& what)
      : NumericalError(what), mu_(mu), gamma_(gamma) {}
  double mu() const { return mu_; }
  double gamma() const { return gamma_; }

 private:
  double mu_;
  double gamma_;
};

// Invalid argument combinations (bad schedules, empty grids, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Model family

enum class Family { Linear, Logistic, Poisson };

inline std::string_view to_string(Family f) {
  switch (f) {
    case Family::Linear:
      return "linear";
    case Family::Logistic:
      return "logistic";
    case Family::Poisson:
      return "poisson";
  }
  return "unknown";
}

inline Family family_from_string(std::string_view s) {
  if (s == "linear") return Family::Linear;
  if (s == "logistic") return Family::Logistic;
  if (s == "poisson") return Family::Poisson;
  throw ConfigError("unknown family '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Parameters

/// Parameter bundle shared by all families. `sigma2` is engaged only for the
/// linear family.
struct Theta {
  double beta0 = 0.0;
  Vector beta;
  std::optional<double> sigma2;

  static Theta zeros(Family family, std::size_t p, double sigma2 = 1.0) {
    Theta t;
    t.beta = Vector::Zero(static_cast<Eigen::Index>(p));
    if (family == Family::Linear) t.sigma2 = sigma2;
    return t;
  }

  std::size_t p() const { return static_cast<std::size_t>(beta.size()); }

  // Number of free coordinates: intercept, coefficients and (linear) variance.
  std::size_t dim() const { return p() + 1 + (sigma2 ? 1 : 0); }

  bool operator==(const Theta& o) const {
    return beta0 == o.beta0 && beta.size() == o.beta.size() && beta == o.beta &&
           sigma2 == o.sigma2;
  }
};

inline void validate(const Theta& theta, Family family, std::size_t p) {
  if (theta.p() != p)
    throw ConfigError("theta has " + std::to_string(theta.p()) +
                      " coefficients, data has p = " + std::to_string(p));
  if ((family == Family::Linear) != theta.sigma2.has_value())
    throw ConfigError("sigma2 must be present iff the family is linear");
  if (theta.sigma2 && !(*theta.sigma2 >= kSigma2Min))
    throw ConfigError("sigma2 below the admissible minimum");
}

// Flat layout: [beta0, beta_1..beta_p, (sigma2)].
inline Vector to_flat(const Theta& theta) {
  Vector v(static_cast<Eigen::Index>(theta.dim()));
  v[0] = theta.beta0;
  v.segment(1, theta.beta.size()) = theta.beta;
  if (theta.sigma2) v[v.size() - 1] = *theta.sigma2;
  return v;
}

inline Theta from_flat(const Vector& v, const Theta& like) {
  Theta t;
  t.beta0 = v[0];
  t.beta = v.segment(1, like.beta.size());
  if (like.sigma2) t.sigma2 = v[v.size() - 1];
  return t;
}

/// Gradient of the averaged negated kernel with respect to (beta0, beta,
/// sigma2). `sigma2` stays zero for families without a variance parameter.
struct Gradient {
  double intercept = 0.0;
  Vector beta;
  double sigma2 = 0.0;

  static Gradient zeros(std::size_t p) {
    Gradient g;
    g.beta = Vector::Zero(static_cast<Eigen::Index>(p));
    return g;
  }
};

inline Vector to_flat(const Gradient& g, const Theta& like) {
  Vector v(static_cast<Eigen::Index>(like.dim()));
  v[0] = g.intercept;
  v.segment(1, g.beta.size()) = g.beta;
  if (like.sigma2) v[v.size() - 1] = g.sigma2;
  return v;
}

// ---------------------------------------------------------------------------
// Data

struct Observation {
  Vector x;
  double y = 0.0;
  double offset = 0.0;
};

/// Column-oriented observations of a single family. Responses are validated
/// against the family on construction.
class Dataset {
 public:
  Dataset() = default;

  Dataset(Family family, RowMatrix x, Vector y, Vector offset = Vector())
      : family_(family), x_(std::move(x)), y_(std::move(y)), offset_(std::move(offset)) {
    if (offset_.size() == 0) offset_ = Vector::Zero(y_.size());
    if (x_.rows() != y_.size() || offset_.size() != y_.size())
      throw DataError("dataset row counts disagree");
    for (Eigen::Index i = 0; i < y_.size(); ++i) check_row(static_cast<std::size_t>(i));
  }

  static Dataset from_rows(Family family, std::span<const Observation> rows) {
    if (rows.empty()) throw DataError("dataset needs at least one row");
    const auto p = rows.front().x.size();
    RowMatrix x(static_cast<Eigen::Index>(rows.size()), p);
    Vector y(static_cast<Eigen::Index>(rows.size()));
    Vector off(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].x.size() != p) throw DataError("row " + std::to_string(i) + " has wrong width");
      x.row(static_cast<Eigen::Index>(i)) = rows[i].x.transpose();
      y[static_cast<Eigen::Index>(i)] = rows[i].y;
      off[static_cast<Eigen::Index>(i)] = rows[i].offset;
    }
    return Dataset(family, std::move(x), std::move(y), std::move(off));
  }

  Family family() const { return family_; }
  std::size_t size() const { return static_cast<std::size_t>(y_.size()); }
  std::size_t p() const { return static_cast<std::size_t>(x_.cols()); }
  bool empty() const { return y_.size() == 0; }

  const RowMatrix& x() const { return x_; }
  const Vector& y() const { return y_; }
  const Vector& offset() const { return offset_; }

  auto x_row(std::size_t i) const { return x_.row(static_cast<Eigen::Index>(i)); }
  double y(std::size_t i) const { return y_[static_cast<Eigen::Index>(i)]; }
  double offset(std::size_t i) const { return offset_[static_cast<Eigen::Index>(i)]; }

  Observation row(std::size_t i) const {
    return {x_row(i).transpose(), y(i), offset(i)};
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    RowMatrix x(static_cast<Eigen::Index>(rows.size()), x_.cols());
    Vector y(static_cast<Eigen::Index>(rows.size()));
    Vector off(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(rows[k]);
      x.row(static_cast<Eigen::Index>(k)) = x_.row(i);
      y[static_cast<Eigen::Index>(k)] = y_[i];
      off[static_cast<Eigen::Index>(k)] = offset_[i];
    }
    return Dataset(family_, std::move(x), std::move(y), std::move(off));
  }

  Vector& mutable_y() { return y_; }

 private:
  void check_row(std::size_t i) const {
    const double v = y(i);
    if (!std::isfinite(v) || !std::isfinite(offset(i)))
      throw DataError("row " + std::to_string(i) + ": non-finite response or offset");
    if (family_ == Family::Logistic && v != 0.0 && v != 1.0)
      throw DataError("row " + std::to_string(i) + ": logistic response must be 0 or 1");
    if (family_ == Family::Poisson && (v < 0.0 || v != std::floor(v)))
      throw DataError("row " + std::to_string(i) + ": Poisson response must be a nonnegative integer");
  }

  Family family_ = Family::Linear;
  RowMatrix x_;
  Vector y_;
  Vector offset_;
};

inline std::vector<std::size_t> all_rows(const Dataset& d) {
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

// Neumaier-compensated accumulator.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      c_ += (sum_ - t) + v;
    else
      c_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + c_; }

 private:
  double sum_ = 0.0;
  double c_ = 0.0;
};

}  // namespace gammaglm
