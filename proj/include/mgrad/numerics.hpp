#pragma once

// Dense linear algebra, seeded randomness and the verification oracles
// (finite differences, brute-force minimization) used across the library.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "mgrad/errors.hpp"

namespace mgrad {

/// Dense vector of doubles. Entries are checked for finiteness whenever a
/// vector is built from outside data; arithmetic results are not re-checked
/// (callers that care use all_finite()).
class Vec {
 public:
  Vec() = default;
  explicit Vec(std::size_t n, double fill = 0.0) : data_(n, fill) {}
  Vec(std::initializer_list<double> values);
  explicit Vec(std::vector<double> values);

  static Vec zeros(std::size_t n) { return Vec(n); }
  static Vec basis(std::size_t n, std::size_t i);

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  Vec& operator+=(const Vec& other);
  Vec& operator-=(const Vec& other);
  Vec& operator*=(double s);
  /// this += s * other
  Vec& axpy(double s, const Vec& other);

  double norm() const;
  double norm_inf() const;
  double squared_norm() const;
  double sum() const;
  bool all_finite() const;

  /// Contiguous sub-vector [offset, offset + n).
  Vec slice(std::size_t offset, std::size_t n) const;

 private:
  std::vector<double> data_;
};

Vec operator+(Vec a, const Vec& b);
Vec operator-(Vec a, const Vec& b);
Vec operator-(Vec a);
Vec operator*(double s, Vec a);
Vec operator*(Vec a, double s);
double dot(const Vec& a, const Vec& b);
/// Concatenation (a; b).
Vec concat(const Vec& a, const Vec& b);

/// Throws DimensionError unless a.size() == expected.
void require_dim(const Vec& a, std::size_t expected, const char* what);
/// Throws NonFiniteError naming the first non-finite coordinate.
void require_finite(const Vec& a, const char* what);

/// Row-major dense matrix.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
  Mat(std::size_t rows, std::size_t cols, std::vector<double> row_major);
  Mat(std::initializer_list<std::initializer_list<double>> rows);

  static Mat identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data_).subspan(i * cols_, cols_);
  }
  const std::vector<double>& values() const { return data_; }

  Mat transpose() const;
  double frobenius_norm() const;
  /// Induced 2-norm estimated by power iteration on AᵀA (deterministic start).
  double spectral_norm(int iterations = 200) const;
  bool all_finite() const;

  Mat& operator+=(const Mat& other);
  Mat& operator*=(double s);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Mat operator*(const Mat& a, const Mat& b);
Mat operator+(Mat a, const Mat& b);
Mat operator-(Mat a, const Mat& b);
Mat operator*(double s, Mat a);

/// A·x with a fixed left-to-right summation order.
Vec matvec(const Mat& a, const Vec& x);
/// Aᵀ·y without forming the transpose.
Vec tmatvec(const Mat& a, const Vec& y);

/// Solves A x = b by Gaussian elimination with partial pivoting.
/// Throws Error when A is numerically singular.
Vec solve(const Mat& a, const Vec& b);

/// Counter-based SplitMix64 stream. The k-th output is a pure function of
/// (seed, k), so equal seeds give equal streams on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (one draw per call, no caching).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  Vec normal_vec(std::size_t n, double stddev = 1.0);
  Vec uniform_vec(std::size_t n, double lo, double hi);
  Mat normal_mat(std::size_t rows, std::size_t cols, double stddev = 1.0);

  /// Independent child stream; deterministic in (seed, stream).
  Rng split(std::uint64_t stream) const;

  /// Fisher-Yates permutation of {0, ..., n-1}.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

using ScalarFn = std::function<double(const Vec&)>;
using GradientFn = std::function<Vec(const Vec&)>;

/// Default finite-difference step 1e-5 * max(1, ‖x‖∞).
double default_fd_step(const Vec& x);

/// Central differences (f(x + h eᵢ) - f(x - h eᵢ)) / 2h per coordinate.
/// Throws NonFiniteError carrying the coordinate whose evaluation blew up.
Vec finite_difference_gradient(const ScalarFn& f, const Vec& x, double h);
Vec finite_difference_gradient(const ScalarFn& f, const Vec& x);

/// Column j holds the central difference of the vector map along eⱼ.
Mat finite_difference_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double h);

struct BruteForceOptions {
  std::size_t budget = 200000;
  /// Largest step used; should be below 2/L for the problem at hand.
  double step = 0.5;
  /// Number of iterations over which the step decays from `step` to `step / 2`.
  std::size_t decay_iters = 2000;
  double grad_tol = 1e-8;
};

struct BruteForceResult {
  Vec argmin;
  double value = 0.0;
  double grad_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;  // false: budget exhausted, result flagged
};

/// Long-horizon gradient descent with a diminishing-then-fixed step. Meant as
/// an independent reference for strongly convex subproblems: no line search,
/// no curvature model. Throws DivergenceError if the objective increases on
/// 100 consecutive steps.
BruteForceResult brute_force_argmin(const ScalarFn& f, const GradientFn& grad, const Vec& x0,
                                    const BruteForceOptions& options = {});

/// Relative error ‖a - b‖ / max(‖b‖, floor).
double relative_error(const Vec& a, const Vec& b, double floor = 1e-12);

}  // namespace mgrad
