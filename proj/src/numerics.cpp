#include "mgrad/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace mgrad {

// ---------------------------------------------------------------- Vec

Vec::Vec(std::initializer_list<double> values) : data_(values) { require_finite(*this, "Vec"); }

Vec::Vec(std::vector<double> values) : data_(std::move(values)) { require_finite(*this, "Vec"); }

Vec Vec::basis(std::size_t n, std::size_t i) {
  Vec e(n);
  e[i] = 1.0;
  return e;
}

Vec& Vec::operator+=(const Vec& other) {
  require_dim(other, size(), "Vec +=");
  for (std::size_t i = 0; i < size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Vec& Vec::operator-=(const Vec& other) {
  require_dim(other, size(), "Vec -=");
  for (std::size_t i = 0; i < size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Vec& Vec::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Vec& Vec::axpy(double s, const Vec& other) {
  require_dim(other, size(), "Vec axpy");
  for (std::size_t i = 0; i < size(); ++i) data_[i] += s * other.data_[i];
  return *this;
}

double Vec::squared_norm() const {
  double acc = 0.0;
  for (double v : data_) acc += v * v;
  return acc;
}

double Vec::norm() const { return std::sqrt(squared_norm()); }

double Vec::norm_inf() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

double Vec::sum() const {
  double acc = 0.0;
  for (double v : data_) acc += v;
  return acc;
}

bool Vec::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Vec Vec::slice(std::size_t offset, std::size_t n) const {
  if (offset + n > size()) throw DimensionError("Vec::slice out of range", offset + n, size());
  Vec out(n);
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(offset), n, out.data_.begin());
  return out;
}

Vec operator+(Vec a, const Vec& b) { return a += b; }
Vec operator-(Vec a, const Vec& b) { return a -= b; }
Vec operator-(Vec a) { return a *= -1.0; }
Vec operator*(double s, Vec a) { return a *= s; }
Vec operator*(Vec a, double s) { return a *= s; }

double dot(const Vec& a, const Vec& b) {
  require_dim(b, a.size(), "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

Vec concat(const Vec& a, const Vec& b) {
  Vec out(a.size() + b.size());
  std::copy(a.begin(), a.end(), out.begin());
  std::copy(b.begin(), b.end(), out.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

void require_dim(const Vec& a, std::size_t expected, const char* what) {
  if (a.size() != expected) throw DimensionError(what, expected, a.size());
}

void require_finite(const Vec& a, const char* what) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i])) throw NonFiniteError(std::string(what) + ": non-finite entry", i);
  }
}

// ---------------------------------------------------------------- Mat

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> row_major)
    : rows_(rows), cols_(cols), data_(std::move(row_major)) {
  if (data_.size() != rows * cols) throw DimensionError("Mat data", rows * cols, data_.size());
  if (!all_finite()) throw NonFiniteError("Mat: non-finite entry", 0);
}

Mat::Mat(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Mat ragged row", cols_, r.size());
    data_.insert(data_.end(), r.begin(), r.end());
  }
  if (!all_finite()) throw NonFiniteError("Mat: non-finite entry", 0);
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::transpose() const {
  Mat t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

double Mat::frobenius_norm() const {
  double acc = 0.0;
  for (double v : data_) acc += v * v;
  return std::sqrt(acc);
}

double Mat::spectral_norm(int iterations) const {
  if (rows_ == 0 || cols_ == 0) return 0.0;
  Vec v(cols_, 1.0 / std::sqrt(static_cast<double>(cols_)));
  double sigma = 0.0;
  for (int k = 0; k < iterations; ++k) {
    Vec w = tmatvec(*this, matvec(*this, v));
    double n = w.norm();
    if (n == 0.0) return 0.0;
    sigma = std::sqrt(n);
    v = (1.0 / n) * std::move(w);
  }
  return sigma;
}

bool Mat::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Mat& Mat::operator+=(const Mat& other) {
  if (other.rows_ != rows_ || other.cols_ != cols_)
    throw DimensionError("Mat +=", rows_ * cols_, other.rows_ * other.cols_);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Mat& Mat::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Mat operator*(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) throw DimensionError("Mat product", a.cols(), b.rows());
  Mat c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

Mat operator+(Mat a, const Mat& b) { return a += b; }
Mat operator-(Mat a, const Mat& b) { return a += (-1.0) * b; }
Mat operator*(double s, Mat a) { return a *= s; }

Vec matvec(const Mat& a, const Vec& x) {
  if (a.cols() != x.size())
    throw DimensionError("matvec: A is " + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()) + " but x",
                         a.cols(), x.size());
  Vec y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double acc = 0.0;
    auto r = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) acc += r[j] * x[j];
    y[i] = acc;
  }
  return y;
}

Vec tmatvec(const Mat& a, const Vec& y) {
  if (a.rows() != y.size())
    throw DimensionError("tmatvec: A is " + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()) + " but y",
                         a.rows(), y.size());
  Vec x(a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) x[j] += r[j] * y[i];
  }
  return x;
}

Vec solve(const Mat& a, const Vec& b) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw DimensionError("solve: square matrix required", n, a.cols());
  require_dim(b, n, "solve rhs");
  Mat lu = a;
  Vec x = b;
  double scale = 0.0;
  for (double v : a.values()) scale = std::max(scale, std::abs(v));
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(lu(i, k)) > std::abs(lu(piv, k))) piv = i;
    if (std::abs(lu(piv, k)) <= 1e-14 * std::max(scale, 1e-300))
      throw Error("solve: matrix is numerically singular");
    if (piv != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(k, j), lu(piv, j));
      std::swap(x[k], x[piv]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = lu(i, k) / lu(k, k);
      if (f == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) lu(i, j) -= f * lu(k, j);
      x[i] -= f * x[k];
    }
  }
  for (std::size_t k = n; k-- > 0;) {
    double acc = x[k];
    for (std::size_t j = k + 1; j < n; ++j) acc -= lu(k, j) * x[j];
    x[k] = acc / lu(k, k);
  }
  return x;
}

// ---------------------------------------------------------------- Rng

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return splitmix64(seed_ + counter_ * 0x9e3779b97f4a7c15ULL);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw Error("Rng::below: empty range");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

Vec Rng::normal_vec(std::size_t n, double stddev) {
  Vec v(n);
  for (double& e : v) e = stddev * normal();
  return v;
}

Vec Rng::uniform_vec(std::size_t n, double lo, double hi) {
  Vec v(n);
  for (double& e : v) e = uniform(lo, hi);
  return v;
}

Mat Rng::normal_mat(std::size_t rows, std::size_t cols, double stddev) {
  Mat m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = stddev * normal();
  return m;
}

Rng Rng::split(std::uint64_t stream) const {
  return Rng(splitmix64(seed_ ^ splitmix64(stream + 0x632be59bd9b4e019ULL)));
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[below(i)]);
  return p;
}

// ---------------------------------------------------------------- oracles

double default_fd_step(const Vec& x) { return 1e-5 * std::max(1.0, x.norm_inf()); }

Vec finite_difference_gradient(const ScalarFn& f, const Vec& x, double h) {
  if (!(h > 0.0)) throw Error("finite_difference_gradient: step must be positive");
  Vec g(x.size());
  Vec probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NonFiniteError("finite_difference_gradient: non-finite function value", i);
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

Vec finite_difference_gradient(const ScalarFn& f, const Vec& x) {
  return finite_difference_gradient(f, x, default_fd_step(x));
}

Mat finite_difference_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double h) {
  if (!(h > 0.0)) throw Error("finite_difference_jacobian: step must be positive");
  Vec probe = x;
  Mat jac;
  for (std::size_t j = 0; j < x.size(); ++j) {
    probe[j] = x[j] + h;
    Vec fp = f(probe);
    probe[j] = x[j] - h;
    Vec fm = f(probe);
    probe[j] = x[j];
    if (j == 0) jac = Mat(fp.size(), x.size());
    if (!fp.all_finite() || !fm.all_finite())
      throw NonFiniteError("finite_difference_jacobian: non-finite value", j);
    for (std::size_t i = 0; i < fp.size(); ++i) jac(i, j) = (fp[i] - fm[i]) / (2.0 * h);
  }
  return jac;
}

BruteForceResult brute_force_argmin(const ScalarFn& f, const GradientFn& grad, const Vec& x0,
                                    const BruteForceOptions& options) {
  BruteForceResult out;
  Vec x = x0;
  double fx = f(x);
  std::size_t increases = 0;
  std::vector<double> recent;
  for (std::size_t k = 0; k < options.budget; ++k) {
    Vec g = grad(x);
    out.grad_norm = g.norm();
    if (!std::isfinite(fx) || !g.all_finite())
      throw DivergenceError("brute_force_argmin: non-finite iterate", recent);
    if (out.grad_norm <= options.grad_tol) {
      out.converged = true;
      out.iterations = k;
      break;
    }
    const double frac =
        options.decay_iters ? std::min(1.0, static_cast<double>(k) / options.decay_iters) : 1.0;
    const double step = options.step * (1.0 - 0.5 * frac);
    x.axpy(-step, g);
    const double fnext = f(x);
    increases = fnext > fx ? increases + 1 : 0;
    fx = fnext;
    recent.push_back(fx);
    if (recent.size() > 100) recent.erase(recent.begin());
    if (increases >= 100)
      throw DivergenceError("brute_force_argmin: objective increased on 100 consecutive steps",
                            recent);
    out.iterations = k + 1;
  }
  if (!out.converged) out.grad_norm = grad(x).norm();
  out.converged = out.converged || out.grad_norm <= options.grad_tol;
  out.value = fx;
  out.argmin = std::move(x);
  return out;
}

double relative_error(const Vec& a, const Vec& b, double floor) {
  return (a - b).norm() / std::max(b.norm(), floor);
}

}  // namespace mgrad
