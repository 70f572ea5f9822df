#pragma once

// Dense linear algebra and counter-based random numbers shared by every
// other module. All scalars are double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "iflab/errors.hpp"

namespace iflab {

using Vector = std::vector<double>;

namespace detail {

inline void require_same_size(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": length mismatch (" + std::to_string(a) +
                         " vs " + std::to_string(b) + ")");
  }
}

}  // namespace detail

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline void require_finite(std::span<const double> v, const char* what) {
  if (!all_finite(v)) throw NumericError(std::string(what) + ": non-finite entry");
}

inline void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite value");
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  detail::require_same_size(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  require_finite(s, "dot");
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  detail::require_same_size(x.size(), y.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vector scaled(std::span<const double> x, double alpha) {
  Vector out(x.begin(), x.end());
  for (double& v : out) v *= alpha;
  return out;
}

inline Vector add(std::span<const double> a, std::span<const double> b) {
  detail::require_same_size(a.size(), b.size(), "add");
  Vector out(a.begin(), a.end());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] += b[i];
  return out;
}

inline Vector sub(std::span<const double> a, std::span<const double> b) {
  detail::require_same_size(a.size(), b.size(), "sub");
  Vector out(a.begin(), a.end());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] -= b[i];
  return out;
}

inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

/// Row-major dense matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, Vector entries)
      : rows_(rows), cols_(cols), data_(std::move(entries)) {
    detail::require_same_size(rows_ * cols_, data_.size(), "Matrix");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::span<const double> entries() const noexcept { return data_; }
  std::span<double> entries() noexcept { return data_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data_).subspan(i * cols_, cols_);
  }

  Vector multiply(std::span<const double> x) const {
    detail::require_same_size(cols_, x.size(), "Matrix::multiply");
    Vector y(rows_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
      const double* r = data_.data() + i * cols_;
      double s = 0.0;
      for (std::size_t j = 0; j < cols_; ++j) s += r[j] * x[j];
      y[i] = s;
    }
    return y;
  }

  Matrix multiply(const Matrix& other) const {
    detail::require_same_size(cols_, other.rows_, "Matrix::multiply");
    Matrix out(rows_, other.cols_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t k = 0; k < cols_; ++k) {
        const double a = (*this)(i, k);
        if (a == 0.0) continue;
        for (std::size_t j = 0; j < other.cols_; ++j) out(i, j) += a * other(k, j);
      }
    return out;
  }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  void add_to_diagonal(double value) {
    detail::require_same_size(rows_, cols_, "add_to_diagonal");
    for (std::size_t i = 0; i < rows_; ++i) (*this)(i, i) += value;
  }

  /// Largest |A(i,j) - A(j,i)|.
  double asymmetry() const {
    detail::require_same_size(rows_, cols_, "asymmetry");
    double m = 0.0;
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = i + 1; j < cols_; ++j)
        m = std::max(m, std::abs((*this)(i, j) - (*this)(j, i)));
    return m;
  }

  bool is_symmetric(double tol = 1e-12) const { return rows_ == cols_ && asymmetry() <= tol; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

/// Cholesky factor L of a symmetric positive definite matrix (A = L L^T).
/// Damping is the caller's business; the factorization never adds any.
class Cholesky {
 public:
  explicit Cholesky(const Matrix& a) : n_(a.rows()), l_(a.rows(), a.cols()) {
    detail::require_same_size(a.rows(), a.cols(), "Cholesky");
    require_finite(a.entries(), "Cholesky input");
    for (std::size_t j = 0; j < n_; ++j) {
      double d = a(j, j);
      for (std::size_t k = 0; k < j; ++k) d -= l_(j, k) * l_(j, k);
      if (!(d > 0.0)) {
        throw DefinitenessError("matrix is not positive definite at pivot " + std::to_string(j) +
                                    " (value " + std::to_string(d) + ")",
                                j);
      }
      const double ljj = std::sqrt(d);
      l_(j, j) = ljj;
      for (std::size_t i = j + 1; i < n_; ++i) {
        double s = a(i, j);
        const double* li = &l_(i, 0);
        const double* lj = &l_(j, 0);
        for (std::size_t k = 0; k < j; ++k) s -= li[k] * lj[k];
        l_(i, j) = s / ljj;
      }
    }
  }

  std::size_t size() const noexcept { return n_; }
  const Matrix& factor() const noexcept { return l_; }

  Vector solve(std::span<const double> b) const {
    detail::require_same_size(n_, b.size(), "Cholesky::solve");
    Vector y(b.begin(), b.end());
    for (std::size_t i = 0; i < n_; ++i) {
      double s = y[i];
      const double* li = l_.row(i).data();
      for (std::size_t k = 0; k < i; ++k) s -= li[k] * y[k];
      y[i] = s / li[i];
    }
    for (std::size_t ii = n_; ii-- > 0;) {
      double s = y[ii];
      for (std::size_t k = ii + 1; k < n_; ++k) s -= l_(k, ii) * y[k];
      y[ii] = s / l_(ii, ii);
    }
    require_finite(y, "Cholesky::solve");
    return y;
  }

 private:
  std::size_t n_;
  Matrix l_;
};

inline Vector solve_spd(const Matrix& a, std::span<const double> b) { return Cholesky(a).solve(b); }

/// Counter-based generator: draw k of a stream is a pure function of
/// (seed, k), so states can be copied, split and replayed freely.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() {
    const std::uint64_t key = mix(seed ^ 0x5851F42D4C957F2DULL);
    return mix(key + (counter++) * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n) {
    const unsigned __int128 prod = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::size_t>(prod >> 64);
  }

  /// Independent child stream; does not advance this one.
  RngState split(std::uint64_t stream) const {
    return RngState{mix(seed + 0x632BE59BD9B4E019ULL * (stream + 1)) ^ mix(counter), 0};
  }
};

/// n standard-normal draws (Box-Muller, two uniforms per pair).
inline Vector rand_gaussian(RngState& rng, std::size_t n) {
  if (n == 0) throw UsageError("rand_gaussian: n must be >= 1");
  Vector out(n);
  for (std::size_t i = 0; i < n; i += 2) {
    const double u1 = 1.0 - rng.uniform();  // (0, 1]
    const double u2 = rng.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    out[i] = r * std::cos(t);
    if (i + 1 < n) out[i + 1] = r * std::sin(t);
  }
  return out;
}

/// Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> permutation(RngState& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.uniform_index(i)]);
  return p;
}

}  // namespace iflab
