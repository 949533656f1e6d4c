#include "gqlab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "gqlab/errors.hpp"

namespace gqlab {

namespace {

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NonFiniteValue(std::string(what) + ": non-finite entry");
  }
}

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionMismatch(std::string(what) + ": " + std::to_string(a) + " vs " +
                            std::to_string(b));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// DenseVector

DenseVector::DenseVector(std::size_t len, double fill) : data_(len, fill) {
  require_finite(data_, "DenseVector");
}

DenseVector::DenseVector(std::vector<double> data) : data_(std::move(data)) {
  require_finite(data_, "DenseVector");
}

DenseVector::DenseVector(std::initializer_list<double> values) : data_(values) {
  require_finite(data_, "DenseVector");
}

DenseVector DenseVector::unit(std::size_t len, std::size_t index) {
  DenseVector v(len);
  v[index] = 1.0;
  return v;
}

double DenseVector::dot(const DenseVector& other) const {
  require_same_size(size(), other.size(), "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < data_.size(); ++i) acc += data_[i] * other.data_[i];
  return acc;
}

double DenseVector::norm2() const { return std::sqrt(dot(*this)); }

double DenseVector::norm_inf() const {
  double m = 0.0;
  for (double v : data_) {
    if (std::isnan(v)) return v;
    m = std::max(m, std::abs(v));
  }
  return m;
}

double DenseVector::norm1() const {
  double acc = 0.0;
  for (double v : data_) acc += std::abs(v);
  return acc;
}

double DenseVector::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

bool DenseVector::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void DenseVector::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

void DenseVector::axpy(double scale, const DenseVector& other) {
  require_same_size(size(), other.size(), "axpy");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
}

DenseVector& DenseVector::operator+=(const DenseVector& other) {
  axpy(1.0, other);
  return *this;
}

DenseVector& DenseVector::operator-=(const DenseVector& other) {
  axpy(-1.0, other);
  return *this;
}

DenseVector& DenseVector::operator*=(double scale) {
  for (double& v : data_) v *= scale;
  return *this;
}

DenseVector operator+(DenseVector lhs, const DenseVector& rhs) { return lhs += rhs; }
DenseVector operator-(DenseVector lhs, const DenseVector& rhs) { return lhs -= rhs; }
DenseVector operator*(double scale, DenseVector v) { return v *= scale; }
DenseVector operator-(DenseVector v) { return v *= -1.0; }

// ---------------------------------------------------------------------------
// DenseMatrix

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  require_finite(data_, "DenseMatrix");
}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require_same_size(data_.size(), rows * cols, "DenseMatrix data");
  require_finite(data_, "DenseMatrix");
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    require_same_size(r.size(), cols_, "DenseMatrix row");
    data_.insert(data_.end(), r.begin(), r.end());
  }
  require_finite(data_, "DenseMatrix");
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::diagonal(const DenseVector& diag) {
  DenseMatrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

DenseMatrix DenseMatrix::outer(const DenseVector& u, const DenseVector& v) {
  DenseMatrix m(u.size(), v.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    for (std::size_t j = 0; j < v.size(); ++j) m(i, j) = u[i] * v[j];
  }
  return m;
}

DenseVector DenseMatrix::row_vector(std::size_t r) const {
  auto span = row(r);
  return DenseVector(std::vector<double>(span.begin(), span.end()));
}

DenseVector DenseMatrix::column_vector(std::size_t c) const {
  DenseVector v(rows_);
  for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
  return v;
}

DenseMatrix DenseMatrix::transpose() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  }
  return t;
}

DenseMatrix DenseMatrix::symmetric_part() const {
  if (!is_square()) throw DimensionMismatch("symmetric_part: matrix is not square");
  DenseMatrix s(rows_, cols_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) s(r, c) = 0.5 * ((*this)(r, c) + (*this)(c, r));
  }
  return s;
}

DenseVector DenseMatrix::operator*(const DenseVector& x) const {
  require_same_size(cols_, x.size(), "matrix-vector product");
  DenseVector y(rows_);
  for (std::size_t r = 0; r < rows_; ++r) {
    double acc = 0.0;
    const double* a = data_.data() + r * cols_;
    for (std::size_t c = 0; c < cols_; ++c) acc += a[c] * x[c];
    y[r] = acc;
  }
  return y;
}

DenseMatrix DenseMatrix::operator*(const DenseMatrix& other) const {
  require_same_size(cols_, other.rows_, "matrix product");
  DenseMatrix out(rows_, other.cols_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t k = 0; k < cols_; ++k) {
      const double a = (*this)(r, k);
      if (a == 0.0) continue;
      const double* b = other.data_.data() + k * other.cols_;
      double* o = out.data_.data() + r * other.cols_;
      for (std::size_t c = 0; c < other.cols_; ++c) o[c] += a * b[c];
    }
  }
  return out;
}

DenseVector DenseMatrix::transpose_times(const DenseVector& x) const {
  require_same_size(rows_, x.size(), "transposed matrix-vector product");
  DenseVector y(cols_);
  for (std::size_t r = 0; r < rows_; ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    const double* a = data_.data() + r * cols_;
    for (std::size_t c = 0; c < cols_; ++c) y[c] += a[c] * xr;
  }
  return y;
}

DenseMatrix& DenseMatrix::operator+=(const DenseMatrix& other) {
  require_same_size(rows_, other.rows_, "matrix sum rows");
  require_same_size(cols_, other.cols_, "matrix sum cols");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

DenseMatrix& DenseMatrix::operator-=(const DenseMatrix& other) {
  require_same_size(rows_, other.rows_, "matrix difference rows");
  require_same_size(cols_, other.cols_, "matrix difference cols");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

DenseMatrix& DenseMatrix::operator*=(double scale) {
  for (double& v : data_) v *= scale;
  return *this;
}

double DenseMatrix::norm_inf() const {
  double m = 0.0;
  for (std::size_t r = 0; r < rows_; ++r) {
    double acc = 0.0;
    for (double v : row(r)) acc += std::abs(v);
    m = std::max(m, acc);
  }
  return m;
}

double DenseMatrix::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

double DenseMatrix::frobenius() const {
  double acc = 0.0;
  for (double v : data_) acc += v * v;
  return std::sqrt(acc);
}

bool DenseMatrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

DenseMatrix operator+(DenseMatrix lhs, const DenseMatrix& rhs) { return lhs += rhs; }
DenseMatrix operator-(DenseMatrix lhs, const DenseMatrix& rhs) { return lhs -= rhs; }
DenseMatrix operator*(double scale, DenseMatrix m) { return m *= scale; }

// ---------------------------------------------------------------------------
// Elimination

namespace {

// In-place LU with partial pivoting; returns the row permutation.
std::vector<std::size_t> lu_decompose(DenseMatrix& lu) {
  const std::size_t n = lu.rows();
  const double scale = lu.max_abs();
  const double threshold = kPivotTolerance * scale;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  if (scale == 0.0 && n > 0) throw SingularMatrix("matrix is identically zero");

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    double best = std::abs(lu(k, k));
    for (std::size_t r = k + 1; r < n; ++r) {
      if (std::abs(lu(r, k)) > best) {
        best = std::abs(lu(r, k));
        pivot = r;
      }
    }
    if (best < threshold) {
      throw SingularMatrix("pivot " + std::to_string(best) + " below tolerance at column " +
                           std::to_string(k));
    }
    if (pivot != k) {
      std::swap_ranges(lu.row(k).begin(), lu.row(k).end(), lu.row(pivot).begin());
      std::swap(perm[k], perm[pivot]);
    }
    const double diag = lu(k, k);
    for (std::size_t r = k + 1; r < n; ++r) {
      const double factor = lu(r, k) / diag;
      lu(r, k) = factor;
      if (factor == 0.0) continue;
      for (std::size_t c = k + 1; c < n; ++c) lu(r, c) -= factor * lu(k, c);
    }
  }
  return perm;
}

void lu_substitute(const DenseMatrix& lu, std::span<double> x) {
  const std::size_t n = lu.rows();
  for (std::size_t r = 0; r < n; ++r) {
    double acc = x[r];
    for (std::size_t c = 0; c < r; ++c) acc -= lu(r, c) * x[c];
    x[r] = acc;
  }
  for (std::size_t r = n; r-- > 0;) {
    double acc = x[r];
    for (std::size_t c = r + 1; c < n; ++c) acc -= lu(r, c) * x[c];
    x[r] = acc / lu(r, r);
  }
}

void require_square(const DenseMatrix& a, const char* what) {
  if (!a.is_square()) throw DimensionMismatch(std::string(what) + ": matrix is not square");
}

}  // namespace

DenseVector solve(const DenseMatrix& a, const DenseVector& b) {
  require_square(a, "solve");
  require_same_size(a.rows(), b.size(), "solve rhs");
  DenseMatrix lu = a;
  const auto perm = lu_decompose(lu);
  DenseVector x(a.rows());
  for (std::size_t i = 0; i < perm.size(); ++i) x[i] = b[perm[i]];
  lu_substitute(lu, x.values());
  return x;
}

DenseMatrix solve(const DenseMatrix& a, const DenseMatrix& b) {
  require_square(a, "solve");
  require_same_size(a.rows(), b.rows(), "solve rhs");
  DenseMatrix lu = a;
  const auto perm = lu_decompose(lu);
  DenseMatrix out(b.rows(), b.cols());
  std::vector<double> column(a.rows());
  for (std::size_t c = 0; c < b.cols(); ++c) {
    for (std::size_t i = 0; i < perm.size(); ++i) column[i] = b(perm[i], c);
    lu_substitute(lu, column);
    for (std::size_t r = 0; r < a.rows(); ++r) out(r, c) = column[r];
  }
  return out;
}

DenseMatrix invert(const DenseMatrix& a) {
  require_square(a, "invert");
  return solve(a, DenseMatrix::identity(a.rows()));
}

std::size_t matrix_rank(const DenseMatrix& a, double rel_tol) {
  DenseMatrix m = a;
  const double threshold = rel_tol * m.max_abs();
  if (m.max_abs() == 0.0) return 0;
  std::size_t rank = 0;
  for (std::size_t c = 0; c < m.cols() && rank < m.rows(); ++c) {
    std::size_t pivot = rank;
    for (std::size_t r = rank + 1; r < m.rows(); ++r) {
      if (std::abs(m(r, c)) > std::abs(m(pivot, c))) pivot = r;
    }
    if (std::abs(m(pivot, c)) <= threshold) continue;
    std::swap_ranges(m.row(rank).begin(), m.row(rank).end(), m.row(pivot).begin());
    for (std::size_t r = rank + 1; r < m.rows(); ++r) {
      const double factor = m(r, c) / m(rank, c);
      for (std::size_t k = c; k < m.cols(); ++k) m(r, k) -= factor * m(rank, k);
    }
    ++rank;
  }
  return rank;
}

// ---------------------------------------------------------------------------
// Jacobi eigenvalue iteration

SymmetricEigen symmetric_eigen(const DenseMatrix& a) {
  require_square(a, "symmetric_eigen");
  const std::size_t n = a.rows();
  for (std::size_t r = 0; r < n; ++r) {
    double row_sum = 0.0;
    for (std::size_t c = 0; c < n; ++c) row_sum += std::abs(a(r, c) - a(c, r));
    if (row_sum > 1e-9) throw NotSymmetric("symmetric_eigen: ||a - a^T||_inf exceeds 1e-9");
  }

  DenseMatrix m = a.symmetric_part();
  DenseMatrix v = DenseMatrix::identity(n);
  const double scale = std::max(m.frobenius(), std::numeric_limits<double>::min());

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += m(p, q) * m(p, q);
    }
    if (std::sqrt(off) <= 1e-15 * scale) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m(k, p);
          const double mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m(p, k);
          const double mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return m(i, i) < m(j, j); });

  SymmetricEigen out{std::vector<double>(n), DenseMatrix(n, n)};
  for (std::size_t i = 0; i < n; ++i) {
    out.values[i] = m(order[i], order[i]);
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, i) = v(k, order[i]);
  }
  return out;
}

std::vector<double> symmetric_eigenvalues(const DenseMatrix& a) { return symmetric_eigen(a).values; }

DenseMatrix psd_pseudo_inverse(const DenseMatrix& a, double rel_tol) {
  const auto eig = symmetric_eigen(a);
  const std::size_t n = a.rows();
  double largest = 0.0;
  for (double v : eig.values) largest = std::max(largest, std::abs(v));
  DenseMatrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double lambda = eig.values[i];
    if (std::abs(lambda) <= rel_tol * largest || lambda == 0.0) continue;
    for (std::size_t r = 0; r < n; ++r) {
      const double vr = eig.vectors(r, i) / lambda;
      for (std::size_t c = 0; c < n; ++c) out(r, c) += vr * eig.vectors(c, i);
    }
  }
  return out;
}

DenseMatrix pseudo_inverse(const DenseMatrix& a, double rel_tol) {
  const DenseMatrix at = a.transpose();
  return psd_pseudo_inverse(at * a, rel_tol) * at;
}

}  // namespace gqlab
