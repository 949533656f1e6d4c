#pragma once

// Small dense linear algebra kernel. Everything is row-major double
// precision; the matrices involved are at most a few hundred rows.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace gqlab {

class DenseVector {
 public:
  DenseVector() = default;
  explicit DenseVector(std::size_t len, double fill = 0.0);
  /// Throws NonFiniteValue if any entry is NaN or infinite.
  explicit DenseVector(std::vector<double> data);
  DenseVector(std::initializer_list<double> values);

  static DenseVector zeros(std::size_t len) { return DenseVector(len); }
  static DenseVector unit(std::size_t len, std::size_t index);

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& data() const { return data_; }

  double dot(const DenseVector& other) const;
  double norm2() const;
  double norm_inf() const;
  double norm1() const;
  double sum() const;
  bool all_finite() const;

  void set_zero();
  /// this += scale * other
  void axpy(double scale, const DenseVector& other);

  DenseVector& operator+=(const DenseVector& other);
  DenseVector& operator-=(const DenseVector& other);
  DenseVector& operator*=(double scale);

  friend bool operator==(const DenseVector&, const DenseVector&) = default;

 private:
  std::vector<double> data_;
};

DenseVector operator+(DenseVector lhs, const DenseVector& rhs);
DenseVector operator-(DenseVector lhs, const DenseVector& rhs);
DenseVector operator*(double scale, DenseVector v);
DenseVector operator-(DenseVector v);

class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  /// Row-major data; throws DimensionMismatch or NonFiniteValue.
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix diagonal(const DenseVector& diag);
  static DenseMatrix outer(const DenseVector& u, const DenseVector& v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool is_square() const { return rows_ == cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  DenseVector row_vector(std::size_t r) const;
  DenseVector column_vector(std::size_t c) const;
  const std::vector<double>& data() const { return data_; }

  DenseMatrix transpose() const;
  DenseMatrix symmetric_part() const;
  DenseVector operator*(const DenseVector& x) const;
  DenseMatrix operator*(const DenseMatrix& other) const;
  /// this^T * x without forming the transpose.
  DenseVector transpose_times(const DenseVector& x) const;

  DenseMatrix& operator+=(const DenseMatrix& other);
  DenseMatrix& operator-=(const DenseMatrix& other);
  DenseMatrix& operator*=(double scale);

  double norm_inf() const;  ///< max absolute row sum
  double max_abs() const;
  double frobenius() const;
  bool all_finite() const;

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

DenseMatrix operator+(DenseMatrix lhs, const DenseMatrix& rhs);
DenseMatrix operator-(DenseMatrix lhs, const DenseMatrix& rhs);
DenseMatrix operator*(double scale, DenseMatrix m);

/// Relative pivot threshold below which a matrix is declared singular.
inline constexpr double kPivotTolerance = 1e-12;

/// Partial-pivoted Gaussian elimination. Throws SingularMatrix when a pivot
/// falls below kPivotTolerance * max|a|.
DenseVector solve(const DenseMatrix& a, const DenseVector& b);
/// Multi right-hand-side variant: returns X with a * X = b.
DenseMatrix solve(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix invert(const DenseMatrix& a);

struct SymmetricEigen {
  std::vector<double> values;  ///< ascending
  DenseMatrix vectors;         ///< column i pairs with values[i]
};

/// Cyclic Jacobi rotations. Throws NotSymmetric if ||a - a^T||_inf > 1e-9.
SymmetricEigen symmetric_eigen(const DenseMatrix& a);
std::vector<double> symmetric_eigenvalues(const DenseMatrix& a);

/// Moore-Penrose inverse of a symmetric positive semidefinite matrix via its
/// eigendecomposition; eigenvalues below rel_tol * max eigenvalue are dropped.
DenseMatrix psd_pseudo_inverse(const DenseMatrix& a, double rel_tol = 1e-10);
/// Moore-Penrose inverse of a general matrix, computed as (a^T a)^+ a^T.
DenseMatrix pseudo_inverse(const DenseMatrix& a, double rel_tol = 1e-10);

/// Numerical rank by elimination with the same relative tolerance as solve.
std::size_t matrix_rank(const DenseMatrix& a, double rel_tol = 1e-10);

}  // namespace gqlab
