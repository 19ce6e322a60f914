#pragma once

#include <cstddef>
#include <vector>

namespace flourish::linalg {

/// Dense row-major matrix of doubles. Sized for this project's problems
/// (tens of variables, a few thousand cases), not a general BLAS.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), v_(rows * cols, fill) {}

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t i, std::size_t j) { return v_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return v_[i * cols_ + j]; }

    double* row(std::size_t i) { return v_.data() + i * cols_; }
    const double* row(std::size_t i) const { return v_.data() + i * cols_; }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> v_;
};

/// C = A * B.
Matrix multiply(const Matrix& a, const Matrix& b);

/// C = A * B^T; both operands addressed by contiguous rows.
Matrix multiply_abt(const Matrix& a, const Matrix& b);

/// C = A^T * B for tall-skinny A, B (latent-side products; scalar loops).
Matrix multiply_atb(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);

/// Symmetric product M * L^T computed on the upper triangle and mirrored, so
/// the result is exactly symmetric by construction. Requires that M = X * S
/// for symmetric S with L = X conceptually; here it simply evaluates
/// C(i,j) = dot(M.row(i), L.row(j)) for i <= j and mirrors.
Matrix multiply_abt_symmetric(const Matrix& m, const Matrix& l);

double max_abs_diff(const Matrix& a, const Matrix& b);
double max_abs(const std::vector<double>& v);

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// `ok` is false when a non-positive pivot is hit (matrix not PD).
struct Cholesky {
    Matrix lower;
    bool ok = false;

    double logdet() const;
};

Cholesky cholesky(const Matrix& spd);

/// Solves A x = b in place given A = L L^T.
void cholesky_solve_inplace(const Cholesky& chol, double* x);

/// Solves A X = B column-wise.
Matrix cholesky_solve(const Cholesky& chol, const Matrix& b);

/// A^{-1}; exactly symmetric (upper triangle mirrored).
Matrix cholesky_inverse(const Cholesky& chol);

/// sum_{ij} A_ij * B_ij; equals tr(A B) when both are symmetric.
double trace_product_sym(const Matrix& a, const Matrix& b);

}  // namespace flourish::linalg
