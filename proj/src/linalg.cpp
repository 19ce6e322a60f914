#include "flourish/linalg.hpp"

#include <cassert>
#include <cmath>
#include <cstring>

#include "flourish/kernels.hpp"

namespace flourish::linalg {

using kernels::active;

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix multiply(const Matrix& a, const Matrix& b) {
    assert(a.cols() == b.rows());
    const auto& k = active();
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* ci = c.row(i);
        for (std::size_t l = 0; l < a.cols(); ++l) {
            double ail = a(i, l);
            if (ail != 0.0) k.axpy(ail, b.row(l), ci, b.cols());
        }
    }
    return c;
}

Matrix multiply_abt(const Matrix& a, const Matrix& b) {
    assert(a.cols() == b.cols());
    const auto& k = active();
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            c(i, j) = k.dot(a.row(i), b.row(j), a.cols());
        }
    }
    return c;
}

Matrix multiply_atb(const Matrix& a, const Matrix& b) {
    assert(a.rows() == b.rows());
    Matrix c(a.cols(), b.cols());
    for (std::size_t l = 0; l < a.rows(); ++l) {
        for (std::size_t i = 0; i < a.cols(); ++i) {
            double ali = a(l, i);
            if (ali == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += ali * b(l, j);
        }
    }
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

Matrix multiply_abt_symmetric(const Matrix& m, const Matrix& l) {
    assert(m.rows() == l.rows() && m.cols() == l.cols());
    const auto& k = active();
    Matrix c(m.rows(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = i; j < m.rows(); ++j) {
            double v = k.dot(m.row(i), l.row(j), m.cols());
            c(i, j) = v;
            c(j, i) = v;
        }
    }
    return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    assert(a.rows() == b.rows() && a.cols() == b.cols());
    double m = 0.0;
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < a.rows() * a.cols(); ++i) {
        m = std::max(m, std::fabs(pa[i] - pb[i]));
    }
    return m;
}

double max_abs(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::fabs(x));
    return m;
}

double Cholesky::logdet() const {
    double s = 0.0;
    for (std::size_t i = 0; i < lower.rows(); ++i) s += std::log(lower(i, i));
    return 2.0 * s;
}

Cholesky cholesky(const Matrix& spd) {
    assert(spd.rows() == spd.cols());
    const auto& k = active();
    const std::size_t n = spd.rows();
    Cholesky out;
    out.lower = Matrix(n, n);
    Matrix& l = out.lower;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = spd(i, j) - k.dot(l.row(i), l.row(j), j);
            if (i == j) {
                if (!(s > 0.0) || !std::isfinite(s)) return out;  // not PD
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    out.ok = true;
    return out;
}

void cholesky_solve_inplace(const Cholesky& chol, double* x) {
    const auto& k = active();
    const Matrix& l = chol.lower;
    const std::size_t n = l.rows();
    // forward: L z = x
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = (x[i] - k.dot(l.row(i), x, i)) / l(i, i);
    }
    // backward: L^T y = z, row-oriented so the inner update is contiguous
    for (std::size_t ip = n; ip-- > 0;) {
        x[ip] /= l(ip, ip);
        k.axpy(-x[ip], l.row(ip), x, ip);
    }
}

Matrix cholesky_solve(const Cholesky& chol, const Matrix& b) {
    assert(chol.lower.rows() == b.rows());
    Matrix x = transpose(b);  // work on contiguous columns
    for (std::size_t j = 0; j < x.rows(); ++j) cholesky_solve_inplace(chol, x.row(j));
    return transpose(x);
}

Matrix cholesky_inverse(const Cholesky& chol) {
    const std::size_t n = chol.lower.rows();
    Matrix inv(n, n);
    std::vector<double> col(n);
    for (std::size_t j = 0; j < n; ++j) {
        std::memset(col.data(), 0, n * sizeof(double));
        col[j] = 1.0;
        cholesky_solve_inplace(chol, col.data());
        for (std::size_t i = j; i < n; ++i) {
            inv(i, j) = col[i];
            inv(j, i) = col[i];
        }
    }
    return inv;
}

double trace_product_sym(const Matrix& a, const Matrix& b) {
    assert(a.rows() == b.rows() && a.cols() == b.cols());
    return kernels::active().dot(a.data(), b.data(), a.rows() * a.cols());
}

}  // namespace flourish::linalg
