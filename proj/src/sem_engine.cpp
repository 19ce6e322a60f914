#include "flourish/sem/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "flourish/datamodel.hpp"
#include "flourish/kernels.hpp"
#include "flourish/parallel.hpp"

namespace flourish::sem {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

SampleMoments sample_moments(const ObservedTable& table) {
    const std::size_t p = table.variables.size();
    if (table.values.cols() != p || table.values.rows() != table.cases.size()) {
        throw PipelineError("sample moments: table shape mismatch");
    }
    std::vector<std::size_t> complete;
    for (std::size_t i = 0; i < table.values.rows(); ++i) {
        const double* row = table.values.row(i);
        bool ok = true;
        for (std::size_t j = 0; j < p; ++j) {
            if (std::isnan(row[j])) {
                ok = false;
                break;
            }
        }
        if (ok) complete.push_back(i);
    }
    const std::size_t n = complete.size();
    if (n < p + 1) {
        throw PipelineError("sample moments: " + std::to_string(n) +
                            " complete cases for " + std::to_string(p) +
                            " variables; need at least p + 1");
    }

    // column-major copy of the complete cases so the moment loops run on
    // contiguous data
    linalg::Matrix cols(p, n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = table.values.row(complete[i]);
        for (std::size_t j = 0; j < p; ++j) cols(j, i) = row[j];
    }

    const auto& k = kernels::active();
    SampleMoments m;
    m.n_cases = static_cast<long>(n);
    m.means.resize(p);
    for (std::size_t j = 0; j < p; ++j) {
        m.means[j] = k.sum(cols.row(j), n) / static_cast<double>(n);
        double* row = cols.row(j);
        for (std::size_t i = 0; i < n; ++i) row[i] -= m.means[j];
    }
    m.covariance = linalg::Matrix(p, p);
    const double denom = static_cast<double>(n - 1);
    for (std::size_t a = 0; a < p; ++a) {
        for (std::size_t b = a; b < p; ++b) {
            const double v = k.dot(cols.row(a), cols.row(b), n) / denom;
            m.covariance(a, b) = v;
            m.covariance(b, a) = v;
        }
    }
    for (std::size_t i : complete) m.complete_cases.push_back(table.cases[i]);

    auto chol = linalg::cholesky(m.covariance);
    if (!chol.ok) {
        throw PipelineError("sample moments: covariance matrix not positive definite");
    }
    m.log_det = chol.logdet();
    return m;
}

SampleMoments moments_from_covariance(const linalg::Matrix& s, long n_cases) {
    if (s.rows() != s.cols()) throw PipelineError("moments: covariance must be square");
    auto chol = linalg::cholesky(s);
    if (!chol.ok) throw PipelineError("moments: covariance matrix not positive definite");
    SampleMoments m;
    m.covariance = s;
    m.means.assign(s.rows(), 0.0);
    m.n_cases = n_cases;
    m.log_det = chol.logdet();
    return m;
}

SampleMoments to_correlation(const SampleMoments& moments) {
    const std::size_t p = moments.covariance.rows();
    std::vector<double> sd(p);
    for (std::size_t i = 0; i < p; ++i) sd[i] = std::sqrt(moments.covariance(i, i));
    SampleMoments out = moments;
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            out.covariance(i, j) = moments.covariance(i, j) / (sd[i] * sd[j]);
        }
        if (!out.means.empty()) out.means[i] = moments.means[i] / sd[i];
    }
    auto chol = linalg::cholesky(out.covariance);
    if (!chol.ok) throw PipelineError("correlation rescale: matrix not positive definite");
    out.log_det = chol.logdet();
    return out;
}

linalg::Matrix latent_covariance(const ModelLayout& layout, const ParameterVector& theta) {
    const std::size_t q = layout.n_latent();
    std::vector<double> t(q, 1.0);
    for (std::size_t j = 0; j < layout.n_endogenous; ++j) t[1 + j] = theta.path[j];
    linalg::Matrix a(q, q);
    for (std::size_t i = 0; i < q; ++i) {
        for (std::size_t j = i; j < q; ++j) {
            double v = theta.exo_variance * t[i] * t[j];
            if (i == j && i > 0) v += theta.latent_residual[i - 1];
            a(i, j) = v;
            a(j, i) = v;
        }
    }
    return a;
}

linalg::Matrix implied_covariance(const ModelLayout& layout, const ParameterVector& theta) {
    const std::size_t p = layout.n_observed();
    const auto a = latent_covariance(layout, theta);
    linalg::Matrix sigma(p, p);
    for (std::size_t r = 0; r < p; ++r) {
        for (std::size_t s = r; s < p; ++s) {
            double v = theta.loading[r] * theta.loading[s] *
                       a(layout.latent_of[r], layout.latent_of[s]);
            if (r == s) v += theta.measurement_residual[r];
            sigma(r, s) = v;
            sigma(s, r) = v;
        }
    }
    return sigma;
}

double ml_discrepancy(const SampleMoments& moments, const linalg::Matrix& sigma) {
    const std::size_t p = sigma.rows();
    auto chol = linalg::cholesky(sigma);
    if (!chol.ok) return kInf;
    auto x = linalg::cholesky_solve(chol, moments.covariance);
    double trace = 0.0;
    for (std::size_t i = 0; i < p; ++i) trace += x(i, i);
    const double f = chol.logdet() + trace - moments.log_det - static_cast<double>(p);
    if (!std::isfinite(f)) return kInf;
    return std::max(f, 0.0);
}

double fml_and_gradient(const ModelLayout& layout, const SampleMoments& moments,
                        const ParameterVector& theta, std::vector<double>& grad) {
    const std::size_t p = layout.n_observed();
    const std::size_t q = layout.n_latent();
    const auto a = latent_covariance(layout, theta);
    const auto sigma = implied_covariance(layout, theta);
    auto chol = linalg::cholesky(sigma);
    if (!chol.ok) return kInf;

    const auto sigma_inv = linalg::cholesky_inverse(chol);
    const auto x = linalg::cholesky_solve(chol, moments.covariance);  // Sigma^-1 S
    double trace = 0.0;
    for (std::size_t i = 0; i < p; ++i) trace += x(i, i);
    double f = chol.logdet() + trace - moments.log_det - static_cast<double>(p);
    if (!std::isfinite(f)) return kInf;
    f = std::max(f, 0.0);

    // W = Sigma^-1 - Sigma^-1 S Sigma^-1, symmetrized
    const auto xsi = linalg::multiply(x, sigma_inv);
    linalg::Matrix w(p, p);
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = i; j < p; ++j) {
            const double v = sigma_inv(i, j) - 0.5 * (xsi(i, j) + xsi(j, i));
            w(i, j) = v;
            w(j, i) = v;
        }
    }

    // WL (p x q) and V = L^T W L (q x q) via the one-nonzero-per-row structure
    linalg::Matrix wl(p, q);
    for (std::size_t s = 0; s < p; ++s) {
        const double ls = theta.loading[s];
        if (ls == 0.0) continue;
        const std::size_t c = layout.latent_of[s];
        for (std::size_t r = 0; r < p; ++r) wl(r, c) += w(r, s) * ls;
    }
    const auto wla = linalg::multiply(wl, a);
    linalg::Matrix v(q, q);
    for (std::size_t r = 0; r < p; ++r) {
        const double lr = theta.loading[r];
        if (lr == 0.0) continue;
        const std::size_t c = layout.latent_of[r];
        for (std::size_t d = 0; d < q; ++d) v(c, d) += lr * wl(r, d);
    }

    std::vector<double> t(q, 1.0);
    for (std::size_t j = 0; j < layout.n_endogenous; ++j) t[1 + j] = theta.path[j];
    std::vector<double> vt(q, 0.0);
    for (std::size_t i = 0; i < q; ++i) {
        for (std::size_t j = 0; j < q; ++j) vt[i] += v(i, j) * t[j];
    }

    grad.resize(layout.params.size());
    for (std::size_t k = 0; k < layout.params.size(); ++k) {
        const auto& ref = layout.params[k];
        switch (ref.kind) {
            case ParamKind::Loading:
                grad[k] = 2.0 * wla(ref.row, ref.latent);
                break;
            case ParamKind::Path:
                grad[k] = 2.0 * theta.exo_variance * vt[1 + ref.row];
                break;
            case ParamKind::LatentVariance: {
                double tvt = 0.0;
                for (std::size_t i = 0; i < q; ++i) tvt += t[i] * vt[i];
                grad[k] = tvt;
                break;
            }
            case ParamKind::LatentResidual:
                grad[k] = v(1 + ref.row, 1 + ref.row);
                break;
            case ParamKind::MeasurementResidual:
                grad[k] = w(ref.row, ref.row);
                break;
        }
    }
    return f;
}

BfgsReport bfgs_minimize(
    const std::function<double(const std::vector<double>&, std::vector<double>&)>& fg,
    std::vector<double>& x, const BfgsOptions& options) {
    const std::size_t n = x.size();
    const auto& k = kernels::active();
    BfgsReport report;

    std::vector<double> g(n), g_new(n), d(n), s(n), y(n), hy(n), x_new(n);
    double f = fg(x, g);
    if (!std::isfinite(f)) {
        report.value = f;  // infeasible start: nothing to do
        return report;
    }

    linalg::Matrix h = linalg::Matrix::identity(n);
    bool h_scaled = false;

    for (int iter = 0; iter < options.max_iterations; ++iter) {
        report.grad_norm = linalg::max_abs(g);
        if (report.grad_norm < options.grad_tol) {
            report.converged = true;
            break;
        }

        for (std::size_t i = 0; i < n; ++i) d[i] = -k.dot(h.row(i), g.data(), n);
        double gd = k.dot(g.data(), d.data(), n);
        if (!(gd < 0.0)) {
            // curvature information went bad; restart from steepest descent
            h = linalg::Matrix::identity(n);
            h_scaled = false;
            for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
            gd = k.dot(g.data(), d.data(), n);
            if (!(gd < 0.0)) break;  // gradient is zero or non-finite
        }

        // Armijo backtracking; +inf values reject the step
        double step = 1.0;
        double f_new = kInf;
        bool accepted = false;
        for (int half = 0; half < 60; ++half) {
            for (std::size_t i = 0; i < n; ++i) x_new[i] = x[i] + step * d[i];
            f_new = fg(x_new, g_new);
            if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * gd) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        ++report.iterations;
        if (!accepted) break;  // no acceptable step along d

        for (std::size_t i = 0; i < n; ++i) {
            s[i] = x_new[i] - x[i];
            y[i] = g_new[i] - g[i];
        }
        const double sy = k.dot(s.data(), y.data(), n);
        const double ss = std::sqrt(k.sumsq(s.data(), n));
        const double yy = std::sqrt(k.sumsq(y.data(), n));
        if (sy > 1e-12 * ss * yy && sy > 0.0) {
            if (!h_scaled) {
                const double scale = sy / k.dot(y.data(), y.data(), n);
                for (std::size_t i = 0; i < n; ++i) h(i, i) = scale;
                h_scaled = true;
            }
            const double rho = 1.0 / sy;
            for (std::size_t i = 0; i < n; ++i) hy[i] = k.dot(h.row(i), y.data(), n);
            const double yhy = k.dot(y.data(), hy.data(), n);
            const double c = rho * (1.0 + rho * yhy);
            for (std::size_t i = 0; i < n; ++i) {
                double* hrow = h.row(i);
                k.axpy(-rho * s[i], hy.data(), hrow, n);
                k.axpy(-rho * hy[i] + c * s[i], s.data(), hrow, n);
            }
            // the two rank-one sweeps above keep h symmetric in exact
            // arithmetic; mirror to keep it exactly so
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = i + 1; j < n; ++j) {
                    const double m = 0.5 * (h(i, j) + h(j, i));
                    h(i, j) = m;
                    h(j, i) = m;
                }
            }
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }
    if (!report.converged) {
        report.grad_norm = linalg::max_abs(g);
        report.converged = report.grad_norm < options.grad_tol;
    }
    report.value = f;
    return report;
}

namespace {

// working scale: variances are optimized as logs so they stay positive;
// measurement residuals keep a configurable floor under the exp
struct Packer {
    const ModelLayout& layout;
    double floor;

    std::vector<double> natural(const ParameterVector& theta) const {
        std::vector<double> x(layout.params.size());
        for (std::size_t k = 0; k < layout.params.size(); ++k) {
            const auto& ref = layout.params[k];
            switch (ref.kind) {
                case ParamKind::Loading: x[k] = theta.loading[ref.row]; break;
                case ParamKind::Path: x[k] = theta.path[ref.row]; break;
                case ParamKind::LatentVariance: x[k] = theta.exo_variance; break;
                case ParamKind::LatentResidual: x[k] = theta.latent_residual[ref.row]; break;
                case ParamKind::MeasurementResidual:
                    x[k] = theta.measurement_residual[ref.row];
                    break;
            }
        }
        return x;
    }

    ParameterVector from_natural(const std::vector<double>& x) const {
        ParameterVector theta = blank();
        for (std::size_t k = 0; k < layout.params.size(); ++k) {
            const auto& ref = layout.params[k];
            switch (ref.kind) {
                case ParamKind::Loading: theta.loading[ref.row] = x[k]; break;
                case ParamKind::Path: theta.path[ref.row] = x[k]; break;
                case ParamKind::LatentVariance: theta.exo_variance = x[k]; break;
                case ParamKind::LatentResidual: theta.latent_residual[ref.row] = x[k]; break;
                case ParamKind::MeasurementResidual:
                    theta.measurement_residual[ref.row] = x[k];
                    break;
            }
        }
        return theta;
    }

    std::vector<double> working(const ParameterVector& theta) const {
        std::vector<double> x = natural(theta);
        for (std::size_t k = 0; k < layout.params.size(); ++k) {
            switch (layout.params[k].kind) {
                case ParamKind::LatentVariance:
                case ParamKind::LatentResidual:
                    x[k] = std::log(std::max(x[k], 1e-300));
                    break;
                case ParamKind::MeasurementResidual:
                    x[k] = std::log(std::max(x[k] - floor, 1e-300));
                    break;
                default: break;
            }
        }
        return x;
    }

    ParameterVector from_working(const std::vector<double>& w) const {
        std::vector<double> x = w;
        for (std::size_t k = 0; k < layout.params.size(); ++k) {
            switch (layout.params[k].kind) {
                case ParamKind::LatentVariance:
                case ParamKind::LatentResidual: x[k] = std::exp(x[k]); break;
                case ParamKind::MeasurementResidual: x[k] = floor + std::exp(x[k]); break;
                default: break;
            }
        }
        return from_natural(x);
    }

    // d(natural)/d(working), evaluated at the natural value
    double chain(std::size_t k, const ParameterVector& theta) const {
        const auto& ref = layout.params[k];
        switch (ref.kind) {
            case ParamKind::LatentVariance: return theta.exo_variance;
            case ParamKind::LatentResidual: return theta.latent_residual[ref.row];
            case ParamKind::MeasurementResidual:
                return theta.measurement_residual[ref.row] - floor;
            default: return 1.0;
        }
    }

    ParameterVector blank() const {
        ParameterVector theta;
        theta.loading.assign(layout.n_observed(), 1.0);
        theta.path.assign(layout.n_endogenous, 0.0);
        theta.latent_residual.assign(layout.n_endogenous, 1.0);
        theta.measurement_residual.assign(layout.n_observed(), 1.0);
        return theta;
    }
};

ParameterVector start_values(const ModelLayout& layout, const SampleMoments& moments) {
    Packer packer{layout, 0.0};
    ParameterVector theta = packer.blank();
    theta.exo_variance = moments.covariance(0, 0);
    for (std::size_t j = 0; j < layout.n_endogenous; ++j) {
        for (std::size_t r = 0; r < layout.n_observed(); ++r) {
            if (layout.latent_of[r] == 1 + j && layout.fixed_loading[r]) {
                theta.latent_residual[j] = 0.5 * moments.covariance(r, r);
                break;
            }
        }
    }
    for (std::size_t r = 0; r < layout.n_observed(); ++r) {
        theta.measurement_residual[r] = 0.5 * moments.covariance(r, r);
    }
    return theta;
}

}  // namespace

std::vector<double> implied_latent_sd(const ModelLayout& layout, const ParameterVector& theta) {
    std::vector<double> sd(layout.n_latent());
    sd[0] = std::sqrt(theta.exo_variance);
    for (std::size_t j = 0; j < layout.n_endogenous; ++j) {
        sd[1 + j] = std::sqrt(theta.path[j] * theta.path[j] * theta.exo_variance +
                              theta.latent_residual[j]);
    }
    return sd;
}

void standardize(FitResult& result) {
    const auto& layout = result.layout;
    const auto sigma = implied_covariance(layout, result.theta);
    const auto latent_sd = implied_latent_sd(layout, result.theta);
    std::vector<double> obs_sd(layout.n_observed());
    for (std::size_t r = 0; r < layout.n_observed(); ++r) {
        obs_sd[r] = std::sqrt(sigma(r, r));
        if (!(obs_sd[r] > 0.0)) {
            throw PipelineError("standardize: zero implied variance for '" +
                                layout.observed[r] + "'");
        }
    }
    for (double sd : latent_sd) {
        if (!(sd > 0.0)) throw PipelineError("standardize: zero implied latent variance");
    }

    for (auto& row : result.table) {
        if (row.kind == ParamKind::Loading) {
            const std::size_t r =
                *layout.observed_index(row.label.substr(row.label.find("=~") + 2));
            row.standardized = row.estimate * latent_sd[layout.latent_of[r]] / obs_sd[r];
        } else if (row.kind == ParamKind::Path) {
            for (std::size_t j = 0; j < layout.n_endogenous; ++j) {
                if (row.label == layout.latents[1 + j] + "~" + layout.latents[0]) {
                    row.standardized = result.theta.path[j] * latent_sd[0] / latent_sd[1 + j];
                    break;
                }
            }
        } else if (row.kind == ParamKind::LatentVariance) {
            row.standardized = 1.0;
        } else if (row.kind == ParamKind::LatentResidual) {
            for (std::size_t j = 0; j < layout.n_endogenous; ++j) {
                if (row.label == layout.latents[1 + j] + "~~" + layout.latents[1 + j]) {
                    row.standardized =
                        result.theta.latent_residual[j] / (latent_sd[1 + j] * latent_sd[1 + j]);
                    break;
                }
            }
        } else if (row.kind == ParamKind::MeasurementResidual) {
            auto r = layout.observed_index(row.label.substr(0, row.label.find("~~")));
            row.standardized =
                result.theta.measurement_residual[*r] / (obs_sd[*r] * obs_sd[*r]);
        }
    }
}

void standard_errors(FitResult& result, const SampleMoments& moments, const FitOptions& options) {
    const auto& layout = result.layout;
    const std::size_t n = layout.params.size();
    Packer packer{layout, options.residual_floor};
    const std::vector<double> center = packer.natural(result.theta);

    linalg::Matrix hess(n, n);
    std::vector<char> column_ok(n, 1);
    parallel_for(n, options.threads, [&](std::size_t i) {
        double h = 1e-4 * std::max(1.0, std::abs(center[i]));
        const auto kind = layout.params[i].kind;
        if (kind == ParamKind::LatentVariance || kind == ParamKind::LatentResidual ||
            kind == ParamKind::MeasurementResidual) {
            h = std::min(h, 0.5 * center[i]);
            h = std::max(h, 1e-12);
        }
        std::vector<double> shifted = center;
        std::vector<double> g_plus(n), g_minus(n);
        shifted[i] = center[i] + h;
        const double f_plus =
            fml_and_gradient(layout, moments, packer.from_natural(shifted), g_plus);
        shifted[i] = center[i] - h;
        const double f_minus =
            fml_and_gradient(layout, moments, packer.from_natural(shifted), g_minus);
        if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
            column_ok[i] = 0;
            return;
        }
        for (std::size_t j = 0; j < n; ++j) {
            hess(i, j) = (g_plus[j] - g_minus[j]) / (2.0 * h);
        }
    });

    if (std::find(column_ok.begin(), column_ok.end(), 0) != column_ok.end()) {
        result.warnings.push_back(
            "standard errors unavailable: curvature evaluation left the feasible region");
        return;
    }

    // symmetrize, then scale to the information matrix
    const double info_scale = 0.5 * static_cast<double>(moments.n_cases - 1);
    linalg::Matrix info(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            const double v = info_scale * 0.5 * (hess(i, j) + hess(j, i));
            info(i, j) = v;
            info(j, i) = v;
        }
    }
    auto chol = linalg::cholesky(info);
    if (!chol.ok) {
        result.warnings.push_back(
            "standard errors unavailable: information matrix is singular");
        return;
    }
    const auto cov = linalg::cholesky_inverse(chol);

    std::size_t pack_ix = 0;
    for (auto& row : result.table) {
        if (row.fixed) continue;
        const double var = cov(pack_ix, pack_ix);
        if (var > 0.0) {
            row.se = std::sqrt(var);
            row.z = row.estimate / row.se;
            row.p = normal_two_sided_p(row.z);
        } else {
            row.se = kNaN;
            row.z = kNaN;
            row.p = kNaN;
        }
        ++pack_ix;
    }
    result.se_available = true;
}

double baseline_discrepancy(const SampleMoments& moments, const BfgsOptions& options) {
    const std::size_t p = moments.covariance.rows();
    std::vector<double> diag(p);
    for (std::size_t i = 0; i < p; ++i) diag[i] = moments.covariance(i, i);

    auto fg = [&](const std::vector<double>& u, std::vector<double>& g) {
        double f = -moments.log_det - static_cast<double>(p);
        g.resize(p);
        for (std::size_t i = 0; i < p; ++i) {
            const double e = std::exp(-u[i]);
            f += u[i] + diag[i] * e;
            g[i] = 1.0 - diag[i] * e;
        }
        return f;
    };
    std::vector<double> u(p, 0.0);
    auto report = bfgs_minimize(fg, u, options);
    return std::max(report.value, 0.0);
}

void fit_statistics(FitResult& result, const SampleMoments& moments, const FitOptions& options) {
    const double n1 = static_cast<double>(moments.n_cases - 1);
    auto& st = result.stats;
    st.discrepancy = result.discrepancy;
    st.chi_square = n1 * result.discrepancy;
    st.df = result.layout.degrees_of_freedom();
    st.p_value = st.df > 0 ? chi_square_p(st.chi_square, st.df) : kNaN;
    const double excess = std::max(st.chi_square - static_cast<double>(st.df), 0.0);
    st.rmsea = st.df > 0 ? std::sqrt(excess / (static_cast<double>(st.df) * n1)) : kNaN;

    const std::size_t p = moments.covariance.rows();
    st.baseline_df = static_cast<long>(p * (p + 1) / 2 - p);
    const double f_base =
        baseline_discrepancy(moments, {options.grad_tol, options.max_iterations});
    st.baseline_chi_square = n1 * f_base;
    const double base_excess =
        std::max(st.baseline_chi_square - static_cast<double>(st.baseline_df), 0.0);
    const double denom = std::max(base_excess, excess);
    st.cfi = denom > 0.0 ? 1.0 - excess / denom : 1.0;
}

FitResult fit(const ModelSpec& spec, const SampleMoments& moments, const FitOptions& options) {
    FitResult result;
    result.layout = ModelLayout::from_spec(spec);
    const auto& layout = result.layout;
    const std::size_t p = layout.n_observed();
    if (moments.covariance.rows() != p) {
        throw PipelineError("fit: sample covariance is " +
                            std::to_string(moments.covariance.rows()) + "x" +
                            std::to_string(moments.covariance.cols()) + " but the model names " +
                            std::to_string(p) + " observed variables");
    }
    if (layout.degrees_of_freedom() < 0) {
        throw PipelineError("fit: model not identified (df = " +
                            std::to_string(layout.degrees_of_freedom()) + ")");
    }

    Packer packer{layout, options.residual_floor};
    std::vector<double> w = packer.working(start_values(layout, moments));

    std::vector<double> grad_nat;
    auto fg = [&](const std::vector<double>& x, std::vector<double>& g) {
        const ParameterVector theta = packer.from_working(x);
        const double f = fml_and_gradient(layout, moments, theta, grad_nat);
        if (!std::isfinite(f)) return kInf;
        g.resize(x.size());
        for (std::size_t k = 0; k < x.size(); ++k) g[k] = grad_nat[k] * packer.chain(k, theta);
        return f;
    };
    auto report = bfgs_minimize(fg, w, {options.grad_tol, options.max_iterations});

    result.theta = packer.from_working(w);
    result.converged = report.converged;
    result.iterations = report.iterations;
    result.grad_norm = report.grad_norm;
    result.discrepancy = ml_discrepancy(moments, implied_covariance(layout, result.theta));
    result.n_cases = moments.n_cases;
    if (!result.converged) {
        result.warnings.push_back("optimizer did not converge in " +
                                  std::to_string(report.iterations) +
                                  " iterations (gradient max-norm " +
                                  std::to_string(report.grad_norm) + ")");
    }

    result.table = parameter_estimates(layout, result.theta);
    standardize(result);

    // boundary diagnostics: Heywood-adjacent solutions are reported, not hidden
    for (std::size_t r = 0; r < p; ++r) {
        if (result.theta.measurement_residual[r] - options.residual_floor <
            1e-6 * moments.covariance(r, r)) {
            result.warnings.push_back("measurement residual variance for '" +
                                      layout.observed[r] + "' is at its lower bound");
        }
    }
    for (const auto& row : result.table) {
        if (row.kind == ParamKind::Path && std::abs(row.standardized) > 0.995) {
            result.warnings.push_back("standardized path " + row.label +
                                      " near the boundary (|value| > 0.995)");
        }
        if (row.kind == ParamKind::LatentResidual && row.standardized < 1e-4) {
            result.warnings.push_back("latent residual " + row.label +
                                      " near zero: endogenous variance almost fully explained");
        }
    }

    if (options.compute_standard_errors && result.converged) {
        standard_errors(result, moments, options);
    }
    if (options.compute_fit_statistics) {
        if (!result.converged) {
            result.warnings.push_back("fit statistics computed from a non-converged solution");
        }
        fit_statistics(result, moments, options);
    }
    return result;
}

std::vector<ParameterEstimate> parameter_estimates(const ModelLayout& layout,
                                                   const ParameterVector& theta) {
    std::vector<ParameterEstimate> table;
    auto push = [&](ParamKind kind, const std::string& label, double estimate, bool fixed) {
        ParameterEstimate row;
        row.kind = kind;
        row.label = label;
        row.fixed = fixed;
        row.estimate = estimate;
        row.se = kNaN;
        row.z = kNaN;
        row.p = kNaN;
        table.push_back(row);
    };
    for (std::size_t r = 0; r < layout.n_observed(); ++r) {
        push(ParamKind::Loading, layout.latents[layout.latent_of[r]] + "=~" + layout.observed[r],
             theta.loading[r], layout.fixed_loading[r]);
    }
    for (std::size_t j = 0; j < layout.n_endogenous; ++j) {
        push(ParamKind::Path, layout.latents[1 + j] + "~" + layout.latents[0], theta.path[j],
             false);
    }
    push(ParamKind::LatentVariance, layout.latents[0] + "~~" + layout.latents[0],
         theta.exo_variance, false);
    for (std::size_t j = 0; j < layout.n_endogenous; ++j) {
        push(ParamKind::LatentResidual, layout.latents[1 + j] + "~~" + layout.latents[1 + j],
             theta.latent_residual[j], false);
    }
    for (std::size_t r = 0; r < layout.n_observed(); ++r) {
        push(ParamKind::MeasurementResidual, layout.observed[r] + "~~" + layout.observed[r],
             theta.measurement_residual[r], false);
    }
    return table;
}

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

namespace {

// regularized incomplete gamma: series for P(a, x) when x < a + 1, Lentz
// continued fraction for Q(a, x) otherwise
double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int i = 0; i < 1000; ++i) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_q_cf(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 1000; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double chi_square_p(double x, long df) {
    if (df <= 0 || !(x >= 0.0)) return kNaN;
    if (x == 0.0) return 1.0;
    const double a = 0.5 * static_cast<double>(df);
    const double xs = 0.5 * x;
    if (xs < a + 1.0) return std::clamp(1.0 - gamma_p_series(a, xs), 0.0, 1.0);
    return std::clamp(gamma_q_cf(a, xs), 0.0, 1.0);
}

}  // namespace flourish::sem
