#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "flourish/linalg.hpp"
#include "flourish/sem/model.hpp"

namespace flourish::sem {

/// Observed data keyed by case (county): one row per case, one column per
/// observed variable in model order. NaN marks a missing cell.
struct ObservedTable {
    std::vector<std::string> cases;
    std::vector<std::string> variables;
    linalg::Matrix values;
};

/// Sample covariance (denominator N-1) over listwise-complete cases, with the
/// log-determinant cached for the discrepancy function.
struct SampleMoments {
    linalg::Matrix covariance;
    std::vector<double> means;
    long n_cases = 0;
    std::vector<std::string> complete_cases;
    double log_det = 0.0;
};

/// Listwise deletion: drops every case with any missing cell, then computes
/// means and covariance. Throws when fewer complete cases than variables + 1
/// remain or the covariance is not positive definite.
SampleMoments sample_moments(const ObservedTable& table);

/// Wraps a covariance matrix provided directly (population or test input).
SampleMoments moments_from_covariance(const linalg::Matrix& s, long n_cases);

/// Rescales to the correlation metric (unit diagonal); the standardized
/// solution is invariant to this choice.
SampleMoments to_correlation(const SampleMoments& moments);

/// Natural-scale parameter values for a ModelLayout. `loading` has one entry
/// per observed variable (reference entries stay at 1); `path` and
/// `latent_residual` one per endogenous latent; `measurement_residual` one
/// per observed variable.
struct ParameterVector {
    std::vector<double> loading;
    std::vector<double> path;
    double exo_variance = 1.0;
    std::vector<double> latent_residual;
    std::vector<double> measurement_residual;
};

/// Latent covariance matrix A = Cov([xi, eta]) implied by the structural
/// part: A = phi * t t^T + diag(0, psi) with t = (1, beta_1, ..., beta_m).
linalg::Matrix latent_covariance(const ModelLayout& layout, const ParameterVector& theta);

/// Sigma(theta) = L A L^T + diag(measurement residuals); exactly symmetric.
linalg::Matrix implied_covariance(const ModelLayout& layout, const ParameterVector& theta);

/// F = ln|Sigma| + tr(S Sigma^-1) - ln|S| - p. Returns +infinity when Sigma
/// is not positive definite (line-search step rejection, not an error).
double ml_discrepancy(const SampleMoments& moments, const linalg::Matrix& sigma);

/// Discrepancy and its analytic gradient with respect to the free parameters
/// in layout packing order, both on the natural scale. Returns +infinity and
/// leaves `grad` untouched when Sigma is not positive definite.
double fml_and_gradient(const ModelLayout& layout, const SampleMoments& moments,
                        const ParameterVector& theta, std::vector<double>& grad);

struct BfgsOptions {
    double grad_tol = 1e-6;  // max-norm of the gradient
    int max_iterations = 500;
};

struct BfgsReport {
    bool converged = false;
    int iterations = 0;
    double value = 0.0;
    double grad_norm = 0.0;
};

/// Quasi-Newton minimizer with Armijo backtracking. `fg` returns the value
/// and fills the gradient; it may return +infinity to reject a point (the
/// line search backtracks). Deterministic for a deterministic fg.
BfgsReport bfgs_minimize(
    const std::function<double(const std::vector<double>&, std::vector<double>&)>& fg,
    std::vector<double>& x, const BfgsOptions& options);

struct FitOptions {
    double grad_tol = 1e-6;
    int max_iterations = 500;
    double residual_floor = 1e-8;  // lower bound for measurement residuals
    unsigned threads = 1;
    bool compute_standard_errors = true;
    bool compute_fit_statistics = true;
};

struct ParameterEstimate {
    std::string label;
    ParamKind kind = ParamKind::Loading;
    bool fixed = false;       // reference loadings: no SE, estimate 1
    double estimate = 0.0;
    double standardized = 0.0;
    double se = 0.0;          // NaN when unavailable
    double z = 0.0;           // NaN when unavailable
    double p = 0.0;           // NaN when unavailable
};

struct FitStatistics {
    double discrepancy = 0.0;
    double chi_square = 0.0;
    long df = 0;
    double p_value = 0.0;          // NaN when df = 0
    double rmsea = 0.0;            // NaN when df = 0
    double cfi = 0.0;
    double baseline_chi_square = 0.0;
    long baseline_df = 0;
};

struct FitResult {
    ModelLayout layout;
    ParameterVector theta;
    std::vector<ParameterEstimate> table;  // loadings (incl. fixed), paths, variances
    bool converged = false;
    int iterations = 0;
    double grad_norm = 0.0;
    double discrepancy = 0.0;
    long n_cases = 0;
    bool se_available = false;
    FitStatistics stats;
    std::vector<std::string> warnings;
};

/// Full estimation pass: deterministic start values, quasi-Newton fit on the
/// working scale (variances in log space above the floor), standardization,
/// finite-difference standard errors, fit statistics. Throws on df < 0.
FitResult fit(const ModelSpec& spec, const SampleMoments& moments, const FitOptions& options = {});

/// Display-order estimate rows for a parameter vector: loadings in observed
/// order (fixed references included), then paths, then variances. SE columns
/// start NaN; `standardized` starts equal to 0 until standardize() fills it.
std::vector<ParameterEstimate> parameter_estimates(const ModelLayout& layout,
                                                   const ParameterVector& theta);

/// Model-implied standard deviations of (xi, eta_1, ...) for a parameter
/// vector: sd(xi) = sqrt(phi), sd(eta_j) = sqrt(beta_j^2 phi + psi_j).
std::vector<double> implied_latent_sd(const ModelLayout& layout, const ParameterVector& theta);

/// Fills the `standardized` column: loading * sd(latent)/sd(observed) and
/// path * sd(xi)/sd(eta); variances are rescaled to the standardized metric.
void standardize(FitResult& result);

/// Central finite differences of the analytic gradient around the optimum
/// give the Hessian; SE = sqrt(diag([(N-1)/2 H]^-1)). On a singular
/// information matrix SEs stay NaN and a warning is recorded.
void standard_errors(FitResult& result, const SampleMoments& moments, const FitOptions& options);

/// Chi-square = (N-1) F, RMSEA, CFI against the independence baseline (fitted
/// with the same minimizer over log-diagonal covariances).
void fit_statistics(FitResult& result, const SampleMoments& moments, const FitOptions& options);

/// Independence-model discrepancy minimum for CFI, via the shared minimizer.
double baseline_discrepancy(const SampleMoments& moments, const BfgsOptions& options);

/// Two-sided normal tail probability of |z|.
double normal_two_sided_p(double z);

/// P(Chi2_df > x); regularized upper incomplete gamma Q(df/2, x/2).
double chi_square_p(double x, long df);

}  // namespace flourish::sem
