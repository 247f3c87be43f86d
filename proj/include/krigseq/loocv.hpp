#pragma once

#include <Eigen/Dense>
#include <string>

#include "krigseq/kriging.hpp"

namespace krigseq {

/// Leave-one-out cross-validation diagnostics with beta and sigma2
/// re-estimated per deletion (length-scales held fixed).
struct LoocvDiagnostics {
  Eigen::VectorXd e2;      // squared LOO errors, squared output units
  Eigen::VectorXd s2;      // LOO predictive variances
  Eigen::VectorXd ratios;  // e2/s2, capped at 1e6 (raw value to debug channel);
                           // errors at round-off scale (|e| <= 1e-12·range(y))
                           // count as exact zeros
};

/// Mean of the model refit without point i, evaluated at x_i. Closed form:
///   m_{n,-i}(x_i) = y_i - [R^-1 (y - F beta_{-i})]_i / [R^-1]_ii,
/// beta_{-i} the GLS estimate on the reduced data at the same length-scales.
/// Indices are 0-based. Requires n >= p+3 so the reduced model is sound.
[[nodiscard]] double loocv_mean(const KrigingModel& model, int i);

/// Variance of the same refit at x_i, with sigma2 re-estimated on the
/// reduced data (divisor n-p-1) and the trend-uncertainty term included.
[[nodiscard]] double loocv_var(const KrigingModel& model, int i);

/// Both quantities for every i, computed from the stored factors with no
/// additional n×n factorization.
[[nodiscard]] LoocvDiagnostics loocv_diagnostics(const KrigingModel& model);

/// Per-deletion coefficients that turn the LOO means into a predictor at
/// arbitrary x: m_{n,-i}(x) = f(x)' beta_minus.col(i) + r(x)' V.col(i).
struct JackknifeCache {
  Eigen::MatrixXd beta_minus;  // p×n
  Eigen::MatrixXd V;           // n×n
};

[[nodiscard]] JackknifeCache make_jackknife_cache(const KrigingModel& model);

/// Jackknife variance of the predictor at x from the n delete-one means:
///   s2_jack(x) = 1/(n(n-1)) Σ_i (y~_i - mean(y~))²,
///   y~_i = n·m_n(x) - (n-1)·m_{n,-i}(x).
[[nodiscard]] double jackknife_variance(const KrigingModel& model, const JackknifeCache& cache,
                                        const Eigen::VectorXd& x);
[[nodiscard]] double jackknife_variance(const KrigingModel& model, const Eigen::VectorXd& x);

/// Audit export: header "index,e2,s2,ratio", one row per design point.
void save_loocv_csv(const LoocvDiagnostics& diag, const std::string& path);

namespace detail {
constexpr double kRatioCap = 1e6;
constexpr double kAlphaGuard = 1e-12;  // [R^-1]_ii below this signals duplicates
}  // namespace detail

}  // namespace krigseq
