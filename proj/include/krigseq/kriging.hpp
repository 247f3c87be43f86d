#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include "krigseq/errors.hpp"
#include "krigseq/kernels.hpp"

namespace krigseq {

namespace detail {

/// Generalized-least-squares trend fit against an SPD correlation factor,
/// with the caches every downstream formula consumes.
struct GlsFit {
  Eigen::VectorXd beta;        // (F'R^-1 F)^-1 F'R^-1 y
  Eigen::MatrixXd G;           // R^-1 F
  Eigen::MatrixXd M;           // F'R^-1 F
  Eigen::MatrixXd M_inv;
  Eigen::VectorXd c;           // R^-1 y
  Eigen::VectorXd resid;       // y - F beta
  Eigen::VectorXd Rinv_resid;  // R^-1 (y - F beta)
  double quad = 0.0;           // (y - F beta)' R^-1 (y - F beta)
  double sigma2 = 0.0;         // quad / divisor, floored at a tiny positive
};

/// divisor is the caller's degrees-of-freedom convention (n-p for a single
/// level, n_l - p_l - 1 for a correction level). Throws TrendError when F is
/// rank deficient.
[[nodiscard]] GlsFit fit_gls(const Eigen::LLT<Eigen::MatrixXd>& R_factor,
                             const Eigen::MatrixXd& F, const Eigen::VectorXd& y,
                             int sigma2_divisor);

}  // namespace detail

/// Universal kriging model on the unit cube. Immutable once built: every
/// operation below takes it by const reference, so concurrent readers are
/// safe. R_inv is materialized on purpose — the cross-validation closed
/// forms index its entries directly.
struct KrigingModel {
  Eigen::MatrixXd D;  // n×d design, unit coordinates
  Eigen::VectorXd y;  // outputs in problem units
  TrendBasis trend;
  CorrelationKernel kernel;
  Eigen::VectorXd beta_hat;
  double sigma2_hat = 0.0;
  Eigen::MatrixXd R;  // correlation matrix with nugget on the diagonal
  Eigen::LLT<Eigen::MatrixXd> R_factor;
  Eigen::MatrixXd R_inv;
  Eigen::MatrixXd F;  // n×p trend matrix
  double nugget = 0.0;

  // caches shared by prediction and the cross-validation formulas
  Eigen::MatrixXd G;      // R^-1 F
  Eigen::MatrixXd M_inv;  // (F'R^-1 F)^-1
  Eigen::VectorXd c;      // R^-1 y
  Eigen::VectorXd Rinv_resid;
  double kappa1 = 1.0;  // ||R||_1 ||R^-1||_1, the round-off noise floor scale

  [[nodiscard]] int n() const { return static_cast<int>(D.rows()); }
  [[nodiscard]] int dim() const { return static_cast<int>(D.cols()); }
  [[nodiscard]] int p() const { return static_cast<int>(F.cols()); }
};

/// Builds a model at fixed kernel parameters, estimating beta and sigma2 by
/// GLS (sigma2 divisor n-p). Requires n >= p+1 and pairwise-distinct rows.
[[nodiscard]] KrigingModel make_kriging(const Eigen::MatrixXd& D, const Eigen::VectorXd& y,
                                        const TrendBasis& trend, const CorrelationKernel& kernel);

/// Same structure but with beta and sigma2 supplied by the caller instead of
/// estimated (frozen-parameter rebuilds, deserialization).
[[nodiscard]] KrigingModel make_kriging_fixed(const Eigen::MatrixXd& D, const Eigen::VectorXd& y,
                                              const TrendBasis& trend,
                                              const CorrelationKernel& kernel,
                                              const Eigen::VectorXd& beta, double sigma2,
                                              double nugget_start = -1.0);

/// Concentrated log-likelihood of the kernel parameters:
///   l(theta) = -1/2 [ (n-p) log sigma2(theta) + log det R(theta) ]
/// with beta and sigma2 profiled out by GLS.
[[nodiscard]] double profile_loglik(const Eigen::MatrixXd& D, const Eigen::VectorXd& y,
                                    const TrendBasis& trend, const CorrelationKernel& kernel);

struct FitOptions {
  double theta_min = 0.05;
  double theta_max = 5.0;
  int n_starts = 10;    // multi-start count (low-discrepancy placement)
  int sweeps = 4;       // coordinate-descent passes per start
  int line_evals = 24;  // golden-section iterations per axis
  std::uint64_t seed = 0;
  std::optional<Eigen::VectorXd> warm_theta;  // extra start, e.g. previous fit
};

struct FitReport {
  Eigen::VectorXd theta;
  double loglik = 0.0;
  int evaluations = 0;
};

namespace detail {

/// Shared theta optimizer: multi-start coordinate descent with golden-section
/// line searches on log(theta), bounded by [options.theta_min,
/// options.theta_max] per axis. `loglik` receives theta (not log-theta) and
/// should return -inf for values it cannot evaluate. Deterministic under
/// options.seed; start points are the box center, the optional warm start,
/// then a low-discrepancy spread. Returns the best theta seen and fills
/// `loglik_out` / `evals_out` when non-null.
[[nodiscard]] Eigen::VectorXd search_theta(
    int dim, const std::function<double(const Eigen::VectorXd&)>& loglik,
    const FitOptions& options, double* loglik_out = nullptr, int* evals_out = nullptr);

}  // namespace detail

/// Maximum-likelihood fit: profile log-likelihood maximized by multi-start
/// coordinate descent with golden-section line searches on log(theta),
/// deterministic under options.seed. Requires n >= p+2.
[[nodiscard]] KrigingModel fit_kriging(const Eigen::MatrixXd& D, const Eigen::VectorXd& y,
                                       const TrendBasis& trend, KernelFamily family,
                                       const FitOptions& options = {},
                                       FitReport* report = nullptr);

/// Predictive mean m_n(x) = f'(x) beta_hat + r'(x) R^-1 (y - F beta_hat).
[[nodiscard]] double predict_mean(const KrigingModel& model, const Eigen::VectorXd& x);

/// Predictive covariance
///   k_n(x, z) = sigma2 [ r(x,z) - r_x' R^-1 r_z + u_x' (F'R^-1F)^-1 u_z ],
///   u = F'R^-1 r - f.
/// predict_var(x) = k_n(x, x), clamped at 0 when round-off produces a tiny
/// negative (raw value goes to the debug channel); a negative beyond the
/// model's conditioning noise floor raises ConditioningError.
[[nodiscard]] double predict_cov(const KrigingModel& model, const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& z);
[[nodiscard]] double predict_var(const KrigingModel& model, const Eigen::VectorXd& x);

/// Row-per-point batch versions (parallel; one writer per output slot).
[[nodiscard]] Eigen::VectorXd predict_mean_batch(const KrigingModel& model,
                                                 const Eigen::MatrixXd& X);
[[nodiscard]] Eigen::VectorXd predict_var_batch(const KrigingModel& model,
                                                const Eigen::MatrixXd& X);

/// Conditions the model on a fantasized observation at x_new (the current
/// predicted mean unless y_fake is supplied) with every parameter frozen:
/// the returned model's covariance equals that of the posterior given one
/// more observation, independent of the fantasized value. Throws
/// DegenerateUpdateError when x_new coincides with an existing design point.
[[nodiscard]] KrigingModel liar_condition(const KrigingModel& model, const Eigen::VectorXd& x_new,
                                          std::optional<double> y_fake = std::nullopt);

/// Structured-text serialization (documented in the README): design, outputs,
/// trend kind, kernel family, theta, beta_hat, sigma2_hat, nugget. Values are
/// written with "%.17g" so a round-trip reproduces predictions bit-for-bit.
void save_model(const KrigingModel& model, const std::string& path);
[[nodiscard]] KrigingModel load_model(const std::string& path);

}  // namespace krigseq
