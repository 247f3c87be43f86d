#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <string>
#include <vector>

#include "krigseq/kriging.hpp"

namespace krigseq {

/// Nested multi-fidelity observations. Levels are indexed from 0 (the
/// coarsest, cheapest code) to levels()-1 (the most accurate one). Designs
/// must nest: every row of designs[l] appears among the rows of designs[l-1]
/// (coordinate match within 1e-12), so the coarser code's output is known at
/// every point where the finer code ran. parent[l-1](i) is the row of
/// designs[l-1] matching row i of designs[l].
struct MultiFidelityData {
  std::vector<Eigen::MatrixXd> designs;
  std::vector<Eigen::VectorXd> outputs;
  std::vector<Eigen::VectorXi> parent;  // size levels()-1

  [[nodiscard]] int levels() const { return static_cast<int>(designs.size()); }
  [[nodiscard]] int dim() const {
    return designs.empty() ? 0 : static_cast<int>(designs.front().cols());
  }
  [[nodiscard]] int n(int level) const {
    return static_cast<int>(designs.at(static_cast<std::size_t>(level)).rows());
  }
};

/// Validates shapes, pairwise-distinct rows per level, and nesting, and
/// builds the parent index maps. Throws ArgumentError on any violation.
[[nodiscard]] MultiFidelityData make_mf_data(std::vector<Eigen::MatrixXd> designs,
                                             std::vector<Eigen::VectorXd> outputs);

/// Row index of `coarse` matching x within tol (infinity norm).
/// Throws ArgumentError when no row matches.
[[nodiscard]] int mf_parent_index(const Eigen::MatrixXd& coarse, const Eigen::VectorXd& x,
                                  double tol = 1e-12);

/// One correction level l >= 1 of the recursive model: the observations y^l
/// regressed on [y^{l-1}(D^l), F_l] against the level's own correlation
/// structure, giving the scale rho on the previous level, the trend beta,
/// and the bias-process variance sigma2. Immutable once built.
struct CokrigingLevel {
  Eigen::MatrixXd D;         // n_l × d design, unit coordinates
  Eigen::VectorXd y;         // this level's outputs
  Eigen::VectorXd coarse_y;  // previous level's outputs at the rows of D
  TrendBasis trend;
  CorrelationKernel kernel;
  double rho = 0.0;
  Eigen::VectorXd beta;
  double sigma2 = 0.0;  // estimated with divisor n - p - 1
  double nugget = 0.0;
  Eigen::MatrixXd R;
  Eigen::LLT<Eigen::MatrixXd> R_factor;
  Eigen::MatrixXd R_inv;
  Eigen::MatrixXd H;      // [coarse_y  F], the regression basis
  Eigen::MatrixXd G;      // R^-1 H
  Eigen::MatrixXd M_inv;  // (H'R^-1 H)^-1
  Eigen::VectorXd c;      // R^-1 y
  Eigen::VectorXd gamma;  // R^-1 (y - H [rho; beta])
  double kappa1 = 1.0;    // ||R||_1 ||R^-1||_1

  [[nodiscard]] int n() const { return static_cast<int>(D.rows()); }
  [[nodiscard]] int dim() const { return static_cast<int>(D.cols()); }
  [[nodiscard]] int p() const { return trend.size(); }
  [[nodiscard]] Eigen::VectorXd lambda() const;  // [rho; beta], H-column order
};

/// Recursive multi-fidelity co-kriging stack. base is the coarsest level's
/// plain kriging model; upper[l-1] is correction level l. With a single
/// level the model degenerates to the kriging module exactly.
struct CokrigingModel {
  KrigingModel base;
  std::vector<CokrigingLevel> upper;
  std::vector<Eigen::VectorXi> parent;  // parent[l-1]: level-l rows -> level-(l-1) rows

  [[nodiscard]] int levels() const { return 1 + static_cast<int>(upper.size()); }
  [[nodiscard]] int dim() const { return base.dim(); }
  [[nodiscard]] int n(int level) const {
    return level == 0 ? base.n() : upper.at(static_cast<std::size_t>(level - 1)).n();
  }
};

/// Builds the stack at fixed kernels: level 0 by GLS kriging, each level
/// above by the joint GLS estimate (rho, beta) = (H'R^-1H)^-1 H'R^-1 y with
/// sigma2 divisor n-p-1. Requires n_l >= p_l + 3 at every level (so the
/// cross-validation formulas below are always available) and one trend and
/// kernel per level.
[[nodiscard]] CokrigingModel make_cokriging(const MultiFidelityData& data,
                                            const std::vector<TrendBasis>& trends,
                                            const std::vector<CorrelationKernel>& kernels);

/// Full fit: level 0 by fit_kriging, each correction level by maximizing its
/// own profile likelihood over theta (the nesting makes the levels
/// separable). Per-level optimizer seeds derive from options.seed. When
/// `warm` is given, each level's previous theta seeds the corresponding
/// search. reports, when non-null, receives one entry per level.
[[nodiscard]] CokrigingModel fit_cokriging(const MultiFidelityData& data,
                                           const std::vector<TrendBasis>& trends,
                                           const std::vector<KernelFamily>& families,
                                           const FitOptions& options = {},
                                           std::vector<FitReport>* reports = nullptr,
                                           const CokrigingModel* warm = nullptr);

/// Concentrated log-likelihood of theta for one level:
///   -1/2 [ (n - cols) log sigma2(theta) + log det R(theta) ]
/// where cols counts the regression columns (p at level 0, p+1 above) and
/// (rho,) beta, sigma2 are profiled out by GLS.
[[nodiscard]] double mf_profile_loglik(const MultiFidelityData& data, int level,
                                       const TrendBasis& trend, const CorrelationKernel& kernel);

/// Predictive mean at `level`, recursing to the base model:
///   mu^l(x) = rho_l mu^{l-1}(x) + f_l'(x) beta_l + r_l'(x) R_l^-1 (y^l - H_l [rho_l; beta_l]).
/// Interpolates y^l at the rows of D^l. The two-argument form predicts at
/// the most accurate level.
[[nodiscard]] double mf_predict_mean(const CokrigingModel& model, const Eigen::VectorXd& x,
                                     int level);
[[nodiscard]] double mf_predict_mean(const CokrigingModel& model, const Eigen::VectorXd& x);

/// Predictive variance at `level`:
///   k^l(x,x) = rho_l^2 k^{l-1}(x,x) + sigma2_delta^l(x),
/// each level's bias variance clamped at zero against round-off exactly as
/// predict_var does (negatives beyond the level's conditioning noise floor
/// raise ConditioningError).
[[nodiscard]] double mf_predict_var(const CokrigingModel& model, const Eigen::VectorXd& x,
                                    int level);
[[nodiscard]] double mf_predict_var(const CokrigingModel& model, const Eigen::VectorXd& x);

/// Row-per-point batch versions at a fixed level (parallel; one writer per
/// output slot).
[[nodiscard]] Eigen::VectorXd mf_predict_mean_batch(const CokrigingModel& model,
                                                    const Eigen::MatrixXd& X, int level);
[[nodiscard]] Eigen::VectorXd mf_predict_var_batch(const CokrigingModel& model,
                                                   const Eigen::MatrixXd& X, int level);

/// The bias-process variance contributed at `level` alone: sigma2_delta^l(x)
/// for l >= 1, the base kriging variance for l = 0.
[[nodiscard]] double level_variance(const CokrigingModel& model, const Eigen::VectorXd& x,
                                    int level);

/// Per-level contributions to the top-level predictive variance at x:
///   k^s(x,x) = sum_l sigma2_delta[l] * prod_{j>l} rho_j^2 = sum_l weighted[l].
struct LevelVarianceProfile {
  Eigen::VectorXd sigma2_delta;  // bias variance of each level at x
  Eigen::VectorXd weighted;      // sigma2_delta[l] scaled by the rho^2 products
};

[[nodiscard]] LevelVarianceProfile variance_decomposition(const CokrigingModel& model,
                                                          const Eigen::VectorXd& x);

/// Multi-level leave-one-out at design point i of `level`: the point is
/// removed from EVERY level at once (possible by nesting), the scale, trend,
/// and variance of each affected level re-estimated in closed form at fixed
/// theta, and the reduced stack re-predicted at the removed point.
/// mf_loocv_error returns observed minus predicted; mf_loocv_var the reduced
/// stack's predictive variance there. Level 0 reduces to the single-level
/// loocv_mean / loocv_var formulas.
[[nodiscard]] double mf_loocv_error(const CokrigingModel& model, int level, int i);
[[nodiscard]] double mf_loocv_var(const CokrigingModel& model, int level, int i);

/// Every level's LOO errors and variances at once, plus the per-deletion
/// reduced scale estimates that downstream adjusted criteria need.
/// rho_red[0] is all zeros by the rho_0 = 0 convention.
struct MfLoocvTable {
  std::vector<Eigen::VectorXd> errors;   // errors[l](i), observed minus predicted
  std::vector<Eigen::VectorXd> vars;     // vars[l](i) > 0
  std::vector<Eigen::VectorXd> rho_red;  // rho_red[l](i), the deletion's scale estimate
};

[[nodiscard]] MfLoocvTable mf_loocv_table(const CokrigingModel& model);

/// Conditions the stack on fantasized observations of x_new at `level` and
/// at every coarser level where x_new is not already a design point
/// (preserving nesting). Fantasy values are the current predicted means and
/// all parameters stay frozen, so the mean surfaces are unchanged while the
/// variances contract exactly as if the runs had been made. Throws
/// DegenerateUpdateError when x_new coincides with a design point of `level`.
[[nodiscard]] CokrigingModel cokriging_liar_condition(const CokrigingModel& model,
                                                      const Eigen::VectorXd& x_new, int level);

/// Structured-text serialization: one block per level in the single-level
/// model format, correction levels adding their rho line. Values are written
/// with "%.17g" so a round-trip reproduces predictions bit-for-bit.
void save_cokriging(const CokrigingModel& model, const std::string& path);
[[nodiscard]] CokrigingModel load_cokriging(const std::string& path);

}  // namespace krigseq
