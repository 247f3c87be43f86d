#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cstdint>
#include <string>

#include "krigseq/errors.hpp"

namespace krigseq {

enum class KernelFamily { SquaredExponential, Matern52 };

[[nodiscard]] std::string to_string(KernelFamily family);
[[nodiscard]] KernelFamily kernel_family_from_string(const std::string& name);

/// Stationary correlation function r(x, y; θ) with one positive length-scale
/// per axis, in unit-cube coordinates.
///
/// squared-exponential: r = exp(-Σ_m ((x_m - y_m)/θ_m)²)
/// matern-5/2 (per-axis product, the DiceKriging convention; equal to the
/// radial textbook formula in one dimension):
///   r = Π_m (1 + √5 h_m/θ_m + 5 h_m²/(3 θ_m²)) exp(-√5 h_m/θ_m)
struct CorrelationKernel {
  KernelFamily family = KernelFamily::SquaredExponential;
  Eigen::VectorXd theta;  // length d, all entries > 0

  [[nodiscard]] int dim() const { return static_cast<int>(theta.size()); }
};

enum class TrendKind { Constant, Linear };

[[nodiscard]] std::string to_string(TrendKind kind);
[[nodiscard]] TrendKind trend_kind_from_string(const std::string& name);

/// Trend basis f'(x) = (f_1(x), ..., f_p(x)): constant -> (1),
/// linear -> (1, x_1, ..., x_d).
struct TrendBasis {
  TrendKind kind = TrendKind::Constant;
  int dim = 1;  // input dimension d

  [[nodiscard]] int size() const {
    return kind == TrendKind::Constant ? 1 : dim + 1;
  }
  [[nodiscard]] Eigen::VectorXd eval(const Eigen::VectorXd& x) const;
  /// n×p matrix of basis values at the rows of D.
  [[nodiscard]] Eigen::MatrixXd matrix(const Eigen::MatrixXd& D) const;
};

/// r(x, y; θ). Throws ArgumentError on dimension mismatch.
[[nodiscard]] double correlation(const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& y,
                                 const CorrelationKernel& kernel);

/// Correlation vector r(x) between the rows of D and x (length n).
[[nodiscard]] Eigen::VectorXd correlation_vector(const Eigen::MatrixXd& D,
                                                 const Eigen::VectorXd& x,
                                                 const CorrelationKernel& kernel);

/// Cross-correlation matrix between the rows of A (n) and the rows of B (m):
/// n×m with entry (i,j) = r(A_i, B_j).
[[nodiscard]] Eigen::MatrixXd cross_correlation(const Eigen::MatrixXd& A,
                                                const Eigen::MatrixXd& B,
                                                const CorrelationKernel& kernel);

/// Correlation matrix of a design, regularized and factorized.
struct CorrelationMatrix {
  Eigen::MatrixXd R;            // with nugget on the diagonal
  Eigen::LLT<Eigen::MatrixXd> llt;  // Cholesky of R
  double nugget = 0.0;          // the η actually used
};

/// Builds R(D) + ηI and its Cholesky factorization. η starts at 1e-10 and
/// escalates ×10 on factorization failure up to 1e-6; past that a
/// ConditioningError reports the final η tried. The overload lets a rebuild
/// start the escalation at the η a previous factorization settled on.
[[nodiscard]] CorrelationMatrix correlation_matrix(const Eigen::MatrixXd& D,
                                                   const CorrelationKernel& kernel);
[[nodiscard]] CorrelationMatrix correlation_matrix(const Eigen::MatrixXd& D,
                                                   const CorrelationKernel& kernel,
                                                   double nugget_start);

namespace detail {
/// Every correlation-sized (n×n) SPD factorization in the library goes
/// through this counted wrapper so tests can assert that closed-form LOO-CV
/// performs none beyond those already stored. Small p×p trend solves are
/// exempt by design.
[[nodiscard]] Eigen::LLT<Eigen::MatrixXd> spd_factorize(const Eigen::MatrixXd& A);
[[nodiscard]] std::uint64_t factorization_count();

constexpr double kNuggetInitial = 1e-10;
constexpr double kNuggetMax = 1e-6;
}  // namespace detail

}  // namespace krigseq
