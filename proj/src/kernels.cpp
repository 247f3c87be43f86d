#include "krigseq/kernels.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace krigseq {

namespace {

constexpr double kSqrt5 = 2.23606797749978969;

double se_correlation(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                      const Eigen::VectorXd& theta) {
  double s = 0.0;
  for (int m = 0; m < x.size(); ++m) {
    const double h = (x[m] - y[m]) / theta[m];
    s += h * h;
  }
  return std::exp(-s);
}

double matern52_correlation(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& theta) {
  double r = 1.0;
  for (int m = 0; m < x.size(); ++m) {
    const double t = kSqrt5 * std::abs(x[m] - y[m]) / theta[m];
    r *= (1.0 + t + t * t / 3.0) * std::exp(-t);
  }
  return r;
}

std::atomic<std::uint64_t> g_factorizations{0};

}  // namespace

std::string to_string(KernelFamily family) {
  return family == KernelFamily::SquaredExponential ? "squared-exponential"
                                                    : "matern-5/2";
}

KernelFamily kernel_family_from_string(const std::string& name) {
  if (name == "squared-exponential") return KernelFamily::SquaredExponential;
  if (name == "matern-5/2") return KernelFamily::Matern52;
  throw ArgumentError("unknown kernel family: " + name);
}

std::string to_string(TrendKind kind) {
  return kind == TrendKind::Constant ? "constant" : "linear";
}

TrendKind trend_kind_from_string(const std::string& name) {
  if (name == "constant") return TrendKind::Constant;
  if (name == "linear") return TrendKind::Linear;
  throw ArgumentError("unknown trend kind: " + name);
}

Eigen::VectorXd TrendBasis::eval(const Eigen::VectorXd& x) const {
  if (x.size() != dim) throw ArgumentError("TrendBasis::eval: dimension mismatch");
  Eigen::VectorXd f(size());
  f[0] = 1.0;
  if (kind == TrendKind::Linear) f.tail(dim) = x;
  return f;
}

Eigen::MatrixXd TrendBasis::matrix(const Eigen::MatrixXd& D) const {
  if (D.cols() != dim) throw ArgumentError("TrendBasis::matrix: dimension mismatch");
  Eigen::MatrixXd F(D.rows(), size());
  F.col(0).setOnes();
  if (kind == TrendKind::Linear) F.rightCols(dim) = D;
  return F;
}

double correlation(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                   const CorrelationKernel& kernel) {
  if (x.size() != y.size() || x.size() != kernel.theta.size())
    throw ArgumentError("correlation: dimension mismatch");
  return kernel.family == KernelFamily::SquaredExponential
             ? se_correlation(x, y, kernel.theta)
             : matern52_correlation(x, y, kernel.theta);
}

Eigen::VectorXd correlation_vector(const Eigen::MatrixXd& D,
                                   const Eigen::VectorXd& x,
                                   const CorrelationKernel& kernel) {
  Eigen::VectorXd r(D.rows());
  for (Eigen::Index i = 0; i < D.rows(); ++i)
    r[i] = correlation(D.row(i).transpose(), x, kernel);
  return r;
}

Eigen::MatrixXd cross_correlation(const Eigen::MatrixXd& A,
                                  const Eigen::MatrixXd& B,
                                  const CorrelationKernel& kernel) {
  Eigen::MatrixXd C(A.rows(), B.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < B.rows(); ++j)
      C(i, j) = correlation(A.row(i).transpose(), B.row(j).transpose(), kernel);
  return C;
}

CorrelationMatrix correlation_matrix(const Eigen::MatrixXd& D,
                                     const CorrelationKernel& kernel) {
  return correlation_matrix(D, kernel, detail::kNuggetInitial);
}

CorrelationMatrix correlation_matrix(const Eigen::MatrixXd& D,
                                     const CorrelationKernel& kernel,
                                     double nugget_start) {
  if (D.rows() < 1) throw ArgumentError("correlation_matrix: empty design");
  if (nugget_start < detail::kNuggetInitial || nugget_start > detail::kNuggetMax)
    throw ArgumentError("correlation_matrix: nugget start outside escalation range");
  const Eigen::Index n = D.rows();
  Eigen::MatrixXd R0(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    R0(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double r =
          correlation(D.row(i).transpose(), D.row(j).transpose(), kernel);
      R0(i, j) = r;
      R0(j, i) = r;
    }
  }

  double eta = nugget_start;
  while (true) {
    CorrelationMatrix out;
    out.R = R0 + eta * Eigen::MatrixXd::Identity(n, n);
    out.llt = detail::spd_factorize(out.R);
    if (out.llt.info() == Eigen::Success) {
      out.nugget = eta;
      if (eta != nugget_start) {
        std::ostringstream os;
        os << "correlation_matrix: nugget escalated to " << eta;
        debug_log(os.str());
      }
      return out;
    }
    if (eta >= detail::kNuggetMax) {
      std::ostringstream os;
      os << "correlation matrix not positive definite after nugget escalation"
         << " (final nugget " << eta << ")";
      throw ConditioningError(os.str(), eta);
    }
    eta *= 10.0;
  }
}

namespace detail {

Eigen::LLT<Eigen::MatrixXd> spd_factorize(const Eigen::MatrixXd& A) {
  g_factorizations.fetch_add(1, std::memory_order_relaxed);
  return Eigen::LLT<Eigen::MatrixXd>(A);
}

std::uint64_t factorization_count() {
  return g_factorizations.load(std::memory_order_relaxed);
}

}  // namespace detail

}  // namespace krigseq
