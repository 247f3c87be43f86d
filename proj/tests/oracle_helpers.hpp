#pragma once

// Independent reference implementations used only by tests. Everything here
// recomputes from first principles — dense block-matrix predictive formulas,
// normal-equation GLS via full-pivot LU, delete-and-refit cross-validation —
// and never touches the library's cached factors, so agreement between the
// two paths is evidence, not tautology.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "krigseq/kernels.hpp"

namespace oracle {

inline double corr(const Eigen::VectorXd& x, const Eigen::VectorXd& z,
                   krigseq::KernelFamily family, const Eigen::VectorXd& theta) {
  if (family == krigseq::KernelFamily::SquaredExponential) {
    double s = 0.0;
    for (int k = 0; k < x.size(); ++k) {
      const double t = (x(k) - z(k)) / theta(k);
      s += t * t;
    }
    return std::exp(-s);
  }
  double prod = 1.0;
  for (int k = 0; k < x.size(); ++k) {
    const double t = std::sqrt(5.0) * std::abs(x(k) - z(k)) / theta(k);
    prod *= (1.0 + t + t * t / 3.0) * std::exp(-t);
  }
  return prod;
}

inline Eigen::MatrixXd corr_matrix(const Eigen::MatrixXd& D, krigseq::KernelFamily family,
                                   const Eigen::VectorXd& theta, double eta) {
  const Eigen::Index n = D.rows();
  Eigen::MatrixXd R(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      R(i, j) = corr(D.row(i).transpose(), D.row(j).transpose(), family, theta) +
                (i == j ? eta : 0.0);
  return R;
}

struct Gls {
  Eigen::VectorXd beta;
  double sigma2 = 0.0;
  Eigen::MatrixXd R_inv;
};

/// Normal-equation GLS with explicit full-pivot LU inverses.
inline Gls gls(const Eigen::MatrixXd& R, const Eigen::MatrixXd& F, const Eigen::VectorXd& y,
               int divisor) {
  Gls out;
  out.R_inv = R.fullPivLu().inverse();
  const Eigen::MatrixXd M = F.transpose() * out.R_inv * F;
  out.beta = M.fullPivLu().solve(F.transpose() * out.R_inv * y);
  const Eigen::VectorXd resid = y - F * out.beta;
  out.sigma2 = resid.dot(out.R_inv * resid) / divisor;
  return out;
}

/// All the pieces of one universal kriging model, built densely.
struct DensePieces {
  Eigen::MatrixXd D;
  Eigen::VectorXd y;
  krigseq::TrendBasis trend;
  krigseq::KernelFamily family;
  Eigen::VectorXd theta;
  double eta = 0.0;
  Eigen::MatrixXd R, F;
  Eigen::VectorXd beta;
  double sigma2 = 0.0;
};

inline DensePieces dense_pieces(const Eigen::MatrixXd& D, const Eigen::VectorXd& y,
                                const krigseq::TrendBasis& trend,
                                krigseq::KernelFamily family, const Eigen::VectorXd& theta,
                                double eta, int divisor) {
  DensePieces p;
  p.D = D;
  p.y = y;
  p.trend = trend;
  p.family = family;
  p.theta = theta;
  p.eta = eta;
  p.R = corr_matrix(D, family, theta, eta);
  p.F = trend.matrix(D);
  const Gls g = gls(p.R, p.F, y, divisor);
  p.beta = g.beta;
  p.sigma2 = g.sigma2;
  return p;
}

/// Predictive mean through the bordered system
///   m(x) = [f(x)' r(x)'] · B^{-1} · [0; y],  B = [[0, F'], [F, R]],
/// which never forms beta or any Schur complement.
inline double block_mean(const DensePieces& p, const Eigen::VectorXd& x) {
  const Eigen::Index n = p.D.rows();
  const Eigen::Index q = p.F.cols();
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(q + n, q + n);
  B.block(0, q, q, n) = p.F.transpose();
  B.block(q, 0, n, q) = p.F;
  B.block(q, q, n, n) = p.R;
  Eigen::VectorXd lhs(q + n), rhs(q + n);
  lhs.head(q) = p.trend.eval(x);
  for (Eigen::Index i = 0; i < n; ++i)
    lhs(q + i) = corr(p.D.row(i).transpose(), x, p.family, p.theta);
  rhs.setZero();
  rhs.tail(n) = p.y;
  return lhs.dot(B.fullPivLu().solve(rhs));
}

/// Predictive covariance through the same bordered system:
///   k(x, z) = sigma2 · ( r(x,z) − [f_x' r_x'] · B^{-1} · [f_z; r_z] ).
inline double block_cov(const DensePieces& p, const Eigen::VectorXd& x,
                        const Eigen::VectorXd& z) {
  const Eigen::Index n = p.D.rows();
  const Eigen::Index q = p.F.cols();
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(q + n, q + n);
  B.block(0, q, q, n) = p.F.transpose();
  B.block(q, 0, n, q) = p.F;
  B.block(q, q, n, n) = p.R;
  Eigen::VectorXd vx(q + n), vz(q + n);
  vx.head(q) = p.trend.eval(x);
  vz.head(q) = p.trend.eval(z);
  for (Eigen::Index i = 0; i < n; ++i) {
    vx(q + i) = corr(p.D.row(i).transpose(), x, p.family, p.theta);
    vz(q + i) = corr(p.D.row(i).transpose(), z, p.family, p.theta);
  }
  return p.sigma2 * (corr(x, z, p.family, p.theta) - vx.dot(B.fullPivLu().solve(vz)));
}

/// Delete point i and refit beta (GLS) and sigma2 (divisor n-p-1) with the
/// SAME theta and nugget; return the refit model's mean and variance at the
/// deleted point. This is the semantics the closed-form LOO must reproduce.
struct LoocvRefit {
  double mean = 0.0;
  double var = 0.0;
};

inline LoocvRefit loocv_delete_refit(const DensePieces& full, int i) {
  const int n = static_cast<int>(full.D.rows());
  const int p = static_cast<int>(full.F.cols());
  Eigen::MatrixXd D_red(n - 1, full.D.cols());
  Eigen::VectorXd y_red(n - 1);
  int r = 0;
  for (int j = 0; j < n; ++j) {
    if (j == i) continue;
    D_red.row(r) = full.D.row(j);
    y_red(r) = full.y(j);
    ++r;
  }
  DensePieces red = dense_pieces(D_red, y_red, full.trend, full.family, full.theta, full.eta,
                                 n - p - 1);
  LoocvRefit out;
  const Eigen::VectorXd xi = full.D.row(i).transpose();
  out.mean = block_mean(red, xi);
  out.var = block_cov(red, xi, xi);
  return out;
}

// ---------------------------------------------------------------------------
// Dense recursive two-or-more-code reference. Each level is treated as a
// universal kriging regression on [coarse outputs, trend basis] and every
// quantity comes from bordered-system solves with full-pivot LU — no Schur
// complements, no cached factors, no shortcut recursions.

struct MfPieces {
  std::vector<Eigen::MatrixXd> D;  // D[0] coarsest; every D[l] nested in D[l-1]
  std::vector<Eigen::VectorXd> y;
  std::vector<krigseq::TrendBasis> trends;
  std::vector<krigseq::KernelFamily> families;
  std::vector<Eigen::VectorXd> thetas;
  std::vector<double> etas;
};

inline int mf_match_row(const Eigen::MatrixXd& D, const Eigen::VectorXd& x) {
  for (Eigen::Index i = 0; i < D.rows(); ++i)
    if ((D.row(i).transpose() - x).cwiseAbs().maxCoeff() <= 1e-12) return static_cast<int>(i);
  throw std::runtime_error("oracle: point not found in coarser design");
}

// Regression matrix of one level: the trend basis alone at level 0, the
// coarser level's observed outputs prepended above.
inline Eigen::MatrixXd mf_basis(const MfPieces& p, int l) {
  const Eigen::MatrixXd F = p.trends[l].matrix(p.D[l]);
  if (l == 0) return F;
  Eigen::MatrixXd X(F.rows(), F.cols() + 1);
  for (Eigen::Index i = 0; i < F.rows(); ++i)
    X(i, 0) = p.y[l - 1](mf_match_row(p.D[l - 1], p.D[l].row(i).transpose()));
  X.rightCols(F.cols()) = F;
  return X;
}

struct MfDenseFit {
  std::vector<Eigen::VectorXd> lambda;  // level 0: beta; above: [rho; beta]
  std::vector<double> sigma2;           // divisor rows - cols at every level
};

inline MfDenseFit mf_dense_fit(const MfPieces& p) {
  MfDenseFit fit;
  for (std::size_t l = 0; l < p.D.size(); ++l) {
    const Eigen::MatrixXd R = corr_matrix(p.D[l], p.families[l], p.thetas[l], p.etas[l]);
    const Eigen::MatrixXd X = mf_basis(p, static_cast<int>(l));
    const Gls g = gls(R, X, p.y[l], static_cast<int>(X.rows() - X.cols()));
    fit.lambda.push_back(g.beta);
    fit.sigma2.push_back(g.sigma2);
  }
  return fit;
}

struct MfEval {
  double mean = 0.0;
  double var = 0.0;
};

inline MfEval mf_dense_eval(const MfPieces& p, int level, const Eigen::VectorXd& x) {
  const MfDenseFit fit = mf_dense_fit(p);
  MfEval e;
  {
    DensePieces base =
        dense_pieces(p.D[0], p.y[0], p.trends[0], p.families[0], p.thetas[0], p.etas[0],
                     static_cast<int>(p.D[0].rows() - p.trends[0].size()));
    e.mean = block_mean(base, x);
    e.var = block_cov(base, x, x);
  }
  for (int l = 1; l <= level; ++l) {
    const Eigen::MatrixXd R = corr_matrix(p.D[l], p.families[l], p.thetas[l], p.etas[l]);
    const Eigen::MatrixXd H = mf_basis(p, l);
    const Eigen::Index n = R.rows();
    const Eigen::Index q = H.cols();
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(q + n, q + n);
    B.block(0, q, q, n) = H.transpose();
    B.block(q, 0, n, q) = H;
    B.block(q, q, n, n) = R;
    Eigen::VectorXd v(q + n), rhs(q + n);
    v(0) = e.mean;  // the regression basis at x carries the coarser mean
    v.segment(1, q - 1) = p.trends[l].eval(x);
    for (Eigen::Index i = 0; i < n; ++i)
      v(q + i) = corr(p.D[l].row(i).transpose(), x, p.families[l], p.thetas[l]);
    rhs.setZero();
    rhs.tail(n) = p.y[l];
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(B);
    const double rho = fit.lambda[l](0);
    e.var = rho * rho * e.var + fit.sigma2[l] * (1.0 - v.dot(lu.solve(v)));
    e.mean = v.dot(lu.solve(rhs));
  }
  return e;
}

// Removes design point i of `level` from that level and every coarser one
// (matching rows by coordinates), then re-evaluates the reduced stack at the
// removed point. The error convention is observed minus predicted.
struct MfRefit {
  double error = 0.0;
  double var = 0.0;
};

inline MfRefit mf_dense_delete_refit(const MfPieces& full, int level, int i) {
  const Eigen::VectorXd x = full.D[level].row(i).transpose();
  const double observed = full.y[level](i);
  MfPieces red = full;
  red.D.resize(level + 1);
  red.y.resize(level + 1);
  for (int l = 0; l <= level; ++l) {
    const int kill = mf_match_row(full.D[l], x);
    const Eigen::Index n = full.D[l].rows();
    Eigen::MatrixXd D2(n - 1, full.D[l].cols());
    Eigen::VectorXd y2(n - 1);
    Eigen::Index r = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == kill) continue;
      D2.row(r) = full.D[l].row(j);
      y2(r) = full.y[l](j);
      ++r;
    }
    red.D[l] = std::move(D2);
    red.y[l] = std::move(y2);
  }
  const MfEval e = mf_dense_eval(red, level, x);
  return {observed - e.mean, e.var};
}

}  // namespace oracle
