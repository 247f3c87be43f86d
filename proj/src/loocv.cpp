#include "krigseq/loocv.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "krigseq/parallel.hpp"

namespace krigseq {

namespace {

constexpr double kSigma2Floor = 1e-300;

// All per-deletion quantities are assembled from the stored factors only,
// via the Schur-complement identities
//   a_{-i}' Rred^-1 b_{-i} = a'R^-1 b - [R^-1 a]_i [R^-1 b]_i / alpha,
// which hold for the full vectors regardless of their i-th entries.
struct DeletionContext {
  Eigen::MatrixXd M;    // F'R^-1 F
  Eigen::VectorXd Gty;  // F'R^-1 y
};

DeletionContext make_context(const KrigingModel& m) {
  DeletionContext ctx;
  ctx.M = m.F.transpose() * m.G;
  ctx.M = 0.5 * (ctx.M + ctx.M.transpose().eval());
  ctx.Gty = m.G.transpose() * m.y;
  return ctx;
}

void check_loocv_pre(const KrigingModel& m, int i) {
  if (i < 0 || i >= m.n())
    throw ArgumentError("loocv: index " + std::to_string(i) + " out of range [0," +
                        std::to_string(m.n()) + ")");
  if (m.n() < m.p() + 3)
    throw ArgumentError("loocv: need at least p+3 = " + std::to_string(m.p() + 3) +
                        " points so the reduced model is estimable, got " +
                        std::to_string(m.n()));
}

// Per-deletion solve. Returns alpha, beta_minus, delta, sigma2_minus, m_i and
// the reduced normal matrix A = M - m_i m_i'/alpha factorized for reuse.
struct DeletionSolve {
  double alpha;
  Eigen::VectorXd m_i;
  Eigen::LLT<Eigen::MatrixXd> A_llt;
  Eigen::VectorXd beta_minus;
  double delta;
  double sigma2_minus;
};

DeletionSolve solve_deletion(const KrigingModel& m, const DeletionContext& ctx, int i) {
  DeletionSolve s;
  s.alpha = m.R_inv(i, i);
  if (s.alpha < detail::kAlphaGuard) {
    std::ostringstream os;
    os << "loocv: [R^-1]_" << i << i << " = " << s.alpha
       << " below guard; near-duplicate design points";
    throw ConditioningError(os.str(), m.nugget);
  }
  s.m_i = m.G.row(i).transpose();
  Eigen::MatrixXd A = ctx.M - (s.m_i * s.m_i.transpose()) / s.alpha;
  A = 0.5 * (A + A.transpose().eval());
  s.A_llt.compute(A);
  if (s.A_llt.info() != Eigen::Success)
    throw ConditioningError("loocv: reduced trend normal equations not positive definite",
                            m.nugget);
  s.beta_minus = s.A_llt.solve(ctx.Gty - s.m_i * (m.c(i) / s.alpha));
  s.delta = m.c(i) - s.m_i.dot(s.beta_minus);

  // full-residual quadratic form: w = y - F beta_minus, R^-1 w = c - G beta_minus
  const Eigen::VectorXd w = m.y - m.F * s.beta_minus;
  const Eigen::VectorXd Rinv_w = m.c - m.G * s.beta_minus;
  const double quad = w.dot(Rinv_w);
  const int divisor = m.n() - m.p() - 1;
  s.sigma2_minus =
      std::max((quad - s.delta * s.delta / s.alpha) / static_cast<double>(divisor),
               kSigma2Floor);
  return s;
}

double loo_var_from(const KrigingModel& m, const DeletionSolve& s) {
  const Eigen::VectorXd Ainv_mi = s.A_llt.solve(s.m_i);
  const double bracket =
      (1.0 / s.alpha - m.nugget) + s.m_i.dot(Ainv_mi) / (s.alpha * s.alpha);
  return s.sigma2_minus * bracket;
}

}  // namespace

double loocv_mean(const KrigingModel& model, int i) {
  check_loocv_pre(model, i);
  const DeletionContext ctx = make_context(model);
  const DeletionSolve s = solve_deletion(model, ctx, i);
  return model.y(i) - s.delta / s.alpha;
}

double loocv_var(const KrigingModel& model, int i) {
  check_loocv_pre(model, i);
  const DeletionContext ctx = make_context(model);
  const DeletionSolve s = solve_deletion(model, ctx, i);
  return loo_var_from(model, s);
}

LoocvDiagnostics loocv_diagnostics(const KrigingModel& model) {
  check_loocv_pre(model, 0);
  const DeletionContext ctx = make_context(model);
  const int n = model.n();
  LoocvDiagnostics diag;
  diag.e2.resize(n);
  diag.s2.resize(n);
  diag.ratios.resize(n);
  par::for_index(n, [&](Eigen::Index i) {
    const DeletionSolve s = solve_deletion(model, ctx, static_cast<int>(i));
    const double err = s.delta / s.alpha;
    diag.e2(i) = err * err;
    diag.s2(i) = loo_var_from(model, s);
  });
  // LOO errors at round-off scale are treated as exact zeros so that
  // perfectly-fitting models yield a vanishing adjustment instead of a 0/0
  // artifact. The absolute term covers constant data, where range(y) = 0 but
  // the arithmetic still leaves errors of order eps·|y|.
  const double range = model.y.maxCoeff() - model.y.minCoeff();
  const double maxabs = model.y.cwiseAbs().maxCoeff();
  const double e2_floor = 1e-24 * range * range + 1e-28 * maxabs * maxabs;
  for (int i = 0; i < n; ++i) {
    if (diag.e2(i) <= e2_floor) {
      diag.ratios(i) = 0.0;
      continue;
    }
    const double raw = diag.e2(i) / diag.s2(i);
    if (raw > detail::kRatioCap) {
      std::ostringstream os;
      os << "loocv: ratio[" << i << "] = " << raw << " capped at " << detail::kRatioCap;
      debug_log(os.str());
      diag.ratios(i) = detail::kRatioCap;
    } else {
      diag.ratios(i) = raw;
    }
  }
  return diag;
}

JackknifeCache make_jackknife_cache(const KrigingModel& model) {
  check_loocv_pre(model, 0);
  const DeletionContext ctx = make_context(model);
  const int n = model.n();
  JackknifeCache cache;
  cache.beta_minus.resize(model.p(), n);
  cache.V.resize(n, n);
  par::for_index(n, [&](Eigen::Index i) {
    const DeletionSolve s = solve_deletion(model, ctx, static_cast<int>(i));
    cache.beta_minus.col(i) = s.beta_minus;
    // m_{n,-i}(x) = f(x)' beta_minus + r(x)' v_i with
    // v_i = R^-1(y - F beta_minus) - (R^-1 e_i) delta/alpha
    cache.V.col(i) =
        (model.c - model.G * s.beta_minus) - model.R_inv.col(i) * (s.delta / s.alpha);
  });
  return cache;
}

double jackknife_variance(const KrigingModel& model, const JackknifeCache& cache,
                          const Eigen::VectorXd& x) {
  const int n = model.n();
  if (cache.V.rows() != n || cache.beta_minus.cols() != n)
    throw ArgumentError("jackknife_variance: cache does not match model");
  const Eigen::VectorXd r = correlation_vector(model.D, x, model.kernel);
  const Eigen::VectorXd f = model.trend.eval(x);
  const double m_full = f.dot(model.beta_hat) + r.dot(model.Rinv_resid);

  // pseudo-values y~_i = n m_n(x) - (n-1) m_{n,-i}(x)
  const Eigen::VectorXd loo_means =
      (cache.beta_minus.transpose() * f + cache.V.transpose() * r).eval();
  const Eigen::VectorXd pseudo =
      Eigen::VectorXd::Constant(n, static_cast<double>(n) * m_full) -
      (static_cast<double>(n) - 1.0) * loo_means;
  const double mean_pseudo = pseudo.mean();
  const double ss = (pseudo.array() - mean_pseudo).square().sum();
  return ss / (static_cast<double>(n) * (static_cast<double>(n) - 1.0));
}

double jackknife_variance(const KrigingModel& model, const Eigen::VectorXd& x) {
  return jackknife_variance(model, make_jackknife_cache(model), x);
}

void save_loocv_csv(const LoocvDiagnostics& diag, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "index,e2,s2,ratio\n";
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
  };
  for (Eigen::Index i = 0; i < diag.e2.size(); ++i) {
    out << i << ',';
    put(diag.e2(i));
    out << ',';
    put(diag.s2(i));
    out << ',';
    put(diag.ratios(i));
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace krigseq
