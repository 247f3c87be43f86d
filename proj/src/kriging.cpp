#include "krigseq/kriging.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "krigseq/design_gen.hpp"
#include "krigseq/parallel.hpp"
#include "krigseq/rng.hpp"

namespace krigseq {

namespace detail {

GlsFit fit_gls(const Eigen::LLT<Eigen::MatrixXd>& R_factor, const Eigen::MatrixXd& F,
               const Eigen::VectorXd& y, int sigma2_divisor) {
  const Eigen::Index n = F.rows();
  const Eigen::Index p = F.cols();
  if (y.size() != n) throw ArgumentError("fit_gls: output length does not match design size");
  if (sigma2_divisor < 1)
    throw ArgumentError("fit_gls: sigma2 divisor must be positive, got " +
                        std::to_string(sigma2_divisor));
  if (Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(F).rank() < p)
    throw TrendError("trend matrix is rank deficient (" + std::to_string(n) + "×" +
                     std::to_string(p) + ")");

  GlsFit fit;
  fit.G = R_factor.solve(F);
  fit.M = F.transpose() * fit.G;
  fit.M = 0.5 * (fit.M + fit.M.transpose().eval());  // enforce exact symmetry
  const Eigen::LLT<Eigen::MatrixXd> M_factor(fit.M);
  if (M_factor.info() != Eigen::Success)
    throw TrendError("trend normal equations are not positive definite");
  fit.M_inv = M_factor.solve(Eigen::MatrixXd::Identity(p, p));
  fit.c = R_factor.solve(y);
  fit.beta = M_factor.solve(fit.G.transpose() * y);
  fit.resid = y - F * fit.beta;
  fit.Rinv_resid = R_factor.solve(fit.resid);
  fit.quad = std::max(fit.resid.dot(fit.Rinv_resid), 0.0);
  fit.sigma2 = fit.quad / static_cast<double>(sigma2_divisor);
  return fit;
}

}  // namespace detail

namespace {

constexpr double kSigma2Floor = 1e-300;  // keeps sigma2_hat positive on constant data

void require_distinct_rows(const Eigen::MatrixXd& D) {
  for (Eigen::Index i = 0; i < D.rows(); ++i)
    for (Eigen::Index j = i + 1; j < D.rows(); ++j)
      if ((D.row(i) - D.row(j)).norm() == 0.0)
        throw ArgumentError("design rows " + std::to_string(i) + " and " + std::to_string(j) +
                            " coincide");
}

double one_norm(const Eigen::MatrixXd& A) { return A.cwiseAbs().colwise().sum().maxCoeff(); }

// Assembles the full model given a factorized correlation matrix and a
// GLS fit whose beta/sigma2 may have been overridden by the caller.
KrigingModel assemble(Eigen::MatrixXd D, Eigen::VectorXd y, const TrendBasis& trend,
                      const CorrelationKernel& kernel, CorrelationMatrix K,
                      Eigen::MatrixXd F, detail::GlsFit gls) {
  KrigingModel m;
  m.D = std::move(D);
  m.y = std::move(y);
  m.trend = trend;
  m.kernel = kernel;
  m.beta_hat = std::move(gls.beta);
  m.sigma2_hat = std::max(gls.sigma2, kSigma2Floor);
  m.R = std::move(K.R);
  m.R_factor = std::move(K.llt);
  m.R_inv = m.R_factor.solve(Eigen::MatrixXd::Identity(m.R.rows(), m.R.rows()));
  m.F = std::move(F);
  m.nugget = K.nugget;
  m.G = std::move(gls.G);
  m.M_inv = std::move(gls.M_inv);
  m.c = std::move(gls.c);
  m.Rinv_resid = std::move(gls.Rinv_resid);
  m.kappa1 = one_norm(m.R) * one_norm(m.R_inv);
  return m;
}

void check_build_args(const Eigen::MatrixXd& D, const Eigen::VectorXd& y,
                      const TrendBasis& trend, const CorrelationKernel& kernel) {
  if (D.rows() < 1) throw ArgumentError("kriging: empty design");
  if (y.size() != D.rows()) throw ArgumentError("kriging: outputs do not match design size");
  if (trend.dim != D.cols()) throw ArgumentError("kriging: trend dimension mismatch");
  if (kernel.dim() != D.cols()) throw ArgumentError("kriging: kernel dimension mismatch");
  if ((kernel.theta.array() <= 0.0).any())
    throw ArgumentError("kriging: kernel length-scales must be positive");
  require_distinct_rows(D);
}

}  // namespace

KrigingModel make_kriging(const Eigen::MatrixXd& D, const Eigen::VectorXd& y,
                          const TrendBasis& trend, const CorrelationKernel& kernel) {
  check_build_args(D, y, trend, kernel);
  const int n = static_cast<int>(D.rows());
  const int p = trend.size();
  if (n < p + 1)
    throw ArgumentError("kriging: need at least p+1 = " + std::to_string(p + 1) +
                        " points to estimate beta and sigma2, got " + std::to_string(n));
  CorrelationMatrix K = correlation_matrix(D, kernel);
  Eigen::MatrixXd F = trend.matrix(D);
  detail::GlsFit gls = detail::fit_gls(K.llt, F, y, n - p);
  return assemble(D, y, trend, kernel, std::move(K), std::move(F), std::move(gls));
}

KrigingModel make_kriging_fixed(const Eigen::MatrixXd& D, const Eigen::VectorXd& y,
                                const TrendBasis& trend, const CorrelationKernel& kernel,
                                const Eigen::VectorXd& beta, double sigma2,
                                double nugget_start) {
  check_build_args(D, y, trend, kernel);
  if (beta.size() != trend.size()) throw ArgumentError("kriging: beta length mismatch");
  if (sigma2 < 0.0) throw ArgumentError("kriging: sigma2 must be nonnegative");
  CorrelationMatrix K = nugget_start > 0.0 ? correlation_matrix(D, kernel, nugget_start)
                                           : correlation_matrix(D, kernel);
  Eigen::MatrixXd F = trend.matrix(D);
  // Divisor 1 is a placeholder; beta and sigma2 are overridden below.
  detail::GlsFit gls = detail::fit_gls(K.llt, F, y, 1);
  gls.beta = beta;
  gls.sigma2 = sigma2;
  gls.resid = y - F * beta;
  gls.Rinv_resid = K.llt.solve(gls.resid);
  gls.quad = gls.resid.dot(gls.Rinv_resid);
  return assemble(D, y, trend, kernel, std::move(K), std::move(F), std::move(gls));
}

double profile_loglik(const Eigen::MatrixXd& D, const Eigen::VectorXd& y,
                      const TrendBasis& trend, const CorrelationKernel& kernel) {
  check_build_args(D, y, trend, kernel);
  const int n = static_cast<int>(D.rows());
  const int p = trend.size();
  if (n < p + 2)
    throw ArgumentError("profile_loglik: need at least p+2 points, got " + std::to_string(n));
  const CorrelationMatrix K = correlation_matrix(D, kernel);
  const Eigen::MatrixXd F = trend.matrix(D);
  const detail::GlsFit gls = detail::fit_gls(K.llt, F, y, n - p);
  const double log_det_R =
      2.0 * K.llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double log_sigma2 = std::log(std::max(gls.sigma2, kSigma2Floor));
  return -0.5 * (static_cast<double>(n - p) * log_sigma2 + log_det_R);
}

namespace detail {

Eigen::VectorXd search_theta(int dim,
                             const std::function<double(const Eigen::VectorXd&)>& loglik,
                             const FitOptions& options, double* loglik_out, int* evals_out) {
  if (dim < 1) throw ArgumentError("theta search: dimension must be positive");
  if (!(options.theta_min > 0.0) || !(options.theta_max > options.theta_min))
    throw ArgumentError("theta search: invalid theta bounds");
  if (options.n_starts < 1 || options.sweeps < 1 || options.line_evals < 2)
    throw ArgumentError("theta search: invalid optimizer budget");

  const double zlo = std::log(options.theta_min);
  const double zhi = std::log(options.theta_max);
  int evals = 0;
  double best_ll = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_z = Eigen::VectorXd::Constant(dim, 0.5 * (zlo + zhi));

  auto eval_ll = [&](const Eigen::VectorXd& z) -> double {
    ++evals;
    double ll = loglik(z.array().exp().matrix());
    if (!std::isfinite(ll)) return -std::numeric_limits<double>::infinity();
    if (ll > best_ll) {
      best_ll = ll;
      best_z = z;
    }
    return ll;
  };

  // Start points: the box center, an optional warm start, then a
  // low-discrepancy spread over the log-bounded box.
  std::vector<Eigen::VectorXd> starts;
  starts.push_back(Eigen::VectorXd::Constant(dim, 0.5 * (zlo + zhi)));
  if (options.warm_theta) {
    if (options.warm_theta->size() != dim)
      throw ArgumentError("theta search: warm_theta dimension mismatch");
    Eigen::VectorXd z = options.warm_theta->array().log().matrix();
    starts.push_back(z.cwiseMax(zlo).cwiseMin(zhi));
  }
  if (options.n_starts > static_cast<int>(starts.size())) {
    const int extra = options.n_starts - static_cast<int>(starts.size());
    const Eigen::MatrixXd H = halton_points(extra, dim, derive_seed(options.seed, 0xF17));
    for (int i = 0; i < extra; ++i)
      starts.push_back((zlo + (zhi - zlo) * H.row(i).transpose().array()).matrix());
  }

  constexpr double kGolden = 0.6180339887498949;
  for (const Eigen::VectorXd& start : starts) {
    Eigen::VectorXd z = start;
    double current = eval_ll(z);
    for (int sweep = 0; sweep < options.sweeps; ++sweep) {
      for (int k = 0; k < dim; ++k) {
        double a = zlo, b = zhi;
        double line_best = current;
        double line_best_z = z(k);
        auto probe = [&](double zk) {
          Eigen::VectorXd zz = z;
          zz(k) = zk;
          const double ll = eval_ll(zz);
          if (ll > line_best) {
            line_best = ll;
            line_best_z = zk;
          }
          return ll;
        };
        double c1 = b - kGolden * (b - a);
        double c2 = a + kGolden * (b - a);
        double f1 = probe(c1);
        double f2 = probe(c2);
        for (int it = 0; it < options.line_evals - 2; ++it) {
          if (f1 < f2) {
            a = c1;
            c1 = c2;
            f1 = f2;
            c2 = a + kGolden * (b - a);
            f2 = probe(c2);
          } else {
            b = c2;
            c2 = c1;
            f2 = f1;
            c1 = b - kGolden * (b - a);
            f1 = probe(c1);
          }
        }
        if (line_best > current) {
          current = line_best;
          z(k) = line_best_z;
        }
      }
    }
  }

  if (loglik_out) *loglik_out = best_ll;
  if (evals_out) *evals_out = evals;
  return best_z.array().exp().matrix();
}

}  // namespace detail

KrigingModel fit_kriging(const Eigen::MatrixXd& D, const Eigen::VectorXd& y,
                         const TrendBasis& trend, KernelFamily family,
                         const FitOptions& options, FitReport* report) {
  const int d = static_cast<int>(D.cols());
  const int n = static_cast<int>(D.rows());
  const int p = trend.size();
  if (n < p + 2)
    throw ArgumentError("fit_kriging: need at least p+2 = " + std::to_string(p + 2) +
                        " points, got " + std::to_string(n));
  {
    // Validate data/trend once so failures are not silently treated as bad theta.
    CorrelationKernel probe{family, Eigen::VectorXd::Constant(d, 1.0)};
    check_build_args(D, y, trend, probe);
    if (Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(trend.matrix(D)).rank() < p)
      throw TrendError("trend matrix is rank deficient");
  }

  auto eval_ll = [&](const Eigen::VectorXd& theta) -> double {
    CorrelationKernel kernel{family, theta};
    try {
      return profile_loglik(D, y, trend, kernel);
    } catch (const ConditioningError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };

  double best_ll = 0.0;
  int evals = 0;
  const Eigen::VectorXd theta = detail::search_theta(d, eval_ll, options, &best_ll, &evals);
  CorrelationKernel kernel{family, theta};
  if (report) {
    report->theta = kernel.theta;
    report->loglik = best_ll;
    report->evaluations = evals;
  }
  return make_kriging(D, y, trend, kernel);
}

namespace {

// r(x), f(x), R^-1 r and u = F'R^-1 r - f for one prediction point.
struct PredictionVectors {
  Eigen::VectorXd r, f, Rinv_r, u;
};

PredictionVectors prediction_vectors(const KrigingModel& m, const Eigen::VectorXd& x) {
  if (x.size() != m.dim())
    throw ArgumentError("predict: point dimension " + std::to_string(x.size()) +
                        " does not match model dimension " + std::to_string(m.dim()));
  PredictionVectors v;
  v.r = correlation_vector(m.D, x, m.kernel);
  v.f = m.trend.eval(x);
  v.Rinv_r = m.R_factor.solve(v.r);
  v.u = m.G.transpose() * v.r - v.f;
  return v;
}

// Clamp policy for the dimensionless variance bracket: tiny round-off
// negatives go to zero (raw value to the debug channel); negatives beyond
// the conditioning noise floor are an error, not round-off.
double clamp_bracket(const KrigingModel& m, double bracket) {
  if (bracket >= 0.0) return bracket;
  {
    std::ostringstream os;
    os << "predict_var: raw dimensionless variance " << bracket << " clamped";
    debug_log(os.str());
  }
  const double floor =
      std::max(1e-10, 64.0 * std::numeric_limits<double>::epsilon() * m.kappa1);
  if (bracket < -floor) {
    std::ostringstream os;
    os << "predicted variance " << bracket << " below the conditioning noise floor -" << floor;
    throw ConditioningError(os.str(), m.nugget);
  }
  return 0.0;
}

}  // namespace

double predict_mean(const KrigingModel& model, const Eigen::VectorXd& x) {
  if (x.size() != model.dim()) throw ArgumentError("predict_mean: point dimension mismatch");
  const Eigen::VectorXd r = correlation_vector(model.D, x, model.kernel);
  return model.trend.eval(x).dot(model.beta_hat) + r.dot(model.Rinv_resid);
}

double predict_cov(const KrigingModel& model, const Eigen::VectorXd& x,
                   const Eigen::VectorXd& z) {
  const PredictionVectors vx = prediction_vectors(model, x);
  const PredictionVectors vz = prediction_vectors(model, z);
  const double bracket =
      correlation(x, z, model.kernel) - vx.r.dot(vz.Rinv_r) + vx.u.dot(model.M_inv * vz.u);
  if (x == z) return model.sigma2_hat * clamp_bracket(model, bracket);
  return model.sigma2_hat * bracket;
}

double predict_var(const KrigingModel& model, const Eigen::VectorXd& x) {
  const PredictionVectors v = prediction_vectors(model, x);
  const double bracket = 1.0 - v.r.dot(v.Rinv_r) + v.u.dot(model.M_inv * v.u);
  return model.sigma2_hat * clamp_bracket(model, bracket);
}

Eigen::VectorXd predict_mean_batch(const KrigingModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.dim()) throw ArgumentError("predict_mean_batch: dimension mismatch");
  Eigen::VectorXd out(X.rows());
  par::for_index(X.rows(), [&](Eigen::Index i) {
    out(i) = predict_mean(model, X.row(i).transpose());
  });
  return out;
}

Eigen::VectorXd predict_var_batch(const KrigingModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.dim()) throw ArgumentError("predict_var_batch: dimension mismatch");
  Eigen::VectorXd out(X.rows());
  par::for_index(X.rows(), [&](Eigen::Index i) {
    out(i) = predict_var(model, X.row(i).transpose());
  });
  return out;
}

KrigingModel liar_condition(const KrigingModel& model, const Eigen::VectorXd& x_new,
                            std::optional<double> y_fake) {
  if (x_new.size() != model.dim()) throw ArgumentError("liar_condition: dimension mismatch");
  for (Eigen::Index i = 0; i < model.D.rows(); ++i)
    if ((model.D.row(i).transpose() - x_new).norm() < 1e-12)
      throw DegenerateUpdateError("liar_condition: x_new coincides with design point " +
                                  std::to_string(i));

  const double y_new = y_fake ? *y_fake : predict_mean(model, x_new);
  Eigen::MatrixXd D2(model.n() + 1, model.dim());
  D2.topRows(model.n()) = model.D;
  D2.row(model.n()) = x_new.transpose();
  Eigen::VectorXd y2(model.n() + 1);
  y2.head(model.n()) = model.y;
  y2(model.n()) = y_new;
  return make_kriging_fixed(D2, y2, model.trend, model.kernel, model.beta_hat,
                            model.sigma2_hat, model.nugget);
}

void save_model(const KrigingModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
  };
  out << "krigseq-model 1\n";
  out << "kernel " << to_string(model.kernel.family) << '\n';
  out << "trend " << to_string(model.trend.kind) << '\n';
  out << "n " << model.n() << " dim " << model.dim() << '\n';
  out << "nugget ";
  put(model.nugget);
  out << "\ntheta";
  for (int k = 0; k < model.dim(); ++k) {
    out << ' ';
    put(model.kernel.theta(k));
  }
  out << "\nbeta";
  for (int j = 0; j < model.p(); ++j) {
    out << ' ';
    put(model.beta_hat(j));
  }
  out << "\nsigma2 ";
  put(model.sigma2_hat);
  out << "\nD\n";
  for (int i = 0; i < model.n(); ++i) {
    for (int k = 0; k < model.dim(); ++k) {
      if (k) out << ',';
      put(model.D(i, k));
    }
    out << '\n';
  }
  out << "y\n";
  for (int i = 0; i < model.n(); ++i) {
    put(model.y(i));
    out << '\n';
  }
  out << "end\n";
  if (!out) throw IoError("write failed: " + path);
}

KrigingModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  auto fail = [&](const std::string& what) -> IoError {
    return IoError("malformed model file " + path + ": " + what);
  };

  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != "krigseq-model" || version != 1)
    throw fail("bad header");
  std::string kernel_name, trend_name;
  if (!(in >> word >> kernel_name) || word != "kernel") throw fail("kernel line");
  if (!(in >> word >> trend_name) || word != "trend") throw fail("trend line");
  int n = 0, d = 0;
  if (!(in >> word >> n) || word != "n" || n < 1) throw fail("n line");
  if (!(in >> word >> d) || word != "dim" || d < 1) throw fail("dim line");
  double nugget = 0.0;
  if (!(in >> word >> nugget) || word != "nugget") throw fail("nugget line");

  TrendBasis trend{trend_kind_from_string(trend_name), d};
  CorrelationKernel kernel{kernel_family_from_string(kernel_name), Eigen::VectorXd(d)};
  if (!(in >> word) || word != "theta") throw fail("theta line");
  for (int k = 0; k < d; ++k)
    if (!(in >> kernel.theta(k))) throw fail("theta values");
  Eigen::VectorXd beta(trend.size());
  if (!(in >> word) || word != "beta") throw fail("beta line");
  for (int j = 0; j < trend.size(); ++j)
    if (!(in >> beta(j))) throw fail("beta values");
  double sigma2 = 0.0;
  if (!(in >> word >> sigma2) || word != "sigma2") throw fail("sigma2 line");

  if (!(in >> word) || word != "D") throw fail("design header");
  in.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
  Eigen::MatrixXd D(n, d);
  std::string line;
  for (int i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw fail("design rows");
    std::stringstream ss(line);
    std::string cell;
    for (int k = 0; k < d; ++k) {
      if (!std::getline(ss, cell, ',')) throw fail("design row " + std::to_string(i));
      D(i, k) = std::stod(cell);
    }
  }
  if (!(in >> word) || word != "y") throw fail("output header");
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i)
    if (!(in >> y(i))) throw fail("output values");
  if (!(in >> word) || word != "end") throw fail("missing end marker");

  return make_kriging_fixed(D, y, trend, kernel, beta, sigma2, nugget);
}

}  // namespace krigseq
