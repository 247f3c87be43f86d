#include "krigseq/cokriging.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "krigseq/loocv.hpp"
#include "krigseq/parallel.hpp"
#include "krigseq/rng.hpp"

namespace krigseq {

namespace {

constexpr double kSigma2Floor = 1e-300;
constexpr double kNestTol = 1e-12;

double one_norm(const Eigen::MatrixXd& A) { return A.cwiseAbs().colwise().sum().maxCoeff(); }

// Same clamp policy as predict_var: tiny round-off negatives of the
// dimensionless variance bracket go to zero (raw value to the debug
// channel); negatives beyond the level's conditioning noise floor are an
// error, not round-off.
double clamp_level_bracket(double bracket, double kappa1, double nugget, int level) {
  if (bracket >= 0.0) return bracket;
  {
    std::ostringstream os;
    os << "level_variance: raw dimensionless variance " << bracket << " at level " << level
       << " clamped";
    debug_log(os.str());
  }
  const double floor = std::max(1e-10, 64.0 * std::numeric_limits<double>::epsilon() * kappa1);
  if (bracket < -floor) {
    std::ostringstream os;
    os << "level " << level << " bias variance " << bracket
       << " below the conditioning noise floor -" << floor;
    throw ConditioningError(os.str(), nugget);
  }
  return 0.0;
}

void require_distinct_rows(const Eigen::MatrixXd& D, int level) {
  for (Eigen::Index i = 0; i < D.rows(); ++i)
    for (Eigen::Index j = i + 1; j < D.rows(); ++j)
      if ((D.row(i) - D.row(j)).cwiseAbs().maxCoeff() == 0.0)
        throw ArgumentError("make_mf_data: level " + std::to_string(level) + " rows " +
                            std::to_string(i) + " and " + std::to_string(j) + " coincide");
}

const CokrigingLevel& upper_at(const CokrigingModel& model, int level) {
  return model.upper[static_cast<std::size_t>(level - 1)];
}

void check_level(const CokrigingModel& model, int level, const char* who) {
  if (level < 0 || level >= model.levels())
    throw ArgumentError(std::string(who) + ": level " + std::to_string(level) +
                        " out of range [0, " + std::to_string(model.levels()) + ")");
}

void check_point(const CokrigingModel& model, const Eigen::VectorXd& x, const char* who) {
  if (x.size() != model.dim())
    throw ArgumentError(std::string(who) + ": point dimension " + std::to_string(x.size()) +
                        " does not match model dimension " + std::to_string(model.dim()));
}

// Builds one correction level. With `frozen_lambda` null the joint scale and
// trend estimate (rho, beta) = (H'R^-1H)^-1 H'R^-1 y is computed with sigma2
// divisor n-p-1; otherwise the supplied parameters are installed verbatim
// (liar rebuilds, deserialization) and only the caches are recomputed.
CokrigingLevel build_level(Eigen::MatrixXd D, Eigen::VectorXd y, Eigen::VectorXd coarse_y,
                           const TrendBasis& trend, const CorrelationKernel& kernel,
                           double nugget_start, const Eigen::VectorXd* frozen_lambda,
                           double frozen_sigma2) {
  CokrigingLevel lvl;
  lvl.D = std::move(D);
  lvl.y = std::move(y);
  lvl.coarse_y = std::move(coarse_y);
  lvl.trend = trend;
  lvl.kernel = kernel;

  const int n = lvl.n();
  const int p = lvl.p();
  const Eigen::MatrixXd F = trend.matrix(lvl.D);
  lvl.H.resize(n, p + 1);
  lvl.H.col(0) = lvl.coarse_y;
  lvl.H.rightCols(p) = F;

  CorrelationMatrix K = nugget_start >= 0.0 ? correlation_matrix(lvl.D, kernel, nugget_start)
                                            : correlation_matrix(lvl.D, kernel);
  lvl.R = std::move(K.R);
  lvl.R_factor = std::move(K.llt);
  lvl.nugget = K.nugget;

  const detail::GlsFit gls =
      detail::fit_gls(lvl.R_factor, lvl.H, lvl.y, frozen_lambda ? 1 : n - p - 1);
  lvl.G = gls.G;
  lvl.M_inv = gls.M_inv;
  lvl.c = gls.c;
  if (frozen_lambda) {
    lvl.rho = (*frozen_lambda)(0);
    lvl.beta = frozen_lambda->tail(p);
    lvl.sigma2 = std::max(frozen_sigma2, kSigma2Floor);
    lvl.gamma = lvl.R_factor.solve(lvl.y - lvl.H * (*frozen_lambda));
  } else {
    lvl.rho = gls.beta(0);
    lvl.beta = gls.beta.tail(p);
    lvl.sigma2 = std::max(gls.sigma2, kSigma2Floor);
    lvl.gamma = gls.Rinv_resid;
  }
  lvl.R_inv = lvl.R_factor.solve(Eigen::MatrixXd::Identity(n, n));
  lvl.kappa1 = one_norm(lvl.R) * one_norm(lvl.R_inv);
  return lvl;
}

// Shared entry checks for the two constructors: one trend and kernel slot
// per level, matching dimensions, and enough points that every level's
// delete-one system keeps a positive variance divisor.
void check_stack_args(const MultiFidelityData& data, const std::vector<TrendBasis>& trends,
                      std::size_t kernel_slots, const char* who) {
  const int s = data.levels();
  if (s < 1) throw ArgumentError(std::string(who) + ": data has no levels");
  if (static_cast<int>(trends.size()) != s || static_cast<int>(kernel_slots) != s)
    throw ArgumentError(std::string(who) + ": need one trend and one kernel per level");
  if (static_cast<int>(data.outputs.size()) != s ||
      static_cast<int>(data.parent.size()) != s - 1)
    throw ArgumentError(std::string(who) + ": data index maps missing; build via make_mf_data");
  for (int l = 0; l < s; ++l) {
    if (trends[static_cast<std::size_t>(l)].dim != data.dim())
      throw ArgumentError(std::string(who) + ": trend dimension mismatch at level " +
                          std::to_string(l));
    const int p = trends[static_cast<std::size_t>(l)].size();
    if (data.n(l) < p + 3)
      throw ArgumentError(std::string(who) + ": level " + std::to_string(l) + " needs at least " +
                          std::to_string(p + 3) + " points for cross-validation, got " +
                          std::to_string(data.n(l)));
  }
}

Eigen::VectorXd gather(const Eigen::VectorXd& values, const Eigen::VectorXi& index) {
  Eigen::VectorXd out(index.size());
  for (Eigen::Index i = 0; i < index.size(); ++i) out(i) = values(index(i));
  return out;
}

// Profile log-likelihood core shared by mf_profile_loglik and the per-level
// theta searches: (rho, beta) and sigma2 profiled out by GLS against
// H = [coarse_y F], leaving
//   -1/2 [ (n - p - 1) log sigma2(theta) + log det R(theta) ].
double level_profile_ll(const Eigen::MatrixXd& D, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& coarse_y, const TrendBasis& trend,
                        const CorrelationKernel& kernel) {
  const int n = static_cast<int>(D.rows());
  const int p = trend.size();
  Eigen::MatrixXd H(n, p + 1);
  H.col(0) = coarse_y;
  H.rightCols(p) = trend.matrix(D);
  const CorrelationMatrix K = correlation_matrix(D, kernel);
  const detail::GlsFit gls = detail::fit_gls(K.llt, H, y, n - p - 1);
  double log_det_R = 0.0;
  const auto& L = K.llt.matrixLLT();
  for (int i = 0; i < n; ++i) log_det_R += 2.0 * std::log(L(i, i));
  return -0.5 * ((n - p - 1) * std::log(std::max(gls.sigma2, kSigma2Floor)) + log_det_R);
}

}  // namespace

Eigen::VectorXd CokrigingLevel::lambda() const {
  Eigen::VectorXd out(p() + 1);
  out(0) = rho;
  out.tail(p()) = beta;
  return out;
}

int mf_parent_index(const Eigen::MatrixXd& coarse, const Eigen::VectorXd& x, double tol) {
  if (x.size() != coarse.cols()) throw ArgumentError("mf_parent_index: dimension mismatch");
  for (Eigen::Index i = 0; i < coarse.rows(); ++i)
    if ((coarse.row(i).transpose() - x).cwiseAbs().maxCoeff() <= tol)
      return static_cast<int>(i);
  throw ArgumentError("mf_parent_index: point not present in the coarser design");
}

MultiFidelityData make_mf_data(std::vector<Eigen::MatrixXd> designs,
                               std::vector<Eigen::VectorXd> outputs) {
  if (designs.empty()) throw ArgumentError("make_mf_data: no levels");
  if (outputs.size() != designs.size())
    throw ArgumentError("make_mf_data: " + std::to_string(designs.size()) + " designs but " +
                        std::to_string(outputs.size()) + " output vectors");
  const Eigen::Index d = designs.front().cols();
  for (std::size_t l = 0; l < designs.size(); ++l) {
    if (designs[l].rows() < 1)
      throw ArgumentError("make_mf_data: level " + std::to_string(l) + " is empty");
    if (designs[l].cols() != d)
      throw ArgumentError("make_mf_data: level " + std::to_string(l) +
                          " input dimension differs from level 0");
    if (outputs[l].size() != designs[l].rows())
      throw ArgumentError("make_mf_data: level " + std::to_string(l) + " has " +
                          std::to_string(designs[l].rows()) + " points but " +
                          std::to_string(outputs[l].size()) + " outputs");
    require_distinct_rows(designs[l], static_cast<int>(l));
  }

  MultiFidelityData data;
  data.designs = std::move(designs);
  data.outputs = std::move(outputs);
  data.parent.reserve(data.designs.size() - 1);
  for (std::size_t l = 1; l < data.designs.size(); ++l) {
    const Eigen::MatrixXd& fine = data.designs[l];
    const Eigen::MatrixXd& coarse = data.designs[l - 1];
    Eigen::VectorXi map(fine.rows());
    for (Eigen::Index i = 0; i < fine.rows(); ++i) {
      int hit = -1;
      for (Eigen::Index j = 0; j < coarse.rows(); ++j) {
        if ((fine.row(i) - coarse.row(j)).cwiseAbs().maxCoeff() <= kNestTol) {
          hit = static_cast<int>(j);
          break;
        }
      }
      if (hit < 0)
        throw ArgumentError("make_mf_data: level " + std::to_string(l) + " point " +
                            std::to_string(i) + " is missing from the level " +
                            std::to_string(l - 1) + " design (designs must nest)");
      map(i) = hit;
    }
    data.parent.push_back(std::move(map));
  }
  return data;
}

CokrigingModel make_cokriging(const MultiFidelityData& data, const std::vector<TrendBasis>& trends,
                              const std::vector<CorrelationKernel>& kernels) {
  check_stack_args(data, trends, kernels.size(), "make_cokriging");
  for (int l = 0; l < data.levels(); ++l)
    if (kernels[static_cast<std::size_t>(l)].dim() != data.dim())
      throw ArgumentError("make_cokriging: kernel dimension mismatch at level " +
                          std::to_string(l));

  CokrigingModel model;
  model.base = make_kriging(data.designs[0], data.outputs[0], trends[0], kernels[0]);
  model.parent = data.parent;
  for (int l = 1; l < data.levels(); ++l) {
    const std::size_t k = static_cast<std::size_t>(l);
    Eigen::VectorXd coarse_y = gather(data.outputs[k - 1], data.parent[k - 1]);
    model.upper.push_back(build_level(data.designs[k], data.outputs[k], std::move(coarse_y),
                                      trends[k], kernels[k], -1.0, nullptr, 0.0));
  }
  return model;
}

double mf_profile_loglik(const MultiFidelityData& data, int level, const TrendBasis& trend,
                         const CorrelationKernel& kernel) {
  if (level < 0 || level >= data.levels())
    throw ArgumentError("mf_profile_loglik: level out of range");
  if (level == 0) return profile_loglik(data.designs[0], data.outputs[0], trend, kernel);
  const std::size_t k = static_cast<std::size_t>(level);
  if (data.parent.size() < k) throw ArgumentError("mf_profile_loglik: data index maps missing");
  const Eigen::VectorXd coarse_y = gather(data.outputs[k - 1], data.parent[k - 1]);
  return level_profile_ll(data.designs[k], data.outputs[k], coarse_y, trend, kernel);
}

CokrigingModel fit_cokriging(const MultiFidelityData& data, const std::vector<TrendBasis>& trends,
                             const std::vector<KernelFamily>& families, const FitOptions& options,
                             std::vector<FitReport>* reports, const CokrigingModel* warm) {
  check_stack_args(data, trends, families.size(), "fit_cokriging");
  if (warm && warm->levels() != data.levels())
    throw ArgumentError("fit_cokriging: warm model level count mismatch");
  const int d = data.dim();
  if (reports) reports->assign(static_cast<std::size_t>(data.levels()), FitReport{});

  CokrigingModel model;
  {
    // Level 0 keeps the caller's seed unchanged so a single-level stack
    // reproduces fit_kriging exactly; correction levels derive their own.
    FitOptions opts = options;
    if (warm) opts.warm_theta = warm->base.kernel.theta;
    FitReport rep;
    model.base = fit_kriging(data.designs[0], data.outputs[0], trends[0], families[0], opts, &rep);
    if (reports) (*reports)[0] = rep;
  }
  model.parent = data.parent;

  for (int l = 1; l < data.levels(); ++l) {
    const std::size_t k = static_cast<std::size_t>(l);
    const Eigen::MatrixXd& D = data.designs[k];
    const Eigen::VectorXd& y = data.outputs[k];
    Eigen::VectorXd coarse_y = gather(data.outputs[k - 1], data.parent[k - 1]);
    const TrendBasis& trend = trends[k];
    const KernelFamily family = families[k];

    FitOptions opts = options;
    opts.seed = derive_seed(options.seed, static_cast<std::uint64_t>(l));
    if (warm) opts.warm_theta = upper_at(*warm, l).kernel.theta;

    auto eval_ll = [&](const Eigen::VectorXd& theta) -> double {
      try {
        return level_profile_ll(D, y, coarse_y, trend, CorrelationKernel{family, theta});
      } catch (const ConditioningError&) {
        return -std::numeric_limits<double>::infinity();
      }
    };
    double best_ll = 0.0;
    int evals = 0;
    const Eigen::VectorXd theta = detail::search_theta(d, eval_ll, opts, &best_ll, &evals);
    if (reports) {
      (*reports)[k].theta = theta;
      (*reports)[k].loglik = best_ll;
      (*reports)[k].evaluations = evals;
    }
    model.upper.push_back(build_level(D, y, std::move(coarse_y), trend,
                                      CorrelationKernel{family, theta}, -1.0, nullptr, 0.0));
  }
  return model;
}

namespace {

// One bottom-up sweep through the recursion. Always produces the mean chain
// (means[l] for l = 0..level); fills sigma2_delta per level when requested,
// each bracket clamped by the level's own conditioning floor.
void mf_pass(const CokrigingModel& model, const Eigen::VectorXd& x, int level, bool want_var,
             Eigen::VectorXd* means_out, Eigen::VectorXd* s2d_out) {
  Eigen::VectorXd means(level + 1);
  means(0) = predict_mean(model.base, x);
  if (want_var && s2d_out) {
    s2d_out->resize(level + 1);
    (*s2d_out)(0) = predict_var(model.base, x);
  }
  for (int l = 1; l <= level; ++l) {
    const CokrigingLevel& lvl = upper_at(model, l);
    const Eigen::VectorXd r = correlation_vector(lvl.D, x, lvl.kernel);
    const Eigen::VectorXd f = lvl.trend.eval(x);
    if (want_var && s2d_out) {
      Eigen::VectorXd h(lvl.p() + 1);
      h(0) = means(l - 1);
      h.tail(lvl.p()) = f;
      const Eigen::VectorXd Rinv_r = lvl.R_factor.solve(r);
      const Eigen::VectorXd u = lvl.G.transpose() * r - h;
      const double bracket = 1.0 - r.dot(Rinv_r) + u.dot(lvl.M_inv * u);
      (*s2d_out)(l) = lvl.sigma2 * clamp_level_bracket(bracket, lvl.kappa1, lvl.nugget, l);
    }
    means(l) = lvl.rho * means(l - 1) + f.dot(lvl.beta) + r.dot(lvl.gamma);
  }
  if (means_out) *means_out = std::move(means);
}

}  // namespace

double mf_predict_mean(const CokrigingModel& model, const Eigen::VectorXd& x, int level) {
  check_level(model, level, "mf_predict_mean");
  check_point(model, x, "mf_predict_mean");
  Eigen::VectorXd means;
  mf_pass(model, x, level, false, &means, nullptr);
  return means(level);
}

double mf_predict_mean(const CokrigingModel& model, const Eigen::VectorXd& x) {
  return mf_predict_mean(model, x, model.levels() - 1);
}

double mf_predict_var(const CokrigingModel& model, const Eigen::VectorXd& x, int level) {
  check_level(model, level, "mf_predict_var");
  check_point(model, x, "mf_predict_var");
  Eigen::VectorXd s2d;
  mf_pass(model, x, level, true, nullptr, &s2d);
  double var = s2d(0);
  for (int l = 1; l <= level; ++l) {
    const double rho = upper_at(model, l).rho;
    var = rho * rho * var + s2d(l);
  }
  return var;
}

double mf_predict_var(const CokrigingModel& model, const Eigen::VectorXd& x) {
  return mf_predict_var(model, x, model.levels() - 1);
}

Eigen::VectorXd mf_predict_mean_batch(const CokrigingModel& model, const Eigen::MatrixXd& X,
                                      int level) {
  check_level(model, level, "mf_predict_mean_batch");
  if (X.cols() != model.dim()) throw ArgumentError("mf_predict_mean_batch: dimension mismatch");
  Eigen::VectorXd out(X.rows());
  par::for_index(X.rows(),
                 [&](Eigen::Index i) { out(i) = mf_predict_mean(model, X.row(i).transpose(), level); });
  return out;
}

Eigen::VectorXd mf_predict_var_batch(const CokrigingModel& model, const Eigen::MatrixXd& X,
                                     int level) {
  check_level(model, level, "mf_predict_var_batch");
  if (X.cols() != model.dim()) throw ArgumentError("mf_predict_var_batch: dimension mismatch");
  Eigen::VectorXd out(X.rows());
  par::for_index(X.rows(),
                 [&](Eigen::Index i) { out(i) = mf_predict_var(model, X.row(i).transpose(), level); });
  return out;
}

double level_variance(const CokrigingModel& model, const Eigen::VectorXd& x, int level) {
  check_level(model, level, "level_variance");
  check_point(model, x, "level_variance");
  Eigen::VectorXd s2d;
  mf_pass(model, x, level, true, nullptr, &s2d);
  return s2d(level);
}

LevelVarianceProfile variance_decomposition(const CokrigingModel& model,
                                            const Eigen::VectorXd& x) {
  check_point(model, x, "variance_decomposition");
  const int top = model.levels() - 1;
  LevelVarianceProfile profile;
  mf_pass(model, x, top, true, nullptr, &profile.sigma2_delta);
  profile.weighted.resize(top + 1);
  double w = 1.0;
  profile.weighted(top) = profile.sigma2_delta(top);
  for (int l = top; l >= 1; --l) {
    const double rho = upper_at(model, l).rho;
    w *= rho * rho;
    profile.weighted(l - 1) = profile.sigma2_delta(l - 1) * w;
  }
  return profile;
}

namespace {

// Delete-one update of one correction level at fixed theta, via the Schur
// reductions of the stored factors. With xi the deleted row,
//   alpha  = [R^-1]_xi,xi
//   A      = H'R^-1H - m m'/alpha,             m = [R^-1 H]_xi-row
//   lambda = A^-1 (H'R^-1y - m c_xi / alpha),  c = R^-1 y
// are the reduced joint estimates; the residual weight delta = c_xi -
// m'lambda gives the mean update and the reduced variance divisor is
// rows - cols = n - p - 2.
struct LevelDeletion {
  double alpha = 0.0;
  double delta = 0.0;
  double rho_red = 0.0;
  double sigma2_red = 0.0;
  Eigen::VectorXd m;
  Eigen::LLT<Eigen::MatrixXd> A_factor;
};

LevelDeletion delete_one(const CokrigingLevel& lvl, const Eigen::MatrixXd& M,
                         const Eigen::VectorXd& Hty, int i) {
  LevelDeletion del;
  del.alpha = lvl.R_inv(i, i);
  if (del.alpha < detail::kAlphaGuard)
    throw ConditioningError("cross-validation: [R^-1]_" + std::to_string(i) + "," +
                                std::to_string(i) + " is not positive; design rows too close",
                            lvl.nugget);
  del.m = lvl.G.row(i).transpose();
  const Eigen::MatrixXd A = M - del.m * del.m.transpose() / del.alpha;
  del.A_factor.compute(A);
  if (del.A_factor.info() != Eigen::Success)
    throw ConditioningError(
        "cross-validation: reduced scale/trend system not positive definite at index " +
            std::to_string(i),
        lvl.nugget);
  const Eigen::VectorXd lambda_red = del.A_factor.solve(Hty - del.m * (lvl.c(i) / del.alpha));
  del.rho_red = lambda_red(0);
  del.delta = lvl.c(i) - del.m.dot(lambda_red);
  const Eigen::VectorXd Rinv_w = lvl.c - lvl.G * lambda_red;
  const Eigen::VectorXd w = lvl.y - lvl.H * lambda_red;
  const double quad = std::max(w.dot(Rinv_w) - del.delta * del.delta / del.alpha, 0.0);
  del.sigma2_red = std::max(quad / (lvl.n() - lvl.p() - 2), kSigma2Floor);
  return del;
}

// Error and variance increments at one level given the coarser level's LOO
// results at the same point. The variance bracket mirrors the single-level
// closed form with the regression basis h_xi shifted by the coarse error:
//   u = m/alpha - eps_coarse e_1.
std::pair<double, double> loo_increment(const CokrigingLevel& lvl, const LevelDeletion& del,
                                        double eps_coarse, double var_coarse) {
  const double eps = del.rho_red * eps_coarse + del.delta / del.alpha;
  Eigen::VectorXd u = del.m / del.alpha;
  u(0) -= eps_coarse;
  const double bracket = (1.0 / del.alpha - lvl.nugget) + u.dot(del.A_factor.solve(u));
  const double var = del.rho_red * del.rho_red * var_coarse + del.sigma2_red * bracket;
  return {eps, var};
}

// (error, variance, rho_red) of the all-levels deletion at point i of
// `level`, recursing through the parent maps down to the plain kriging
// closed forms.
struct LooPoint {
  double eps = 0.0;
  double var = 0.0;
  double rho_red = 0.0;
};

LooPoint loocv_recurse(const CokrigingModel& model, int level, int i) {
  if (i < 0 || i >= model.n(level))
    throw ArgumentError("mf_loocv: index " + std::to_string(i) + " out of range for level " +
                        std::to_string(level));
  if (level == 0)
    return {model.base.y(i) - loocv_mean(model.base, i), loocv_var(model.base, i), 0.0};
  const int pi = model.parent[static_cast<std::size_t>(level - 1)](i);
  const LooPoint coarse = loocv_recurse(model, level - 1, pi);
  const CokrigingLevel& lvl = upper_at(model, level);
  const Eigen::MatrixXd M = lvl.H.transpose() * lvl.G;
  const Eigen::VectorXd Hty = lvl.G.transpose() * lvl.y;
  const LevelDeletion del = delete_one(lvl, M, Hty, i);
  const auto [eps, var] = loo_increment(lvl, del, coarse.eps, coarse.var);
  return {eps, var, del.rho_red};
}

}  // namespace

double mf_loocv_error(const CokrigingModel& model, int level, int i) {
  check_level(model, level, "mf_loocv_error");
  return loocv_recurse(model, level, i).eps;
}

double mf_loocv_var(const CokrigingModel& model, int level, int i) {
  check_level(model, level, "mf_loocv_var");
  return loocv_recurse(model, level, i).var;
}

MfLoocvTable mf_loocv_table(const CokrigingModel& model) {
  const int s = model.levels();
  MfLoocvTable table;
  table.errors.resize(static_cast<std::size_t>(s));
  table.vars.resize(static_cast<std::size_t>(s));
  table.rho_red.resize(static_cast<std::size_t>(s));

  const int n0 = model.base.n();
  table.errors[0].resize(n0);
  table.vars[0].resize(n0);
  table.rho_red[0] = Eigen::VectorXd::Zero(n0);
  for (int i = 0; i < n0; ++i) {
    table.errors[0](i) = model.base.y(i) - loocv_mean(model.base, i);
    table.vars[0](i) = loocv_var(model.base, i);
  }

  for (int l = 1; l < s; ++l) {
    const std::size_t k = static_cast<std::size_t>(l);
    const CokrigingLevel& lvl = upper_at(model, l);
    const Eigen::MatrixXd M = lvl.H.transpose() * lvl.G;
    const Eigen::VectorXd Hty = lvl.G.transpose() * lvl.y;
    const int n = lvl.n();
    table.errors[k].resize(n);
    table.vars[k].resize(n);
    table.rho_red[k].resize(n);
    for (int i = 0; i < n; ++i) {
      const int pi = model.parent[k - 1](i);
      const LevelDeletion del = delete_one(lvl, M, Hty, i);
      const auto [eps, var] =
          loo_increment(lvl, del, table.errors[k - 1](pi), table.vars[k - 1](pi));
      table.errors[k](i) = eps;
      table.vars[k](i) = var;
      table.rho_red[k](i) = del.rho_red;
    }
  }
  return table;
}

CokrigingModel cokriging_liar_condition(const CokrigingModel& model, const Eigen::VectorXd& x_new,
                                        int level) {
  check_level(model, level, "cokriging_liar_condition");
  check_point(model, x_new, "cokriging_liar_condition");

  const Eigen::MatrixXd& D_target = level == 0 ? model.base.D : upper_at(model, level).D;
  for (Eigen::Index i = 0; i < D_target.rows(); ++i)
    if ((D_target.row(i).transpose() - x_new).norm() < 1e-12)
      throw DegenerateUpdateError("cokriging_liar_condition: x_new coincides with level " +
                                  std::to_string(level) + " design point " + std::to_string(i));

  // Fantasy values: the current predicted means at every level up to `level`.
  Eigen::VectorXd means;
  mf_pass(model, x_new, level, false, &means, nullptr);

  std::vector<Eigen::MatrixXd> designs;
  std::vector<Eigen::VectorXd> outputs;
  std::vector<bool> grew(static_cast<std::size_t>(model.levels()), false);
  designs.reserve(static_cast<std::size_t>(model.levels()));
  outputs.reserve(static_cast<std::size_t>(model.levels()));
  for (int l = 0; l < model.levels(); ++l) {
    const Eigen::MatrixXd& D = l == 0 ? model.base.D : upper_at(model, l).D;
    const Eigen::VectorXd& y = l == 0 ? model.base.y : upper_at(model, l).y;
    bool present = false;
    if (l < level)  // at `level` itself the coincidence check above already ruled it out
      for (Eigen::Index i = 0; i < D.rows() && !present; ++i)
        present = (D.row(i).transpose() - x_new).cwiseAbs().maxCoeff() <= kNestTol;
    if (l > level || present) {
      designs.push_back(D);
      outputs.push_back(y);
      continue;
    }
    Eigen::MatrixXd D2(D.rows() + 1, D.cols());
    D2.topRows(D.rows()) = D;
    D2.row(D.rows()) = x_new.transpose();
    Eigen::VectorXd y2(y.size() + 1);
    y2.head(y.size()) = y;
    y2(y.size()) = means(l);
    designs.push_back(std::move(D2));
    outputs.push_back(std::move(y2));
    grew[static_cast<std::size_t>(l)] = true;
  }

  MultiFidelityData data = make_mf_data(std::move(designs), std::move(outputs));
  CokrigingModel out;
  out.parent = data.parent;
  if (grew[0])
    out.base = make_kriging_fixed(data.designs[0], data.outputs[0], model.base.trend,
                                  model.base.kernel, model.base.beta_hat, model.base.sigma2_hat,
                                  model.base.nugget);
  else
    out.base = model.base;
  for (int l = 1; l < model.levels(); ++l) {
    const std::size_t k = static_cast<std::size_t>(l);
    const CokrigingLevel& lvl = upper_at(model, l);
    if (!grew[k]) {
      out.upper.push_back(lvl);
      continue;
    }
    Eigen::VectorXd coarse_y = gather(data.outputs[k - 1], data.parent[k - 1]);
    const Eigen::VectorXd lambda = lvl.lambda();
    out.upper.push_back(build_level(data.designs[k], data.outputs[k], std::move(coarse_y),
                                    lvl.trend, lvl.kernel, lvl.nugget, &lambda, lvl.sigma2));
  }
  return out;
}

void save_cokriging(const CokrigingModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
  };
  auto put_block = [&](const Eigen::MatrixXd& D, const Eigen::VectorXd& y,
                       const TrendBasis& trend, const CorrelationKernel& kernel, double nugget,
                       const double* rho, const Eigen::VectorXd& beta, double sigma2) {
    out << "kernel " << to_string(kernel.family) << '\n';
    out << "trend " << to_string(trend.kind) << '\n';
    out << "n " << D.rows() << '\n';
    out << "nugget ";
    put(nugget);
    out << "\ntheta";
    for (int k = 0; k < kernel.dim(); ++k) {
      out << ' ';
      put(kernel.theta(k));
    }
    if (rho) {
      out << "\nrho ";
      put(*rho);
    }
    out << "\nbeta";
    for (Eigen::Index j = 0; j < beta.size(); ++j) {
      out << ' ';
      put(beta(j));
    }
    out << "\nsigma2 ";
    put(sigma2);
    out << "\nD\n";
    for (Eigen::Index i = 0; i < D.rows(); ++i) {
      for (Eigen::Index k = 0; k < D.cols(); ++k) {
        if (k) out << ',';
        put(D(i, k));
      }
      out << '\n';
    }
    out << "y\n";
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      put(y(i));
      out << '\n';
    }
  };

  out << "krigseq-mf-model 1\n";
  out << "levels " << model.levels() << " dim " << model.dim() << '\n';
  out << "level 0\n";
  put_block(model.base.D, model.base.y, model.base.trend, model.base.kernel, model.base.nugget,
            nullptr, model.base.beta_hat, model.base.sigma2_hat);
  for (int l = 1; l < model.levels(); ++l) {
    const CokrigingLevel& lvl = upper_at(model, l);
    out << "level " << l << '\n';
    put_block(lvl.D, lvl.y, lvl.trend, lvl.kernel, lvl.nugget, &lvl.rho, lvl.beta, lvl.sigma2);
  }
  out << "end\n";
  if (!out) throw IoError("write failed: " + path);
}

CokrigingModel load_cokriging(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  auto fail = [&](const std::string& what) -> IoError {
    return IoError("malformed model file " + path + ": " + what);
  };

  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != "krigseq-mf-model" || version != 1)
    throw fail("bad header");
  int s = 0, d = 0;
  if (!(in >> word >> s) || word != "levels" || s < 1) throw fail("levels line");
  if (!(in >> word >> d) || word != "dim" || d < 1) throw fail("dim line");

  struct LevelBlock {
    TrendBasis trend;
    CorrelationKernel kernel;
    double nugget = 0.0;
    double rho = 0.0;
    Eigen::VectorXd beta;
    double sigma2 = 0.0;
    Eigen::MatrixXd D;
    Eigen::VectorXd y;
  };
  std::vector<LevelBlock> blocks;
  blocks.reserve(static_cast<std::size_t>(s));

  for (int l = 0; l < s; ++l) {
    int idx = -1;
    if (!(in >> word >> idx) || word != "level" || idx != l)
      throw fail("level " + std::to_string(l) + " header");
    LevelBlock b;
    std::string kernel_name, trend_name;
    if (!(in >> word >> kernel_name) || word != "kernel") throw fail("kernel line");
    if (!(in >> word >> trend_name) || word != "trend") throw fail("trend line");
    int n = 0;
    if (!(in >> word >> n) || word != "n" || n < 1) throw fail("n line");
    if (!(in >> word >> b.nugget) || word != "nugget") throw fail("nugget line");
    b.trend = TrendBasis{trend_kind_from_string(trend_name), d};
    b.kernel = CorrelationKernel{kernel_family_from_string(kernel_name), Eigen::VectorXd(d)};
    if (!(in >> word) || word != "theta") throw fail("theta line");
    for (int k = 0; k < d; ++k)
      if (!(in >> b.kernel.theta(k))) throw fail("theta values");
    if (l > 0) {
      if (!(in >> word >> b.rho) || word != "rho") throw fail("rho line");
    }
    b.beta.resize(b.trend.size());
    if (!(in >> word) || word != "beta") throw fail("beta line");
    for (int j = 0; j < b.trend.size(); ++j)
      if (!(in >> b.beta(j))) throw fail("beta values");
    if (!(in >> word >> b.sigma2) || word != "sigma2") throw fail("sigma2 line");

    if (!(in >> word) || word != "D") throw fail("design header");
    in.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
    b.D.resize(n, d);
    std::string line;
    for (int i = 0; i < n; ++i) {
      if (!std::getline(in, line)) throw fail("design rows");
      std::stringstream ss(line);
      std::string cell;
      for (int k = 0; k < d; ++k) {
        if (!std::getline(ss, cell, ',')) throw fail("design row " + std::to_string(i));
        b.D(i, k) = std::stod(cell);
      }
    }
    if (!(in >> word) || word != "y") throw fail("output header");
    b.y.resize(n);
    for (int i = 0; i < n; ++i)
      if (!(in >> b.y(i))) throw fail("output values");
    blocks.push_back(std::move(b));
  }
  if (!(in >> word) || word != "end") throw fail("missing end marker");

  std::vector<Eigen::MatrixXd> designs;
  std::vector<Eigen::VectorXd> outputs;
  for (const LevelBlock& b : blocks) {
    designs.push_back(b.D);
    outputs.push_back(b.y);
  }
  MultiFidelityData data = make_mf_data(std::move(designs), std::move(outputs));

  CokrigingModel model;
  model.parent = data.parent;
  model.base = make_kriging_fixed(data.designs[0], data.outputs[0], blocks[0].trend,
                                  blocks[0].kernel, blocks[0].beta, blocks[0].sigma2,
                                  blocks[0].nugget);
  for (int l = 1; l < s; ++l) {
    const std::size_t k = static_cast<std::size_t>(l);
    const LevelBlock& b = blocks[k];
    Eigen::VectorXd coarse_y = gather(data.outputs[k - 1], data.parent[k - 1]);
    Eigen::VectorXd lambda(b.beta.size() + 1);
    lambda(0) = b.rho;
    lambda.tail(b.beta.size()) = b.beta;
    model.upper.push_back(build_level(data.designs[k], data.outputs[k], std::move(coarse_y),
                                      b.trend, b.kernel, b.nugget, &lambda, b.sigma2));
  }
  return model;
}

}  // namespace krigseq
