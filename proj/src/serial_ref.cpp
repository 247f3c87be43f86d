#include "krigseq/serial_ref.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "krigseq/errors.hpp"
#include "krigseq/rng.hpp"

namespace krigseq::serial {

namespace {

int argmax_first(const Eigen::VectorXd& values) {
  int best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i) {
    if (values(i) > values(best)) best = static_cast<int>(i);
  }
  return best;
}

void check_grid(const KrigingModel& model, const CandidateGrid& grid) {
  if (grid.points.cols() != model.dim())
    throw ArgumentError("criterion: grid dimension does not match the model");
  if (grid.points.rows() < 1) throw ArgumentError("criterion: empty grid");
}

/// Round-off floor below which squared quantities count as exact zeros; the
/// constants mirror the production criteria so the twins floor identically.
double zero_floor(const Eigen::VectorXd& y) {
  const double range = y.maxCoeff() - y.minCoeff();
  const double maxabs = y.cwiseAbs().maxCoeff();
  return 1e-24 * range * range + 1e-28 * maxabs * maxabs;
}

}  // namespace

Eigen::VectorXd predict_mean_batch(const KrigingModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.dim()) throw ArgumentError("predict_mean_batch: dimension mismatch");
  Eigen::VectorXd out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = predict_mean(model, X.row(i).transpose());
  return out;
}

Eigen::VectorXd predict_var_batch(const KrigingModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.dim()) throw ArgumentError("predict_var_batch: dimension mismatch");
  Eigen::VectorXd out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = predict_var(model, X.row(i).transpose());
  return out;
}

Eigen::VectorXd mf_predict_mean_batch(const CokrigingModel& model, const Eigen::MatrixXd& X,
                                      int level) {
  if (level < 0 || level >= model.levels())
    throw ArgumentError("mf_predict_mean_batch: level out of range");
  if (X.cols() != model.dim()) throw ArgumentError("mf_predict_mean_batch: dimension mismatch");
  Eigen::VectorXd out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    out(i) = mf_predict_mean(model, X.row(i).transpose(), level);
  return out;
}

Eigen::VectorXd mf_predict_var_batch(const CokrigingModel& model, const Eigen::MatrixXd& X,
                                     int level) {
  if (level < 0 || level >= model.levels())
    throw ArgumentError("mf_predict_var_batch: level out of range");
  if (X.cols() != model.dim()) throw ArgumentError("mf_predict_var_batch: dimension mismatch");
  Eigen::VectorXd out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    out(i) = mf_predict_var(model, X.row(i).transpose(), level);
  return out;
}

Eigen::VectorXd imse_reduction_terms(const KrigingModel& model,
                                     const Eigen::MatrixXd& quad_points,
                                     const Eigen::VectorXd& x) {
  if (quad_points.cols() != model.dim() || x.size() != model.dim())
    throw ArgumentError("imse_reduction_terms: dimension mismatch");
  const double denom =
      std::max(predict_var(model, x), 0.0) + model.sigma2_hat * model.nugget;
  Eigen::VectorXd terms(quad_points.rows());
  for (Eigen::Index i = 0; i < quad_points.rows(); ++i) {
    const double cov = predict_cov(model, quad_points.row(i).transpose(), x);
    terms(i) = cov * cov / denom;
  }
  return terms;
}

LoocvDiagnostics loocv_diagnostics(const KrigingModel& model) {
  const int n = model.n();
  LoocvDiagnostics diag;
  diag.e2.resize(n);
  diag.s2.resize(n);
  diag.ratios.resize(n);
  for (int i = 0; i < n; ++i) {
    const double err = model.y(i) - loocv_mean(model, i);
    diag.e2(i) = err * err;
    diag.s2(i) = loocv_var(model, i);
  }
  const double e2_floor = zero_floor(model.y);
  for (int i = 0; i < n; ++i) {
    if (diag.e2(i) <= e2_floor) {
      diag.ratios(i) = 0.0;
    } else {
      diag.ratios(i) = std::min(diag.e2(i) / diag.s2(i), detail::kRatioCap);
    }
  }
  return diag;
}

namespace {

void assign_nearest_serial(const Eigen::MatrixXd& samples, const Eigen::MatrixXd& centers,
                           std::vector<int>& assignment, Eigen::VectorXd& dist2) {
  const int n = static_cast<int>(samples.rows());
  const int N = static_cast<int>(centers.rows());
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double best_d = (samples.row(i) - centers.row(0)).squaredNorm();
    for (int c = 1; c < N; ++c) {
      const double d = (samples.row(i) - centers.row(c)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    assignment[static_cast<std::size_t>(i)] = best;
    dist2(i) = best_d;
  }
}

int farthest_sample_serial(const Eigen::MatrixXd& samples, const Eigen::MatrixXd& centers) {
  const int n = static_cast<int>(samples.rows());
  Eigen::VectorXd dist2(n);
  std::vector<int> assignment(static_cast<std::size_t>(n));
  assign_nearest_serial(samples, centers, assignment, dist2);
  int best = 0;
  for (int i = 1; i < n; ++i) {
    if (dist2(i) > dist2(best)) best = i;
  }
  return best;
}

}  // namespace

ClusterSet nmeans(const Eigen::MatrixXd& samples, int N, std::uint64_t seed,
                  const DensityFn& variance) {
  const int n = static_cast<int>(samples.rows());
  const int d = static_cast<int>(samples.cols());
  if (n < 1 || d < 1) throw ArgumentError("nmeans: samples must be a nonempty matrix");
  if (N < 1) throw ArgumentError("nmeans: N must be positive");
  if (N > n) {
    throw ArgumentError("nmeans: N = " + std::to_string(N) + " exceeds the sample count " +
                        std::to_string(n));
  }

  Rng rng = make_rng(seed);
  Eigen::MatrixXd centers(N, d);
  const int first = std::uniform_int_distribution<int>(0, n - 1)(rng);
  centers.row(0) = samples.row(first);
  Eigen::VectorXd nearest2 = (samples.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < N; ++c) {
    int pick = 0;
    for (int i = 1; i < n; ++i) {
      if (nearest2(i) > nearest2(pick)) pick = i;
    }
    centers.row(c) = samples.row(pick);
    for (int i = 0; i < n; ++i) {
      const double d2 = (samples.row(i) - centers.row(c)).squaredNorm();
      if (d2 < nearest2(i)) nearest2(i) = d2;
    }
  }

  std::vector<int> assignment(static_cast<std::size_t>(n));
  std::vector<int> previous;
  Eigen::VectorXd dist2(n);
  constexpr int kMaxIterations = 100;
  for (int iteration = 0; iteration < kMaxIterations; ++iteration) {
    assign_nearest_serial(samples, centers, assignment, dist2);
    if (!previous.empty() && assignment == previous) break;

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(N, d);
    Eigen::VectorXi counts = Eigen::VectorXi::Zero(N);
    for (int i = 0; i < n; ++i) {
      sums.row(assignment[static_cast<std::size_t>(i)]) += samples.row(i);
      counts(assignment[static_cast<std::size_t>(i)]) += 1;
    }
    for (int c = 0; c < N; ++c) {
      if (counts(c) > 0) centers.row(c) = sums.row(c) / counts(c);
    }
    for (int c = 0; c < N; ++c) {
      if (counts(c) == 0) {
        centers.row(c) = samples.row(farthest_sample_serial(samples, centers));
      }
    }
    previous = assignment;
  }

  ClusterSet set;
  set.centers = std::move(centers);
  set.N = N;
  if (variance) {
    double worst = std::numeric_limits<double>::infinity();
    for (int c = 0; c < N; ++c) {
      const double value = variance(set.centers.row(c).transpose());
      if (std::isnan(value) || value < 0.0) {
        throw ArgumentError("density/variance function must be nonnegative, got " +
                            std::to_string(value));
      }
      worst = std::min(worst, value);
    }
    set.min_center_var = worst;
  }
  return set;
}

Selection select_maxvar(const KrigingModel& model, const CandidateGrid& grid) {
  check_grid(model, grid);
  Eigen::VectorXd values(grid.points.rows());
  for (Eigen::Index i = 0; i < grid.points.rows(); ++i)
    values(i) = predict_var(model, grid.points.row(i).transpose());
  const int best = argmax_first(values);
  return refine_selection([&](const Eigen::VectorXd& x) { return predict_var(model, x); }, best,
                          grid.points.row(best).transpose(), values(best));
}

Selection select_min_imse(const KrigingModel& model, const CandidateGrid& grid) {
  check_grid(model, grid);
  const Eigen::MatrixXd& U = grid.points;
  Eigen::VectorXd reduction(U.rows());
  for (Eigen::Index j = 0; j < U.rows(); ++j)
    reduction(j) = imse_reduction_terms(model, U, U.row(j).transpose()).mean();
  const int best = argmax_first(reduction);
  return Selection{best, U.row(best).transpose(), reduction(best)};
}

Selection select_kleicrit(const KrigingModel& model, const Eigen::MatrixXd& candidates) {
  if (candidates.cols() != model.dim())
    throw ArgumentError("select_kleicrit: candidate dimension mismatch");
  if (candidates.rows() < 1) throw ArgumentError("select_kleicrit: no candidates");
  const JackknifeCache cache = make_jackknife_cache(model);
  const double floor = zero_floor(model.y);
  Eigen::VectorXd values(candidates.rows());
  for (Eigen::Index i = 0; i < candidates.rows(); ++i) {
    const double v = jackknife_variance(model, cache, candidates.row(i).transpose());
    values(i) = v <= floor ? 0.0 : v;
  }
  const int best = argmax_first(values);
  return Selection{best, candidates.row(best).transpose(), values(best)};
}

Selection select_adjmmse(const KrigingModel& model, const LoocvDiagnostics& diag,
                         const CandidateGrid& grid) {
  check_grid(model, grid);
  const VoronoiPartition partition = make_voronoi(model.D);
  Eigen::VectorXd values(grid.points.rows());
  for (Eigen::Index i = 0; i < grid.points.rows(); ++i)
    values(i) = adjusted_mse(model, diag, partition, grid.points.row(i).transpose());
  const int best = argmax_first(values);
  return refine_selection(
      [&](const Eigen::VectorXd& x) { return adjusted_mse(model, diag, partition, x); }, best,
      grid.points.row(best).transpose(), values(best));
}

}  // namespace krigseq::serial
