#include "krigseq/criteria.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "krigseq/design_gen.hpp"
#include "krigseq/parallel.hpp"
#include "krigseq/rng.hpp"

namespace krigseq {

VoronoiPartition make_voronoi(Eigen::MatrixXd sites) {
  if (sites.rows() < 1) throw ArgumentError("make_voronoi: no sites");
  return VoronoiPartition{std::move(sites)};
}

int voronoi_index(const VoronoiPartition& partition, const Eigen::VectorXd& x) {
  if (x.size() != partition.sites.cols())
    throw ArgumentError("voronoi_index: dimension mismatch");
  int best = 0;
  double best_dist = (partition.sites.row(0).transpose() - x).squaredNorm();
  for (Eigen::Index i = 1; i < partition.sites.rows(); ++i) {
    const double dist = (partition.sites.row(i).transpose() - x).squaredNorm();
    if (dist < best_dist) {  // strict: equidistant keeps the lowest index
      best_dist = dist;
      best = static_cast<int>(i);
    }
  }
  return best;
}

CandidateGrid make_candidate_grid(int d, int M, std::uint64_t seed, GridKind kind) {
  if (M < 100) throw ArgumentError("make_candidate_grid: need at least 100 points");
  CandidateGrid grid;
  grid.kind = kind;
  grid.seed = seed;
  if (kind == GridKind::LowDiscrepancy) {
    grid.points = halton_points(M, d, seed);
  } else {
    Rng rng = make_rng(seed);
    grid.points.resize(M, d);
    for (int i = 0; i < M; ++i)
      for (int k = 0; k < d; ++k) grid.points(i, k) = uniform01(rng);
  }
  return grid;
}

double adjusted_mse(const KrigingModel& model, const LoocvDiagnostics& diag,
                    const VoronoiPartition& partition, const Eigen::VectorXd& x) {
  if (diag.ratios.size() != model.n())
    throw ArgumentError("adjusted_mse: diagnostics do not match the model");
  if (partition.sites.rows() != model.n())
    throw ArgumentError("adjusted_mse: partition does not match the model");
  const int cell = voronoi_index(partition, x);
  return predict_var(model, x) * (1.0 + diag.ratios(cell));
}

Selection refine_selection(const std::function<double(const Eigen::VectorXd&)>& objective,
                           int grid_index, Eigen::VectorXd x0, double v0) {
  Eigen::VectorXd x = std::move(x0);
  double v = v0;
  double h = 0.05;
  for (int round = 0; round < 30 && h >= 1e-4; ++round) {
    bool improved = false;
    for (Eigen::Index k = 0; k < x.size(); ++k)
      for (double sign : {+1.0, -1.0}) {
        Eigen::VectorXd xt = x;
        xt(k) = std::clamp(xt(k) + sign * h, 0.0, 1.0);
        if (xt(k) == x(k)) continue;
        const double vt = objective(xt);
        if (vt > v) {
          v = vt;
          x = std::move(xt);
          improved = true;
        }
      }
    if (!improved) h *= 0.5;
  }
  return Selection{grid_index, std::move(x), v};
}

namespace {

// refine_selection under its historical local name.
template <typename Objective>
Selection coordinate_refine(Objective&& objective, int grid_index, Eigen::VectorXd x0,
                            double v0) {
  return refine_selection(std::forward<Objective>(objective), grid_index, std::move(x0), v0);
}

int argmax_first(const Eigen::VectorXd& values) {
  int best = 0;
  double best_v = values(0);
  for (Eigen::Index i = 1; i < values.size(); ++i)
    if (values(i) > best_v) {  // strict: ties keep the first index
      best_v = values(i);
      best = static_cast<int>(i);
    }
  return best;
}

void check_grid(const KrigingModel& model, const CandidateGrid& grid) {
  if (grid.points.cols() != model.dim())
    throw ArgumentError("criterion: grid dimension does not match the model");
  if (grid.points.rows() < 1) throw ArgumentError("criterion: empty grid");
}

}  // namespace

Selection select_maxvar(const KrigingModel& model, const CandidateGrid& grid) {
  check_grid(model, grid);
  const Eigen::VectorXd values = predict_var_batch(model, grid.points);
  const int best = argmax_first(values);
  return coordinate_refine([&](const Eigen::VectorXd& x) { return predict_var(model, x); },
                           best, grid.points.row(best).transpose(), values(best));
}

Eigen::VectorXd imse_reduction_terms(const KrigingModel& model,
                                     const Eigen::MatrixXd& quad_points,
                                     const Eigen::VectorXd& x) {
  if (quad_points.cols() != model.dim() || x.size() != model.dim())
    throw ArgumentError("imse_reduction_terms: dimension mismatch");
  const double denom =
      std::max(predict_var(model, x), 0.0) + model.sigma2_hat * model.nugget;
  Eigen::VectorXd terms(quad_points.rows());
  par::for_index(quad_points.rows(), [&](Eigen::Index i) {
    const double cov = predict_cov(model, quad_points.row(i).transpose(), x);
    terms(i) = cov * cov / denom;
  });
  return terms;
}

Selection select_min_imse(const KrigingModel& model, const CandidateGrid& grid) {
  check_grid(model, grid);
  const Eigen::MatrixXd& U = grid.points;
  const Eigen::Index M = U.rows();

  // Shared one-time pieces: cross-correlations to the design, their solves,
  // and the trend-corrected u-vectors for every grid point.
  const Eigen::MatrixXd Rg = cross_correlation(model.D, U, model.kernel);  // n×M
  const Eigen::MatrixXd S = model.R_factor.solve(Rg);                      // n×M
  Eigen::MatrixXd Ug = model.G.transpose() * Rg;                           // p×M
  Ug.noalias() -= model.trend.matrix(U).transpose();
  const Eigen::MatrixXd MinvUg = model.M_inv * Ug;  // p×M

  // Diagonal k_n(u_i, u_i) for the denominators.
  Eigen::VectorXd diag_var(M);
  for (Eigen::Index i = 0; i < M; ++i) {
    const double bracket = 1.0 - Rg.col(i).dot(S.col(i)) + Ug.col(i).dot(MinvUg.col(i));
    diag_var(i) = model.sigma2_hat * std::max(bracket, 0.0);
  }

  // Candidate columns in blocks: K = sigma2 (corr(U, block) - S'Rg_b + Ug'Minv Ug_b),
  // reduction_j = mean_i K(i,j)^2 / (k_n(x_j,x_j) + sigma2*eta).
  const double eta_term = model.sigma2_hat * model.nugget;
  Eigen::VectorXd reduction(M);
  constexpr Eigen::Index kBlock = 512;
  for (Eigen::Index start = 0; start < M; start += kBlock) {
    const Eigen::Index b = std::min(kBlock, M - start);
    Eigen::MatrixXd K = cross_correlation(U, U.middleRows(start, b), model.kernel);  // M×b
    K.noalias() -= S.transpose() * Rg.middleCols(start, b);
    K.noalias() += Ug.transpose() * MinvUg.middleCols(start, b);
    K *= model.sigma2_hat;
    for (Eigen::Index j = 0; j < b; ++j)
      reduction(start + j) =
          K.col(j).squaredNorm() / static_cast<double>(M) / (diag_var(start + j) + eta_term);
  }

  const int best = argmax_first(reduction);
  return Selection{best, U.row(best).transpose(), reduction(best)};
}

Eigen::MatrixXd kleicrit_candidates(int d, std::uint64_t seed) {
  return lhs_maximin(100 * d, d, 200, seed).points;
}

Selection select_kleicrit(const KrigingModel& model, const Eigen::MatrixXd& candidates) {
  if (candidates.cols() != model.dim())
    throw ArgumentError("select_kleicrit: candidate dimension mismatch");
  if (candidates.rows() < 1) throw ArgumentError("select_kleicrit: no candidates");
  const JackknifeCache cache = make_jackknife_cache(model);
  // Round-off-sized jackknife values count as exact zeros so that a
  // degenerate (perfectly fitting) model deterministically yields the first
  // candidate instead of an arbitrary noise argmax. The absolute term covers
  // constant data, where range(y) = 0 but round-off persists.
  const double range = model.y.maxCoeff() - model.y.minCoeff();
  const double maxabs = model.y.cwiseAbs().maxCoeff();
  const double floor = 1e-24 * range * range + 1e-28 * maxabs * maxabs;
  Eigen::VectorXd values(candidates.rows());
  par::for_index(candidates.rows(), [&](Eigen::Index i) {
    const double v = jackknife_variance(model, cache, candidates.row(i).transpose());
    values(i) = v <= floor ? 0.0 : v;
  });
  const int best = argmax_first(values);
  return Selection{best, candidates.row(best).transpose(), values(best)};
}

Selection select_adjmmse(const KrigingModel& model, const LoocvDiagnostics& diag,
                         const CandidateGrid& grid) {
  check_grid(model, grid);
  const VoronoiPartition partition = make_voronoi(model.D);
  Eigen::VectorXd values(grid.points.rows());
  par::for_index(grid.points.rows(), [&](Eigen::Index i) {
    values(i) = adjusted_mse(model, diag, partition, grid.points.row(i).transpose());
  });
  const int best = argmax_first(values);
  return coordinate_refine(
      [&](const Eigen::VectorXd& x) { return adjusted_mse(model, diag, partition, x); },
      best, grid.points.row(best).transpose(), values(best));
}

std::string to_string(CriterionKind kind) {
  switch (kind) {
    case CriterionKind::MaxVar: return "maxvar";
    case CriterionKind::MinImse: return "minimse";
    case CriterionKind::KleiCrit: return "kleicrit";
    case CriterionKind::AdjMmse: return "adjmmse";
  }
  throw ArgumentError("unknown criterion kind");
}

CriterionKind criterion_from_string(const std::string& name) {
  if (name == "maxvar") return CriterionKind::MaxVar;
  if (name == "minimse") return CriterionKind::MinImse;
  if (name == "kleicrit") return CriterionKind::KleiCrit;
  if (name == "adjmmse") return CriterionKind::AdjMmse;
  throw ArgumentError("unknown criterion '" + name +
                      "' (expected maxvar, minimse, kleicrit, or adjmmse)");
}

}  // namespace krigseq
