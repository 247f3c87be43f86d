#include "krigseq/batch_select.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "krigseq/design_gen.hpp"
#include "krigseq/errors.hpp"
#include "krigseq/parallel.hpp"
#include "krigseq/rng.hpp"

namespace krigseq {

namespace {

double checked_density(const DensityFn& density, const Eigen::VectorXd& x) {
  const double value = density(x);
  if (std::isnan(value) || value < 0.0) {
    throw ArgumentError("density/variance function must be nonnegative, got " +
                        std::to_string(value));
  }
  return value;
}

bool in_unit_cube(const Eigen::VectorXd& x) {
  return (x.array() >= 0.0).all() && (x.array() <= 1.0).all();
}

}  // namespace

MhResult mh_sample(const DensityFn& density, int dim, const MhConfig& cfg) {
  if (!density) throw ArgumentError("mh_sample: density function is empty");
  if (dim < 1) throw ArgumentError("mh_sample: dim must be positive");
  if (cfg.n_samples < 1) throw ArgumentError("mh_sample: n_samples must be positive");
  if (cfg.burn_in < 0 || cfg.burn_in >= cfg.n_samples) {
    throw ArgumentError("mh_sample: burn_in must lie in [0, n_samples)");
  }
  if (!(cfg.proposal_std > 0.0)) throw ArgumentError("mh_sample: proposal_std must be positive");
  if (!(cfg.target_acceptance > 0.0) || !(cfg.target_acceptance < 1.0)) {
    throw ArgumentError("mh_sample: target_acceptance must lie in (0, 1)");
  }
  if (cfg.adapt_interval < 1) throw ArgumentError("mh_sample: adapt_interval must be positive");

  Rng rng = make_rng(cfg.seed);
  Eigen::VectorXd x = Eigen::VectorXd::Constant(dim, 0.5);
  double dx = checked_density(density, x);
  if (dx == 0.0) {
    // The cube center sits at zero density (e.g. on a design point): restart
    // from a design-free region found along a seeded low-discrepancy scan.
    const Eigen::MatrixXd probes = halton_points(1024, dim, derive_seed(cfg.seed, 0xD0));
    bool found = false;
    for (int i = 0; i < probes.rows(); ++i) {
      const Eigen::VectorXd candidate = probes.row(i).transpose();
      const double value = checked_density(density, candidate);
      if (value > 0.0) {
        x = candidate;
        dx = value;
        found = true;
        break;
      }
    }
    if (!found) {
      throw ArgumentError(
          "mh_sample: start density is zero and no positive-density restart "
          "point was found; the density looks identically zero on the cube");
    }
    debug_log("mh_sample: zero-density start, restarted the chain elsewhere");
  }

  const int kept = cfg.n_samples - cfg.burn_in;
  MhResult result;
  result.samples.resize(kept, dim);
  double std_dev = cfg.proposal_std;
  int window_proposals = 0;
  int window_accepts = 0;
  long post_accepts = 0;
  Eigen::VectorXd proposal(dim);

  for (int step = 1; step <= cfg.n_samples; ++step) {
    for (int k = 0; k < dim; ++k) proposal(k) = x(k) + normal(rng, 0.0, std_dev);
    bool accepted = false;
    if (in_unit_cube(proposal)) {
      const double dy = checked_density(density, proposal);
      const double u = uniform01(rng);
      if (u * dx < dy) {
        x = proposal;
        dx = dy;
        accepted = true;
      }
    }

    if (step <= cfg.burn_in) {
      ++window_proposals;
      if (accepted) ++window_accepts;
      if (window_proposals == cfg.adapt_interval) {
        const double rate = static_cast<double>(window_accepts) / window_proposals;
        if (rate > cfg.target_acceptance) {
          std_dev *= 1.1;
        } else if (rate < cfg.target_acceptance) {
          std_dev /= 1.1;
        }
        window_proposals = 0;
        window_accepts = 0;
      }
    } else {
      if (accepted) ++post_accepts;
      result.samples.row(step - cfg.burn_in - 1) = x.transpose();
    }
  }

  result.acceptance_rate = static_cast<double>(post_accepts) / kept;
  result.proposal_std = std_dev;
  return result;
}

namespace {

/// Nearest-center assignment: strict < on squared distance keeps the lowest
/// center index on ties, matching the Voronoi convention.
void assign_nearest(const Eigen::MatrixXd& samples, const Eigen::MatrixXd& centers,
                    std::vector<int>& assignment, Eigen::VectorXd& dist2) {
  const int n = static_cast<int>(samples.rows());
  const int N = static_cast<int>(centers.rows());
  par::for_index(n, [&](std::ptrdiff_t i) {
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
  });
}

/// Index of the sample farthest from its nearest center (ties to the lowest
/// sample index); used both for seeding audits and empty-cluster re-seeding.
int farthest_sample(const Eigen::MatrixXd& samples, const Eigen::MatrixXd& centers) {
  const int n = static_cast<int>(samples.rows());
  Eigen::VectorXd dist2(n);
  std::vector<int> assignment(static_cast<std::size_t>(n));
  assign_nearest(samples, centers, assignment, dist2);
  int best = 0;
  for (int i = 1; i < n; ++i) {
    if (dist2(i) > dist2(best)) best = i;
  }
  return best;
}

}  // namespace

ClusterSet nmeans(const Eigen::MatrixXd& samples, int N, std::uint64_t seed,
                  const DensityFn& variance, std::vector<double>* wcss_trace) {
  const int n = static_cast<int>(samples.rows());
  const int d = static_cast<int>(samples.cols());
  if (n < 1 || d < 1) throw ArgumentError("nmeans: samples must be a nonempty matrix");
  if (N < 1) throw ArgumentError("nmeans: N must be positive");
  if (N > n) {
    throw ArgumentError("nmeans: N = " + std::to_string(N) + " exceeds the sample count " +
                        std::to_string(n));
  }
  if (wcss_trace) wcss_trace->clear();

  // Greedy farthest-point seeding: a seeded first pick, then repeatedly the
  // sample farthest from the chosen set (ties to the lowest sample index).
  Rng rng = make_rng(seed);
  Eigen::MatrixXd centers(N, d);
  const int first = std::uniform_int_distribution<int>(0, n - 1)(rng);
  centers.row(0) = samples.row(first);
  Eigen::VectorXd nearest2 =
      (samples.rowwise() - centers.row(0)).rowwise().squaredNorm();
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
    assign_nearest(samples, centers, assignment, dist2);
    if (wcss_trace) wcss_trace->push_back(dist2.sum());
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
    // Re-seed each empty cluster at the sample farthest from every center
    // placed so far, in index order so the result is deterministic.
    for (int c = 0; c < N; ++c) {
      if (counts(c) == 0) {
        centers.row(c) = samples.row(farthest_sample(samples, centers));
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
      worst = std::min(worst, checked_density(variance, set.centers.row(c).transpose()));
    }
    set.min_center_var = worst;
  }
  return set;
}

int choose_cluster_count(const DensityFn& variance, const Eigen::MatrixXd& samples, int q,
                         int N_max, std::uint64_t seed, ClusterSet* chosen, int full_scan_limit,
                         int scan_points) {
  if (q < 1) throw ArgumentError("choose_cluster_count: q must be positive");
  if (N_max < q) throw ArgumentError("choose_cluster_count: N_max must be at least q");
  if (N_max > samples.rows()) {
    throw ArgumentError("choose_cluster_count: N_max exceeds the sample count");
  }
  if (full_scan_limit < 1 || scan_points < 2) {
    throw ArgumentError("choose_cluster_count: invalid scan limits");
  }

  std::vector<int> candidates;
  const int range = N_max - q;
  if (range + 1 <= full_scan_limit) {
    for (int N = q; N <= N_max; ++N) candidates.push_back(N);
  } else {
    const int stride = std::max(1, range / (scan_points - 1));
    for (int N = q; N < N_max; N += stride) candidates.push_back(N);
    candidates.push_back(N_max);
  }

  int best_N = -1;
  double best_value = -std::numeric_limits<double>::infinity();
  ClusterSet best_set;
  for (const int N : candidates) {
    ClusterSet set = nmeans(samples, N, derive_seed(seed, static_cast<std::uint64_t>(N)),
                            variance);
    if (set.min_center_var > best_value) {  // strict: ties keep the smallest N
      best_value = set.min_center_var;
      best_N = N;
      best_set = std::move(set);
    }
  }
  if (chosen) *chosen = std::move(best_set);
  return best_N;
}

int choose_cluster_count(const KrigingModel& model, const Eigen::MatrixXd& samples, int q,
                         int N_max, std::uint64_t seed, ClusterSet* chosen, int full_scan_limit,
                         int scan_points) {
  const DensityFn variance = [&model](const Eigen::VectorXd& x) { return predict_var(model, x); };
  return choose_cluster_count(variance, samples, q, N_max, seed, chosen, full_scan_limit,
                              scan_points);
}

Eigen::MatrixXd select_batch_scored(const DensityFn& variance, const DensityFn& score, int dim,
                                    int q, const BatchOptions& options, ClusterSet* centers) {
  if (q < 1) throw ArgumentError("select_batch_scored: q must be positive");
  const int N_max = options.n_max > 0 ? options.n_max : 3 * q;
  if (N_max < q) {
    throw ConfigError("select_batch_scored: cluster-count ceiling " + std::to_string(N_max) +
                      " is below q = " + std::to_string(q));
  }
  if (options.thin_limit < 1) throw ArgumentError("select_batch_scored: thin_limit too small");

  const MhResult chain = mh_sample(variance, dim, options.mh);

  // Clustering runs on an evenly thinned subset of the chain.
  Eigen::MatrixXd thinned;
  const int rows = static_cast<int>(chain.samples.rows());
  if (rows > options.thin_limit) {
    const int stride = (rows + options.thin_limit - 1) / options.thin_limit;
    const int kept = (rows + stride - 1) / stride;
    thinned.resize(kept, chain.samples.cols());
    for (int i = 0; i < kept; ++i) thinned.row(i) = chain.samples.row(i * stride);
  } else {
    thinned = chain.samples;
  }
  if (thinned.rows() < q) {
    throw ConfigError("select_batch_scored: fewer thinned samples than q");
  }

  ClusterSet set;
  (void)choose_cluster_count(variance, thinned, q,
                             std::min(N_max, static_cast<int>(thinned.rows())),
                             derive_seed(options.mh.seed, 0xC1), &set, options.full_scan_limit,
                             options.scan_points);
  if (q > set.N) {
    throw ConfigError("select_batch_scored: q exceeds the chosen cluster count");
  }

  const int N = set.N;
  Eigen::VectorXd values(N);
  Eigen::VectorXd raw_var(N);
  par::for_index(N, [&](std::ptrdiff_t c) {
    const Eigen::VectorXd center = set.centers.row(c).transpose();
    raw_var(c) = variance(center);
    values(c) = score(center);
  });

  std::vector<int> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return values(a) > values(b); });

  Eigen::MatrixXd batch(q, dim);
  int taken = 0;
  for (const int c : order) {
    if (taken == q) break;
    if (raw_var(c) == 0.0) continue;  // a center sitting exactly on a design point
    batch.row(taken++) = set.centers.row(c);
  }
  if (taken < q) {
    throw ConfigError("select_batch_scored: not enough positive-variance centers for q points");
  }
  if (centers) *centers = std::move(set);
  return batch;
}

Eigen::MatrixXd select_batch_adjmmse(const KrigingModel& model, const LoocvDiagnostics& diag,
                                     int q, const BatchOptions& options, ClusterSet* centers) {
  const DensityFn variance = [&model](const Eigen::VectorXd& x) { return predict_var(model, x); };
  const VoronoiPartition partition = make_voronoi(model.D);
  const DensityFn score = [&](const Eigen::VectorXd& x) {
    return adjusted_mse(model, diag, partition, x);
  };
  return select_batch_scored(variance, score, model.dim(), q, options, centers);
}

Eigen::MatrixXd select_batch_liar_minimse(const KrigingModel& model, int q,
                                          const CandidateGrid& grid) {
  if (q < 1) throw ArgumentError("select_batch_liar_minimse: q must be positive");
  Eigen::MatrixXd batch(q, model.dim());
  KrigingModel work = model;
  for (int i = 0; i < q; ++i) {
    const Selection pick = select_min_imse(work, grid);
    batch.row(i) = pick.point.transpose();
    if (i + 1 < q) work = liar_condition(work, pick.point);
  }
  return batch;
}

}  // namespace krigseq
