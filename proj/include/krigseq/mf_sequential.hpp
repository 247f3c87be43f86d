#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "krigseq/batch_select.hpp"
#include "krigseq/cokriging.hpp"
#include "krigseq/criteria.hpp"

namespace krigseq {

/// Per-level CPU times in abstract integer units (strictly increasing with
/// level), plus the time budget T. For batch stepping T is the budget of one
/// round; for one-point stepping it is the campaign budget that terminates
/// the loop.
struct CostModel {
  std::vector<long long> t;
  long long T = 0;
};

[[nodiscard]] CostModel make_cost_model(std::vector<long long> t, long long T);

/// How many level-(level-1) runs one level-`level` run buys: t[level] /
/// t[level-1]. Requires level >= 1.
[[nodiscard]] double cost_ratio(const CostModel& cost, int level);

/// Cost of one new point at `level` including the coarser runs nesting
/// demands: sum of t[0..level].
[[nodiscard]] long long nested_point_cost(const CostModel& cost, int level);

/// New-point counts per level for one batch round.
struct Allocation {
  Eigen::VectorXi q;
};

/// Exact round cost: sum over levels of q(l) * nested_point_cost(l). This is
/// the double-sum time identity with the coarser companion runs expanded.
[[nodiscard]] long long allocation_cost(const Allocation& alloc, const CostModel& cost);

/// Proxy for the integrated-variance reduction from adding x_new at `level`:
/// the sum over levels i <= level of the bias variance sigma2_delta_i(x_new),
/// weighted by the squared scale factors linking level i to `level` and by
/// the volume of influence prod_m theta_i^m of level i's kernel (unit-cube
/// length-scales).
[[nodiscard]] double imse_red(const CokrigingModel& model, const Eigen::VectorXd& x_new,
                              int level);

/// Cross-validation adjustment state shared by the adjusted criteria, built
/// once per fitted model. ratios[l](i) is level l's increment ratio at design
/// point i:
///   (eps_l(i) - rho_red * eps_{l-1}(parent))^2
///   / (var_l(i) - rho_red^2 * var_{l-1}(parent))
/// with the level-0 convention rho_red = 0, the round-off floor that treats
/// numerators at noise scale as exact zeros, and the standard ratio cap.
/// factors[l] = 1 + sum_i ratios[l](i). cells[l] is the nearest-site
/// partition of level l's design.
struct MfAdjustment {
  MfLoocvTable table;
  std::vector<Eigen::VectorXd> ratios;
  std::vector<double> factors;
  std::vector<VoronoiPartition> cells;
};

/// The ratios alone, from a precomputed table. Throws DiagnosticsError naming
/// the level and index when a variance increment is not strictly positive.
[[nodiscard]] std::vector<Eigen::VectorXd> mf_increment_ratios(const CokrigingModel& model,
                                                               const MfLoocvTable& table);

[[nodiscard]] MfAdjustment make_mf_adjustment(const CokrigingModel& model);

/// imse_red with every bias variance inflated by the model-wide adjustment
/// factor of its level (1 + the full sum of increment ratios).
[[nodiscard]] double imse_red_adj(const CokrigingModel& model, const MfAdjustment& adj,
                                  const Eigen::VectorXd& x_new, int level);

/// Pointwise adjusted predictive variance at `level`: each bias variance
/// sigma2_delta_i(x) is inflated by 1 + the increment ratio of the level-i
/// design point whose cell contains x, then weighted by the squared scale
/// factors (no volume factor). Degenerates to the single-level adjusted MSE
/// when the stack has one level. `model` may be a fantasy-conditioned variant
/// of the model `adj` was built from: the partitions and ratios always refer
/// to the real data.
[[nodiscard]] double mf_adjusted_variance(const CokrigingModel& model, const MfAdjustment& adj,
                                          const Eigen::VectorXd& x, int level);

/// Batch ranking score: mf_adjusted_variance with each term additionally
/// weighted by its level's volume of influence prod_m theta_i^m.
[[nodiscard]] double mf_batch_score(const CokrigingModel& model, const MfAdjustment& adj,
                                    const Eigen::VectorXd& x, int level);

enum class MfCriterion { Plain, Adjusted };

[[nodiscard]] std::string to_string(MfCriterion criterion);
[[nodiscard]] MfCriterion mf_criterion_from_string(const std::string& name);

/// A code level: unit-cube input, scalar output. Throwing signals a failed
/// run; the engine rethrows as RunError naming the level and point.
using Simulator = std::function<double(const Eigen::VectorXd&)>;

/// Held-out accurate-code data for error snapshots in the iteration log.
struct TestSet {
  Eigen::MatrixXd X;  // unit cube
  Eigen::VectorXd y;  // accurate-level outputs
};

/// One iteration-log row. For a batch round there is one row per new point,
/// all sharing the iteration number, the round's proxy score, and the
/// post-round time and error snapshot.
struct LogEntry {
  int iteration = 0;
  Eigen::VectorXd x;        // unit coordinates
  std::vector<int> levels;  // levels simulated at x (0-based)
  double criterion = 0.0;   // selection-score value
  long long spent_time = 0; // cumulative after the step
  double nrmse = 0.0;       // NaN when no test set is configured
};

/// Everything one sequential campaign mutates: the growing data, the fitted
/// model, the exact time ledger, and the append-only log.
struct SequentialState {
  MultiFidelityData data;
  CokrigingModel model;
  std::vector<TrendBasis> trends;
  std::vector<KernelFamily> families;
  std::vector<Simulator> simulators;
  FitOptions fit;
  std::optional<TestSet> test_set;
  long long spent_time = 0;
  int iteration = 0;
  std::vector<LogEntry> log;
};

/// Fits the initial model and assembles the state. `initial_spent` charges
/// the initial design to the time ledger (0 when the data is found, not run).
[[nodiscard]] SequentialState make_sequential_state(
    MultiFidelityData data, std::vector<TrendBasis> trends, std::vector<KernelFamily> families,
    std::vector<Simulator> simulators, const FitOptions& fit = {},
    std::optional<TestSet> test_set = std::nullopt, long long initial_spent = 0);

/// Normalized RMSE of the top-level predictor on the state's test set
/// (RMSE / range of the test outputs); NaN when no test set is configured.
[[nodiscard]] double state_nrmse(const SequentialState& state);

/// One one-point-at-a-time step. Picks x_new as the grid argmax of the
/// top-level predictive variance (Adjusted: of the adjusted variance)
/// followed by local refinement, walks the levels coarse-to-fine comparing
/// bias variance against its grid-mean and the IMSE-reduction ratio against
/// the inverse cost ratio, simulates x_new at the chosen span of levels
/// (skipping levels that already hold it), recharges the ledger, refits by
/// full maximum likelihood (previous length-scales as an extra start), and
/// logs. Returns false without stepping once spent_time >= cost.T. The state
/// is unchanged when an error is thrown.
bool step_one_point(SequentialState& state, MfCriterion criterion, const CostModel& cost,
                    const CandidateGrid& grid);

/// Knobs for the batch round. The sampler seed is the root: level l samples
/// with seed derive_seed(mh.seed, l).
struct MfBatchConfig {
  BatchOptions batch{};
  int enumeration_cap = 10000;  // exhaustive-allocation ceiling
};

/// A dry-run batch round: the points every level would receive, the data
/// size each level's sampler saw (fantasy points included), and the
/// uncertainty-reduction proxy score of the round.
struct BatchPlan {
  Allocation alloc;
  std::vector<Eigen::MatrixXd> points;  // per level, q(l) x d
  std::vector<int> conditioned_counts;  // level-l data size when level l sampled
  double score = 0.0;
};

/// Runs the top-down selection pipeline for one allocation without
/// simulating: per level (finest first, skipping q = 0), sample the current
/// conditioned variance, cluster, keep the q(l) best centers by the batch
/// score, and fantasy-condition the coarser levels on them. The score sums
/// each selected point's pre-round weighted bias variance times its level's
/// volume factor.
[[nodiscard]] BatchPlan plan_batch(const CokrigingModel& model, const MfAdjustment& adj,
                                   const CostModel& cost, const Allocation& alloc,
                                   const MfBatchConfig& cfg);

struct AllocationScore {
  Allocation alloc;
  double score = 0.0;
};

/// Enumerates every allocation satisfying the exact cost identity for budget
/// T (or scores `candidates` when given), plans each, and returns the
/// highest-scoring one; ties go to the allocation with more coarse-level
/// points. Feasible sets larger than cfg.enumeration_cap fall back to a
/// greedy value-per-cost fill (sub-optimal by construction). Throws
/// BudgetError when no allocation meets the identity. All retained scores
/// are returned through `scores` when non-null.
[[nodiscard]] Allocation allocate_budget(const CokrigingModel& model, const MfAdjustment& adj,
                                         const CostModel& cost, long long T,
                                         const MfBatchConfig& cfg,
                                         const std::vector<Allocation>* candidates = nullptr,
                                         std::vector<AllocationScore>* scores = nullptr);

/// One batch round with the allocation chosen by allocate_budget at budget
/// cost.T: plan, simulate every planned point at its level and the coarser
/// levels nesting demands, refit, and log one row per point. The executed
/// plan is returned through `executed` when non-null.
void step_batch(SequentialState& state, const CostModel& cost, const MfBatchConfig& cfg,
                BatchPlan* executed = nullptr);

/// Same round with a caller-fixed allocation; it must satisfy the exact cost
/// identity at budget cost.T.
void step_batch(SequentialState& state, const CostModel& cost, const MfBatchConfig& cfg,
                const Allocation& alloc, BatchPlan* executed = nullptr);

/// Writes the iteration log as CSV: iteration, the point (one column per
/// axis, mapped to physical units by `bounds` — d x 2 lower/upper, unit cube
/// when empty), the levels run joined by '|', the criterion value, the
/// cumulative spent time, and the NRMSE snapshot.
void save_iteration_log(const SequentialState& state, const std::string& path,
                        const Eigen::MatrixXd& bounds = Eigen::MatrixXd());

}  // namespace krigseq
