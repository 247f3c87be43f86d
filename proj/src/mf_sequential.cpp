#include "krigseq/mf_sequential.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <utility>

#include "krigseq/errors.hpp"
#include "krigseq/loocv.hpp"
#include "krigseq/parallel.hpp"
#include "krigseq/rng.hpp"

namespace krigseq {

namespace {

// Matches the nesting tolerance used when multi-fidelity data is assembled.
constexpr double kPresenceTol = 1e-12;

bool row_present(const Eigen::MatrixXd& design, const Eigen::VectorXd& x) {
  for (Eigen::Index i = 0; i < design.rows(); ++i)
    if ((design.row(i).transpose() - x).cwiseAbs().maxCoeff() <= kPresenceTol) return true;
  return false;
}

std::string format_point(const Eigen::VectorXd& x) {
  std::ostringstream os;
  os << "(";
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (i > 0) os << ", ";
    os << x(i);
  }
  os << ")";
  return os.str();
}

void check_cost(const CostModel& cost, int levels, const char* who) {
  if (static_cast<int>(cost.t.size()) != levels)
    throw ArgumentError(std::string(who) + ": cost model has " + std::to_string(cost.t.size()) +
                        " level times but the stack has " + std::to_string(levels) + " levels");
}

void check_query(const CokrigingModel& model, const Eigen::VectorXd& x, int level,
                 const char* who) {
  if (x.size() != model.dim())
    throw ArgumentError(std::string(who) + ": point has dimension " + std::to_string(x.size()) +
                        ", expected " + std::to_string(model.dim()));
  if (level < 0 || level >= model.levels())
    throw ArgumentError(std::string(who) + ": level " + std::to_string(level) +
                        " out of range for a " + std::to_string(model.levels()) + "-level stack");
}

const Eigen::VectorXd& level_theta(const CokrigingModel& model, int level) {
  return level == 0 ? model.base.kernel.theta
                    : model.upper[static_cast<std::size_t>(level - 1)].kernel.theta;
}

// The volume-of-influence factor prod_m theta_level^m.
double level_volume(const CokrigingModel& model, int level) {
  return level_theta(model, level).prod();
}

double rho_sq(const CokrigingModel& model, int between) {
  const double rho = model.upper[static_cast<std::size_t>(between)].rho;
  return rho * rho;
}

// Squared scale factor linking level i's bias variance to level `target`:
// prod_{j=i}^{target-1} rho_j^2 in the level-j -> level-j+1 numbering.
double weight_to(const CokrigingModel& model, int i, int target) {
  double w = 1.0;
  for (int j = i; j < target; ++j) w *= rho_sq(model, j);
  return w;
}

void check_adjustment(const CokrigingModel& model, const MfAdjustment& adj, const char* who) {
  const auto levels = static_cast<std::size_t>(model.levels());
  if (adj.ratios.size() != levels || adj.factors.size() != levels || adj.cells.size() != levels)
    throw ArgumentError(std::string(who) + ": adjustment was built for " +
                        std::to_string(adj.ratios.size()) + " levels, model has " +
                        std::to_string(levels));
}

}  // namespace

CostModel make_cost_model(std::vector<long long> t, long long T) {
  if (t.empty()) throw ArgumentError("make_cost_model: no level times");
  if (t.front() <= 0) throw ArgumentError("make_cost_model: level times must be positive");
  for (std::size_t l = 1; l < t.size(); ++l)
    if (t[l] <= t[l - 1])
      throw ArgumentError("make_cost_model: level times must be strictly increasing (t[" +
                          std::to_string(l) + "] = " + std::to_string(t[l]) + " <= t[" +
                          std::to_string(l - 1) + "] = " + std::to_string(t[l - 1]) + ")");
  if (T <= 0) throw ArgumentError("make_cost_model: budget T must be positive");
  return CostModel{std::move(t), T};
}

double cost_ratio(const CostModel& cost, int level) {
  if (level < 1 || level >= static_cast<int>(cost.t.size()))
    throw ArgumentError("cost_ratio: level " + std::to_string(level) +
                        " out of range for a " + std::to_string(cost.t.size()) +
                        "-level cost model");
  return static_cast<double>(cost.t[static_cast<std::size_t>(level)]) /
         static_cast<double>(cost.t[static_cast<std::size_t>(level - 1)]);
}

long long nested_point_cost(const CostModel& cost, int level) {
  if (level < 0 || level >= static_cast<int>(cost.t.size()))
    throw ArgumentError("nested_point_cost: level " + std::to_string(level) +
                        " out of range for a " + std::to_string(cost.t.size()) +
                        "-level cost model");
  long long total = 0;
  for (int j = 0; j <= level; ++j) total += cost.t[static_cast<std::size_t>(j)];
  return total;
}

long long allocation_cost(const Allocation& alloc, const CostModel& cost) {
  if (alloc.q.size() != static_cast<Eigen::Index>(cost.t.size()))
    throw ArgumentError("allocation_cost: allocation has " + std::to_string(alloc.q.size()) +
                        " levels, cost model has " + std::to_string(cost.t.size()));
  long long total = 0;
  for (Eigen::Index l = 0; l < alloc.q.size(); ++l) {
    if (alloc.q(l) < 0)
      throw ArgumentError("allocation_cost: negative count at level " + std::to_string(l));
    total += static_cast<long long>(alloc.q(l)) * nested_point_cost(cost, static_cast<int>(l));
  }
  return total;
}

double imse_red(const CokrigingModel& model, const Eigen::VectorXd& x_new, int level) {
  check_query(model, x_new, level, "imse_red");
  const LevelVarianceProfile prof = variance_decomposition(model, x_new);
  double total = 0.0;
  double w = 1.0;
  for (int i = level; i >= 0; --i) {
    total += prof.sigma2_delta(i) * w * level_volume(model, i);
    if (i > 0) w *= rho_sq(model, i - 1);
  }
  return total;
}

std::vector<Eigen::VectorXd> mf_increment_ratios(const CokrigingModel& model,
                                                 const MfLoocvTable& table) {
  const int levels = model.levels();
  const auto expect = static_cast<std::size_t>(levels);
  if (table.errors.size() != expect || table.vars.size() != expect ||
      table.rho_red.size() != expect)
    throw ArgumentError("mf_increment_ratios: table level count does not match the model");
  std::vector<Eigen::VectorXd> out(expect);
  for (int l = 0; l < levels; ++l) {
    const int n_l = model.n(l);
    const auto ul = static_cast<std::size_t>(l);
    if (table.errors[ul].size() != n_l || table.vars[ul].size() != n_l ||
        table.rho_red[ul].size() != n_l)
      throw ArgumentError("mf_increment_ratios: table row count at level " + std::to_string(l) +
                          " does not match the design");
    const Eigen::VectorXd& y =
        l == 0 ? model.base.y : model.upper[static_cast<std::size_t>(l - 1)].y;
    // Same round-off floor as the single-level diagnostics: increments at
    // noise scale are exact zeros, not 0/0 artifacts.
    const double range = y.maxCoeff() - y.minCoeff();
    const double maxabs = y.cwiseAbs().maxCoeff();
    const double e2_floor = 1e-24 * range * range + 1e-28 * maxabs * maxabs;
    Eigen::VectorXd ratios(n_l);
    for (int i = 0; i < n_l; ++i) {
      const double rho_r = table.rho_red[ul](i);
      double err = table.errors[ul](i);
      double var = table.vars[ul](i);
      if (l > 0) {
        const int par = model.parent[static_cast<std::size_t>(l - 1)](i);
        err -= rho_r * table.errors[ul - 1](par);
        var -= rho_r * rho_r * table.vars[ul - 1](par);
      }
      const double num = err * err;
      if (num <= e2_floor) {
        ratios(i) = 0.0;
        continue;
      }
      if (var <= 0.0)
        throw DiagnosticsError("mf_increment_ratios: nonpositive variance increment at level " +
                               std::to_string(l) + ", index " + std::to_string(i));
      const double raw = num / var;
      if (raw > detail::kRatioCap) {
        std::ostringstream os;
        os << "mf_increment_ratios: level " << l << " ratio[" << i << "] = " << raw
           << " capped at " << detail::kRatioCap;
        debug_log(os.str());
        ratios(i) = detail::kRatioCap;
      } else {
        ratios(i) = raw;
      }
    }
    out[ul] = std::move(ratios);
  }
  return out;
}

MfAdjustment make_mf_adjustment(const CokrigingModel& model) {
  MfAdjustment adj;
  adj.table = mf_loocv_table(model);
  adj.ratios = mf_increment_ratios(model, adj.table);
  const int levels = model.levels();
  adj.factors.resize(static_cast<std::size_t>(levels));
  adj.cells.reserve(static_cast<std::size_t>(levels));
  for (int l = 0; l < levels; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    adj.factors[ul] = 1.0 + adj.ratios[ul].sum();
    adj.cells.push_back(make_voronoi(
        l == 0 ? model.base.D : model.upper[static_cast<std::size_t>(l - 1)].D));
  }
  return adj;
}

double imse_red_adj(const CokrigingModel& model, const MfAdjustment& adj,
                    const Eigen::VectorXd& x_new, int level) {
  check_query(model, x_new, level, "imse_red_adj");
  check_adjustment(model, adj, "imse_red_adj");
  const LevelVarianceProfile prof = variance_decomposition(model, x_new);
  double total = 0.0;
  double w = 1.0;
  for (int i = level; i >= 0; --i) {
    total += prof.sigma2_delta(i) * adj.factors[static_cast<std::size_t>(i)] * w *
             level_volume(model, i);
    if (i > 0) w *= rho_sq(model, i - 1);
  }
  return total;
}

double mf_adjusted_variance(const CokrigingModel& model, const MfAdjustment& adj,
                            const Eigen::VectorXd& x, int level) {
  check_query(model, x, level, "mf_adjusted_variance");
  check_adjustment(model, adj, "mf_adjusted_variance");
  const LevelVarianceProfile prof = variance_decomposition(model, x);
  double total = 0.0;
  double w = 1.0;
  for (int i = level; i >= 0; --i) {
    const auto ui = static_cast<std::size_t>(i);
    const int cell = voronoi_index(adj.cells[ui], x);
    total += prof.sigma2_delta(i) * (1.0 + adj.ratios[ui](cell)) * w;
    if (i > 0) w *= rho_sq(model, i - 1);
  }
  return total;
}

double mf_batch_score(const CokrigingModel& model, const MfAdjustment& adj,
                      const Eigen::VectorXd& x, int level) {
  check_query(model, x, level, "mf_batch_score");
  check_adjustment(model, adj, "mf_batch_score");
  const LevelVarianceProfile prof = variance_decomposition(model, x);
  double total = 0.0;
  double w = 1.0;
  for (int i = level; i >= 0; --i) {
    const auto ui = static_cast<std::size_t>(i);
    const int cell = voronoi_index(adj.cells[ui], x);
    total += prof.sigma2_delta(i) * (1.0 + adj.ratios[ui](cell)) * w * level_volume(model, i);
    if (i > 0) w *= rho_sq(model, i - 1);
  }
  return total;
}

std::string to_string(MfCriterion criterion) {
  switch (criterion) {
    case MfCriterion::Plain: return "plain";
    case MfCriterion::Adjusted: return "adjusted";
  }
  throw ArgumentError("unknown multi-fidelity criterion");
}

MfCriterion mf_criterion_from_string(const std::string& name) {
  if (name == "plain") return MfCriterion::Plain;
  if (name == "adjusted") return MfCriterion::Adjusted;
  throw ArgumentError("unknown multi-fidelity criterion '" + name +
                      "' (expected plain or adjusted)");
}

SequentialState make_sequential_state(MultiFidelityData data, std::vector<TrendBasis> trends,
                                      std::vector<KernelFamily> families,
                                      std::vector<Simulator> simulators, const FitOptions& fit,
                                      std::optional<TestSet> test_set, long long initial_spent) {
  if (simulators.size() != static_cast<std::size_t>(data.levels()))
    throw ArgumentError("make_sequential_state: " + std::to_string(simulators.size()) +
                        " simulators for " + std::to_string(data.levels()) + " levels");
  for (std::size_t l = 0; l < simulators.size(); ++l)
    if (!simulators[l])
      throw ArgumentError("make_sequential_state: simulator for level " + std::to_string(l) +
                          " is empty");
  if (initial_spent < 0)
    throw ArgumentError("make_sequential_state: negative initial spent time");
  if (test_set) {
    if (test_set->X.cols() != data.dim())
      throw ArgumentError("make_sequential_state: test set has dimension " +
                          std::to_string(test_set->X.cols()) + ", data has " +
                          std::to_string(data.dim()));
    if (test_set->X.rows() != test_set->y.size())
      throw ArgumentError("make_sequential_state: test set has " +
                          std::to_string(test_set->X.rows()) + " points but " +
                          std::to_string(test_set->y.size()) + " outputs");
    if (test_set->X.rows() < 2 || test_set->y.maxCoeff() - test_set->y.minCoeff() <= 0.0)
      throw ArgumentError(
          "make_sequential_state: test outputs must span a positive range to normalize");
  }
  SequentialState state;
  state.model = fit_cokriging(data, trends, families, fit);
  state.data = std::move(data);
  state.trends = std::move(trends);
  state.families = std::move(families);
  state.simulators = std::move(simulators);
  state.fit = fit;
  state.test_set = std::move(test_set);
  state.spent_time = initial_spent;
  state.iteration = 0;
  return state;
}

double state_nrmse(const SequentialState& state) {
  if (!state.test_set) return std::numeric_limits<double>::quiet_NaN();
  const TestSet& ts = *state.test_set;
  const Eigen::VectorXd pred =
      mf_predict_mean_batch(state.model, ts.X, state.model.levels() - 1);
  const double rmse =
      std::sqrt((pred - ts.y).squaredNorm() / static_cast<double>(ts.y.size()));
  return rmse / (ts.y.maxCoeff() - ts.y.minCoeff());
}

namespace {

// Simulates x at each level in `levels`, appending to copies of the state's
// designs/outputs. Throws RunError (naming the level and point) on simulator
// failure or a non-finite value, leaving the caller's state untouched.
void run_levels(const SequentialState& state, const Eigen::VectorXd& x,
                const std::vector<int>& levels, std::vector<Eigen::MatrixXd>& designs,
                std::vector<Eigen::VectorXd>& outputs) {
  for (int l : levels) {
    const auto ul = static_cast<std::size_t>(l);
    double y = 0.0;
    try {
      y = state.simulators[ul](x);
    } catch (const std::exception& e) {
      throw RunError("simulator failed at level " + std::to_string(l) + ", point " +
                     format_point(x) + ": " + e.what());
    }
    if (!std::isfinite(y))
      throw RunError("simulator returned a non-finite value at level " + std::to_string(l) +
                     ", point " + format_point(x));
    const Eigen::Index rows = designs[ul].rows();
    designs[ul].conservativeResize(rows + 1, Eigen::NoChange);
    designs[ul].row(rows) = x.transpose();
    outputs[ul].conservativeResize(rows + 1);
    outputs[ul](rows) = y;
  }
}

// Refits with the previous length-scales as an extra start and a seed
// derived from the step number, so repeated campaigns are reproducible and
// a one-level stack reproduces the single-level engine bit for bit.
CokrigingModel refit(const SequentialState& state, const MultiFidelityData& data) {
  FitOptions opts = state.fit;
  opts.seed = derive_seed(state.fit.seed, static_cast<std::uint64_t>(state.iteration) + 1);
  return fit_cokriging(data, state.trends, state.families, opts, nullptr, &state.model);
}

}  // namespace

bool step_one_point(SequentialState& state, MfCriterion criterion, const CostModel& cost,
                    const CandidateGrid& grid) {
  const int s = state.data.levels();
  const int d = state.data.dim();
  check_cost(cost, s, "step_one_point");
  if (grid.points.cols() != d)
    throw ArgumentError("step_one_point: grid dimension " + std::to_string(grid.points.cols()) +
                        " does not match the data dimension " + std::to_string(d));
  if (grid.points.rows() < 1) throw ArgumentError("step_one_point: empty candidate grid");
  if (state.spent_time >= cost.T) return false;

  std::optional<MfAdjustment> adj;
  if (criterion == MfCriterion::Adjusted) adj = make_mf_adjustment(state.model);

  // One sweep over the grid: the selection values and, as a by-product, the
  // per-level bias variances whose grid means estimate each level's
  // integrated variance.
  const Eigen::Index M = grid.points.rows();
  Eigen::VectorXd values(M);
  Eigen::MatrixXd s2d(M, s);
  par::for_index(M, [&](Eigen::Index i) {
    const Eigen::VectorXd x = grid.points.row(i).transpose();
    const LevelVarianceProfile prof = variance_decomposition(state.model, x);
    s2d.row(i) = prof.sigma2_delta.transpose();
    if (!adj) {
      values(i) = prof.weighted.sum();
    } else {
      double total = 0.0;
      for (int l = 0; l < s; ++l) {
        const auto ul = static_cast<std::size_t>(l);
        const int cell = voronoi_index(adj->cells[ul], x);
        total += prof.weighted(l) * (1.0 + adj->ratios[ul](cell));
      }
      values(i) = total;
    }
  });
  int best = 0;
  for (Eigen::Index i = 1; i < M; ++i)
    if (values(i) > values(best)) best = static_cast<int>(i);

  const std::function<double(const Eigen::VectorXd&)> objective =
      adj ? std::function<double(const Eigen::VectorXd&)>(
                [&](const Eigen::VectorXd& x) { return mf_adjusted_variance(state.model, *adj, x, s - 1); })
          : std::function<double(const Eigen::VectorXd&)>(
                [&](const Eigen::VectorXd& x) { return mf_predict_var(state.model, x); });
  const Selection pick =
      refine_selection(objective, best, grid.points.row(best).transpose(), values(best));
  const Eigen::VectorXd& x_new = pick.point;

  // Walk the levels coarse to fine: stop below level L when either the bias
  // variance at x_new is already below its integrated level (nothing left to
  // learn there) or the relative IMSE reduction does not pay for the finer
  // run.
  const LevelVarianceProfile prof_x = variance_decomposition(state.model, x_new);
  const auto reduction_at = [&](int level) {
    double total = 0.0;
    double w = 1.0;
    for (int i = level; i >= 0; --i) {
      const double f = adj ? adj->factors[static_cast<std::size_t>(i)] : 1.0;
      total += prof_x.sigma2_delta(i) * f * w * level_volume(state.model, i);
      if (i > 0) w *= rho_sq(state.model, i - 1);
    }
    return total;
  };
  int top = s - 1;
  for (int L = 1; L < s; ++L) {
    if (prof_x.sigma2_delta(L) < s2d.col(L).mean()) {
      top = L - 1;
      break;
    }
    if (reduction_at(L - 1) / reduction_at(L) > 1.0 / cost_ratio(cost, L)) {
      top = L - 1;
      break;
    }
  }

  std::vector<int> levels_run;
  for (int l = 0; l <= top; ++l)
    if (!row_present(state.data.designs[static_cast<std::size_t>(l)], x_new))
      levels_run.push_back(l);
  if (levels_run.empty())
    throw DegenerateUpdateError("step_one_point: selected point " + format_point(x_new) +
                                " is already a design point at every chosen level");

  // Stage everything before touching the state so a failure leaves it as it
  // was.
  std::vector<Eigen::MatrixXd> designs = state.data.designs;
  std::vector<Eigen::VectorXd> outputs = state.data.outputs;
  run_levels(state, x_new, levels_run, designs, outputs);
  MultiFidelityData new_data = make_mf_data(std::move(designs), std::move(outputs));
  CokrigingModel new_model = refit(state, new_data);

  long long step_cost = 0;
  for (int l : levels_run) step_cost += cost.t[static_cast<std::size_t>(l)];
  state.data = std::move(new_data);
  state.model = std::move(new_model);
  state.spent_time += step_cost;
  state.iteration += 1;
  LogEntry entry;
  entry.iteration = state.iteration;
  entry.x = x_new;
  entry.levels = std::move(levels_run);
  entry.criterion = pick.value;
  entry.spent_time = state.spent_time;
  entry.nrmse = state_nrmse(state);
  state.log.push_back(std::move(entry));
  return true;
}

BatchPlan plan_batch(const CokrigingModel& model, const MfAdjustment& adj, const CostModel& cost,
                     const Allocation& alloc, const MfBatchConfig& cfg) {
  const int s = model.levels();
  const int d = model.dim();
  check_cost(cost, s, "plan_batch");
  check_adjustment(model, adj, "plan_batch");
  if (alloc.q.size() != s)
    throw ArgumentError("plan_batch: allocation has " + std::to_string(alloc.q.size()) +
                        " levels, model has " + std::to_string(s));
  for (int l = 0; l < s; ++l)
    if (alloc.q(l) < 0)
      throw ArgumentError("plan_batch: negative count at level " + std::to_string(l));

  BatchPlan plan;
  plan.alloc = alloc;
  plan.points.assign(static_cast<std::size_t>(s), Eigen::MatrixXd(0, d));
  plan.conditioned_counts.assign(static_cast<std::size_t>(s), 0);

  // Finest level first; coarser levels see the finer choices as fantasy
  // observations, so their batches spread out around them.
  CokrigingModel work = model;
  for (int m = s - 1; m >= 0; --m) {
    const auto um = static_cast<std::size_t>(m);
    plan.conditioned_counts[um] = work.n(m);
    const int q = alloc.q(m);
    if (q == 0) continue;
    BatchOptions options = cfg.batch;
    options.mh.seed = derive_seed(cfg.batch.mh.seed, static_cast<std::uint64_t>(m));
    const DensityFn variance = [&work, m](const Eigen::VectorXd& x) {
      return mf_predict_var(work, x, m);
    };
    const DensityFn score = [&work, &adj, m](const Eigen::VectorXd& x) {
      return mf_batch_score(work, adj, x, m);
    };
    plan.points[um] = select_batch_scored(variance, score, d, q, options);
    for (Eigen::Index r = 0; r < plan.points[um].rows(); ++r)
      work = cokriging_liar_condition(work, plan.points[um].row(r).transpose(), m);
  }

  // Round score: each selected point's bias variance in the pre-round model,
  // carried to the top level and weighted by its level's volume factor.
  double score_total = 0.0;
  for (int m = 0; m < s; ++m) {
    const auto um = static_cast<std::size_t>(m);
    if (plan.points[um].rows() == 0) continue;
    const double w = weight_to(model, m, s - 1);
    const double vol = level_volume(model, m);
    for (Eigen::Index r = 0; r < plan.points[um].rows(); ++r) {
      const LevelVarianceProfile prof =
          variance_decomposition(model, plan.points[um].row(r).transpose());
      score_total += prof.sigma2_delta(m) * w * vol;
    }
  }
  plan.score = score_total;
  return plan;
}

namespace {

// Depth-first enumeration of the exact-cost allocations; returns false when
// the feasible set exceeds `cap` (the caller then falls back to greedy).
bool enumerate_allocations(const CostModel& cost, int level, long long remaining,
                           Eigen::VectorXi& q, std::vector<Allocation>& out, std::size_t cap) {
  const long long unit = nested_point_cost(cost, level);
  if (level == 0) {
    if (remaining % unit != 0) return true;
    q(0) = static_cast<int>(remaining / unit);
    if (out.size() >= cap) return false;
    out.push_back(Allocation{q});
    return true;
  }
  for (long long k = 0; k * unit <= remaining; ++k) {
    q(level) = static_cast<int>(k);
    if (!enumerate_allocations(cost, level - 1, remaining - k * unit, q, out, cap)) return false;
  }
  q(level) = 0;
  return true;
}

// Budget fill by value per cost when enumeration would be too large:
// estimate each level's worth as the mean weighted bias variance over a
// probe grid divided by its nested point cost, fill levels in that order
// (coarsest last as the remainder sink), and walk finer counts back down
// until the remainder is divisible by the level-0 cost.
Allocation greedy_allocation(const CokrigingModel& model, const CostModel& cost, long long T) {
  const int s = model.levels();
  const int d = model.dim();
  const CandidateGrid probe = make_candidate_grid(d, 100, derive_seed(0x9E3779B97F4A7C15ULL, 1));
  Eigen::VectorXd worth = Eigen::VectorXd::Zero(s);
  for (Eigen::Index i = 0; i < probe.points.rows(); ++i) {
    const LevelVarianceProfile prof =
        variance_decomposition(model, probe.points.row(i).transpose());
    for (int l = 0; l < s; ++l)
      worth(l) += prof.sigma2_delta(l) * weight_to(model, l, s - 1) * level_volume(model, l);
  }
  std::vector<int> order;
  for (int l = 1; l < s; ++l) order.push_back(l);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return worth(a) / static_cast<double>(nested_point_cost(cost, a)) >
           worth(b) / static_cast<double>(nested_point_cost(cost, b));
  });
  Eigen::VectorXi q = Eigen::VectorXi::Zero(s);
  long long remaining = T;
  for (int l : order) {
    const long long unit = nested_point_cost(cost, l);
    q(l) = static_cast<int>(remaining / unit);
    remaining -= static_cast<long long>(q(l)) * unit;
  }
  // Undo the cheapest fine points until the remainder lands on a multiple of
  // the coarse run time.
  const long long base = nested_point_cost(cost, 0);
  while (remaining % base != 0) {
    int give = -1;
    for (int l : order)
      if (q(l) > 0 && (give == -1 || nested_point_cost(cost, l) < nested_point_cost(cost, give)))
        give = l;
    if (give == -1) break;
    q(give) -= 1;
    remaining += nested_point_cost(cost, give);
  }
  if (remaining % base != 0)
    throw BudgetError("allocate_budget: no allocation meets the budget " + std::to_string(T) +
                      " exactly");
  q(0) = static_cast<int>(remaining / base);
  return Allocation{q};
}

}  // namespace

Allocation allocate_budget(const CokrigingModel& model, const MfAdjustment& adj,
                           const CostModel& cost, long long T, const MfBatchConfig& cfg,
                           const std::vector<Allocation>* candidates,
                           std::vector<AllocationScore>* scores) {
  const int s = model.levels();
  check_cost(cost, s, "allocate_budget");
  check_adjustment(model, adj, "allocate_budget");
  if (T <= 0) throw ArgumentError("allocate_budget: budget must be positive");
  if (cfg.enumeration_cap < 1)
    throw ArgumentError("allocate_budget: enumeration cap must be positive");

  std::vector<Allocation> feasible;
  if (candidates) {
    for (const Allocation& a : *candidates) {
      if (allocation_cost(a, cost) != T)
        throw ArgumentError("allocate_budget: candidate allocation costs " +
                            std::to_string(allocation_cost(a, cost)) + ", budget is " +
                            std::to_string(T));
      feasible.push_back(a);
    }
  } else {
    Eigen::VectorXi q = Eigen::VectorXi::Zero(s);
    const bool complete = enumerate_allocations(cost, s - 1, T, q, feasible,
                                                static_cast<std::size_t>(cfg.enumeration_cap));
    if (!complete) {
      feasible.clear();
      feasible.push_back(greedy_allocation(model, cost, T));
    }
  }
  if (feasible.empty())
    throw BudgetError("allocate_budget: no allocation meets the budget " + std::to_string(T) +
                      " exactly");

  if (scores) scores->clear();
  int best = -1;
  double best_score = 0.0;
  for (std::size_t i = 0; i < feasible.size(); ++i) {
    const BatchPlan plan = plan_batch(model, adj, cost, feasible[i], cfg);
    if (scores) scores->push_back(AllocationScore{feasible[i], plan.score});
    const bool better =
        best < 0 || plan.score > best_score ||
        (plan.score == best_score && feasible[i].q(0) > feasible[static_cast<std::size_t>(best)].q(0));
    if (better) {
      best = static_cast<int>(i);
      best_score = plan.score;
    }
  }
  return feasible[static_cast<std::size_t>(best)];
}

namespace {

void run_batch_round(SequentialState& state, const CostModel& cost, const MfBatchConfig& cfg,
                     const MfAdjustment& adj, const Allocation& alloc, BatchPlan* executed) {
  const int s = state.data.levels();
  BatchPlan plan = plan_batch(state.model, adj, cost, alloc, cfg);

  // Schedule the real runs: each planned point runs at its level and at
  // every coarser level that does not already hold it. Nesting makes
  // presence monotone downward, so the descent can stop at the first hit.
  std::vector<std::vector<Eigen::VectorXd>> runs(static_cast<std::size_t>(s));
  struct PointLog {
    Eigen::VectorXd x;
    std::vector<int> levels;
  };
  std::vector<PointLog> point_logs;
  const auto scheduled = [&](int level, const Eigen::VectorXd& x) {
    for (const Eigen::VectorXd& p : runs[static_cast<std::size_t>(level)])
      if ((p - x).cwiseAbs().maxCoeff() <= kPresenceTol) return true;
    return false;
  };
  for (int m = s - 1; m >= 0; --m) {
    const Eigen::MatrixXd& pts = plan.points[static_cast<std::size_t>(m)];
    for (Eigen::Index r = 0; r < pts.rows(); ++r) {
      const Eigen::VectorXd x = pts.row(r).transpose();
      PointLog pl;
      pl.x = x;
      for (int j = m; j >= 0; --j) {
        if (row_present(state.data.designs[static_cast<std::size_t>(j)], x)) break;
        if (scheduled(j, x)) break;
        runs[static_cast<std::size_t>(j)].push_back(x);
        pl.levels.push_back(j);
      }
      std::reverse(pl.levels.begin(), pl.levels.end());
      point_logs.push_back(std::move(pl));
    }
  }

  std::vector<Eigen::MatrixXd> designs = state.data.designs;
  std::vector<Eigen::VectorXd> outputs = state.data.outputs;
  long long step_cost = 0;
  bool any = false;
  for (int j = 0; j < s; ++j) {
    for (const Eigen::VectorXd& x : runs[static_cast<std::size_t>(j)]) {
      run_levels(state, x, std::vector<int>{j}, designs, outputs);
      step_cost += cost.t[static_cast<std::size_t>(j)];
      any = true;
    }
  }
  if (!any)
    throw DegenerateUpdateError("step_batch: every planned point is already a design point");

  MultiFidelityData new_data = make_mf_data(std::move(designs), std::move(outputs));
  CokrigingModel new_model = refit(state, new_data);

  state.data = std::move(new_data);
  state.model = std::move(new_model);
  state.spent_time += step_cost;
  state.iteration += 1;
  const double nrmse = state_nrmse(state);
  for (PointLog& pl : point_logs) {
    LogEntry entry;
    entry.iteration = state.iteration;
    entry.x = std::move(pl.x);
    entry.levels = std::move(pl.levels);
    entry.criterion = plan.score;
    entry.spent_time = state.spent_time;
    entry.nrmse = nrmse;
    state.log.push_back(std::move(entry));
  }
  if (executed) *executed = std::move(plan);
}

}  // namespace

void step_batch(SequentialState& state, const CostModel& cost, const MfBatchConfig& cfg,
                BatchPlan* executed) {
  check_cost(cost, state.data.levels(), "step_batch");
  const MfAdjustment adj = make_mf_adjustment(state.model);
  const Allocation alloc = allocate_budget(state.model, adj, cost, cost.T, cfg);
  run_batch_round(state, cost, cfg, adj, alloc, executed);
}

void step_batch(SequentialState& state, const CostModel& cost, const MfBatchConfig& cfg,
                const Allocation& alloc, BatchPlan* executed) {
  check_cost(cost, state.data.levels(), "step_batch");
  const long long spent = allocation_cost(alloc, cost);
  if (spent != cost.T)
    throw ArgumentError("step_batch: allocation costs " + std::to_string(spent) +
                        ", round budget is " + std::to_string(cost.T));
  const MfAdjustment adj = make_mf_adjustment(state.model);
  run_batch_round(state, cost, cfg, adj, alloc, executed);
}

void save_iteration_log(const SequentialState& state, const std::string& path,
                        const Eigen::MatrixXd& bounds) {
  const int d = state.data.dim();
  Eigen::VectorXd lo = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd hi = Eigen::VectorXd::Ones(d);
  if (bounds.size() != 0) {
    if (bounds.rows() != d || bounds.cols() != 2)
      throw ArgumentError("save_iteration_log: bounds must be " + std::to_string(d) +
                          " x 2 (lower, upper)");
    for (int k = 0; k < d; ++k)
      if (!(bounds(k, 1) > bounds(k, 0)))
        throw ArgumentError("save_iteration_log: bounds for axis " + std::to_string(k) +
                            " are not increasing");
    lo = bounds.col(0);
    hi = bounds.col(1);
  }
  std::ofstream out(path);
  if (!out) throw IoError("save_iteration_log: cannot open '" + path + "' for writing");
  out << "iteration";
  for (int k = 0; k < d; ++k) out << ",x" << k;
  out << ",levels,criterion,spent_time,nrmse\n";
  char buf[64];
  const auto fmt = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const LogEntry& e : state.log) {
    out << e.iteration;
    for (int k = 0; k < d; ++k) out << "," << fmt(lo(k) + (hi(k) - lo(k)) * e.x(k));
    out << ",";
    for (std::size_t j = 0; j < e.levels.size(); ++j) {
      if (j > 0) out << "|";
      out << e.levels[j];
    }
    out << "," << fmt(e.criterion) << "," << e.spent_time << "," << fmt(e.nrmse) << "\n";
  }
  if (!out) throw IoError("save_iteration_log: write to '" + path + "' failed");
}

}  // namespace krigseq
