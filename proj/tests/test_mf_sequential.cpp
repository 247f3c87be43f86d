#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "krigseq/design_gen.hpp"
#include "krigseq/loocv.hpp"
#include "krigseq/mf_sequential.hpp"
#include "krigseq/rng.hpp"

using namespace krigseq;

namespace {

double f_coarse(const Eigen::VectorXd& x) {
  double s = std::sin(3.0 * x(0)) + 0.4 * x(0);
  for (int k = 1; k < x.size(); ++k) s += 0.6 * std::cos(2.0 * x(k) + x(0));
  return s;
}

double f_fine(const Eigen::VectorXd& x) {
  return 1.7 * f_coarse(x) + 0.35 * std::cos(5.0 * x(0)) - 0.2;
}

using Fn = std::function<double(const Eigen::VectorXd&)>;

// Nested designs: level 0 from a maximin latin hypercube, each level above a
// reversed leading subset of the one below.
MultiFidelityData nested_stack(const std::vector<int>& sizes, int d, std::uint64_t seed,
                               const std::vector<Fn>& fns) {
  std::vector<Eigen::MatrixXd> designs;
  designs.push_back(lhs_maximin(sizes[0], d, 150, seed).points);
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    const Eigen::MatrixXd& prev = designs.back();
    Eigen::MatrixXd D(sizes[l], d);
    for (int i = 0; i < sizes[l]; ++i) D.row(i) = prev.row(sizes[l] - 1 - i);
    designs.push_back(std::move(D));
  }
  std::vector<Eigen::VectorXd> outputs;
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    Eigen::VectorXd y(sizes[l]);
    for (int i = 0; i < sizes[l]; ++i) y(i) = fns[l](designs[l].row(i).transpose());
    outputs.push_back(std::move(y));
  }
  return make_mf_data(std::move(designs), std::move(outputs));
}

std::vector<TrendBasis> const_trends(int d, int s) {
  return std::vector<TrendBasis>(static_cast<std::size_t>(s), TrendBasis{TrendKind::Constant, d});
}

std::vector<KernelFamily> matern_families(int s) {
  return std::vector<KernelFamily>(static_cast<std::size_t>(s), KernelFamily::Matern52);
}

CorrelationKernel sqexp(int d, double th) {
  return {KernelFamily::SquaredExponential, Eigen::VectorXd::Constant(d, th)};
}
CorrelationKernel matern(int d, double th) {
  return {KernelFamily::Matern52, Eigen::VectorXd::Constant(d, th)};
}

FitOptions desk_fit(std::uint64_t seed) {
  FitOptions o;
  o.n_starts = 4;
  o.sweeps = 2;
  o.line_evals = 10;
  o.seed = seed;
  return o;
}

// Small sampler profile so batch cases stay desk-scale.
MfBatchConfig desk_batch(std::uint64_t seed) {
  MfBatchConfig cfg;
  cfg.batch.mh.n_samples = 600;
  cfg.batch.mh.burn_in = 100;
  cfg.batch.mh.seed = seed;
  cfg.batch.thin_limit = 300;
  cfg.batch.full_scan_limit = 4;
  cfg.batch.scan_points = 3;
  return cfg;
}

Eigen::VectorXd random_point(int d, Rng& rng) {
  Eigen::VectorXd x(d);
  for (int k = 0; k < d; ++k) x(k) = uniform01(rng);
  return x;
}

// A fitted two-level model over the standard coarse/fine pair.
struct Fitted {
  MultiFidelityData data;
  CokrigingModel model;
};

Fitted fitted_two_level(int n0, int n1, int d, std::uint64_t seed) {
  Fitted f{nested_stack({n0, n1}, d, seed, {f_coarse, f_fine}), {}};
  f.model = fit_cokriging(f.data, const_trends(d, 2), matern_families(2), desk_fit(seed));
  return f;
}

SequentialState two_level_state(int n0, int n1, int d, std::uint64_t seed,
                                std::optional<TestSet> test_set = std::nullopt) {
  MultiFidelityData data = nested_stack({n0, n1}, d, seed, {f_coarse, f_fine});
  return make_sequential_state(std::move(data), const_trends(d, 2), matern_families(2),
                               {f_coarse, f_fine}, desk_fit(seed), std::move(test_set));
}

long long entry_cost(const LogEntry& e, const CostModel& cost) {
  long long c = 0;
  for (int l : e.levels) c += cost.t[static_cast<std::size_t>(l)];
  return c;
}

}  // namespace

TEST_SUITE("mf_sequential") {

TEST_CASE("cost model arithmetic and the nested-run identity") {
  const CostModel cost = make_cost_model({1, 10}, 120);
  CHECK(cost_ratio(cost, 1) == 10.0);
  CHECK(nested_point_cost(cost, 0) == 1);
  CHECK(nested_point_cost(cost, 1) == 11);

  // Ten fine points drag ten coarse companions along: 10*1 + 10*(1+10).
  Allocation alloc;
  alloc.q = Eigen::Vector2i(10, 10);
  CHECK(allocation_cost(alloc, cost) == 120);
  alloc.q = Eigen::Vector2i(120, 0);
  CHECK(allocation_cost(alloc, cost) == 120);

  CHECK_THROWS_AS((void)make_cost_model({}, 10), ArgumentError);
  CHECK_THROWS_AS((void)make_cost_model({0, 5}, 10), ArgumentError);
  CHECK_THROWS_AS((void)make_cost_model({3, 3}, 10), ArgumentError);
  CHECK_THROWS_AS((void)make_cost_model({5, 3}, 10), ArgumentError);
  CHECK_THROWS_AS((void)make_cost_model({1, 10}, 0), ArgumentError);
  CHECK_THROWS_AS((void)cost_ratio(cost, 0), ArgumentError);
  CHECK_THROWS_AS((void)cost_ratio(cost, 2), ArgumentError);
  CHECK_THROWS_AS((void)nested_point_cost(cost, -1), ArgumentError);
  CHECK_THROWS_AS((void)nested_point_cost(cost, 2), ArgumentError);
  Allocation bad;
  bad.q = Eigen::Vector3i(1, 1, 1);
  CHECK_THROWS_AS((void)allocation_cost(bad, cost), ArgumentError);
  bad.q = Eigen::Vector2i(-1, 2);
  CHECK_THROWS_AS((void)allocation_cost(bad, cost), ArgumentError);
}

TEST_CASE("imse_red weights bias variance by scale chains and kernel volumes") {
  const int d = 2;
  Rng rng(make_rng(5151));

  // One level: the reduction proxy is the kriging variance times the kernel
  // volume, exactly.
  MultiFidelityData one = nested_stack({10}, d, 600, {f_coarse});
  const CokrigingModel m1 =
      make_cokriging(one, const_trends(d, 1), {matern(d, 0.8)});
  for (int rep = 0; rep < 5; ++rep) {
    const Eigen::VectorXd x = random_point(d, rng);
    CHECK(imse_red(m1, x, 0) == level_variance(m1, x, 0) * m1.base.kernel.theta.prod());
  }

  MultiFidelityData two = nested_stack({12, 6}, d, 601, {f_coarse, f_fine});
  const CokrigingModel m2 =
      make_cokriging(two, const_trends(d, 2), {matern(d, 0.8), sqexp(d, 0.5)});
  const double rho = m2.upper[0].rho;
  const double vol0 = m2.base.kernel.theta.prod();
  const double vol1 = m2.upper[0].kernel.theta.prod();
  for (int rep = 0; rep < 5; ++rep) {
    const Eigen::VectorXd x = random_point(d, rng);
    const double s0 = level_variance(m2, x, 0);
    const double s1 = level_variance(m2, x, 1);
    // Targeting the coarse level leaves the scale chain empty.
    CHECK(imse_red(m2, x, 0) == s0 * vol0);
    const double expected = s1 * vol1 + s0 * rho * rho * vol0;
    CHECK(imse_red(m2, x, 1) == doctest::Approx(expected).epsilon(1e-12));
  }

  // At a fine design point every bias variance is at round-off scale.
  const Eigen::VectorXd known = two.designs[1].row(2).transpose();
  const double scale = m2.base.sigma2_hat + m2.upper[0].sigma2 + 1.0;
  CHECK(imse_red(m2, known, 1) <= 1e-10 * scale);

  CHECK_THROWS_AS((void)imse_red(m2, Eigen::VectorXd::Zero(3), 1), ArgumentError);
  CHECK_THROWS_AS((void)imse_red(m2, Eigen::VectorXd::Zero(d), 2), ArgumentError);
  CHECK_THROWS_AS((void)imse_red(m2, Eigen::VectorXd::Zero(d), -1), ArgumentError);
}

TEST_CASE("increment ratios match the single-level diagnostics at the base level") {
  const Fitted f = fitted_two_level(11, 6, 1, 720);
  const MfAdjustment adj = make_mf_adjustment(f.model);
  REQUIRE(adj.ratios.size() == 2);
  REQUIRE(adj.factors.size() == 2);
  REQUIRE(adj.cells.size() == 2);

  // Level 0 of the stack is a plain kriging model; its increment ratios are
  // the single-level cross-validation ratios.
  const LoocvDiagnostics diag = loocv_diagnostics(f.model.base);
  REQUIRE(adj.ratios[0].size() == diag.ratios.size());
  for (int i = 0; i < diag.ratios.size(); ++i)
    CHECK(adj.ratios[0](i) == doctest::Approx(diag.ratios(i)).epsilon(1e-12));

  // Level 1 follows the correction formula entry by entry.
  const MfLoocvTable& table = adj.table;
  const Eigen::VectorXd& y1 = f.model.upper[0].y;
  const double range = y1.maxCoeff() - y1.minCoeff();
  const double maxabs = y1.cwiseAbs().maxCoeff();
  const double e2_floor = 1e-24 * range * range + 1e-28 * maxabs * maxabs;
  for (int i = 0; i < f.model.n(1); ++i) {
    const int par = f.model.parent[0](i);
    const double rho_r = table.rho_red[1](i);
    double err = table.errors[1](i);
    err -= rho_r * table.errors[0](par);
    double var = table.vars[1](i);
    var -= rho_r * rho_r * table.vars[0](par);
    const double num = err * err;
    double expected = 0.0;
    if (num > e2_floor) expected = std::min(num / var, detail::kRatioCap);
    CHECK(adj.ratios[1](i) == expected);
  }

  CHECK(adj.factors[0] == 1.0 + adj.ratios[0].sum());
  CHECK(adj.factors[1] == 1.0 + adj.ratios[1].sum());
}

TEST_CASE("increment ratios floor round-off, cap explosions, and reject bad tables") {
  const Fitted f = fitted_two_level(10, 5, 1, 721);
  const MfLoocvTable table = mf_loocv_table(f.model);

  // A genuine error over a vanishing variance increment is a diagnostics
  // failure, named by level and index.
  {
    MfLoocvTable doctored = table;
    doctored.errors[1](3) = 1.0;
    doctored.rho_red[1](3) = 0.0;
    doctored.vars[1](3) = 0.0;
    try {
      (void)mf_increment_ratios(f.model, doctored);
      FAIL("expected DiagnosticsError");
    } catch (const DiagnosticsError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("level 1") != std::string::npos);
      CHECK(msg.find("index 3") != std::string::npos);
    }
  }

  // A huge but finite ratio is capped, not propagated.
  {
    MfLoocvTable doctored = table;
    doctored.errors[1](2) = 1.0;
    doctored.rho_red[1](2) = 0.0;
    doctored.vars[1](2) = 1e-12;
    const std::vector<Eigen::VectorXd> ratios = mf_increment_ratios(f.model, doctored);
    CHECK(ratios[1](2) == detail::kRatioCap);
  }

  // Constant data at the only level: errors are round-off, every ratio
  // floors to zero and the adjustment is exactly neutral.
  {
    MultiFidelityData one = nested_stack({8}, 1, 722, {[](const Eigen::VectorXd&) {
      return 3.7;
    }});
    const CokrigingModel flat = make_cokriging(one, const_trends(1, 1), {matern(1, 0.8)});
    const MfAdjustment adj = make_mf_adjustment(flat);
    CHECK(adj.ratios[0].maxCoeff() == 0.0);
    CHECK(adj.factors[0] == 1.0);
    Rng rng(make_rng(723));
    for (int rep = 0; rep < 5; ++rep) {
      const Eigen::VectorXd x = random_point(1, rng);
      CHECK(imse_red_adj(flat, adj, x, 0) == imse_red(flat, x, 0));
    }
  }

  MfLoocvTable truncated = table;
  truncated.errors.pop_back();
  CHECK_THROWS_AS((void)mf_increment_ratios(f.model, truncated), ArgumentError);
  MfLoocvTable short_row = table;
  short_row.vars[1] = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS((void)mf_increment_ratios(f.model, short_row), ArgumentError);
}

TEST_CASE("adjusted variance inflates each level by its local cell ratio") {
  Rng rng(make_rng(801));

  // One level: exactly the single-model adjusted MSE.
  {
    MultiFidelityData one = nested_stack({10}, 2, 802, {f_coarse});
    const CokrigingModel m =
        fit_cokriging(one, const_trends(2, 1), matern_families(1), desk_fit(802));
    const MfAdjustment adj = make_mf_adjustment(m);
    const LoocvDiagnostics diag = loocv_diagnostics(m.base);
    const VoronoiPartition cells = make_voronoi(m.base.D);
    for (int rep = 0; rep < 10; ++rep) {
      const Eigen::VectorXd x = random_point(2, rng);
      CHECK(mf_adjusted_variance(m, adj, x, 0) ==
            doctest::Approx(adjusted_mse(m.base, diag, cells, x)).epsilon(1e-12));
      // The batch score only adds the volume factor.
      CHECK(mf_batch_score(m, adj, x, 0) ==
            mf_adjusted_variance(m, adj, x, 0) * m.base.kernel.theta.prod());
    }
  }

  // Two levels: never below the plain variance, and the adjusted reduction
  // proxy applies each level's global factor.
  {
    const Fitted f = fitted_two_level(11, 6, 1, 803);
    const MfAdjustment adj = make_mf_adjustment(f.model);
    const double rho = f.model.upper[0].rho;
    const double vol0 = f.model.base.kernel.theta.prod();
    const double vol1 = f.model.upper[0].kernel.theta.prod();
    for (int rep = 0; rep < 20; ++rep) {
      const Eigen::VectorXd x = random_point(1, rng);
      const double plain = mf_predict_var(f.model, x);
      CHECK(mf_adjusted_variance(f.model, adj, x, 1) >= plain * (1.0 - 1e-12));
      const double s0 = level_variance(f.model, x, 0);
      const double s1 = level_variance(f.model, x, 1);
      const double expected =
          s1 * adj.factors[1] * vol1 + s0 * adj.factors[0] * rho * rho * vol0;
      CHECK(imse_red_adj(f.model, adj, x, 1) == doctest::Approx(expected).epsilon(1e-12));
    }
    CHECK_THROWS_AS((void)mf_adjusted_variance(f.model, adj, Eigen::VectorXd::Zero(4), 1),
                    ArgumentError);
  }
}

TEST_CASE("one-point stepping degenerates to the single-level engine") {
  const int d = 1;
  const std::uint64_t seed = 4040;
  MultiFidelityData one = nested_stack({8}, d, seed, {f_coarse});
  Eigen::MatrixXd D = one.designs[0];
  Eigen::VectorXd y = one.outputs[0];

  SequentialState state =
      make_sequential_state(std::move(one), const_trends(d, 1), matern_families(1), {f_coarse},
                            desk_fit(seed));
  const CostModel cost = make_cost_model({1}, 100);
  const CandidateGrid grid = make_candidate_grid(d, 200, 9001);

  const TrendBasis trend{TrendKind::Constant, d};
  KrigingModel k = fit_kriging(D, y, trend, KernelFamily::Matern52, desk_fit(seed));
  for (int step = 0; step < 8; ++step) {
    const Selection sel = select_maxvar(k, grid);
    REQUIRE(step_one_point(state, MfCriterion::Plain, cost, grid));
    const LogEntry& e = state.log.back();
    REQUIRE(e.x.size() == d);
    for (int kk = 0; kk < d; ++kk) CHECK(e.x(kk) == sel.point(kk));
    CHECK(e.criterion == sel.value);
    CHECK(e.levels == std::vector<int>{0});
    CHECK(e.spent_time == step + 1);

    // Mirror the engine's refit: derived seed, previous length-scales warm.
    const Eigen::Index n = D.rows();
    D.conservativeResize(n + 1, Eigen::NoChange);
    D.row(n) = sel.point.transpose();
    y.conservativeResize(n + 1);
    y(n) = f_coarse(sel.point);
    FitOptions opts = desk_fit(seed);
    opts.seed = derive_seed(seed, static_cast<std::uint64_t>(step) + 1);
    opts.warm_theta = k.kernel.theta;
    k = fit_kriging(D, y, trend, KernelFamily::Matern52, opts);
    for (int kk = 0; kk < d; ++kk)
      CHECK(k.kernel.theta(kk) == state.model.base.kernel.theta(kk));
    CHECK(k.sigma2_hat == state.model.base.sigma2_hat);
  }
  CHECK(state.iteration == 8);
  CHECK(state.data.n(0) == 16);
}

TEST_CASE("the level walk routes effort by how much the cheap code explains") {
  const int d = 1;
  const CostModel cost = make_cost_model({1, 6}, 60);
  const CandidateGrid grid = make_candidate_grid(d, 300, 9002);

  // Strongly correlated pair: the fine code is a scaled coarse code plus a
  // small smooth bias, so most iterations should stay coarse.
  {
    const Fn coarse = [](const Eigen::VectorXd& x) { return std::sin(4.0 * x(0)) + 0.5 * x(0); };
    const Fn fine = [&](const Eigen::VectorXd& x) {
      return 2.0 * (std::sin(4.0 * x(0)) + 0.5 * x(0)) + 0.03 * std::sin(5.0 * x(0) + 1.0);
    };
    MultiFidelityData data = nested_stack({10, 5}, d, 910, {coarse, fine});
    SequentialState state = make_sequential_state(
        std::move(data), const_trends(d, 2), matern_families(2), {coarse, fine}, desk_fit(910));
    int steps = 0;
    int accurate = 0;
    while (steps < 14 && step_one_point(state, MfCriterion::Plain, cost, grid)) {
      ++steps;
      const LogEntry& e = state.log.back();
      if (!e.levels.empty() && e.levels.back() == 1) ++accurate;
      CHECK(e.spent_time == (state.log.size() >= 2
                                 ? state.log[state.log.size() - 2].spent_time
                                 : 0) + entry_cost(e, cost));
    }
    REQUIRE(steps >= 8);
    CHECK(accurate * 2 < steps);
  }

  // Unrelated pair: the coarse code is smooth (so it is learned quickly) but
  // explains nothing about the fine one, so the walk escalates to the
  // accurate code most of the time.
  {
    const Fn coarse = [](const Eigen::VectorXd& x) { return std::cos(2.0 * x(0) + 0.3); };
    const Fn fine = [](const Eigen::VectorXd& x) { return std::sin(4.0 * x(0)) + 0.5 * x(0); };
    MultiFidelityData data = nested_stack({10, 5}, d, 911, {coarse, fine});
    SequentialState state = make_sequential_state(
        std::move(data), const_trends(d, 2), matern_families(2), {coarse, fine}, desk_fit(911));
    int steps = 0;
    int accurate = 0;
    while (steps < 8 && step_one_point(state, MfCriterion::Plain, cost, grid)) {
      ++steps;
      if (state.log.back().levels.back() == 1) ++accurate;
    }
    REQUIRE(steps >= 6);
    CHECK(accurate * 2 > steps);
  }
}

TEST_CASE("budget allocation enumerates the exact-cost set and favors informative levels") {
  const Fitted f = fitted_two_level(10, 5, 1, 930);
  const MfAdjustment adj = make_mf_adjustment(f.model);
  const MfBatchConfig cfg = desk_batch(931);

  // t = (1, 4): a fine point costs 5 nested, so T = 12 admits q1 = 0, 1, 2.
  const CostModel cost = make_cost_model({1, 4}, 12);
  std::vector<AllocationScore> scores;
  const Allocation best = allocate_budget(f.model, adj, cost, 12, cfg, nullptr, &scores);
  REQUIRE(scores.size() == 3);
  double top_score = -1.0;
  int top_q0 = -1;
  for (const AllocationScore& s : scores) {
    CHECK(allocation_cost(s.alloc, cost) == 12);
    CHECK(s.score > 0.0);
    if (s.score > top_score || (s.score == top_score && s.alloc.q(0) > top_q0)) {
      top_score = s.score;
      top_q0 = s.alloc.q(0);
    }
  }
  const BatchPlan best_plan = plan_batch(f.model, adj, cost, best, cfg);
  CHECK(best_plan.score == top_score);
  CHECK(best.q(0) == top_q0);

  // Caller-supplied candidates are scored as given; a candidate violating
  // the identity is rejected.
  {
    std::vector<Allocation> pair(2);
    pair[0].q = Eigen::Vector2i(12, 0);
    pair[1].q = Eigen::Vector2i(2, 2);
    std::vector<AllocationScore> pair_scores;
    const Allocation chosen = allocate_budget(f.model, adj, cost, 12, cfg, &pair, &pair_scores);
    REQUIRE(pair_scores.size() == 2);
    CHECK((chosen.q == pair[0].q || chosen.q == pair[1].q));
    std::vector<Allocation> bad(1);
    bad[0].q = Eigen::Vector2i(1, 1);  // costs 6, not 12
    CHECK_THROWS_AS((void)allocate_budget(f.model, adj, cost, 12, cfg, &bad, nullptr),
                    ArgumentError);
  }

  // When the accurate level is an exact rescaling of the coarse one, every
  // unit of time is best spent on coarse runs.
  {
    const Fn coarse = [](const Eigen::VectorXd& x) { return std::sin(4.0 * x(0)) + 0.5 * x(0); };
    const Fn fine = [&](const Eigen::VectorXd& x) { return 2.0 * coarse(x); };
    MultiFidelityData data = nested_stack({10, 5}, 1, 932, {coarse, fine});
    const CokrigingModel scaled =
        fit_cokriging(data, const_trends(1, 2), matern_families(2), desk_fit(932));
    const MfAdjustment scaled_adj = make_mf_adjustment(scaled);
    const CostModel c2 = make_cost_model({1, 5}, 30);
    const Allocation all_coarse = allocate_budget(scaled, scaled_adj, c2, 30, desk_batch(933));
    CHECK(all_coarse.q(0) == 30);
    CHECK(all_coarse.q(1) == 0);
  }

  // No mix of nested run costs lands exactly on the budget.
  {
    const CostModel odd = make_cost_model({2, 5}, 3);
    CHECK_THROWS_AS((void)allocate_budget(f.model, adj, odd, 3, cfg), BudgetError);
  }
  CHECK_THROWS_AS((void)allocate_budget(f.model, adj, cost, 0, cfg), ArgumentError);
}

TEST_CASE("a batch of one coarse point is exactly the single-model batch criterion") {
  const Fitted f = fitted_two_level(10, 5, 1, 940);
  const MfBatchConfig cfg = desk_batch(941);

  // Baseline: batch adjusted-MSE selection on the coarse model alone, with
  // the seed the engine derives for level 0.
  BatchOptions baseline = cfg.batch;
  baseline.mh.seed = derive_seed(cfg.batch.mh.seed, 0);
  const LoocvDiagnostics diag = loocv_diagnostics(f.model.base);
  const Eigen::MatrixXd expected = select_batch_adjmmse(f.model.base, diag, 1, baseline);
  REQUIRE(expected.rows() == 1);

  SequentialState state = two_level_state(10, 5, 1, 940);
  REQUIRE(state.model.base.kernel.theta == f.model.base.kernel.theta);
  Allocation alloc;
  alloc.q = Eigen::Vector2i(1, 0);
  const CostModel cost = make_cost_model({1, 10}, 1);
  BatchPlan plan;
  step_batch(state, cost, cfg, alloc, &plan);

  REQUIRE(plan.points[0].rows() == 1);
  CHECK(plan.points[1].rows() == 0);
  CHECK((plan.points[0].row(0) - expected.row(0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(plan.conditioned_counts[0] == 10);
  CHECK(plan.conditioned_counts[1] == 5);
  CHECK(state.data.n(0) == 11);
  CHECK(state.data.n(1) == 5);
  CHECK(state.spent_time == 1);
  REQUIRE(state.log.size() == 1);
  CHECK(state.log[0].levels == std::vector<int>{0});
}

TEST_CASE("batch rounds honor the time identity and the nesting cascade") {
  SequentialState state = two_level_state(10, 5, 1, 950);
  const CostModel cost = make_cost_model({1, 10}, 43);
  Allocation alloc;
  alloc.q = Eigen::Vector2i(10, 3);  // 10*1 + 3*11 = 43
  BatchPlan plan;
  step_batch(state, cost, desk_batch(951), alloc, &plan);

  // Fine points are planned first against the untouched stack; the coarse
  // sampler then sees them as fantasy data.
  CHECK(plan.conditioned_counts[1] == 5);
  CHECK(plan.conditioned_counts[0] == 13);
  CHECK(plan.points[1].rows() == 3);
  CHECK(plan.points[0].rows() == 10);
  CHECK(plan.score > 0.0);

  CHECK(state.data.n(1) == 8);
  CHECK(state.data.n(0) == 23);
  CHECK(state.spent_time == 43);
  CHECK(state.iteration == 1);
  REQUIRE(state.log.size() == 13);
  long long total = 0;
  for (std::size_t i = 0; i < state.log.size(); ++i) {
    const LogEntry& e = state.log[i];
    CHECK(e.iteration == 1);
    CHECK(e.criterion == plan.score);
    CHECK(e.spent_time == 43);
    CHECK(std::isnan(e.nrmse));
    total += entry_cost(e, cost);
    if (i < 3) {
      CHECK(e.levels == std::vector<int>{0, 1});
    } else {
      CHECK(e.levels == std::vector<int>{0});
    }
  }
  CHECK(total == 43);

  // The fine rows really are nested: each planned fine point is now a row of
  // both designs.
  for (Eigen::Index r = 0; r < plan.points[1].rows(); ++r) {
    const Eigen::VectorXd x = plan.points[1].row(r).transpose();
    CHECK(mf_parent_index(state.data.designs[0], x) >= 0);
    CHECK(mf_parent_index(state.data.designs[1], x) >= 0);
  }

  Allocation wrong;
  wrong.q = Eigen::Vector2i(9, 3);  // costs 42
  CHECK_THROWS_AS(step_batch(state, cost, desk_batch(951), wrong), ArgumentError);
}

TEST_CASE("stepping stops at the budget and failures leave the state frozen") {
  const int d = 1;
  const CandidateGrid grid = make_candidate_grid(d, 150, 9003);

  // The budget is a hard stop for the one-point engine.
  {
    MultiFidelityData one = nested_stack({8}, d, 960, {f_coarse});
    SequentialState state = make_sequential_state(std::move(one), const_trends(d, 1),
                                                  matern_families(1), {f_coarse}, desk_fit(960));
    const CostModel cost = make_cost_model({1}, 3);
    CHECK(step_one_point(state, MfCriterion::Plain, cost, grid));
    CHECK(step_one_point(state, MfCriterion::Plain, cost, grid));
    CHECK(step_one_point(state, MfCriterion::Plain, cost, grid));
    CHECK_FALSE(step_one_point(state, MfCriterion::Plain, cost, grid));
    CHECK(state.iteration == 3);
    CHECK(state.spent_time == 3);
    CHECK(state.log.size() == 3);
  }

  // A failing simulator surfaces as RunError naming the level, and the state
  // is exactly as before the step.
  {
    MultiFidelityData one = nested_stack({8}, d, 961, {f_coarse});
    const Simulator boom = [](const Eigen::VectorXd&) -> double {
      throw std::runtime_error("pump failure");
    };
    SequentialState state = make_sequential_state(std::move(one), const_trends(d, 1),
                                                  matern_families(1), {boom}, desk_fit(961));
    const CostModel cost = make_cost_model({1}, 10);
    try {
      (void)step_one_point(state, MfCriterion::Plain, cost, grid);
      FAIL("expected RunError");
    } catch (const RunError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("level 0") != std::string::npos);
      CHECK(msg.find("pump failure") != std::string::npos);
    }
    CHECK(state.iteration == 0);
    CHECK(state.spent_time == 0);
    CHECK(state.data.n(0) == 8);
    CHECK(state.log.empty());
  }

  // Non-finite outputs are failures too.
  {
    MultiFidelityData one = nested_stack({8}, d, 962, {f_coarse});
    const Simulator nan_sim = [](const Eigen::VectorXd&) {
      return std::numeric_limits<double>::quiet_NaN();
    };
    SequentialState state = make_sequential_state(std::move(one), const_trends(d, 1),
                                                  matern_families(1), {nan_sim}, desk_fit(962));
    const CostModel cost = make_cost_model({1}, 10);
    try {
      (void)step_one_point(state, MfCriterion::Plain, cost, grid);
      FAIL("expected RunError");
    } catch (const RunError& e) {
      CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
    }
    CHECK(state.data.n(0) == 8);
  }
}

TEST_CASE("the iteration log lands on disk with physical coordinates") {
  const int d = 1;
  // A held-out accurate-code sample makes the error column live.
  const CandidateGrid test_grid = make_candidate_grid(d, 120, 9004);
  TestSet ts;
  ts.X = test_grid.points.topRows(30);
  ts.y.resize(30);
  for (int i = 0; i < 30; ++i) ts.y(i) = f_fine(ts.X.row(i).transpose());

  SequentialState state = two_level_state(10, 5, d, 970, ts);
  CHECK(std::isfinite(state_nrmse(state)));
  CHECK(state_nrmse(state) > 0.0);

  const CostModel cost = make_cost_model({1, 6}, 100);
  const CandidateGrid grid = make_candidate_grid(d, 150, 9005);
  REQUIRE(step_one_point(state, MfCriterion::Adjusted, cost, grid));
  REQUIRE(std::isfinite(state.log.back().nrmse));

  // Fabricate a two-level row to pin the separator format.
  LogEntry multi;
  multi.iteration = 99;
  multi.x = Eigen::VectorXd::Constant(d, 0.25);
  multi.levels = {0, 1};
  multi.criterion = 0.5;
  multi.spent_time = 77;
  multi.nrmse = std::numeric_limits<double>::quiet_NaN();
  state.log.push_back(multi);

  Eigen::MatrixXd bounds(d, 2);
  bounds << 2.0, 6.0;
  const std::string path = "mf_iteration_log_test.csv";
  save_iteration_log(state, path, bounds);

  std::ifstream in(path);
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(header == "iteration,x0,levels,criterion,spent_time,nrmse");
  std::vector<std::string> rows;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) rows.push_back(line);
  REQUIRE(rows.size() == state.log.size());

  // First row: the real step, coordinates mapped to [2, 6].
  {
    std::istringstream ss(rows[0]);
    std::string field;
    std::getline(ss, field, ',');
    CHECK(field == "1");
    std::getline(ss, field, ',');
    CHECK(std::stod(field) == doctest::Approx(2.0 + 4.0 * state.log[0].x(0)).epsilon(1e-14));
  }
  // Fabricated row: pipe-joined levels and a literal nan.
  CHECK(rows[1].find(",0|1,") != std::string::npos);
  CHECK(rows[1].find("nan") != std::string::npos);
  CHECK(rows[1].rfind("99,", 0) == 0);
  CHECK(rows[1].find(",77,") != std::string::npos);
  std::remove(path.c_str());

  CHECK_THROWS_AS(save_iteration_log(state, "/nonexistent-dir/log.csv", bounds), IoError);
  Eigen::MatrixXd bad(2, 2);
  bad << 0, 1, 0, 1;
  CHECK_THROWS_AS(save_iteration_log(state, path, bad), ArgumentError);
  Eigen::MatrixXd flat(d, 2);
  flat << 3.0, 3.0;
  CHECK_THROWS_AS(save_iteration_log(state, path, flat), ArgumentError);
}

TEST_CASE("interface rejections across the sequential engine") {
  MultiFidelityData data = nested_stack({10, 5}, 1, 980, {f_coarse, f_fine});

  // Simulator count and emptiness.
  CHECK_THROWS_AS((void)make_sequential_state(data, const_trends(1, 2), matern_families(2),
                                              {f_coarse}, desk_fit(980)),
                  ArgumentError);
  CHECK_THROWS_AS((void)make_sequential_state(data, const_trends(1, 2), matern_families(2),
                                              {f_coarse, Simulator{}}, desk_fit(980)),
                  ArgumentError);
  CHECK_THROWS_AS((void)make_sequential_state(data, const_trends(1, 2), matern_families(2),
                                              {f_coarse, f_fine}, desk_fit(980), std::nullopt,
                                              -1),
                  ArgumentError);

  // Test-set shape and normalizability.
  {
    TestSet bad;
    bad.X = Eigen::MatrixXd::Zero(4, 2);  // wrong dimension
    bad.y = Eigen::VectorXd::Zero(4);
    CHECK_THROWS_AS((void)make_sequential_state(data, const_trends(1, 2), matern_families(2),
                                                {f_coarse, f_fine}, desk_fit(980), bad),
                    ArgumentError);
    bad.X = Eigen::MatrixXd::Random(4, 1);
    bad.y = Eigen::VectorXd::Zero(3);  // wrong length
    CHECK_THROWS_AS((void)make_sequential_state(data, const_trends(1, 2), matern_families(2),
                                                {f_coarse, f_fine}, desk_fit(980), bad),
                    ArgumentError);
    bad.y = Eigen::VectorXd::Constant(4, 1.5);  // zero range
    CHECK_THROWS_AS((void)make_sequential_state(data, const_trends(1, 2), matern_families(2),
                                                {f_coarse, f_fine}, desk_fit(980), bad),
                    ArgumentError);
  }

  SequentialState state = make_sequential_state(data, const_trends(1, 2), matern_families(2),
                                                {f_coarse, f_fine}, desk_fit(980));
  CHECK(std::isnan(state_nrmse(state)));

  const CostModel cost = make_cost_model({1, 10}, 50);
  const CandidateGrid wrong_grid = make_candidate_grid(2, 150, 9006);
  CHECK_THROWS_AS((void)step_one_point(state, MfCriterion::Plain, cost, wrong_grid),
                  ArgumentError);
  const CostModel short_cost = make_cost_model({1}, 50);
  const CandidateGrid grid = make_candidate_grid(1, 150, 9007);
  CHECK_THROWS_AS((void)step_one_point(state, MfCriterion::Plain, short_cost, grid),
                  ArgumentError);

  const MfAdjustment adj = make_mf_adjustment(state.model);
  Allocation neg;
  neg.q = Eigen::Vector2i(-1, 1);
  CHECK_THROWS_AS((void)plan_batch(state.model, adj, cost, neg, desk_batch(981)), ArgumentError);

  CHECK(to_string(MfCriterion::Plain) == "plain");
  CHECK(to_string(MfCriterion::Adjusted) == "adjusted");
  CHECK(mf_criterion_from_string("plain") == MfCriterion::Plain);
  CHECK(mf_criterion_from_string("adjusted") == MfCriterion::Adjusted);
  CHECK_THROWS_AS((void)mf_criterion_from_string("maxvar"), ArgumentError);
}

}  // TEST_SUITE
