#include "krigseq/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <utility>

#include "krigseq/criteria.hpp"
#include "krigseq/design_gen.hpp"
#include "krigseq/errors.hpp"
#include "krigseq/kriging.hpp"
#include "krigseq/loocv.hpp"
#include "krigseq/mf_sequential.hpp"
#include "krigseq/parallel.hpp"
#include "krigseq/rng.hpp"

namespace krigseq {

namespace {

constexpr const char* kToolVersion = "0.1.0";

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double ms_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

// How each campaign runs: a plain-kriging loop on the accurate code, the
// multi-fidelity one-point engine, or multi-fidelity batch rounds.
enum class RunPath { SingleLevel, MfOnePoint, MfBatch };

struct Resolved {
  ExperimentConfig cfg;
  BenchmarkProblem problem;
  RunPath path = RunPath::SingleLevel;
  CriterionKind single_criterion = CriterionKind::MaxVar;
  MfCriterion mf_criterion = MfCriterion::Plain;
  TrendKind trend_kind = TrendKind::Constant;
  KernelFamily family = KernelFamily::Matern52;
};

// The maximum-likelihood profile every harness refit uses: a few starts and
// short line searches keep replicated campaigns tractable while staying on
// the same optimizer code path as a full fit.
FitOptions harness_fit(std::uint64_t seed) {
  FitOptions fit;
  fit.n_starts = 4;
  fit.sweeps = 2;
  fit.line_evals = 10;
  fit.seed = seed;
  return fit;
}

Resolved resolve_full(const ExperimentConfig& in) {
  Resolved r{in, get_problem(in.problem)};
  ExperimentConfig& cfg = r.cfg;
  const int s = static_cast<int>(r.problem.levels.size());
  const int d = r.problem.domain.dim();

  // Surrogate and mode fix the run path.
  if (cfg.surrogate.empty() || cfg.surrogate == "auto") {
    cfg.surrogate = s == 1 ? "kriging" : "cokriging";
  }
  if (cfg.surrogate != "kriging" && cfg.surrogate != "cokriging") {
    throw ConfigError("config: surrogate must be auto, kriging, or cokriging, got '" +
                      cfg.surrogate + "'");
  }
  if (cfg.surrogate == "cokriging" && s == 1) {
    throw ConfigError("config: problem '" + cfg.problem +
                      "' has a single code level; cokriging needs at least two");
  }
  if (cfg.mode != "one-point" && cfg.mode != "batch") {
    throw ConfigError("config: mode must be one-point or batch, got '" + cfg.mode + "'");
  }
  if (cfg.mode == "batch") {
    if (cfg.surrogate == "kriging" && s > 1) {
      throw ConfigError(
          "config: the accurate-code-only baseline runs one point at a time; "
          "batch mode needs the cokriging surrogate");
    }
    r.path = RunPath::MfBatch;
  } else {
    r.path = cfg.surrogate == "kriging" && s > 1 ? RunPath::SingleLevel
             : s == 1                            ? RunPath::SingleLevel
                                                 : RunPath::MfOnePoint;
  }
  // A single-level problem in batch mode still runs through the
  // multi-fidelity engine (it degenerates cleanly); everything else
  // single-level goes through the plain loop.
  if (s == 1 && cfg.mode == "one-point") r.path = RunPath::SingleLevel;

  try {
    r.trend_kind = trend_kind_from_string(cfg.trend);
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("config: trend: ") + e.what());
  }
  try {
    r.family = kernel_family_from_string(cfg.kernel);
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("config: kernel: ") + e.what());
  }

  // Criterion names live in two registries; each path accepts one of them.
  switch (r.path) {
    case RunPath::SingleLevel: {
      if (cfg.criterion.empty()) cfg.criterion = "maxvar";
      try {
        r.single_criterion = criterion_from_string(cfg.criterion);
      } catch (const ArgumentError&) {
        throw ConfigError("config: criterion '" + cfg.criterion +
                          "' is not a single-model criterion "
                          "(maxvar, minimse, kleicrit, adjmmse)");
      }
      break;
    }
    case RunPath::MfOnePoint: {
      if (cfg.criterion.empty()) cfg.criterion = "plain";
      try {
        r.mf_criterion = mf_criterion_from_string(cfg.criterion);
      } catch (const ArgumentError&) {
        throw ConfigError("config: criterion '" + cfg.criterion +
                          "' is not a multi-fidelity criterion (plain, adjusted)");
      }
      break;
    }
    case RunPath::MfBatch: {
      if (cfg.criterion.empty()) cfg.criterion = "adjusted";
      if (cfg.criterion != "adjusted") {
        throw ConfigError(
            "config: batch rounds rank points with the adjusted criterion; "
            "criterion must be 'adjusted', got '" + cfg.criterion + "'");
      }
      r.mf_criterion = MfCriterion::Adjusted;
      break;
    }
  }

  if (cfg.replicates < 1) {
    throw ConfigError("config: replicates must be at least 1, got " +
                      std::to_string(cfg.replicates));
  }

  // Initial design sizes, one entry per level the run actually uses.
  const int p = TrendBasis{r.trend_kind, d}.size();
  if (r.path == RunPath::SingleLevel) {
    if (cfg.initial_design.empty()) {
      cfg.initial_design = {s == 1 ? 10 : 12};
    }
    if (cfg.initial_design.size() != 1) {
      throw ConfigError(
          "config: the accurate-code-only run takes a single initial design size, got " +
          std::to_string(cfg.initial_design.size()) + " entries");
    }
  } else {
    if (cfg.initial_design.empty()) {
      cfg.initial_design.assign(s, 0);
      cfg.initial_design[s - 1] = 10;
      for (int l = s - 2; l >= 0; --l) cfg.initial_design[l] = 2 * cfg.initial_design[l + 1];
    }
    if (static_cast<int>(cfg.initial_design.size()) != s) {
      throw ConfigError("config: initial_design needs one size per level (" +
                        std::to_string(s) + "), got " +
                        std::to_string(cfg.initial_design.size()));
    }
    for (int l = 0; l + 1 < s; ++l) {
      if (cfg.initial_design[l] < cfg.initial_design[l + 1]) {
        throw ConfigError(
            "config: initial_design must be nonincreasing toward the accurate level "
            "(each design nests the next)");
      }
    }
  }
  for (int n0 : cfg.initial_design) {
    if (n0 < p + 2) {
      throw ConfigError("config: every initial design needs at least " +
                        std::to_string(p + 2) + " points for the " + cfg.trend +
                        " trend, got " + std::to_string(n0));
    }
  }

  if (cfg.budget < 0) cfg.budget = r.problem.cost.T;

  if (!cfg.q.empty()) {
    if (r.path != RunPath::MfBatch) {
      throw ConfigError("config: q applies to batch mode only");
    }
    if (static_cast<int>(cfg.q.size()) != s) {
      throw ConfigError("config: q needs one count per level (" + std::to_string(s) +
                        "), got " + std::to_string(cfg.q.size()));
    }
    long long total = 0;
    for (int qi : cfg.q) {
      if (qi < 0) throw ConfigError("config: q entries must be nonnegative");
      total += qi;
    }
    if (total == 0) throw ConfigError("config: q must request at least one point");
  }

  if (cfg.test_size < 0) cfg.test_size = r.problem.test_size;
  if (cfg.test_size < 100) {
    throw ConfigError("config: test_size must be at least 100, got " +
                      std::to_string(cfg.test_size));
  }
  if (cfg.grid_size < 0) cfg.grid_size = std::min(default_grid_size(d), 4000);
  if (cfg.grid_size < 100) {
    throw ConfigError("config: grid_size must be at least 100, got " +
                      std::to_string(cfg.grid_size));
  }

  if (cfg.mh.burn_in < 0 || cfg.mh.burn_in >= cfg.mh.n_samples) {
    throw ConfigError("config: mh.burn_in must be nonnegative and below mh.n_samples");
  }
  if (!(cfg.mh.target_acceptance > 0.0 && cfg.mh.target_acceptance < 1.0)) {
    throw ConfigError("config: mh.target_acceptance must lie in (0, 1)");
  }
  if (!(cfg.mh.proposal_std > 0.0)) {
    throw ConfigError("config: mh.proposal_std must be positive");
  }
  if (cfg.mh.adapt_interval < 1) {
    throw ConfigError("config: mh.adapt_interval must be at least 1");
  }
  if (cfg.output_dir.empty()) {
    throw ConfigError("config: output_dir must not be empty");
  }
  cfg.mh.seed = 0;  // always derived per replicate and round
  return r;
}

double nrmse_single(const KrigingModel& model, const TestSet& ts) {
  const double range = ts.y.maxCoeff() - ts.y.minCoeff();
  if (!(range > 0.0)) {
    throw RunError("test set has zero output range; NRMSE is undefined");
  }
  const Eigen::VectorXd pred = predict_mean_batch(model, ts.X);
  return std::sqrt((pred - ts.y).squaredNorm() / static_cast<double>(ts.y.size())) / range;
}

// Plain-kriging campaign on the problem's accurate code: LHS initial design,
// grid selection under the configured criterion, one accurate run per step.
void single_level_replicate(const Resolved& r, const TestSet& ts, int rep,
                            std::vector<RunRecord>& records,
                            std::chrono::steady_clock::time_point start) {
  const ExperimentConfig& cfg = r.cfg;
  const Domain& dom = r.problem.domain;
  const int d = dom.dim();
  const int top = static_cast<int>(r.problem.levels.size()) - 1;
  const Evaluator& truth = r.problem.levels.back();
  const long long run_cost = r.problem.cost.t.back();
  const std::uint64_t rep_seed = derive_seed(cfg.master_seed, static_cast<std::uint64_t>(rep));

  const int n0 = cfg.initial_design[0];
  Eigen::MatrixXd D = lhs_maximin(n0, d, 500, derive_seed(rep_seed, 0)).points;
  Eigen::VectorXd y(n0);
  for (int i = 0; i < n0; ++i) {
    y(i) = truth(dom.from_unit(D.row(i).transpose()));
    if (!std::isfinite(y(i))) {
      throw RunError("initial design: non-finite output at point " + std::to_string(i));
    }
  }
  const TrendBasis trend{r.trend_kind, d};
  KrigingModel model =
      fit_kriging(D, y, trend, r.family, harness_fit(derive_seed(rep_seed, 1)));

  RunRecord rec0;
  rec0.replicate = rep;
  rec0.iteration = 0;
  rec0.criterion_value = std::numeric_limits<double>::quiet_NaN();
  rec0.spent_time = 0;
  rec0.nrmse = nrmse_single(model, ts);
  rec0.accurate_fraction = 1.0;
  rec0.wall_ms = ms_since(start);
  records.push_back(rec0);

  long long spent = 0;
  int iter = 0;
  while (spent + run_cost <= cfg.budget) {
    ++iter;
    Selection sel;
    switch (r.single_criterion) {
      case CriterionKind::MaxVar: {
        const CandidateGrid grid =
            make_candidate_grid(d, cfg.grid_size, derive_seed(rep_seed, 200 + iter));
        sel = select_maxvar(model, grid);
        break;
      }
      case CriterionKind::MinImse: {
        const CandidateGrid grid =
            make_candidate_grid(d, cfg.grid_size, derive_seed(rep_seed, 200 + iter));
        sel = select_min_imse(model, grid);
        break;
      }
      case CriterionKind::KleiCrit: {
        sel = select_kleicrit(model, kleicrit_candidates(d, derive_seed(rep_seed, 400 + iter)));
        break;
      }
      case CriterionKind::AdjMmse: {
        const CandidateGrid grid =
            make_candidate_grid(d, cfg.grid_size, derive_seed(rep_seed, 200 + iter));
        sel = select_adjmmse(model, loocv_diagnostics(model), grid);
        break;
      }
    }
    const double y_new = truth(dom.from_unit(sel.point));
    if (!std::isfinite(y_new)) {
      throw RunError("accurate code returned a non-finite value at iteration " +
                     std::to_string(iter));
    }
    D.conservativeResize(D.rows() + 1, Eigen::NoChange);
    D.row(D.rows() - 1) = sel.point.transpose();
    y.conservativeResize(y.size() + 1);
    y(y.size() - 1) = y_new;
    spent += run_cost;

    FitOptions refit = harness_fit(derive_seed(rep_seed, 300 + iter));
    refit.warm_theta = model.kernel.theta;
    model = fit_kriging(D, y, trend, r.family, refit);

    RunRecord rec;
    rec.replicate = rep;
    rec.iteration = iter;
    rec.x = sel.point;
    rec.levels = {top};
    rec.criterion_value = sel.value;
    rec.spent_time = spent;
    rec.nrmse = nrmse_single(model, ts);
    rec.accurate_fraction = 1.0;  // every run here is an accurate run
    rec.wall_ms = ms_since(start);
    records.push_back(rec);
  }
}

// Multi-fidelity campaign (one-point or batch) through the sequential engine.
void mf_replicate(const Resolved& r, const TestSet& ts, int rep,
                  std::vector<RunRecord>& records,
                  std::chrono::steady_clock::time_point start) {
  const ExperimentConfig& cfg = r.cfg;
  const Domain& dom = r.problem.domain;
  const int d = dom.dim();
  const int s = static_cast<int>(r.problem.levels.size());
  const std::uint64_t rep_seed = derive_seed(cfg.master_seed, static_cast<std::uint64_t>(rep));

  // Nested initial designs, accurate level drawn first, each coarser level
  // wrapping the previous one.
  std::vector<Eigen::MatrixXd> designs(s);
  designs[s - 1] =
      lhs_maximin(cfg.initial_design[s - 1], d, 500, derive_seed(rep_seed, 0)).points;
  for (int l = s - 2; l >= 0; --l) {
    designs[l] = nested_pair(designs[l + 1], cfg.initial_design[l],
                             derive_seed(rep_seed, 10 + static_cast<std::uint64_t>(l)));
  }
  std::vector<Eigen::VectorXd> outputs(s);
  long long runs_total = 0;
  long long runs_accurate = 0;
  for (int l = 0; l < s; ++l) {
    outputs[l].resize(designs[l].rows());
    for (Eigen::Index i = 0; i < designs[l].rows(); ++i) {
      outputs[l](i) = r.problem.levels[l](dom.from_unit(designs[l].row(i).transpose()));
      if (!std::isfinite(outputs[l](i))) {
        throw RunError("initial design: non-finite output at level " + std::to_string(l) +
                       ", point " + std::to_string(i));
      }
    }
    runs_total += designs[l].rows();
  }
  runs_accurate = designs[s - 1].rows();

  std::vector<TrendBasis> trends(s, TrendBasis{r.trend_kind, d});
  std::vector<KernelFamily> families(s, r.family);
  std::vector<Simulator> simulators;
  simulators.reserve(s);
  for (int l = 0; l < s; ++l) {
    const Evaluator& level = r.problem.levels[l];
    simulators.push_back(
        [&level, &dom](const Eigen::VectorXd& u) { return level(dom.from_unit(u)); });
  }

  SequentialState state = make_sequential_state(
      make_mf_data(designs, outputs), trends, families, simulators,
      harness_fit(derive_seed(rep_seed, 1)), ts, 0);

  const auto fraction = [&]() {
    return static_cast<double>(runs_accurate) / static_cast<double>(runs_total);
  };

  RunRecord rec0;
  rec0.replicate = rep;
  rec0.iteration = 0;
  rec0.criterion_value = std::numeric_limits<double>::quiet_NaN();
  rec0.spent_time = 0;
  rec0.nrmse = state_nrmse(state);
  rec0.accurate_fraction = fraction();
  rec0.wall_ms = ms_since(start);
  records.push_back(rec0);

  const auto absorb_entry = [&](const LogEntry& entry) {
    runs_total += static_cast<long long>(entry.levels.size());
    if (!entry.levels.empty() && entry.levels.back() == s - 1) ++runs_accurate;
    RunRecord rec;
    rec.replicate = rep;
    rec.iteration = entry.iteration;
    rec.x = entry.x;
    rec.levels = entry.levels;
    rec.criterion_value = entry.criterion;
    rec.spent_time = entry.spent_time;
    rec.nrmse = entry.nrmse;
    rec.accurate_fraction = fraction();
    rec.wall_ms = ms_since(start);
    records.push_back(rec);
  };

  if (r.path == RunPath::MfOnePoint) {
    if (cfg.budget <= 0) return;
    const CostModel cost = make_cost_model(r.problem.cost.t, cfg.budget);
    int iter = 0;
    while (true) {
      const CandidateGrid grid =
          make_candidate_grid(d, cfg.grid_size, derive_seed(rep_seed, 200 + iter + 1));
      if (!step_one_point(state, r.mf_criterion, cost, grid)) break;
      ++iter;
      absorb_entry(state.log.back());
    }
    return;
  }

  // Batch rounds. A fixed q sets the round cost through the nested-run
  // identity; otherwise the round budget is the problem's T and the
  // allocation is searched each round.
  Allocation fixed;
  long long round_cost = r.problem.cost.T;
  if (!cfg.q.empty()) {
    fixed.q.resize(s);
    for (int l = 0; l < s; ++l) fixed.q(l) = cfg.q[l];
    round_cost = allocation_cost(fixed, make_cost_model(r.problem.cost.t,
                                                        std::max<long long>(1, cfg.budget)));
  }
  int round = 0;
  while (state.spent_time + round_cost <= cfg.budget) {
    const CostModel cost = make_cost_model(r.problem.cost.t, round_cost);
    MfBatchConfig mcfg;
    mcfg.batch.mh = cfg.mh;
    mcfg.batch.mh.seed = derive_seed(rep_seed, 500 + static_cast<std::uint64_t>(round));
    const std::size_t before = state.log.size();
    if (cfg.q.empty()) {
      step_batch(state, cost, mcfg);
    } else {
      step_batch(state, cost, mcfg, fixed);
    }
    for (std::size_t i = before; i < state.log.size(); ++i) absorb_entry(state.log[i]);
    ++round;
  }
}

ReplicateResult run_replicate(const Resolved& r, const TestSet& ts, int rep) {
  ReplicateResult result;
  result.replicate = rep;
  const auto start = std::chrono::steady_clock::now();
  try {
    if (r.path == RunPath::SingleLevel) {
      single_level_replicate(r, ts, rep, result.records, start);
    } else {
      mf_replicate(r, ts, rep, result.records, start);
    }
  } catch (const std::exception& e) {
    result.failed = true;
    result.reason = e.what();
  } catch (...) {
    result.failed = true;
    result.reason = "unknown error";
  }
  return result;
}

nlohmann::ordered_json config_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["problem"] = c.problem;
  j["criterion"] = c.criterion;
  j["mode"] = c.mode;
  j["surrogate"] = c.surrogate;
  j["q"] = c.q;
  j["replicates"] = c.replicates;
  j["initial_design"] = c.initial_design;
  j["budget"] = c.budget;
  j["test_size"] = c.test_size;
  j["grid_size"] = c.grid_size;
  j["master_seed"] = c.master_seed;
  j["mh"] = nlohmann::ordered_json{{"n_samples", c.mh.n_samples},
                                   {"burn_in", c.mh.burn_in},
                                   {"proposal_std", c.mh.proposal_std},
                                   {"target_acceptance", c.mh.target_acceptance},
                                   {"adapt_interval", c.mh.adapt_interval}};
  j["trend"] = c.trend;
  j["kernel"] = c.kernel;
  j["output_dir"] = c.output_dir;
  return j;
}

void apply_config_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  static const std::set<std::string> known = {
      "problem",     "criterion",      "mode",        "surrogate", "q",
      "replicates",  "initial_design", "budget",      "test_size", "grid_size",
      "master_seed", "mh",             "trend",       "kernel",    "output_dir"};
  static const std::set<std::string> known_mh = {"n_samples", "burn_in", "proposal_std",
                                                 "target_acceptance", "adapt_interval"};
  for (const auto& item : j.items()) {
    if (known.find(item.key()) == known.end()) {
      throw ConfigError("config: unknown key '" + item.key() + "'");
    }
  }
  try {
    if (j.contains("problem")) c.problem = j.at("problem").get<std::string>();
    if (j.contains("criterion")) c.criterion = j.at("criterion").get<std::string>();
    if (j.contains("mode")) c.mode = j.at("mode").get<std::string>();
    if (j.contains("surrogate")) c.surrogate = j.at("surrogate").get<std::string>();
    if (j.contains("q")) c.q = j.at("q").get<std::vector<int>>();
    if (j.contains("replicates")) c.replicates = j.at("replicates").get<int>();
    if (j.contains("initial_design")) {
      c.initial_design = j.at("initial_design").get<std::vector<int>>();
    }
    if (j.contains("budget")) c.budget = j.at("budget").get<long long>();
    if (j.contains("test_size")) c.test_size = j.at("test_size").get<int>();
    if (j.contains("grid_size")) c.grid_size = j.at("grid_size").get<int>();
    if (j.contains("master_seed")) {
      const nlohmann::json& v = j.at("master_seed");
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        throw ConfigError("config: master_seed must be a nonnegative integer");
      }
      c.master_seed = v.get<std::uint64_t>();
    }
    if (j.contains("mh")) {
      const nlohmann::json& m = j.at("mh");
      if (!m.is_object()) throw ConfigError("config: mh must be an object");
      for (const auto& item : m.items()) {
        if (known_mh.find(item.key()) == known_mh.end()) {
          throw ConfigError("config: unknown key 'mh." + item.key() + "'");
        }
      }
      if (m.contains("n_samples")) c.mh.n_samples = m.at("n_samples").get<int>();
      if (m.contains("burn_in")) c.mh.burn_in = m.at("burn_in").get<int>();
      if (m.contains("proposal_std")) c.mh.proposal_std = m.at("proposal_std").get<double>();
      if (m.contains("target_acceptance")) {
        c.mh.target_acceptance = m.at("target_acceptance").get<double>();
      }
      if (m.contains("adapt_interval")) c.mh.adapt_interval = m.at("adapt_interval").get<int>();
    }
    if (j.contains("trend")) c.trend = j.at("trend").get<std::string>();
    if (j.contains("kernel")) c.kernel = j.at("kernel").get<std::string>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  } catch (const ConfigError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << content;
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  apply_config_json(j, c);
  return c;
}

std::string config_to_json(const ExperimentConfig& config) {
  return config_json(config).dump(2) + "\n";
}

ExperimentConfig resolve_config(const ExperimentConfig& config) {
  return resolve_full(config).cfg;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  const Resolved r = resolve_full(config);
  BenchmarkProblem sized = r.problem;
  sized.test_size = r.cfg.test_size;
  const TestSet ts = problem_test_set(sized);

  ExperimentResult out;
  out.config = r.cfg;
  out.replicates.resize(r.cfg.replicates);
  const auto start = std::chrono::steady_clock::now();
  par::for_index(r.cfg.replicates,
                 [&](std::ptrdiff_t i) { out.replicates[i] = run_replicate(r, ts, static_cast<int>(i)); });
  out.wall_ms = ms_since(start);
  return out;
}

double quantile_linear(std::vector<double> values, double p) {
  if (values.empty()) throw ArgumentError("quantile_linear: empty sample");
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ArgumentError("quantile_linear: p must lie in [0, 1]");
  }
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(h);
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<SummaryRow> summarize(const ExperimentResult& result) {
  // Last record per iteration per completed replicate (batch rounds write
  // several rows sharing an iteration; the round's snapshot is the last).
  std::map<int, std::vector<const RunRecord*>> by_iteration;
  for (const ReplicateResult& rep : result.replicates) {
    if (rep.failed) continue;
    std::map<int, const RunRecord*> last;
    for (const RunRecord& rec : rep.records) last[rec.iteration] = &rec;
    for (const auto& [iter, rec] : last) by_iteration[iter].push_back(rec);
  }
  std::vector<SummaryRow> rows;
  rows.reserve(by_iteration.size());
  for (const auto& [iter, recs] : by_iteration) {
    SummaryRow row;
    row.iteration = iter;
    std::vector<double> errs;
    errs.reserve(recs.size());
    double spent = 0.0, frac = 0.0, err = 0.0;
    for (const RunRecord* rec : recs) {
      spent += static_cast<double>(rec->spent_time);
      frac += rec->accurate_fraction;
      err += rec->nrmse;
      errs.push_back(rec->nrmse);
    }
    const double n = static_cast<double>(recs.size());
    row.spent_time = spent / n;
    row.mean_nrmse = err / n;
    row.q10_nrmse = quantile_linear(errs, 0.10);
    row.q90_nrmse = quantile_linear(errs, 0.90);
    row.mean_accurate_run_fraction = frac / n;
    rows.push_back(row);
  }
  return rows;
}

void emit_summary(const ExperimentResult& result, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory: " + dir + " (" + ec.message() + ")");

  // Point dimension for the coordinate columns (0 when nothing was added).
  Eigen::Index d = 0;
  for (const ReplicateResult& rep : result.replicates) {
    for (const RunRecord& rec : rep.records) d = std::max(d, rec.x.size());
  }

  std::string records_csv = "# krigseq records schema " +
                            std::to_string(kRecordSchemaVersion) + "\n";
  records_csv += "replicate,iteration";
  for (Eigen::Index k = 0; k < d; ++k) records_csv += ",x" + std::to_string(k);
  records_csv += ",levels,criterion,spent_time,nrmse,accurate_run_fraction\n";
  for (const ReplicateResult& rep : result.replicates) {
    for (const RunRecord& rec : rep.records) {
      records_csv += std::to_string(rec.replicate);
      records_csv += "," + std::to_string(rec.iteration);
      for (Eigen::Index k = 0; k < d; ++k) {
        records_csv += ",";
        if (rec.x.size() > 0) records_csv += fmt_double(rec.x(k));
      }
      records_csv += ",";
      for (std::size_t i = 0; i < rec.levels.size(); ++i) {
        if (i > 0) records_csv += "|";
        records_csv += std::to_string(rec.levels[i]);
      }
      records_csv += ",";
      records_csv += fmt_double(rec.criterion_value);
      records_csv += "," + std::to_string(rec.spent_time);
      records_csv += ",";
      records_csv += fmt_double(rec.nrmse);
      records_csv += ",";
      records_csv += fmt_double(rec.accurate_fraction);
      records_csv += "\n";
    }
  }
  write_file(fs::path(dir) / "records.csv", records_csv);

  std::string summary_csv = "# krigseq summary schema " +
                            std::to_string(kRecordSchemaVersion) + "\n";
  summary_csv += "iteration,spent_time,mean_nrmse,q10_nrmse,q90_nrmse,mean_accurate_run_fraction\n";
  for (const SummaryRow& row : summarize(result)) {
    summary_csv += std::to_string(row.iteration);
    summary_csv += ",";
    summary_csv += fmt_double(row.spent_time);
    summary_csv += ",";
    summary_csv += fmt_double(row.mean_nrmse);
    summary_csv += ",";
    summary_csv += fmt_double(row.q10_nrmse);
    summary_csv += ",";
    summary_csv += fmt_double(row.q90_nrmse);
    summary_csv += ",";
    summary_csv += fmt_double(row.mean_accurate_run_fraction);
    summary_csv += "\n";
  }
  write_file(fs::path(dir) / "summary.csv", summary_csv);

  nlohmann::ordered_json manifest;
  manifest["schema"] = kRecordSchemaVersion;
  manifest["tool"] = nlohmann::ordered_json{{"name", "krigseq"},
                                            {"version", kToolVersion},
                                            {"record_schema", kRecordSchemaVersion}};
  manifest["config"] = config_json(result.config);
  std::vector<std::uint64_t> rep_seeds;
  rep_seeds.reserve(result.replicates.size());
  for (std::size_t i = 0; i < result.replicates.size(); ++i) {
    rep_seeds.push_back(derive_seed(result.config.master_seed, i));
  }
  manifest["replicate_seeds"] = rep_seeds;
  int completed = 0;
  nlohmann::ordered_json failures = nlohmann::ordered_json::array();
  std::size_t n_records = 0;
  for (const ReplicateResult& rep : result.replicates) {
    n_records += rep.records.size();
    if (rep.failed) {
      failures.push_back(nlohmann::ordered_json{{"replicate", rep.replicate},
                                                {"reason", rep.reason}});
    } else {
      ++completed;
    }
  }
  manifest["replicates"] =
      nlohmann::ordered_json{{"total", static_cast<int>(result.replicates.size())},
                             {"completed", completed},
                             {"failed", failures}};
  manifest["records"] = n_records;
  write_file(fs::path(dir) / "manifest.json", manifest.dump(2) + "\n");
}

ExperimentConfig config_from_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read manifest: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buffer.str());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest: " + std::string(e.what()));
  }
  if (!j.is_object() || !j.contains("schema") || !j.contains("config")) {
    throw ConfigError("manifest: missing schema or config: " + path);
  }
  if (j.at("schema").get<int>() != kRecordSchemaVersion) {
    throw ConfigError("manifest: unsupported schema version in " + path);
  }
  ExperimentConfig c;
  apply_config_json(j.at("config"), c);
  return c;
}

}  // namespace krigseq
