#include "krigseq/bench_problems.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <tuple>

#include "krigseq/criteria.hpp"
#include "krigseq/errors.hpp"
#include "krigseq/rng.hpp"

namespace krigseq {

namespace {

constexpr double kPi = std::numbers::pi;

// Names of the eight tank parameters, for error messages.
const char* const kTankParamNames[8] = {"P",     "R_int", "T_shell",    "T_cap",
                                        "E_shell", "E_cap", "sy_shell", "sy_cap"};

}  // namespace

double ackley(double x, double y) {
  const double radial = std::sqrt((x * x + y * y) / 2.0);
  const double wave = (std::cos(2.0 * kPi * x) + std::cos(2.0 * kPi * y)) / 2.0;
  return -20.0 * std::exp(-0.2 * radial) - std::exp(wave) + 20.0 + std::numbers::e;
}

double shubert(double x, double y) {
  double sx = 0.0;
  double sy = 0.0;
  for (int k = 1; k <= 5; ++k) {
    sx += k * std::cos((k + 1) * x + k);
    sy += k * std::cos((k + 1) * y + k);
  }
  return sx * sy;
}

double michalewicz(double x, double y) {
  return -std::sin(x) * std::pow(std::sin(x * x / kPi), 20.0) -
         std::sin(y) * std::pow(std::sin(y * y / kPi), 20.0);
}

const Domain& tank_domain() {
  static const Domain domain = [] {
    Eigen::VectorXd lo(8), hi(8);
    lo << 30.0, 1500.0, 300.0, 100.0, 63.0, 189.0, 200.0, 400.0;
    hi << 50.0, 2500.0, 500.0, 300.0, 77.0, 231.0, 300.0, 800.0;
    return Domain(lo, hi);
  }();
  return domain;
}

double tank_coarse(const Eigen::VectorXd& x) {
  if (x.size() != 8) {
    throw ArgumentError("tank_coarse: expected 8 parameters, got " +
                        std::to_string(x.size()));
  }
  const Domain& dom = tank_domain();
  for (int i = 0; i < 8; ++i) {
    const double lo = dom.lower()(i);
    const double hi = dom.upper()(i);
    const double slack = 1e-12 * (hi - lo);
    if (!(x(i) >= lo - slack && x(i) <= hi + slack)) {
      std::ostringstream msg;
      msg << "tank_coarse: parameter " << kTankParamNames[i] << " = " << x(i)
          << " outside [" << lo << ", " << hi << "]";
      throw DomainError(msg.str());
    }
  }
  const double p = x(0);
  const double r = x(1);
  const double outer = x(1) + x(2);
  const double cube_outer = outer * outer * outer;
  const double cube_inner = r * r * r;
  return 1.5 * cube_outer / (cube_outer - cube_inner) * p;
}

double TankSynthetic::feature(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd u = tank_domain().to_unit(x);
  double g = 0.0;
  for (Eigen::Index j = 0; j < omega.rows(); ++j) {
    g += amp(j) * std::cos(omega.row(j).dot(u) + phase(j));
  }
  // A fixed cap-thickness term guarantees the accurate response always
  // depends on T_cap, whatever the random feature draw.
  g += std::cos(3.0 * u(3) + 0.7);
  return g;
}

double TankSynthetic::operator()(const Eigen::VectorXd& x) const {
  const double coarse = tank_coarse(x);
  return a * coarse + b * (feature(x) - c0 - c1 * coarse);
}

TankSynthetic make_tank_synthetic(int response_id, double corr_target, std::uint64_t seed) {
  if (response_id < 1 || response_id > 3) {
    throw ArgumentError("make_tank_synthetic: response_id must be 1, 2, or 3, got " +
                        std::to_string(response_id));
  }
  if (!(corr_target > 0.0 && corr_target < 1.0)) {
    throw ArgumentError("make_tank_synthetic: corr_target must lie strictly in (0, 1)");
  }

  TankSynthetic syn;
  syn.corr_target = corr_target;

  // Random cosine features over the unit-scaled parameters. Only the first
  // four (P, R_int, T_shell, T_cap) carry nonzero frequencies: the accurate
  // tank response essentially depends on those four, and the fixed term in
  // feature() already pins the T_cap dependence. Draw order per feature:
  // four frequencies, then the phase, then the amplitude.
  constexpr int kFeatures = 16;
  constexpr int kActiveDims = 4;
  Rng feature_rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(response_id)));
  syn.omega = Eigen::MatrixXd::Zero(kFeatures, 8);
  syn.phase.resize(kFeatures);
  syn.amp.resize(kFeatures);
  for (int j = 0; j < kFeatures; ++j) {
    for (int m = 0; m < kActiveDims; ++m) {
      syn.omega(j, m) = -3.0 + 6.0 * uniform01(feature_rng);
    }
    syn.phase(j) = 2.0 * kPi * uniform01(feature_rng);
    syn.amp(j) = -1.0 + 2.0 * uniform01(feature_rng);
  }

  // Calibration sample: uniform over the physical domain.
  constexpr int kSample = 10000;
  Rng sample_rng = make_rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(response_id)));
  const Domain& dom = tank_domain();
  Eigen::VectorXd coarse_vals(kSample), g_vals(kSample);
  Eigen::VectorXd u(8);
  for (int i = 0; i < kSample; ++i) {
    for (int m = 0; m < 8; ++m) u(m) = uniform01(sample_rng);
    const Eigen::VectorXd x = dom.from_unit(u);
    coarse_vals(i) = tank_coarse(x);
    g_vals(i) = syn.feature(x);
  }

  const double mean_c = coarse_vals.mean();
  const double mean_g = g_vals.mean();
  const Eigen::VectorXd dc = coarse_vals.array() - mean_c;
  const Eigen::VectorXd dg = g_vals.array() - mean_g;
  const double var_c = dc.squaredNorm() / kSample;
  if (!(var_c > 0.0)) {
    throw ConstructionError(
        "make_tank_synthetic: coarse code constant over the calibration sample");
  }
  // Regress the feature sum on the coarse stress; the residual is the
  // empirically uncorrelated part whose amplitude sets the correlation.
  syn.c1 = dc.dot(dg) / dc.squaredNorm();
  syn.c0 = mean_g - syn.c1 * mean_c;
  const Eigen::VectorXd resid = dg - syn.c1 * dc;
  const double var_r = resid.squaredNorm() / kSample;
  if (!(var_r > 1e-16 * var_c)) {
    throw ConstructionError(
        "make_tank_synthetic: features are collinear with the coarse code; "
        "no residual left to set the correlation");
  }

  // corr(a*yc + b*r, yc) = a*sd_c / sqrt(a^2 var_c + b^2 var_r) when r is
  // orthogonal to yc, so this choice of b hits the target exactly on the
  // calibration sample.
  syn.a = 1.0;
  syn.b = std::sqrt(var_c / var_r) *
          std::sqrt(1.0 / (corr_target * corr_target) - 1.0);

  const Eigen::VectorXd fine = syn.a * coarse_vals + syn.b * resid;
  const double mean_f = fine.mean();
  const Eigen::VectorXd df = fine.array() - mean_f;
  const double var_f = df.squaredNorm() / kSample;
  syn.measured_corr = dc.dot(df) / (kSample * std::sqrt(var_c) * std::sqrt(var_f));
  if (!(std::abs(syn.measured_corr - corr_target) <= 0.02)) {
    std::ostringstream msg;
    msg << "make_tank_synthetic: calibration missed the target correlation ("
        << syn.measured_corr << " vs " << corr_target << ")";
    throw ConstructionError(msg.str());
  }
  return syn;
}

double tank_fine_synthetic(const Eigen::VectorXd& x, int response_id, double corr_target,
                           std::uint64_t seed) {
  using Key = std::tuple<int, std::uint64_t, std::uint64_t>;
  static std::mutex cache_mutex;
  static std::map<Key, TankSynthetic> cache;

  std::uint64_t corr_bits = 0;
  static_assert(sizeof(corr_bits) == sizeof(corr_target));
  std::memcpy(&corr_bits, &corr_target, sizeof(corr_bits));

  const TankSynthetic* syn = nullptr;
  {
    std::lock_guard<std::mutex> lock(cache_mutex);
    const Key key{response_id, corr_bits, seed};
    auto it = cache.find(key);
    if (it == cache.end()) {
      it = cache.emplace(key, make_tank_synthetic(response_id, corr_target, seed)).first;
    }
    syn = &it->second;  // node references are stable under later inserts
  }
  return (*syn)(x);
}

namespace {

BenchmarkProblem make_toy(const std::string& name, double (*fn)(double, double), double lo,
                          double hi) {
  Eigen::VectorXd lower = Eigen::VectorXd::Constant(2, lo);
  Eigen::VectorXd upper = Eigen::VectorXd::Constant(2, hi);
  BenchmarkProblem problem{name,
                           Domain(lower, upper),
                           {[fn](const Eigen::VectorXd& x) { return fn(x(0), x(1)); }},
                           make_cost_model({1}, 25),
                           1000,
                           fnv1a(name.c_str())};
  return problem;
}

BenchmarkProblem make_tank(const std::string& name, int response_id, double corr_target) {
  const std::uint64_t seed = fnv1a(name.c_str());
  TankSynthetic accurate = make_tank_synthetic(response_id, corr_target, seed);
  BenchmarkProblem problem{name,
                           tank_domain(),
                           {[](const Eigen::VectorXd& x) { return tank_coarse(x); },
                            [accurate](const Eigen::VectorXd& x) { return accurate(x); }},
                           make_cost_model({1, 10}, 120),
                           1000,
                           seed};
  return problem;
}

}  // namespace

std::vector<std::string> problem_names() {
  return {"ackley", "shubert", "michalewicz", "tank-r1", "tank-r2", "tank-r3"};
}

BenchmarkProblem get_problem(const std::string& name) {
  if (name == "ackley") return make_toy(name, ackley, -2.0, 2.0);
  if (name == "shubert") return make_toy(name, shubert, -2.0, 2.0);
  if (name == "michalewicz") return make_toy(name, michalewicz, 0.0, kPi);
  if (name == "tank-r1") return make_tank(name, 1, 0.99);
  if (name == "tank-r2") return make_tank(name, 2, 0.80);
  if (name == "tank-r3") return make_tank(name, 3, 0.45);
  std::ostringstream msg;
  msg << "unknown problem '" << name << "'; known problems:";
  for (const std::string& known : problem_names()) msg << " " << known;
  throw ConfigError(msg.str());
}

TestSet problem_test_set(const BenchmarkProblem& problem) {
  if (problem.test_size < 100) {
    throw ArgumentError("problem_test_set: test size must be at least 100, got " +
                        std::to_string(problem.test_size));
  }
  if (problem.levels.empty()) {
    throw ArgumentError("problem_test_set: problem has no code levels");
  }
  const CandidateGrid grid =
      make_candidate_grid(problem.domain.dim(), problem.test_size, problem.test_seed);
  TestSet ts;
  ts.X = grid.points;
  ts.y.resize(ts.X.rows());
  const Evaluator& truth = problem.levels.back();
  for (Eigen::Index i = 0; i < ts.X.rows(); ++i) {
    ts.y(i) = truth(problem.domain.from_unit(ts.X.row(i).transpose()));
    if (!std::isfinite(ts.y(i))) {
      throw RunError("problem_test_set: non-finite truth output at test row " +
                     std::to_string(i));
    }
  }
  return ts;
}

double normalized_rmse(const Evaluator& pred, const Evaluator& truth,
                       const Eigen::MatrixXd& X) {
  if (X.rows() < 2) {
    throw ArgumentError("normalized_rmse: need at least 2 test points, got " +
                        std::to_string(X.rows()));
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  double sq = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const Eigen::VectorXd x = X.row(i).transpose();
    const double t = truth(x);
    const double diff = pred(x) - t;
    sq += diff * diff;
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  const double range = hi - lo;
  if (!(range > 0.0)) {
    throw ArgumentError(
        "normalized_rmse: truth is constant over the test set (zero output range)");
  }
  return std::sqrt(sq / static_cast<double>(X.rows())) / range;
}

}  // namespace krigseq
