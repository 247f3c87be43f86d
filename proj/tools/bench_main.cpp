// Throughput comparison of the OpenMP batch kernels against their serial
// reference twins. Each kernel runs on the same fitted model and inputs in
// both lanes; the table reports wall times, the speedup, and the largest
// absolute discrepancy (zero for the slot-writer kernels, round-off for the
// blocked IMSE scan).

#include <CLI11.hpp>
#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "krigseq/bench_problems.hpp"
#include "krigseq/criteria.hpp"
#include "krigseq/design_gen.hpp"
#include "krigseq/kriging.hpp"
#include "krigseq/loocv.hpp"
#include "krigseq/parallel.hpp"
#include "krigseq/rng.hpp"
#include "krigseq/serial_ref.hpp"

using namespace krigseq;

namespace {

double time_ms(const std::function<void()>& work, int reps) {
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    work();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

void print_row(const std::string& name, double serial_ms, double parallel_ms, double max_diff) {
  std::printf("%-28s %10.2f %12.2f %8.2fx %12.3e\n", name.c_str(), serial_ms, parallel_ms,
              serial_ms / parallel_ms, max_diff);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"krigseq parallel-vs-serial kernel benchmark"};
  int n = 120;
  int m = 4000;
  int reps = 3;
  app.add_option("--n", n, "design size of the benchmark model")->check(CLI::Range(20, 2000));
  app.add_option("--m", m, "batch size (grid points)")->check(CLI::Range(200, 200000));
  app.add_option("--reps", reps, "timing repetitions (best of)")->check(CLI::Range(1, 20));
  CLI11_PARSE(app, argc, argv);

  std::printf("threads: %d   model: shubert surrogate, n = %d, d = 2   batch m = %d\n\n",
              par::max_threads(), n, m);

  const Eigen::MatrixXd D = lhs_maximin(n, 2, 300, 11).points;
  Eigen::VectorXd y(D.rows());
  for (Eigen::Index i = 0; i < D.rows(); ++i)
    y(i) = shubert(4.0 * D(i, 0) - 2.0, 4.0 * D(i, 1) - 2.0);
  FitOptions fit;
  fit.n_starts = 4;
  fit.sweeps = 2;
  fit.line_evals = 10;
  fit.seed = 77;
  const KrigingModel model = fit_kriging(D, y, TrendBasis{TrendKind::Constant, 2},
                                         KernelFamily::Matern52, fit);
  const CandidateGrid grid = make_candidate_grid(2, m, 5);

  std::printf("%-28s %10s %12s %9s %12s\n", "kernel", "serial ms", "parallel ms", "speedup",
              "max |diff|");

  {
    Eigen::VectorXd a, b;
    const double ts = time_ms([&] { a = serial::predict_mean_batch(model, grid.points); }, reps);
    const double tp = time_ms([&] { b = predict_mean_batch(model, grid.points); }, reps);
    print_row("predict_mean_batch", ts, tp, (a - b).cwiseAbs().maxCoeff());
  }
  {
    Eigen::VectorXd a, b;
    const double ts = time_ms([&] { a = serial::predict_var_batch(model, grid.points); }, reps);
    const double tp = time_ms([&] { b = predict_var_batch(model, grid.points); }, reps);
    print_row("predict_var_batch", ts, tp, (a - b).cwiseAbs().maxCoeff());
  }
  {
    LoocvDiagnostics a, b;
    const double ts = time_ms([&] { a = serial::loocv_diagnostics(model); }, reps);
    const double tp = time_ms([&] { b = loocv_diagnostics(model); }, reps);
    print_row("loocv_diagnostics", ts, tp, (a.ratios - b.ratios).cwiseAbs().maxCoeff());
  }
  {
    const Eigen::VectorXd x = grid.points.row(0).transpose();
    Eigen::VectorXd a, b;
    const double ts =
        time_ms([&] { a = serial::imse_reduction_terms(model, grid.points, x); }, reps);
    const double tp = time_ms([&] { b = imse_reduction_terms(model, grid.points, x); }, reps);
    print_row("imse_reduction_terms", ts, tp, (a - b).cwiseAbs().maxCoeff());
  }
  {
    // The production scan batches the quadrature into matrix blocks, so this
    // row compares algorithms as well as scheduling.
    const int mm = std::min(m, 800);
    const CandidateGrid small = make_candidate_grid(2, mm, 5);
    Selection a, b;
    const double ts = time_ms([&] { a = serial::select_min_imse(model, small); }, 1);
    const double tp = time_ms([&] { b = select_min_imse(model, small); }, 1);
    print_row("select_min_imse (m=" + std::to_string(mm) + ")", ts, tp,
              std::abs(a.value - b.value));
  }
  {
    Rng rng = make_rng(314);
    Eigen::MatrixXd samples(std::max(2000, m), 2);
    for (Eigen::Index i = 0; i < samples.rows(); ++i)
      for (Eigen::Index j = 0; j < 2; ++j) samples(i, j) = uniform01(rng);
    ClusterSet a, b;
    const double ts = time_ms([&] { a = serial::nmeans(samples, 24, 3); }, reps);
    const double tp = time_ms([&] { b = nmeans(samples, 24, 3); }, reps);
    print_row("nmeans (N=24)", ts, tp, (a.centers - b.centers).cwiseAbs().maxCoeff());
  }

  return 0;
}
