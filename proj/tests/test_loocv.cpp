#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "krigseq/design_gen.hpp"
#include "krigseq/loocv.hpp"
#include "krigseq/rng.hpp"
#include "oracle_helpers.hpp"

using namespace krigseq;

namespace {

double bumps(const Eigen::VectorXd& x) {
  double s = std::sin(4.0 * x(0)) + 0.3 * x(0) * x(0);
  for (int k = 1; k < x.size(); ++k) s += std::cos(3.0 * x(k)) - 0.4 * x(k);
  return s;
}

KrigingModel build_model(int n, int d, TrendKind tk, KernelFamily family, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const Eigen::MatrixXd D = lhs_maximin(n, d, 300, derive_seed(seed, 2)).points;
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y(i) = bumps(D.row(i).transpose());
  Eigen::VectorXd theta(d);
  for (int k = 0; k < d; ++k) theta(k) = 0.4 + 1.2 * uniform01(rng);
  return make_kriging(D, y, TrendBasis{tk, d}, CorrelationKernel{family, theta});
}

}  // namespace

TEST_SUITE("loocv") {

TEST_CASE("constant data: every LOO mean is the constant") {
  const Eigen::MatrixXd D = lhs_maximin(8, 2, 200, 7).points;
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(8, -2.25);
  const KrigingModel m = make_kriging(D, y, TrendBasis{TrendKind::Constant, 2},
                                      CorrelationKernel{KernelFamily::Matern52,
                                                        Eigen::VectorXd::Constant(2, 0.8)});
  for (int i = 0; i < 8; ++i)
    CHECK(loocv_mean(m, i) == doctest::Approx(-2.25).epsilon(1e-9));
  // and the jackknife variance of a constant predictor vanishes
  Eigen::VectorXd x(2);
  x << 0.41, 0.77;
  CHECK(jackknife_variance(m, x) <= 1e-18);
}

TEST_CASE("oracle equivalence: 20 random models, every deletion") {
  // the module's central property: closed forms match brute-force
  // delete-and-refit (same length-scales, re-estimated beta and sigma2)
  int model_count = 0;
  for (std::uint64_t seed = 200; model_count < 20; ++seed) {
    const int n = 6 + static_cast<int>(seed % 10);       // 6..15
    const int d = 1 + static_cast<int>((seed / 3) % 3);  // 1..3
    const TrendKind tk =
        (model_count % 4 == 3 && n >= 8) ? TrendKind::Linear : TrendKind::Constant;
    const KernelFamily family =
        (model_count % 2 == 0) ? KernelFamily::Matern52 : KernelFamily::SquaredExponential;
    const TrendBasis trend{tk, d};
    if (n < trend.size() + 3) continue;
    ++model_count;

    const KrigingModel m = build_model(n, d, tk, family, seed);
    const oracle::DensePieces pieces =
        oracle::dense_pieces(m.D, m.y, m.trend, family, m.kernel.theta, m.nugget, n - m.p());
    const LoocvDiagnostics diag = loocv_diagnostics(m);

    for (int i = 0; i < n; ++i) {
      CAPTURE(seed);
      CAPTURE(i);
      const oracle::LoocvRefit refit = oracle::loocv_delete_refit(pieces, i);
      const double mean_closed = loocv_mean(m, i);
      const double var_closed = loocv_var(m, i);
      CHECK(mean_closed ==
            doctest::Approx(refit.mean).epsilon(1e-8).scale(std::max(1.0, std::abs(refit.mean))));
      CHECK(var_closed == doctest::Approx(refit.var).epsilon(1e-8));
      // vectorized diagnostics agree with the scalar entry points
      const double err = m.y(i) - mean_closed;
      CHECK(diag.e2(i) == doctest::Approx(err * err).epsilon(1e-12));
      CHECK(diag.s2(i) == doctest::Approx(var_closed).epsilon(1e-12));
      CHECK(diag.s2(i) > 0.0);
      CHECK(std::isfinite(diag.ratios(i)));
    }
  }
}

TEST_CASE("near-duplicate neighbor makes the LOO error collapse") {
  Eigen::MatrixXd D = lhs_maximin(7, 2, 300, 17).points;
  D.row(6) = D.row(2) + Eigen::RowVector2d(1e-4, -1e-4);
  Eigen::VectorXd y(7);
  for (int i = 0; i < 7; ++i) y(i) = bumps(D.row(i).transpose());
  const KrigingModel m = make_kriging(D, y, TrendBasis{TrendKind::Constant, 2},
                                      CorrelationKernel{KernelFamily::Matern52,
                                                        Eigen::VectorXd::Constant(2, 1.0)});
  const double range = m.y.maxCoeff() - m.y.minCoeff();
  const LoocvDiagnostics diag = loocv_diagnostics(m);
  CHECK(diag.e2(6) <= 1e-5 * range * range);
}

TEST_CASE("grid symmetry: corner and edge deletions share their variance") {
  // 3×3 regular grid, constant trend: the symmetry group of the square maps
  // corners to corners and edge-midpoints to edge-midpoints.
  Eigen::MatrixXd D(9, 2);
  int r = 0;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) D.row(r++) << 0.1 + 0.4 * a, 0.1 + 0.4 * b;
  Eigen::VectorXd y(9);
  for (int i = 0; i < 9; ++i) {
    const double cx = D(i, 0) - 0.5, cy = D(i, 1) - 0.5;
    y(i) = std::exp(-(cx * cx + cy * cy));  // radially symmetric outputs
  }
  const KrigingModel m = make_kriging(D, y, TrendBasis{TrendKind::Constant, 2},
                                      CorrelationKernel{KernelFamily::SquaredExponential,
                                                        Eigen::VectorXd::Constant(2, 0.7)});
  const LoocvDiagnostics diag = loocv_diagnostics(m);
  const std::vector<int> corners = {0, 2, 6, 8};
  const std::vector<int> edges = {1, 3, 5, 7};
  for (int i : corners)
    CHECK(diag.s2(i) == doctest::Approx(diag.s2(corners[0])).epsilon(1e-10));
  for (int i : edges) CHECK(diag.s2(i) == doctest::Approx(diag.s2(edges[0])).epsilon(1e-10));
}

TEST_CASE("diagnostics add no correlation-sized factorization") {
  const KrigingModel m = build_model(12, 2, TrendKind::Constant,
                                     KernelFamily::Matern52, 33);
  const std::uint64_t before = detail::factorization_count();
  const LoocvDiagnostics diag = loocv_diagnostics(m);
  const JackknifeCache cache = make_jackknife_cache(m);
  Eigen::VectorXd x(2);
  x << 0.3, 0.6;
  (void)jackknife_variance(m, cache, x);
  CHECK(detail::factorization_count() == before);
  CHECK(diag.e2.size() == 12);
}

TEST_CASE("e2 is invariant under output shifts with a constant trend") {
  const KrigingModel m = build_model(10, 2, TrendKind::Constant,
                                     KernelFamily::SquaredExponential, 47);
  const KrigingModel shifted =
      make_kriging(m.D, (m.y.array() + 41.5).matrix(), m.trend, m.kernel);
  const LoocvDiagnostics a = loocv_diagnostics(m);
  const LoocvDiagnostics b = loocv_diagnostics(shifted);
  const double scale = a.e2.maxCoeff();
  for (int i = 0; i < 10; ++i)
    CHECK(std::abs(a.e2(i) - b.e2(i)) <= 1e-9 * scale);
}

TEST_CASE("jackknife variance matches a direct pseudo-value recomputation") {
  const KrigingModel m = build_model(9, 2, TrendKind::Constant, KernelFamily::Matern52, 59);
  const oracle::DensePieces pieces = oracle::dense_pieces(
      m.D, m.y, m.trend, m.kernel.family, m.kernel.theta, m.nugget, m.n() - m.p());
  const JackknifeCache cache = make_jackknife_cache(m);
  Rng rng = make_rng(60);
  for (int t = 0; t < 10; ++t) {
    Eigen::VectorXd x(2);
    x << uniform01(rng), uniform01(rng);
    // oracle: n delete-refit means through the dense block formulas
    const int n = m.n();
    Eigen::VectorXd pseudo(n);
    const double m_full = oracle::block_mean(pieces, x);
    for (int i = 0; i < n; ++i) {
      Eigen::MatrixXd D_red(n - 1, 2);
      Eigen::VectorXd y_red(n - 1);
      int rr = 0;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        D_red.row(rr) = m.D.row(j);
        y_red(rr) = m.y(j);
        ++rr;
      }
      const oracle::DensePieces red = oracle::dense_pieces(
          D_red, y_red, m.trend, m.kernel.family, m.kernel.theta, m.nugget, n - m.p() - 1);
      pseudo(i) = n * m_full - (n - 1.0) * oracle::block_mean(red, x);
    }
    const double mean_pseudo = pseudo.mean();
    const double expected =
        (pseudo.array() - mean_pseudo).square().sum() / (n * (n - 1.0));
    const double got = jackknife_variance(m, cache, x);
    CHECK(got == doctest::Approx(expected).epsilon(1e-8).scale(m.sigma2_hat));
    CHECK(got >= 0.0);
  }
  // convenience overload agrees with the cached path
  Eigen::VectorXd x(2);
  x << 0.5, 0.5;
  CHECK(jackknife_variance(m, x) == doctest::Approx(jackknife_variance(m, cache, x)));
}

TEST_CASE("jackknife variance is small at a design point of a clean model") {
  const KrigingModel m = build_model(10, 2, TrendKind::Constant, KernelFamily::Matern52, 71);
  const JackknifeCache cache = make_jackknife_cache(m);
  // design points are interpolated by every submodel that retains them, so
  // only the deletion of the point itself contributes spread
  double worst = 0.0;
  for (int i = 0; i < m.n(); ++i)
    worst = std::max(worst, jackknife_variance(m, cache, m.D.row(i).transpose()));
  // bounded by the largest LOO miss scaled by (n-1)/n ~ 1; generous margin
  const LoocvDiagnostics diag = loocv_diagnostics(m);
  CHECK(worst <= 2.0 * diag.e2.maxCoeff() * m.n());
}

TEST_CASE("ratio capping kicks in only for catastrophic points") {
  // an outlier output at a remote point forces a huge e2/s2 ratio
  Eigen::MatrixXd D = lhs_maximin(9, 2, 300, 83).points;
  Eigen::VectorXd y(9);
  for (int i = 0; i < 9; ++i) y(i) = bumps(D.row(i).transpose());
  y(4) += 1e6;  // catastrophic outlier
  const KrigingModel m = make_kriging(D, y, TrendBasis{TrendKind::Constant, 2},
                                      CorrelationKernel{KernelFamily::Matern52,
                                                        Eigen::VectorXd::Constant(2, 0.6)});
  const LoocvDiagnostics diag = loocv_diagnostics(m);
  CHECK(diag.ratios.maxCoeff() <= detail::kRatioCap);
  CHECK(diag.ratios.maxCoeff() == detail::kRatioCap);  // the outlier hit the cap
}

TEST_CASE("preconditions are enforced") {
  const KrigingModel m = build_model(8, 2, TrendKind::Constant, KernelFamily::Matern52, 91);
  CHECK_THROWS_AS((void)loocv_mean(m, -1), ArgumentError);
  CHECK_THROWS_AS((void)loocv_mean(m, 8), ArgumentError);
  // n = p+2 leaves no degrees of freedom for the reduced model
  const Eigen::MatrixXd D = lhs_maximin(3, 2, 100, 92).points;
  Eigen::VectorXd y(3);
  for (int i = 0; i < 3; ++i) y(i) = bumps(D.row(i).transpose());
  const KrigingModel tiny = make_kriging(D, y, TrendBasis{TrendKind::Constant, 2},
                                         CorrelationKernel{KernelFamily::Matern52,
                                                           Eigen::VectorXd::Constant(2, 1.0)});
  CHECK_THROWS_AS((void)loocv_mean(tiny, 0), ArgumentError);
  CHECK_THROWS_AS((void)loocv_diagnostics(tiny), ArgumentError);
}

TEST_CASE("diagnostics CSV export round-trips through a parse") {
  const KrigingModel m = build_model(7, 2, TrendKind::Constant, KernelFamily::Matern52, 101);
  const LoocvDiagnostics diag = loocv_diagnostics(m);
  const std::string path = "loocv_export_test.csv";
  save_loocv_csv(diag, path);
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(header == "index,e2,s2,ratio");
  int rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    int idx;
    double e2, s2, ratio;
    REQUIRE(std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &idx, &e2, &s2, &ratio) == 4);
    CHECK(idx == rows);
    CHECK(e2 == diag.e2(rows));
    CHECK(s2 == diag.s2(rows));
    CHECK(ratio == diag.ratios(rows));
    ++rows;
  }
  CHECK(rows == 7);
  in.close();
  std::remove(path.c_str());
}

}  // TEST_SUITE
