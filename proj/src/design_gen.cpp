#include "krigseq/design_gen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "krigseq/rng.hpp"

namespace krigseq {

double min_pairwise_distance(const Eigen::MatrixXd& X) {
  const Eigen::Index n = X.rows();
  if (n < 2) return std::numeric_limits<double>::infinity();
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      best = std::min(best, (X.row(i) - X.row(j)).norm());
  return best;
}

namespace {

// Min distance from row `i` to every other row of X.
double min_distance_to(const Eigen::MatrixXd& X, Eigen::Index i) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < X.rows(); ++j)
    if (j != i) best = std::min(best, (X.row(i) - X.row(j)).norm());
  return best;
}

}  // namespace

LhsDesign lhs_maximin(int n, int d, int iters, std::uint64_t seed) {
  if (n < 2) throw ArgumentError("lhs_maximin: need at least 2 points, got " + std::to_string(n));
  if (d < 1) throw ArgumentError("lhs_maximin: need at least 1 dimension, got " + std::to_string(d));
  if (iters < 0) throw ArgumentError("lhs_maximin: iters must be non-negative");

  Rng rng = make_rng(seed);
  Eigen::MatrixXd X(n, d);
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int k = 0; k < d; ++k) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < n; ++i)
      X(i, k) = (static_cast<double>(perm[static_cast<std::size_t>(i)]) + uniform01(rng)) /
                static_cast<double>(n);
  }

  double score = min_pairwise_distance(X);
  std::uniform_int_distribution<int> pick_axis(0, d - 1);
  std::uniform_int_distribution<int> pick_point(0, n - 1);
  for (int t = 0; t < iters; ++t) {
    const int k = pick_axis(rng);
    const int a = pick_point(rng);
    int b = pick_point(rng);
    if (a == b) continue;
    std::swap(X(a, k), X(b, k));
    const double trial = min_pairwise_distance(X);
    if (trial > score) {
      score = trial;
    } else {
      std::swap(X(a, k), X(b, k));  // revert
    }
  }
  return LhsDesign{std::move(X), score, seed};
}

NestedPair nested_pair_detailed(const Eigen::MatrixXd& D_fine, int n_c,
                                std::uint64_t seed, int lhs_iters) {
  const int n_f = static_cast<int>(D_fine.rows());
  const int d = static_cast<int>(D_fine.cols());
  if (n_f < 1) throw ArgumentError("nested_pair: fine design is empty");
  if (n_c < n_f)
    throw ArgumentError("nested_pair: coarse size " + std::to_string(n_c) +
                        " is smaller than the fine design (" + std::to_string(n_f) + ")");

  NestedPair out;
  out.candidates = lhs_maximin(std::max(n_c, 2), d, lhs_iters, seed).points.topRows(n_c);
  out.removed_candidate.reserve(static_cast<std::size_t>(n_f));

  std::vector<bool> alive(static_cast<std::size_t>(n_c), true);
  for (int i = 0; i < n_f; ++i) {
    int best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n_c; ++j) {
      if (!alive[static_cast<std::size_t>(j)]) continue;
      const double dist = (out.candidates.row(j) - D_fine.row(i)).norm();
      if (dist < best_dist) {  // strict: ties keep the lowest index
        best_dist = dist;
        best = j;
      }
    }
    alive[static_cast<std::size_t>(best)] = false;
    out.removed_candidate.push_back(best);
  }

  out.coarse.resize(n_c, d);
  out.coarse.topRows(n_f) = D_fine;
  int row = n_f;
  for (int j = 0; j < n_c; ++j)
    if (alive[static_cast<std::size_t>(j)]) out.coarse.row(row++) = out.candidates.row(j);
  return out;
}

Eigen::MatrixXd nested_pair(const Eigen::MatrixXd& D_fine, int n_c,
                            std::uint64_t seed, int lhs_iters) {
  return nested_pair_detailed(D_fine, n_c, seed, lhs_iters).coarse;
}

namespace {

constexpr int kHaltonPrimes[16] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};

double van_der_corput(std::uint64_t index, int base) {
  double result = 0.0;
  double denom = 1.0;
  while (index > 0) {
    denom *= base;
    result += static_cast<double>(index % static_cast<std::uint64_t>(base)) / denom;
    index /= static_cast<std::uint64_t>(base);
  }
  return result;
}

}  // namespace

Eigen::MatrixXd halton_points(int m, int d, std::uint64_t seed) {
  if (m < 1) throw ArgumentError("halton_points: need at least 1 point");
  if (d < 1 || d > 16)
    throw ArgumentError("halton_points: dimension must be in [1,16], got " + std::to_string(d));

  Rng rng = make_rng(seed);
  Eigen::VectorXd shift(d);
  for (int k = 0; k < d; ++k) shift(k) = uniform01(rng);

  Eigen::MatrixXd X(m, d);
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < d; ++k) {
      const double u = van_der_corput(static_cast<std::uint64_t>(i) + 1, kHaltonPrimes[k]) + shift(k);
      X(i, k) = u - std::floor(u);
    }
  return X;
}

void save_design_csv(const Eigen::MatrixXd& X, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  char buf[40];
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", X(i, j));
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

Eigen::MatrixXd load_design_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError("bad numeric cell '" + cell + "' in " + path);
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw IoError("ragged rows in " + path);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError("no rows in " + path);
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < X.cols(); ++j)
      X(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return X;
}

}  // namespace krigseq
