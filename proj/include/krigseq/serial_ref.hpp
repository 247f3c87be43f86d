#pragma once

/// Plain-loop reference implementations of the library's OpenMP-parallel
/// kernels. The production kernels fan independent scalar evaluations out
/// across threads into preallocated slots; every twin here runs the same
/// evaluations in index order on one thread. Wherever the scalar path is
/// shared the two must agree bitwise under any thread count; the two
/// exceptions are noted on the functions that reassemble the arithmetic
/// differently. The twins back the parallel-vs-serial test suite and the
/// benchmark tool and are not meant for production use.

#include <Eigen/Dense>

#include <cstdint>

#include "krigseq/batch_select.hpp"
#include "krigseq/cokriging.hpp"
#include "krigseq/criteria.hpp"
#include "krigseq/kriging.hpp"
#include "krigseq/loocv.hpp"

namespace krigseq::serial {

/// Kriging predictor batches: one predict_mean / predict_var call per row.
[[nodiscard]] Eigen::VectorXd predict_mean_batch(const KrigingModel& model,
                                                 const Eigen::MatrixXd& X);
[[nodiscard]] Eigen::VectorXd predict_var_batch(const KrigingModel& model,
                                                const Eigen::MatrixXd& X);

/// Co-kriging predictor batches at the given level.
[[nodiscard]] Eigen::VectorXd mf_predict_mean_batch(const CokrigingModel& model,
                                                    const Eigen::MatrixXd& X, int level);
[[nodiscard]] Eigen::VectorXd mf_predict_var_batch(const CokrigingModel& model,
                                                   const Eigen::MatrixXd& X, int level);

/// Per-node IMSE reduction contributions for one candidate.
[[nodiscard]] Eigen::VectorXd imse_reduction_terms(const KrigingModel& model,
                                                   const Eigen::MatrixXd& quad_points,
                                                   const Eigen::VectorXd& x);

/// Leave-one-out table assembled from the public per-point solvers
/// (loocv_mean / loocv_var) instead of the shared deletion context, so it
/// agrees with the production table to round-off rather than bitwise.
[[nodiscard]] LoocvDiagnostics loocv_diagnostics(const KrigingModel& model);

/// Full N-means clustering with a serial nearest-center assignment step;
/// seeding, centroid updates, and empty-cluster re-seeding follow the
/// production routine exactly.
[[nodiscard]] ClusterSet nmeans(const Eigen::MatrixXd& samples, int N, std::uint64_t seed,
                                const DensityFn& variance = nullptr);

/// Selector twins: serial grid scans feeding the shared argmax-first and
/// local-refinement conventions. select_min_imse ranks by the direct
/// per-candidate quadrature mean, which the production blocked-matrix scan
/// reproduces to round-off; the other three share every scalar call.
[[nodiscard]] Selection select_maxvar(const KrigingModel& model, const CandidateGrid& grid);
[[nodiscard]] Selection select_min_imse(const KrigingModel& model, const CandidateGrid& grid);
[[nodiscard]] Selection select_kleicrit(const KrigingModel& model,
                                        const Eigen::MatrixXd& candidates);
[[nodiscard]] Selection select_adjmmse(const KrigingModel& model, const LoocvDiagnostics& diag,
                                       const CandidateGrid& grid);

}  // namespace krigseq::serial
