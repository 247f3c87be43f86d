#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "krigseq/batch_select.hpp"
#include "krigseq/bench_problems.hpp"

namespace krigseq {

/// Version stamp written into every records/summary header and manifest.
inline constexpr int kRecordSchemaVersion = 1;

/// One replicated sequential-design campaign, as read from a config file.
/// Empty strings / negative sizes mean "resolve to the problem's default".
struct ExperimentConfig {
  std::string problem;              ///< registry name (required)
  std::string criterion;            ///< "maxvar"|"minimse"|"kleicrit"|"adjmmse"
                                    ///< or "plain"|"adjusted"; "" = path default
  std::string mode = "one-point";   ///< "one-point" | "batch"
  std::string surrogate = "auto";   ///< "auto" | "kriging" | "cokriging"
  std::vector<int> q;               ///< batch: fixed per-round allocation; empty = search
  int replicates = 20;
  std::vector<int> initial_design;  ///< points per level, coarsest first; empty = default
  long long budget = -1;            ///< sequential time units; -1 = problem's T
  int test_size = -1;               ///< held-out points; -1 = problem default
  int grid_size = -1;               ///< candidate/quadrature points; -1 = default
  std::uint64_t master_seed = 1;
  MhConfig mh{};                    ///< batch sampler profile; seed field ignored
  std::string trend = "constant";
  std::string kernel = "matern-5/2";
  std::string output_dir = "runs/latest";
};

/// Parses a JSON config. Missing keys keep their defaults; unknown keys are
/// rejected. Throws ConfigError on parse or type problems.
[[nodiscard]] ExperimentConfig config_from_json(const std::string& text);

/// Canonical JSON echo of a config (stable key order, round-trips through
/// config_from_json unchanged).
[[nodiscard]] std::string config_to_json(const ExperimentConfig& config);

/// Resolves every defaulted field against the problem registry and validates
/// the result; the returned config echoes what a run will actually do.
/// Throws ConfigError on any unresolvable name or inconsistent setting.
[[nodiscard]] ExperimentConfig resolve_config(const ExperimentConfig& config);

/// One appended design point (or the iteration-0 snapshot of the initial
/// model, with no point, no levels, and criterion NaN).
struct RunRecord {
  int replicate = 0;
  int iteration = 0;
  Eigen::VectorXd x;                ///< unit-cube coordinates; empty at iteration 0
  std::vector<int> levels;          ///< problem levels run for this point
  double criterion_value = 0.0;     ///< NaN at iteration 0
  long long spent_time = 0;         ///< cumulative sequential effort (time units)
  double nrmse = 0.0;               ///< on the problem's fixed test set
  double accurate_fraction = 1.0;   ///< accurate runs / all runs, initial design included
  double wall_ms = 0.0;             ///< kept out of every emitted file
};

struct ReplicateResult {
  int replicate = 0;
  bool failed = false;
  std::string reason;               ///< first error, verbatim, when failed
  std::vector<RunRecord> records;   ///< rows up to the failure point when failed
};

struct ExperimentResult {
  ExperimentConfig config;          ///< resolved echo
  std::vector<ReplicateResult> replicates;
  double wall_ms = 0.0;
};

/// Runs every replicate (concurrently; each is seeded independently by a
/// counter-derived sub-seed of master_seed, so results are identical under
/// any schedule). A module error inside a replicate marks that replicate
/// failed with its reason; config problems throw ConfigError instead.
[[nodiscard]] ExperimentResult run_experiment(const ExperimentConfig& config);

/// Aggregate of one iteration index across the completed replicates that
/// reached it.
struct SummaryRow {
  int iteration = 0;
  double spent_time = 0.0;          ///< mean cumulative effort
  double mean_nrmse = 0.0;
  double q10_nrmse = 0.0;
  double q90_nrmse = 0.0;
  double mean_accurate_run_fraction = 0.0;
};

/// Linear-interpolation empirical quantile (the (n-1)p rule) of the values;
/// p in [0,1]. Throws ArgumentError on an empty sample.
[[nodiscard]] double quantile_linear(std::vector<double> values, double p);

/// Per-iteration mean and 10%/90% NRMSE quantiles over completed replicates.
[[nodiscard]] std::vector<SummaryRow> summarize(const ExperimentResult& result);

/// Writes summary.csv (exactly the six SummaryRow columns), records.csv (one
/// row per RunRecord), and manifest.json (config echo, seeds, versions,
/// failures) into the directory, creating it if needed. Every file is a pure
/// function of the records and config: re-emitting identical results yields
/// byte-identical files. Throws IoError with the path on write failure.
void emit_summary(const ExperimentResult& result, const std::string& dir);

/// Reads the config echo back out of a manifest.json for a replay run.
/// Throws ConfigError on parse problems or schema mismatch.
[[nodiscard]] ExperimentConfig config_from_manifest(const std::string& path);

}  // namespace krigseq
