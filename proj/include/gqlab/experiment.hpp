#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gqlab/environments.hpp"
#include "gqlab/evaluation.hpp"
#include "gqlab/features.hpp"
#include "gqlab/learners.hpp"
#include "gqlab/mdp.hpp"

namespace gqlab {

enum class LearnerKind { Gq, SemiGradient };
enum class MspbeMode { None, Model, Empirical };
enum class RecordMode { Steps, Episodes };

std::string to_string(LearnerKind kind);
std::string to_string(MspbeMode mode);

struct FeatureSpec {
  std::string name;  ///< "default", "tabular", "baird", "boyan", "counterexample", "tile_coding"
  std::size_t n_tilings = 8;
  std::size_t tiles_per_dim = 8;
  std::size_t p = 256;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string environment;
  std::size_t episode_cap = MountainCar::kDefaultCap;
  FeatureSpec features;

  std::vector<LearnerKind> learners;
  double gamma = 0.99;
  double lambda = 0.0;
  std::vector<SigmaSchedule> sigmas;
  std::vector<StepSizes> step_sizes;
  std::optional<std::vector<double>> theta0;

  std::size_t n_runs = 1;
  std::optional<std::size_t> n_episodes;
  std::optional<std::size_t> n_steps;
  std::uint64_t seed = 0;
  RecordMode record = RecordMode::Steps;
  std::size_t cadence = 100;  ///< steps between records in Steps mode

  double epsilon = 0.1;  ///< behaviour exploration for control tasks
  std::size_t sigma_block_steps = 1000;  ///< pseudo-episode length for dynamic sigma on continuing tasks
  double divergence_threshold = kDefaultDivergenceThreshold;
  bool stop_on_divergence = true;

  MspbeMode mspbe = MspbeMode::None;
  MetricInverse metric_inverse = MetricInverse::Strict;
  double ridge = 0.0;  ///< only used by empirical MSPBE
  std::size_t summary_window = 20;

  std::filesystem::path output = "results";
  std::size_t workers = 0;  ///< 0 = hardware concurrency; GQLAB_WORKERS overrides

  /// Throws ConfigError describing the first problem found.
  void validate() const;
};

/// Parses the JSON configuration documented in docs/formats.md and
/// validates it. Missing optional fields take per-environment defaults.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// One point of the fan-out.
struct RunSpec {
  std::size_t run_id = 0;
  LearnerKind learner = LearnerKind::Gq;
  StepSizes steps;
  SigmaSchedule sigma;
  std::size_t replicate = 0;
  std::uint64_t seed = 0;

  std::string config_key() const;
};

/// Fan-out in deterministic order: learner, step sizes, sigma schedule, replicate.
std::vector<RunSpec> expand_runs(const ExperimentConfig& config);

struct ExperimentRecord {
  std::size_t episode = 0;
  std::size_t step = 0;
  double sigma = 0.0;
  double mspbe = 0.0;           ///< NaN when not measured
  double episode_return = 0.0;  ///< last completed episode, NaN before the first
  std::size_t episode_length = 0;
  double theta_norm = 0.0;
  bool diverged = false;
  std::vector<double> theta;  ///< components, kept only for p <= kMaxThetaColumns
};

inline constexpr std::size_t kMaxThetaColumns = 16;

struct RunResult {
  RunSpec spec;
  std::vector<ExperimentRecord> records;
  bool diverged = false;
  std::size_t steps_taken = 0;
  std::size_t episodes_completed = 0;
  DenseVector final_theta;
  DenseVector final_omega;
  double wall_ms = 0.0;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<RunResult> runs;  ///< ordered by run_id
  std::size_t workers_used = 1;
};

/// Executes one run. Deterministic in (config, spec).
RunResult run_single(const ExperimentConfig& config, const RunSpec& spec);

/// Worker count: GQLAB_WORKERS if set, else config.workers, else hardware concurrency.
std::size_t resolve_workers(const ExperimentConfig& config);

/// Runs every spec on a bounded worker pool; results are ordered by run_id
/// regardless of completion order.
ExperimentResult run_experiment(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Aggregation and summaries

struct AggregateRow {
  std::string config_key;
  std::string learner;
  std::string sigma_schedule;
  std::string step_sizes;
  std::size_t tick = 0;  ///< episode index (Episodes mode) or step (Steps mode)
  std::size_t n = 0;
  double mean_sigma = 0.0, var_sigma = 0.0;
  double mean_mspbe = 0.0, var_mspbe = 0.0;
  double mean_return = 0.0, var_return = 0.0;
  double mean_length = 0.0, var_length = 0.0;
  double mean_theta_norm = 0.0, var_theta_norm = 0.0;
  double diverged_fraction = 0.0;
};

/// Mean and sample variance per (config, tick) across replicates.
std::vector<AggregateRow> aggregate(const std::vector<RunResult>& runs, RecordMode mode);

struct VarianceRow {
  std::string group;  ///< learner + step sizes
  std::string sigma_schedule;
  std::size_t n_runs = 0;
  double end_window_mean = 0.0;
  double end_window_variance = 0.0;  ///< across runs of each run's end-window mean
  std::vector<double> per_tick_variance;
};

/// Per sigma: sample variance of the tracked metric per tick plus a scalar
/// end-window variance. The metric is the episode return when available,
/// else the MSPBE. Throws InsufficientRuns with fewer than two runs per sigma.
std::vector<VarianceRow> summarize_variance(const std::vector<RunResult>& runs, RecordMode mode,
                                            std::size_t window);

struct CaseReport {
  std::string group;
  bool higher_is_better = true;
  std::map<std::string, double> scores;
  CaseTable table;
};

/// Case I/II/III tables for every group whose sigma grid contains 0 and 1.
std::vector<CaseReport> case_reports(const std::vector<RunResult>& runs, RecordMode mode,
                                     std::size_t window);

// ---------------------------------------------------------------------------
// Files

std::string run_csv_header(std::size_t theta_columns);
std::string format_run_csv(const RunResult& run, std::size_t theta_columns);
std::string format_aggregate_csv(const std::vector<AggregateRow>& rows);
std::string format_summary(const std::vector<RunResult>& runs, RecordMode mode,
                           std::size_t window);

/// Writes runs/run_<id>.csv, aggregate.csv, summary.txt, cases.csv and
/// metadata.json under config.output. Timestamps live only in metadata.json.
void write_experiment(const ExperimentResult& result);

/// Reads the per-run CSVs written by write_experiment.
std::vector<RunResult> read_run_csvs(const std::filesystem::path& dir, RecordMode* mode = nullptr);

/// Recomputes summary.txt content from a directory of run CSVs.
std::string summarize_directory(const std::filesystem::path& dir, std::size_t window);

}  // namespace gqlab
