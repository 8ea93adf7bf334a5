#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "intact/config.hpp"
#include "intact/data.hpp"
#include "intact/ewc.hpp"
#include "intact/hypercube.hpp"
#include "intact/metrics.hpp"
#include "intact/network.hpp"

namespace intact {

// Number of batches in which each loss term was evaluated, per task.
struct LossAudit {
  std::map<std::string, std::size_t> evaluations;
  LossBreakdown last;  // breakdown of the final batch
  double mean_total = 0.0;
};

struct TaskReport {
  int task = 0;  // 1-based
  double seconds = 0.0;
  LossAudit audit;
  std::vector<CoverageReport> coverage;
};

struct RunRecord {
  std::uint64_t seed = 0;
  AccuracyMatrix scores{1};  // accuracy in percent, or MSE for regression
  Metrics metrics;
  std::vector<TaskReport> tasks;
  std::vector<DriftRow> drift;
  std::optional<double> full_domain_mse;  // regression only
  std::vector<double> full_domain_mse_per_task;
  HypercubeStore store;
  std::filesystem::path dir;
};

struct RunOptions {
  bool write_outputs = true;
  // Continue an earlier run from its artifacts after `resume_after` tasks.
  std::optional<std::filesystem::path> resume_dir;
  int resume_after = 0;
  // Stop after this many tasks (0 = all).
  int stop_after = 0;
};

TaskStream load_stream(const ExperimentConfig& cfg, std::uint64_t seed);

// Trains one seed through the whole stream.
RunRecord run_seed(const ExperimentConfig& cfg, const TaskStream& stream, std::uint64_t seed,
                   const RunOptions& opts = {});

// Runs every configured seed and writes <output_dir>/metrics.csv.
std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

std::string metrics_csv(const std::vector<RunRecord>& runs);
std::string metrics_row(std::uint64_t seed, const Metrics& m);

std::vector<double> evaluate_column(const Network& net, const TaskStream& stream, std::size_t upto);

}  // namespace intact
