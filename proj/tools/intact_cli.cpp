// Command-line front end: run, eval, drift, metrics.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "intact/config.hpp"
#include "intact/error.hpp"
#include "intact/experiment.hpp"
#include "intact/snapshot.hpp"

namespace fs = std::filesystem;
using namespace intact;

namespace {

ExperimentConfig load(const std::string& path, const std::string& output_override) {
  ExperimentConfig cfg = load_config(path);
  apply_environment(cfg);
  if (!output_override.empty()) cfg.output_dir = output_override;
  return cfg;
}

void print_summary(const std::vector<RunRecord>& runs, const ExperimentConfig& cfg) {
  std::cout << metrics_csv(runs);
  for (const auto& r : runs)
    if (r.full_domain_mse) std::printf("seed %llu full-domain MSE %.6g\n", static_cast<unsigned long long>(r.seed), *r.full_domain_mse);
  std::cout << "outputs in " << cfg.output_dir.string() << "\n";
}

// Reads accuracy_matrix.csv back into a matrix.
AccuracyMatrix read_matrix(const fs::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::Io, "cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<std::tuple<std::size_t, std::size_t, double>> cells;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::size_t i = 0, j = 0;
    double v = 0.0;
    require(std::sscanf(line.c_str(), "%zu,%zu,%lf", &i, &j, &v) == 3 && i >= 1 && j >= i, ErrorCode::Io,
            "malformed row in " + path.string() + ": " + line);
    cells.emplace_back(i - 1, j - 1, v);
    n = std::max(n, j);
  }
  AccuracyMatrix m(n);
  for (const auto& [i, j, v] : cells) m.set(i, j, v);
  return m;
}

int run_metrics(const fs::path& dir) {
  std::string out = "seed,AA,AF_std,AF_coda\n";
  std::vector<std::pair<std::uint64_t, fs::path>> seeds;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_directory() && name.rfind("seed_", 0) == 0 && fs::exists(e.path() / "accuracy_matrix.csv"))
      seeds.emplace_back(std::stoull(name.substr(5)), e.path() / "accuracy_matrix.csv");
  }
  require(!seeds.empty(), ErrorCode::Io, "no seed_*/accuracy_matrix.csv under " + dir.string());
  std::sort(seeds.begin(), seeds.end());
  for (const auto& [seed, path] : seeds) out += metrics_row(seed, compute_metrics(read_matrix(path)));
  std::cout << out;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interval-constrained continual learning experiments"};
  app.require_subcommand(1);

  std::string config_path, output_dir, checkpoint, run_dir, resume_dir;
  int resume_after = 0;
  std::uint64_t seed = 0;
  bool seed_set = false;

  auto* run = app.add_subcommand("run", "train every configured seed");
  run->add_option("config", config_path, "experiment config")->required()->check(CLI::ExistingFile);
  run->add_option("--output-dir", output_dir, "override [experiment] output_dir");
  run->add_option("--resume-dir", resume_dir, "seed directory of an earlier run to continue from");
  run->add_option("--resume-after", resume_after, "number of finished tasks to take from --resume-dir");

  auto* eval = app.add_subcommand("eval", "accuracy of a checkpoint on every task it has seen");
  eval->add_option("checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("config", config_path, "experiment config")->required()->check(CLI::ExistingFile);
  eval->add_option("--seed", seed, "seed used to build the task stream")->each([&](const std::string&) { seed_set = true; });

  auto* drift = app.add_subcommand("drift", "train and write per-checkpoint activation drift");
  drift->add_option("config", config_path, "experiment config")->required()->check(CLI::ExistingFile);
  drift->add_option("--output-dir", output_dir, "override [experiment] output_dir");

  auto* metrics = app.add_subcommand("metrics", "recompute AA / AF from a run directory");
  metrics->add_option("run_dir", run_dir, "directory holding seed_* subdirectories")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const ExperimentConfig cfg = load(config_path, output_dir);
      RunOptions opts;
      if (!resume_dir.empty()) {
        opts.resume_dir = resume_dir;
        opts.resume_after = resume_after;
      }
      print_summary(run_experiment(cfg, opts), cfg);
    } else if (*eval) {
      ExperimentConfig cfg = load(config_path, "");
      const Checkpoint ck = load_checkpoint(checkpoint);
      const TaskStream stream = load_stream(cfg, seed_set ? seed : cfg.seeds.front());
      require(ck.task_index >= 1 && static_cast<std::size_t>(ck.task_index) <= stream.tasks.size(),
              ErrorCode::BadCheckpoint, "checkpoint task index outside the stream");
      require(ck.net.input_dim() == stream.tasks[0].train.inputs.cols() && ck.net.output_dim() == stream.num_outputs,
              ErrorCode::BadCheckpoint, "checkpoint shape does not match the configured stream");
      const auto col = evaluate_column(ck.net, stream, static_cast<std::size_t>(ck.task_index - 1));
      std::cout << "task," << (stream.scenario == Scenario::Regression ? "mse" : "accuracy") << "\n";
      for (std::size_t i = 0; i < col.size(); ++i) std::printf("%zu,%.2f\n", i + 1, col[i]);
    } else if (*drift) {
      const ExperimentConfig cfg = load(config_path, output_dir);
      const auto runs = run_experiment(cfg);
      for (const auto& r : runs) std::cout << (r.dir / "drift.csv").string() << "\n";
    } else if (*metrics) {
      return run_metrics(run_dir);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
