#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "intact/network.hpp"

namespace intact {

// R(i, j): score on task i after training task j, defined for j >= i.
// 0-based indices; accuracies in percent.
class AccuracyMatrix {
 public:
  explicit AccuracyMatrix(std::size_t n_tasks);
  static AccuracyMatrix from_rows(const std::vector<std::vector<double>>& full);

  std::size_t size() const noexcept { return n_; }
  void set(std::size_t i, std::size_t j, double v);
  bool has(std::size_t i, std::size_t j) const;
  double at(std::size_t i, std::size_t j) const;  // throws IncompleteMatrix
  bool column_complete(std::size_t j) const;

  // task_i,task_j,accuracy with 1-based task ids and two decimals.
  std::string to_csv(const std::string& value_name = "accuracy") const;

 private:
  std::size_t n_;
  std::vector<std::optional<double>> cells_;
};

double average_accuracy(const AccuracyMatrix& r);
double average_forgetting_standard(const AccuracyMatrix& r);
double average_forgetting_coda(const AccuracyMatrix& r);

struct Metrics {
  double aa = 0.0;
  std::optional<double> af_std;
  std::optional<double> af_coda;
};
Metrics compute_metrics(const AccuracyMatrix& r);

// Percent of rows whose argmax over active classes equals the label.
double accuracy_percent(const Network& net, const Matrix& inputs, const std::vector<int>& labels,
                        const std::vector<bool>& active);
double mse(const Network& net, const Matrix& inputs, const Matrix& targets);

// Activations of reference samples recorded when their task finished, then
// compared against later checkpoints.
struct DriftBaseline {
  int ref_task = 0;  // 1-based task the sample belongs to
  int layer = 0;
  RowVector activation;
};

struct DriftRow {
  int ref_task = 0;
  int layer = 0;
  int checkpoint_task = 0;
  double drift = 0.0;
};

// ||a - b||_1 / ||b||_1, or the plain L1 distance when the baseline is zero.
double normalized_l1(const RowVector& a, const RowVector& baseline);

class DriftProbe {
 public:
  // Records baselines of `sample` for every layer at the end of `task`.
  void record(const Network& net, int task, const RowVector& sample, const std::vector<int>& layers);
  // Drift of every recorded baseline with ref_task <= task.
  std::vector<DriftRow> probe(const Network& net, int task) const;
  bool has(int ref_task, int layer) const;

 private:
  struct Entry {
    RowVector sample;
    std::vector<DriftBaseline> baselines;
  };
  std::vector<std::pair<int, Entry>> entries_;
};

// Drift of one sample against an explicit baseline. Throws MissingBaseline
// if the baseline is empty.
double drift_probe(const Network& net, const RowVector& sample, int layer, const RowVector& baseline);

std::string drift_csv(const std::vector<DriftRow>& rows);

}  // namespace intact
