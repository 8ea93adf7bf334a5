#include "intact/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "intact/error.hpp"

namespace intact {

AccuracyMatrix::AccuracyMatrix(std::size_t n_tasks) : n_(n_tasks), cells_(n_tasks * n_tasks) {
  require(n_tasks >= 1, ErrorCode::IncompleteMatrix, "matrix needs at least one task");
}

AccuracyMatrix AccuracyMatrix::from_rows(const std::vector<std::vector<double>>& full) {
  AccuracyMatrix r(full.size());
  for (std::size_t i = 0; i < full.size(); ++i) {
    require(full[i].size() == full.size(), ErrorCode::IncompleteMatrix, "matrix rows must be square");
    for (std::size_t j = i; j < full.size(); ++j) r.set(i, j, full[i][j]);
  }
  return r;
}

void AccuracyMatrix::set(std::size_t i, std::size_t j, double v) {
  require(i < n_ && j < n_ && j >= i, ErrorCode::IncompleteMatrix, "entry outside the upper triangle");
  require(std::isfinite(v), ErrorCode::NumericalDivergence, "non-finite score");
  cells_[i * n_ + j] = v;
}

bool AccuracyMatrix::has(std::size_t i, std::size_t j) const {
  return i < n_ && j < n_ && cells_[i * n_ + j].has_value();
}

double AccuracyMatrix::at(std::size_t i, std::size_t j) const {
  require(has(i, j), ErrorCode::IncompleteMatrix,
          "R[" + std::to_string(i + 1) + "][" + std::to_string(j + 1) + "] is unset");
  return *cells_[i * n_ + j];
}

bool AccuracyMatrix::column_complete(std::size_t j) const {
  for (std::size_t i = 0; i <= j; ++i)
    if (!has(i, j)) return false;
  return true;
}

std::string AccuracyMatrix::to_csv(const std::string& value_name) const {
  std::string out = "task_i,task_j," + value_name + "\n";
  char buf[96];
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = i; j < n_; ++j)
      if (has(i, j)) {
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.2f\n", i + 1, j + 1, at(i, j));
        out += buf;
      }
  return out;
}

double average_accuracy(const AccuracyMatrix& r) {
  const std::size_t last = r.size() - 1;
  require(r.column_complete(last), ErrorCode::IncompleteMatrix, "final column incomplete");
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += r.at(i, last);
  return s / static_cast<double>(r.size());
}

double average_forgetting_standard(const AccuracyMatrix& r) {
  const std::size_t n = r.size();
  require(n >= 2, ErrorCode::NeedAtLeastTwoTasks, "forgetting needs two tasks");
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    double best = r.at(i, i);
    for (std::size_t j = i; j < n; ++j) best = std::max(best, r.at(i, j));
    s += best - r.at(i, n - 1);
  }
  return s / static_cast<double>(n - 1);
}

double average_forgetting_coda(const AccuracyMatrix& r) {
  const std::size_t n = r.size();
  require(n >= 2, ErrorCode::NeedAtLeastTwoTasks, "forgetting needs two tasks");
  double s = 0.0;
  for (std::size_t t = 1; t < n; ++t) {
    double step = 0.0;
    for (std::size_t i = 0; i < t; ++i) step += r.at(i, t - 1) - r.at(i, t);
    s += step / static_cast<double>(t);
  }
  return s / static_cast<double>(n - 1);
}

Metrics compute_metrics(const AccuracyMatrix& r) {
  Metrics m;
  m.aa = average_accuracy(r);
  if (r.size() >= 2) {
    m.af_std = average_forgetting_standard(r);
    m.af_coda = average_forgetting_coda(r);
  }
  return m;
}

double accuracy_percent(const Network& net, const Matrix& inputs, const std::vector<int>& labels,
                        const std::vector<bool>& active) {
  require(inputs.rows() > 0, ErrorCode::EmptyDataset, "accuracy on an empty set");
  require(static_cast<Eigen::Index>(labels.size()) == inputs.rows(), ErrorCode::ShapeMismatch, "label count");
  std::size_t correct = 0;
  constexpr Eigen::Index kChunk = 2048;
  for (Eigen::Index s = 0; s < inputs.rows(); s += kChunk) {
    const Eigen::Index n = std::min(kChunk, inputs.rows() - s);
    const auto pred = argmax_rows(net.predict(inputs.middleRows(s, n)), active);
    for (Eigen::Index i = 0; i < n; ++i)
      if (pred[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(s + i)]) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(inputs.rows());
}

double mse(const Network& net, const Matrix& inputs, const Matrix& targets) {
  return mse_loss(net.predict(inputs), targets).value;
}

double normalized_l1(const RowVector& a, const RowVector& baseline) {
  require(a.size() == baseline.size(), ErrorCode::DimensionMismatch, "activation width vs baseline");
  const double dist = (a - baseline).lpNorm<1>();
  const double norm = baseline.lpNorm<1>();
  return norm > 0.0 ? dist / norm : dist;
}

double drift_probe(const Network& net, const RowVector& sample, int layer, const RowVector& baseline) {
  require(baseline.size() > 0, ErrorCode::MissingBaseline, "no baseline activation recorded");
  return normalized_l1(net.forward(sample).at(layer).row(0), baseline);
}

void DriftProbe::record(const Network& net, int task, const RowVector& sample, const std::vector<int>& layers) {
  const ForwardCache cache = net.forward(sample);
  Entry e{sample, {}};
  for (int l : layers) e.baselines.push_back({task, l, cache.at(l).row(0)});
  entries_.emplace_back(task, std::move(e));
}

bool DriftProbe::has(int ref_task, int layer) const {
  for (const auto& [t, e] : entries_)
    if (t == ref_task)
      for (const auto& b : e.baselines)
        if (b.layer == layer) return true;
  return false;
}

std::vector<DriftRow> DriftProbe::probe(const Network& net, int task) const {
  std::vector<DriftRow> rows;
  for (const auto& [t, e] : entries_) {
    if (t > task) continue;
    const ForwardCache cache = net.forward(e.sample);
    for (const auto& b : e.baselines) {
      require(b.activation.size() > 0, ErrorCode::MissingBaseline, "empty baseline");
      rows.push_back({t, b.layer, task, normalized_l1(cache.at(b.layer).row(0), b.activation)});
    }
  }
  return rows;
}

std::string drift_csv(const std::vector<DriftRow>& rows) {
  std::string out = "ref_task,layer,checkpoint_task,drift\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%d,%.17g\n", r.ref_task, r.layer, r.checkpoint_task, r.drift);
    out += buf;
  }
  return out;
}

}  // namespace intact
