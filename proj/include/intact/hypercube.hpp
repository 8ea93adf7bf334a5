#pragma once

// Per-layer activation hypercubes recorded at task boundaries.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "intact/interval.hpp"
#include "intact/network.hpp"

namespace intact {

struct HypercubeConfig {
  std::vector<int> layers;  // activation indices, sorted ascending
  double coverage_p = 90.0;

  double alpha() const { return (100.0 - coverage_p) / 2.0; }
  void validate(const Network& net) const;
};

// Percentile q in [0, 100] of `values` by linear interpolation between order
// statistics at position q/100 * (n - 1). `values` is sorted in place.
double percentile_linear(std::vector<double>& values, double q);

// Per-column [alpha, 100 - alpha] percentile box. Throws EmptyActivations for
// fewer than two rows and NonFiniteActivation on NaN/inf.
Hypercube compute_task_hypercube(const Matrix& activations, double alpha);

Hypercube merge_cumulative(const Hypercube& prev, const Hypercube& next);

struct CenterRadius {
  Vector center;
  Vector radius;
  double r_mean = 0.0;
};
CenterRadius center_radius(const Hypercube& h);

// Smallest per-neuron fraction of rows of `activations` inside `h`.
double min_coverage(const Matrix& activations, const Hypercube& h);

class HypercubeStore {
 public:
  struct LayerRecord {
    std::map<int, Hypercube> per_task;
    std::optional<Hypercube> cumulative;
  };

  // Adds the box for (layer, task) and expands the cumulative box. Throws
  // InvariantViolation if nesting fails.
  void record(int layer, int task, const Hypercube& box);

  bool has_layer(int layer) const { return layers_.count(layer) != 0; }
  const Hypercube& cumulative(int layer) const;
  const Hypercube& per_task(int layer, int task) const;
  std::vector<int> layer_indices() const;
  int last_task() const noexcept { return last_task_; }
  bool empty() const noexcept { return layers_.empty(); }

  // Cumulative boxes after every recorded task, for nesting audits.
  const std::map<int, std::vector<Hypercube>>& history() const noexcept { return history_; }

  std::string to_json() const;
  static HypercubeStore from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static HypercubeStore load(const std::filesystem::path& path);

  friend bool operator==(const HypercubeStore& a, const HypercubeStore& b);

 private:
  std::map<int, LayerRecord> layers_;
  std::map<int, std::vector<Hypercube>> history_;
  int last_task_ = 0;
};

struct CoverageReport {
  int layer = 0;
  double min_fraction = 0.0;
  double required = 0.0;
};

// Collects activations of every layer in cfg.layers over `inputs`, records
// the per-task boxes and checks coverage (at least p% of each neuron's values,
// up to the discreteness of the sample) and nesting. Throws
// InvariantViolation on failure.
std::vector<CoverageReport> end_of_task_update(HypercubeStore& store, const Network& net, const Matrix& inputs,
                                                int task_index, const HypercubeConfig& cfg);

// Activations of layer `layer` for all rows of `inputs`, evaluated in chunks.
Matrix collect_activations(const Network& net, const Matrix& inputs, int layer, Eigen::Index chunk = 2048);

}  // namespace intact
