#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "intact/tensor.hpp"

namespace intact {

// Decoded IDX file: big-endian dims followed by u8 payload.
struct IdxTensor {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

// Accepts 0x00000803 (3-d u8 images) and 0x00000801 (u8 labels). Throws
// BadMagic or TruncatedFile.
IdxTensor parse_idx(std::span<const std::uint8_t> bytes);
IdxTensor read_idx(const std::filesystem::path& path);

struct Dataset {
  Matrix inputs;            // N x d
  std::vector<int> labels;  // classification
  Matrix targets;           // regression, N x k

  Eigen::Index size() const { return inputs.rows(); }
  bool regression() const { return targets.size() > 0; }
};

// Images scaled by 1/255, one flattened image per row.
Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels);
// <root>/<name>/{train,test}-{images,labels}.idx. Throws DataMissing.
struct DatasetPair {
  Dataset train;
  Dataset test;
};
DatasetPair load_dataset_dir(const std::filesystem::path& root, const std::string& name);

enum class Scenario { Cil, Dil, Regression };
std::string to_string(Scenario s);
Scenario parse_scenario(const std::string& s);

struct Task {
  Dataset train;
  Dataset test;
  std::vector<int> classes;  // original class ids; empty for regression
};

struct TaskStream {
  Scenario scenario = Scenario::Cil;
  std::vector<Task> tasks;
  Eigen::Index num_outputs = 0;
  Dataset full_test;  // regression only: the whole input domain

  // Classes the head may predict after training task `task` (0-based). CIL:
  // every class seen so far; DIL: the shared label space.
  std::vector<bool> active_classes(std::size_t task) const;
};

// Splits classes 0..C-1 into n_tasks consecutive groups. CIL keeps class ids;
// DIL maps each sample to its within-group index. Samples of a task keep
// their file order, then are shuffled with `seed`. Throws IndivisibleClasses.
TaskStream make_split_stream(const DatasetPair& data, Scenario scenario, int n_tasks, std::uint64_t seed);

// Keeps at most `per_task` training and `test_per_task` test rows per task.
void truncate_stream(TaskStream& stream, std::size_t per_task, std::size_t test_per_task);

// Target exp(-x^2/2) on [-3, 3] split into equal contiguous segments. Train
// points are uniform in their segment with additive N(0, noise_sd^2) noise;
// test points form a noise-free uniform grid per segment and over the whole
// domain.
TaskStream gaussian_toy_stream(int n_tasks, std::size_t points_per_task, double noise_sd, std::uint64_t seed,
                               std::size_t test_points_per_task = 200);

inline double gaussian_target(double x) { return std::exp(-0.5 * x * x); }

}  // namespace intact
