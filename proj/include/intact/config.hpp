#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "intact/data.hpp"
#include "intact/hypercube.hpp"
#include "intact/optimizer.hpp"
#include "intact/regularizers.hpp"

namespace intact {

enum class Method { Intact, Ewc, Finetune };
std::string to_string(Method m);
Method parse_method(const std::string& s);

enum class MaskPolicy { AllOnes, RandomFraction };

enum class VarReduction { Sum, Mean };

struct ExperimentConfig {
  // [experiment]
  std::string name = "experiment";
  Method method = Method::Intact;
  std::vector<std::uint64_t> seeds = {0};
  std::filesystem::path output_dir = "runs/experiment";

  // [data]
  std::string dataset = "mnist";  // mnist | fmnist | gaussian
  std::filesystem::path data_root = "data";
  Scenario scenario = Scenario::Dil;
  int n_tasks = 5;
  std::size_t train_per_task = 0;  // 0 keeps every sample
  std::size_t test_per_task = 0;
  std::size_t toy_points_per_task = 200;
  double toy_noise_sd = 0.01;
  std::size_t toy_test_points = 200;

  // [model]
  std::vector<Eigen::Index> hidden = {400, 400, 400};

  // [train]
  OptimizerConfig optimizer;
  std::size_t batch_size = 512;
  int epochs = 5;
  bool reset_optimizer = true;

  // [intact]
  RegularizerConfig reg;
  HypercubeConfig cube;
  std::vector<int> var_layers;  // defaults to cube.layers
  VarReduction var_reduction = VarReduction::Sum;
  int feat_layer = -1;          // defaults to the first hypercube layer
  MaskPolicy mask = MaskPolicy::AllOnes;
  double mask_fraction = 1.0;

  // [ewc]
  double ewc_lambda = 0.0;
  std::size_t fisher_samples = 1000;

  // [output]
  bool save_checkpoints = true;
  std::size_t drift_refs_per_task = 1;
  std::vector<int> drift_layers;  // defaults to cube.layers

  std::string source;         // canonical text the hash is computed from
  std::uint64_t hash = 0;

  Eigen::Index input_dim() const;
  Eigen::Index output_dim(const TaskStream& stream) const { return stream.num_outputs; }
};

// INI-style text with [sections] and key = value lines; ';' / '#' start
// comments. Unknown sections or keys, malformed values and inconsistent
// settings raise InvalidConfig.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Applies the data-root override from INTACT_DATA_ROOT when set.
void apply_environment(ExperimentConfig& cfg);

std::string hash_hex(std::uint64_t h);

}  // namespace intact
