#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "intact/network.hpp"

namespace intact {

// Frozen copy of a network's parameters and buffers after a task.
class ParamSnapshot {
 public:
  ParamSnapshot(const Network& net, int task_index);

  int task_index() const noexcept { return task_index_; }
  const Network& network() const noexcept { return net_; }
  const ParamSet& params() const noexcept { return net_.params(); }
  const ParamSet& buffers() const noexcept { return net_.buffers(); }

 private:
  Network net_;
  int task_index_;
};

struct LayerDelta {
  Matrix dW;
  Vector db;
};

// Current minus snapshot parameters of one parametric layer. For batchnorm the
// result is (dgamma, dbeta) with dW as a C x 1 column.
LayerDelta delta_params(const Network& net, const ParamSnapshot& snap, int layer_index);

// Effective diagonal update of an inference-mode batchnorm layer. Throws
// StatsDrift if the running statistics changed since the snapshot.
struct BatchNormDelta {
  Vector dW_eff;
  Vector db_eff;
  Vector inv_std;  // 1 / sqrt(var + eps)
  Vector mean;
};
BatchNormDelta batchnorm_effective_delta(const Network& net, const ParamSnapshot& snap, int layer_index);

// Binary checkpoint: "INTACTCK", u64 LE header length, JSON header, then LE
// f64 tensors (parameters, then buffers) in layer order.
void save_checkpoint(const std::filesystem::path& path, const Network& net, int task_index);
struct Checkpoint {
  Network net;
  int task_index;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a over the raw bytes of every tensor.
std::uint64_t hash_params(const ParamSet& p);

}  // namespace intact
