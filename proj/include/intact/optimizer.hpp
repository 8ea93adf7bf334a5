#pragma once

#include <cstdint>
#include <string>

#include "intact/network.hpp"

namespace intact {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

OptimizerKind parse_optimizer_kind(const std::string& name);

class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, const ParamSet& like);

  // Applies one update of `grads` to `params`. Throws ShapeMismatch.
  void step(ParamSet& params, const ParamSet& grads);
  void reset();

  const OptimizerConfig& config() const noexcept { return cfg_; }
  std::uint64_t steps() const noexcept { return t_; }

 private:
  OptimizerConfig cfg_;
  ParamSet m_;
  ParamSet v_;
  std::uint64_t t_ = 0;
};

}  // namespace intact
