#include "intact/optimizer.hpp"

#include <cmath>

#include "intact/error.hpp"

namespace intact {

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::Sgd;
  fail(ErrorCode::InvalidConfig, "unknown optimizer '" + name + "'");
}

Optimizer::Optimizer(OptimizerConfig cfg, const ParamSet& like)
    : cfg_(cfg), m_(like.zeros_like()), v_(like.zeros_like()) {
  require(cfg_.lr > 0.0 && std::isfinite(cfg_.lr), ErrorCode::InvalidConfig, "learning rate must be positive");
  require(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0 && cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0, ErrorCode::InvalidConfig,
          "adam betas must lie in [0, 1)");
  require(cfg_.eps > 0.0, ErrorCode::InvalidConfig, "adam eps must be positive");
}

void Optimizer::reset() {
  m_ = m_.zeros_like();
  v_ = v_.zeros_like();
  t_ = 0;
}

void Optimizer::step(ParamSet& params, const ParamSet& grads) {
  require(params.same_shape(m_) && grads.same_shape(m_), ErrorCode::ShapeMismatch,
          "optimizer state does not match parameters");
  ++t_;
  if (cfg_.kind == OptimizerKind::Sgd) {
    params.add_scaled(grads, -cfg_.lr);
    return;
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.layers.size(); ++i)
    for (std::size_t j = 0; j < params.layers[i].size(); ++j) {
      auto& m = m_.layers[i][j];
      auto& v = v_.layers[i][j];
      const auto& g = grads.layers[i][j];
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      params.layers[i][j].array() -= cfg_.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.eps);
    }
}

}  // namespace intact
