#pragma once

// InTAct loss terms. Activation-space terms (Var, Align, Feat) return
// dLoss/dx_l to be injected into Network::backward; parameter-space terms
// (IntDrift, EWC) return parameter gradients directly.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "intact/hypercube.hpp"
#include "intact/network.hpp"
#include "intact/snapshot.hpp"

namespace intact {

struct RegularizerConfig {
  double lambda_intdrift = 0.0;
  double lambda_var = 0.0;
  double lambda_align = 0.0;
  double lambda_feat = 0.0;
  double eps_align = 1e-8;
  double eps_feat = 1e-8;
  std::optional<int> dil_class_scaling;

  double effective_intdrift() const {
    return dil_class_scaling ? lambda_intdrift / static_cast<double>(*dil_class_scaling) : lambda_intdrift;
  }
  void validate() const;
};

struct FeatureMask {
  Vector m;  // entries in {0, 1}
  int s = 0;

  static FeatureMask all_ones(Eigen::Index dim);
  // Keeps round(rho * dim) coordinates (at least one) chosen by `seed`.
  static FeatureMask random_fraction(Eigen::Index dim, double rho, std::uint64_t seed);
};

struct ActivationLoss {
  double value = 0.0;
  ActivationGrads grads;
};

struct ParamLoss {
  double value = 0.0;
  ParamSet grads;
};

// Single-layer drift penalty lambda * sum_i (lo_i^2 + hi_i^2) over the bounds
// of dW x + db on `box`, with gradients with respect to dW and db.
struct LayerDriftLoss {
  double value = 0.0;
  Matrix gW;
  Vector gb;
};
LayerDriftLoss int_drift_affine(const Matrix& dW, const Vector& db, const Hypercube& box, double lambda);
// Valid conv with kernel update dW (out_ch x in_ch*k*k): the bounds of every
// output channel at every position use the patch of `box` under that position.
LayerDriftLoss int_drift_conv(const Conv2d& conv, const Matrix& dW, const Vector& db, const Hypercube& box,
                              double lambda);
// Per-channel affine x -> dW_eff[c] x + db_eff[c]; gradients are returned with
// respect to (dgamma, dbeta).
LayerDriftLoss int_drift_batchnorm(const BatchNormAffine& bn, const BatchNormDelta& d, const Hypercube& box,
                                   double lambda);

// Layer constrained by hypercube layer `target` against the box of
// `previous`: the last parametric layer at or before `target`. Boxes are
// pushed through any ReLU layers between `previous` and that layer. Throws
// InvalidConfig if a parametric layer sits strictly in between.
int drift_target_layer(const Network& net, int previous, int target);
void validate_drift_layers(const Network& net, const std::vector<int>& layers);

// Sum over consecutive pairs of `layers` of the drift penalty against the
// cumulative boxes in `store`. `lambda` is the effective coefficient.
ParamLoss int_drift_loss(const Network& net, const ParamSnapshot& snap, const HypercubeStore& store,
                         const std::vector<int>& layers, double lambda);

// lambda * sum_l (1/N) sum_i ||x_{i,l} - mean_l||^2. Throws BatchTooSmall.
ActivationLoss var_loss(const ForwardCache& cache, const std::vector<int>& layers, double lambda);

// lambda * sum_l ||mean_l - c_{l,t-1}||^2 / (r^mean_{l,t-1} + eps).
ActivationLoss align_loss(const ForwardCache& cache, const HypercubeStore& store, const std::vector<int>& layers,
                          int prev_task, double lambda, double eps);

// (lambda / N) sum_i ||(x_i - x_i^prev) . M||^2 / (s + eps) at `layer`.
ActivationLoss feat_distill_loss(const ForwardCache& cache, const Matrix& prev_feat, int layer,
                                 const FeatureMask& mask, double lambda, double eps);

struct LossBreakdown {
  double task = 0.0;
  double intdrift = 0.0;
  double var = 0.0;
  double align = 0.0;
  double feat = 0.0;
  double ewc = 0.0;
  double total = 0.0;
};

struct TotalLoss {
  double value = 0.0;
  ParamSet grads;
};

// Merges the task loss with activation-space and parameter-space terms into
// one value and one gradient (elementwise sums).
TotalLoss total_loss(const Network& net, const ForwardCache& cache, const LossValue& task,
                     const std::vector<const ActivationLoss*>& activation_terms,
                     const std::vector<const ParamLoss*>& param_terms);

}  // namespace intact
