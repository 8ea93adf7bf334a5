#include "intact/regularizers.hpp"

#include <algorithm>
#include <cmath>

#include "intact/error.hpp"
#include "intact/random.hpp"

namespace intact {

namespace {

Hypercube relu_box(const Hypercube& h) { return {h.lo().cwiseMax(0.0), h.hi().cwiseMax(0.0)}; }

// Gradient of sum_i (lo_i^2 + hi_i^2) with respect to dW for bounds computed
// from input bounds (in_lo, in_hi); subgradient 0 where dW == 0.
Matrix drift_weight_grad(const Matrix& dW, const Matrix& out_lo, const Matrix& out_hi, const Matrix& in_lo,
                         const Matrix& in_hi) {
  // out_*: positions x out, in_*: positions x in.
  const Matrix same = out_lo.transpose() * in_lo + out_hi.transpose() * in_hi;
  const Matrix swap = out_lo.transpose() * in_hi + out_hi.transpose() * in_lo;
  return (dW.array() > 0.0).select(same, (dW.array() < 0.0).select(swap, 0.0));
}

}  // namespace

void RegularizerConfig::validate() const {
  for (double l : {lambda_intdrift, lambda_var, lambda_align, lambda_feat})
    require(l >= 0.0 && std::isfinite(l), ErrorCode::InvalidConfig, "regularizer weights must be finite and >= 0");
  require(eps_align > 0.0 && eps_feat > 0.0, ErrorCode::InvalidConfig, "stabilizers must be positive");
  if (dil_class_scaling) require(*dil_class_scaling >= 1, ErrorCode::InvalidConfig, "class scaling must be >= 1");
}

FeatureMask FeatureMask::all_ones(Eigen::Index dim) {
  require(dim >= 1, ErrorCode::MaskAllZero, "feature mask needs at least one dimension");
  return {Vector::Ones(dim), static_cast<int>(dim)};
}

FeatureMask FeatureMask::random_fraction(Eigen::Index dim, double rho, std::uint64_t seed) {
  require(rho > 0.0 && rho <= 1.0, ErrorCode::InvalidConfig, "mask fraction must lie in (0, 1]");
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(rho * static_cast<double>(dim))));
  Rng rng(seed);
  const auto perm = rng.permutation(static_cast<std::size_t>(dim));
  FeatureMask mask{Vector::Zero(dim), static_cast<int>(keep)};
  for (std::size_t i = 0; i < keep; ++i) mask.m[static_cast<Eigen::Index>(perm[i])] = 1.0;
  return mask;
}

LayerDriftLoss int_drift_affine(const Matrix& dW, const Vector& db, const Hypercube& box, double lambda) {
  const Hypercube out = linear_map_bounds(dW, db, box);
  LayerDriftLoss r;
  r.value = lambda * (out.lo().squaredNorm() + out.hi().squaredNorm());
  r.gW = 2.0 * lambda *
         drift_weight_grad(dW, out.lo().transpose(), out.hi().transpose(), box.lo().transpose(), box.hi().transpose());
  r.gb = 2.0 * lambda * (out.lo() + out.hi());
  return r;
}

LayerDriftLoss int_drift_conv(const Conv2d& conv, const Matrix& dW, const Vector& db, const Hypercube& box,
                              double lambda) {
  require(dW.rows() == conv.out_ch && dW.cols() == conv.patch_size(), ErrorCode::DimensionMismatch,
          "conv kernel update shape");
  require(db.size() == conv.out_ch, ErrorCode::DimensionMismatch, "conv bias update length");
  require(box.dim() == conv.in_ch * conv.in_h * conv.in_w, ErrorCode::DimensionMismatch, "conv input box dimension");
  const Matrix lo_p = im2col(conv, box.lo().transpose());
  const Matrix hi_p = im2col(conv, box.hi().transpose());
  const Matrix pos = dW.cwiseMax(0.0).transpose();
  const Matrix neg = (-dW).cwiseMax(0.0).transpose();
  Matrix out_lo = lo_p * pos - hi_p * neg;
  Matrix out_hi = hi_p * pos - lo_p * neg;
  out_lo.rowwise() += db.transpose();
  out_hi.rowwise() += db.transpose();
  LayerDriftLoss r;
  r.value = lambda * (out_lo.squaredNorm() + out_hi.squaredNorm());
  r.gW = 2.0 * lambda * drift_weight_grad(dW, out_lo, out_hi, lo_p, hi_p);
  r.gb = 2.0 * lambda * (out_lo + out_hi).colwise().sum().transpose();
  return r;
}

LayerDriftLoss int_drift_batchnorm(const BatchNormAffine& bn, const BatchNormDelta& d, const Hypercube& box,
                                   double lambda) {
  require(box.dim() == bn.channels * bn.spatial, ErrorCode::DimensionMismatch, "batchnorm input box dimension");
  require(d.dW_eff.size() == bn.channels, ErrorCode::DimensionMismatch, "batchnorm delta length");
  LayerDriftLoss r;
  r.gW = Matrix::Zero(bn.channels, 1);
  r.gb = Vector::Zero(bn.channels);
  for (Eigen::Index c = 0; c < bn.channels; ++c) {
    const double w = d.dW_eff[c];
    const double b = d.db_eff[c];
    for (Eigen::Index s = 0; s < bn.spatial; ++s) {
      const Eigen::Index f = c * bn.spatial + s;
      // Input endpoint reaching the lower / upper output bound.
      const double a_lo = w >= 0.0 ? box.lo()[f] : box.hi()[f];
      const double a_hi = w >= 0.0 ? box.hi()[f] : box.lo()[f];
      const double lo = w * a_lo + b;
      const double hi = w * a_hi + b;
      r.value += lambda * (lo * lo + hi * hi);
      const double slope = w != 0.0 ? 1.0 : 0.0;
      // d(w)/d(dgamma) = inv_std, d(b)/d(dgamma) = -mean * inv_std, d(b)/d(dbeta) = 1.
      const double dlo_dg = d.inv_std[c] * (slope * a_lo - d.mean[c]);
      const double dhi_dg = d.inv_std[c] * (slope * a_hi - d.mean[c]);
      r.gW(c, 0) += 2.0 * lambda * (lo * dlo_dg + hi * dhi_dg);
      r.gb[c] += 2.0 * lambda * (lo + hi);
    }
  }
  return r;
}

int drift_target_layer(const Network& net, int previous, int target) {
  require(previous >= 0 && previous < target && target <= net.num_layers(), ErrorCode::InvalidConfig,
          "drift layer pair out of order");
  int k = target;
  while (k > previous && !is_parametric(net.layer(k).kind)) --k;
  require(k > previous, ErrorCode::InvalidConfig,
          "no parametric layer between hypercube layers " + std::to_string(previous) + " and " + std::to_string(target));
  for (int j = previous + 1; j < k; ++j)
    require(!is_parametric(net.layer(j).kind), ErrorCode::InvalidConfig,
            "hypercube layers " + std::to_string(previous) + " and " + std::to_string(target) +
                " are separated by more than one parametric layer");
  return k;
}

void validate_drift_layers(const Network& net, const std::vector<int>& layers) {
  for (std::size_t i = 1; i < layers.size(); ++i) drift_target_layer(net, layers[i - 1], layers[i]);
}

ParamLoss int_drift_loss(const Network& net, const ParamSnapshot& snap, const HypercubeStore& store,
                         const std::vector<int>& layers, double lambda) {
  ParamLoss out{0.0, net.params().zeros_like()};
  if (layers.size() < 2 || lambda == 0.0) return out;
  for (std::size_t i = 1; i < layers.size(); ++i) {
    const int prev = layers[i - 1];
    const int k = drift_target_layer(net, prev, layers[i]);
    Hypercube box = store.cumulative(prev);
    for (int j = prev + 1; j < k; ++j) box = relu_box(box);
    const auto& kind = net.layer(k).kind;
    LayerDriftLoss term;
    if (std::holds_alternative<BatchNormAffine>(kind)) {
      term = int_drift_batchnorm(std::get<BatchNormAffine>(kind), batchnorm_effective_delta(net, snap, k), box, lambda);
    } else {
      const LayerDelta d = delta_params(net, snap, k);
      if (const auto* conv = std::get_if<Conv2d>(&kind))
        term = int_drift_conv(*conv, d.dW, d.db, box, lambda);
      else
        term = int_drift_affine(d.dW, d.db, box, lambda);
    }
    out.value += term.value;
    auto& g = out.grads.layers[static_cast<std::size_t>(k - 1)];
    g[0] += term.gW;
    g[1].col(0) += term.gb;
  }
  return out;
}

ActivationLoss var_loss(const ForwardCache& cache, const std::vector<int>& layers, double lambda) {
  ActivationLoss out;
  for (int l : layers) {
    const Matrix& a = cache.at(l);
    require(a.rows() >= 2, ErrorCode::BatchTooSmall, "dispersion needs a batch of at least two");
    const double n = static_cast<double>(a.rows());
    Matrix centered = a.rowwise() - a.colwise().mean();
    out.value += lambda * centered.squaredNorm() / n;
    if (lambda != 0.0) out.grads[l] = (2.0 * lambda / n) * centered;
  }
  return out;
}

ActivationLoss align_loss(const ForwardCache& cache, const HypercubeStore& store, const std::vector<int>& layers,
                          int prev_task, double lambda, double eps) {
  ActivationLoss out;
  for (int l : layers) {
    const CenterRadius prev = center_radius(store.per_task(l, prev_task));
    const Matrix& a = cache.at(l);
    require(a.cols() == prev.center.size(), ErrorCode::DimensionMismatch, "activation width vs stored center");
    require(a.rows() >= 1, ErrorCode::BatchTooSmall, "empty batch");
    const double n = static_cast<double>(a.rows());
    const RowVector diff = a.colwise().mean() - prev.center.transpose();
    const double denom = prev.r_mean + eps;
    out.value += lambda * diff.squaredNorm() / denom;
    if (lambda != 0.0) out.grads[l] = ((2.0 * lambda / (n * denom)) * diff).replicate(a.rows(), 1);
  }
  return out;
}

ActivationLoss feat_distill_loss(const ForwardCache& cache, const Matrix& prev_feat, int layer,
                                 const FeatureMask& mask, double lambda, double eps) {
  const Matrix& cur = cache.at(layer);
  require(cur.rows() == prev_feat.rows() && cur.cols() == prev_feat.cols(), ErrorCode::DimensionMismatch,
          "current and previous features differ in shape");
  require(mask.m.size() == cur.cols(), ErrorCode::DimensionMismatch, "mask width vs feature width");
  require(mask.s >= 1 && mask.m.sum() > 0.0, ErrorCode::MaskAllZero, "feature mask selects nothing");
  require(cur.rows() >= 1, ErrorCode::BatchTooSmall, "empty batch");
  const double n = static_cast<double>(cur.rows());
  const double denom = static_cast<double>(mask.s) + eps;
  const Matrix diff = (cur - prev_feat).array().rowwise() * mask.m.transpose().array();
  ActivationLoss out;
  out.value = lambda * diff.squaredNorm() / (n * denom);
  if (lambda != 0.0)
    out.grads[layer] = (2.0 * lambda / (n * denom)) * (diff.array().rowwise() * mask.m.transpose().array()).matrix();
  return out;
}

TotalLoss total_loss(const Network& net, const ForwardCache& cache, const LossValue& task,
                     const std::vector<const ActivationLoss*>& activation_terms,
                     const std::vector<const ParamLoss*>& param_terms) {
  TotalLoss out;
  out.value = task.value;
  ActivationGrads merged;
  for (const ActivationLoss* t : activation_terms) {
    out.value += t->value;
    for (const auto& [l, g] : t->grads) {
      auto it = merged.find(l);
      if (it == merged.end())
        merged.emplace(l, g);
      else
        it->second += g;
    }
  }
  // The network input has no parameters upstream.
  merged.erase(0);
  out.grads = net.backward(cache, task.grad, merged);
  for (const ParamLoss* t : param_terms) {
    out.value += t->value;
    out.grads += t->grads;
  }
  return out;
}

}  // namespace intact
