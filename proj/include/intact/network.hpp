#pragma once

// Dense feed-forward network with manual backpropagation.
//
// Layers are addressed by a 1-based layer index; activation index 0 is the
// network input and activation index l is the output of layer l. All batches
// are N x d matrices with one sample per row.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "intact/tensor.hpp"

namespace intact {

struct Affine {
  Eigen::Index in = 0;
  Eigen::Index out = 0;
};

struct ReLU {
  Eigen::Index dim = 0;
};

// Valid (unpadded) stride-1 convolution over a C x H x W input flattened as
// c * H * W + y * W + x.
struct Conv2d {
  Eigen::Index in_ch = 0;
  Eigen::Index out_ch = 0;
  Eigen::Index kernel = 0;
  Eigen::Index in_h = 0;
  Eigen::Index in_w = 0;

  Eigen::Index out_h() const { return in_h - kernel + 1; }
  Eigen::Index out_w() const { return in_w - kernel + 1; }
  Eigen::Index positions() const { return out_h() * out_w(); }
  Eigen::Index patch_size() const { return in_ch * kernel * kernel; }
};

// Inference-mode batch normalization: a per-channel affine map with frozen
// running statistics. Features are laid out channel-major with `spatial`
// entries per channel.
struct BatchNormAffine {
  Eigen::Index channels = 0;
  Eigen::Index spatial = 1;
  double eps = 1e-5;
};

using LayerKind = std::variant<Affine, ReLU, Conv2d, BatchNormAffine>;

struct LayerSpec {
  LayerKind kind;
  int layer_index = 0;
};

Eigen::Index input_dim(const LayerKind& kind);
Eigen::Index output_dim(const LayerKind& kind);
bool is_parametric(const LayerKind& kind);
std::string kind_name(const LayerKind& kind);

// Patch matrix (positions x in_ch*k*k) of one flattened sample; patch column
// (c * k + ky) * k + kx, row oy * out_w + ox.
Matrix im2col(const Conv2d& c, const Eigen::Ref<const RowVector>& x);

// Per-layer list of tensors. Used for parameters, gradients, optimizer
// moments, Fisher diagonals and parameter deltas alike.
//   Affine: {W (out x in), b (out x 1)}
//   Conv2d: {W (out_ch x in_ch*k*k), b (out_ch x 1)}
//   BatchNormAffine: {gamma (C x 1), beta (C x 1)}; buffers {mean, var}
//   ReLU: {}
struct ParamSet {
  std::vector<std::vector<Matrix>> layers;

  ParamSet zeros_like() const;
  bool same_shape(const ParamSet& other) const;
  std::size_t size() const;

  ParamSet& operator+=(const ParamSet& other);
  ParamSet& operator-=(const ParamSet& other);
  ParamSet& operator*=(double s);
  void add_scaled(const ParamSet& other, double s);
  double squared_norm() const;
  bool all_finite() const;

  // Flat views for finite-difference checks and hashing.
  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> values);
};

ParamSet operator-(ParamSet a, const ParamSet& b);
ParamSet operator+(ParamSet a, const ParamSet& b);

struct ForwardCache {
  std::vector<Matrix> activations;  // activations[l] for l = 0..L
  std::uint64_t version = 0;

  const Matrix& output() const { return activations.back(); }
  const Matrix& at(int layer_index) const;
};

// Extra gradients dLoss/dx_l injected at intermediate activations.
using ActivationGrads = std::map<int, Matrix>;

class Network {
 public:
  explicit Network(std::vector<LayerKind> kinds);

  // in -> Affine -> ReLU -> ... -> Affine(out). Layer indices: the k-th hidden
  // ReLU output is activation 2k; the head output is activation 2*hidden+1.
  static Network mlp(Eigen::Index in, const std::vector<Eigen::Index>& hidden, Eigen::Index out);

  // Kaiming-uniform fan-in weights (bound sqrt(6 / fan_in)), biases uniform in
  // +-1 / sqrt(fan_in), gamma = 1 and beta = 0 for batchnorm, running stats
  // (0, 1).
  void init_kaiming(std::uint64_t seed);

  const std::vector<LayerSpec>& layers() const noexcept { return specs_; }
  int num_layers() const noexcept { return static_cast<int>(specs_.size()); }
  const LayerSpec& layer(int layer_index) const;
  Eigen::Index input_dim() const;
  Eigen::Index output_dim() const;
  Eigen::Index activation_dim(int activation_index) const;

  const ParamSet& params() const noexcept { return params_; }
  const ParamSet& buffers() const noexcept { return buffers_; }
  // Mutable access invalidates outstanding forward caches.
  ParamSet& mutable_params();
  ParamSet& mutable_buffers();
  std::uint64_t version() const noexcept { return version_; }

  ForwardCache forward(const Matrix& x) const;
  // Runs layers 1..layer_index only and returns x_{layer_index}.
  Matrix forward_until(const Matrix& x, int layer_index) const;
  Matrix predict(const Matrix& x) const { return forward_until(x, num_layers()); }

  // Exact gradients of a scalar loss whose derivative with respect to the
  // network output is `output_grad` and with respect to intermediate
  // activations is `extra`. Throws StaleCache if parameters changed since
  // the cache was produced.
  ParamSet backward(const ForwardCache& cache, const Matrix& output_grad, const ActivationGrads& extra = {}) const;

  // Sets batchnorm running statistics of layer `layer_index` from its input
  // activations on `x`.
  void calibrate_batchnorm(int layer_index, const Matrix& x);

 private:
  void bump_version();

  std::vector<LayerSpec> specs_;
  ParamSet params_;
  ParamSet buffers_;
  std::uint64_t version_ = 0;
};

struct LossValue {
  double value = 0.0;
  Matrix grad;  // dLoss / d(network output)
};

// Mean softmax cross-entropy over the batch. Classes with active[c] == false
// are excluded from the softmax (their logits get zero gradient). An empty
// mask means every class is active.
LossValue softmax_cross_entropy(const Matrix& logits, std::span<const int> labels,
                                const std::vector<bool>& active = {});

// (1/N) * sum_i ||pred_i - target_i||^2.
LossValue mse_loss(const Matrix& pred, const Matrix& target);

// Index of the largest active logit per row.
std::vector<int> argmax_rows(const Matrix& logits, const std::vector<bool>& active = {});

}  // namespace intact
