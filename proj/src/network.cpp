#include "intact/network.hpp"

#include <atomic>
#include <cmath>
#include <limits>

#include "intact/error.hpp"
#include "intact/random.hpp"

namespace intact {

namespace {

std::atomic<std::uint64_t> g_version{1};

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void col2im_add(const Conv2d& c, const Matrix& dpatches, Matrix& dx, Eigen::Index row) {
  const Eigen::Index k = c.kernel;
  for (Eigen::Index oy = 0; oy < c.out_h(); ++oy)
    for (Eigen::Index ox = 0; ox < c.out_w(); ++ox) {
      const Eigen::Index pos = oy * c.out_w() + ox;
      for (Eigen::Index ch = 0; ch < c.in_ch; ++ch)
        for (Eigen::Index ky = 0; ky < k; ++ky)
          for (Eigen::Index kx = 0; kx < k; ++kx)
            dx(row, (ch * c.in_h + oy + ky) * c.in_w + ox + kx) += dpatches(pos, (ch * k + ky) * k + kx);
    }
}

Matrix forward_layer(const LayerKind& kind, const std::vector<Matrix>& p, const std::vector<Matrix>& buf,
                     const Matrix& x) {
  return std::visit(
      overloaded{
          [&](const Affine&) -> Matrix {
            Matrix y = x * p[0].transpose();
            y.rowwise() += p[1].col(0).transpose();
            return y;
          },
          [&](const ReLU&) -> Matrix { return x.cwiseMax(0.0); },
          [&](const Conv2d& c) -> Matrix {
            Matrix y(x.rows(), c.out_ch * c.positions());
            for (Eigen::Index n = 0; n < x.rows(); ++n) {
              Matrix out = im2col(c, x.row(n)) * p[0].transpose();
              out.rowwise() += p[1].col(0).transpose();
              for (Eigen::Index o = 0; o < c.out_ch; ++o)
                y.block(n, o * c.positions(), 1, c.positions()) = out.col(o).transpose();
            }
            return y;
          },
          [&](const BatchNormAffine& bn) -> Matrix {
            Matrix y(x.rows(), x.cols());
            for (Eigen::Index ch = 0; ch < bn.channels; ++ch) {
              const double inv = 1.0 / std::sqrt(buf[1](ch, 0) + bn.eps);
              const double scale = p[0](ch, 0) * inv;
              const double shift = p[1](ch, 0) - scale * buf[0](ch, 0);
              y.middleCols(ch * bn.spatial, bn.spatial) = (x.middleCols(ch * bn.spatial, bn.spatial).array() * scale + shift).matrix();
            }
            return y;
          },
      },
      kind);
}

// Accumulates parameter gradients into `g` and returns dLoss/dx.
Matrix backward_layer(const LayerKind& kind, const std::vector<Matrix>& p, const std::vector<Matrix>& buf,
                      const Matrix& x, const Matrix& dy, std::vector<Matrix>& g) {
  return std::visit(
      overloaded{
          [&](const Affine&) -> Matrix {
            g[0].noalias() += dy.transpose() * x;
            g[1].col(0) += dy.colwise().sum().transpose();
            return dy * p[0];
          },
          [&](const ReLU&) -> Matrix { return (x.array() > 0.0).select(dy, 0.0); },
          [&](const Conv2d& c) -> Matrix {
            Matrix dx = Matrix::Zero(x.rows(), x.cols());
            Matrix dout(c.positions(), c.out_ch);
            for (Eigen::Index n = 0; n < x.rows(); ++n) {
              for (Eigen::Index o = 0; o < c.out_ch; ++o)
                dout.col(o) = dy.block(n, o * c.positions(), 1, c.positions()).transpose();
              const Matrix patches = im2col(c, x.row(n));
              g[0].noalias() += dout.transpose() * patches;
              g[1].col(0) += dout.colwise().sum().transpose();
              col2im_add(c, dout * p[0], dx, n);
            }
            return dx;
          },
          [&](const BatchNormAffine& bn) -> Matrix {
            Matrix dx(x.rows(), x.cols());
            for (Eigen::Index ch = 0; ch < bn.channels; ++ch) {
              const double inv = 1.0 / std::sqrt(buf[1](ch, 0) + bn.eps);
              const auto xs = x.middleCols(ch * bn.spatial, bn.spatial).array();
              const auto ds = dy.middleCols(ch * bn.spatial, bn.spatial).array();
              g[0](ch, 0) += (ds * (xs - buf[0](ch, 0)) * inv).sum();
              g[1](ch, 0) += ds.sum();
              dx.middleCols(ch * bn.spatial, bn.spatial) = (ds * (p[0](ch, 0) * inv)).matrix();
            }
            return dx;
          },
      },
      kind);
}

}  // namespace

Matrix im2col(const Conv2d& c, const Eigen::Ref<const RowVector>& x) {
  const Eigen::Index k = c.kernel;
  Matrix patches(c.positions(), c.patch_size());
  for (Eigen::Index oy = 0; oy < c.out_h(); ++oy)
    for (Eigen::Index ox = 0; ox < c.out_w(); ++ox) {
      const Eigen::Index pos = oy * c.out_w() + ox;
      for (Eigen::Index ch = 0; ch < c.in_ch; ++ch)
        for (Eigen::Index ky = 0; ky < k; ++ky)
          for (Eigen::Index kx = 0; kx < k; ++kx)
            patches(pos, (ch * k + ky) * k + kx) = x((ch * c.in_h + oy + ky) * c.in_w + ox + kx);
    }
  return patches;
}

Eigen::Index input_dim(const LayerKind& kind) {
  return std::visit(overloaded{
                        [](const Affine& a) { return a.in; },
                        [](const ReLU& r) { return r.dim; },
                        [](const Conv2d& c) { return c.in_ch * c.in_h * c.in_w; },
                        [](const BatchNormAffine& b) { return b.channels * b.spatial; },
                    },
                    kind);
}

Eigen::Index output_dim(const LayerKind& kind) {
  return std::visit(overloaded{
                        [](const Affine& a) { return a.out; },
                        [](const ReLU& r) { return r.dim; },
                        [](const Conv2d& c) { return c.out_ch * c.positions(); },
                        [](const BatchNormAffine& b) { return b.channels * b.spatial; },
                    },
                    kind);
}

bool is_parametric(const LayerKind& kind) { return !std::holds_alternative<ReLU>(kind); }

std::string kind_name(const LayerKind& kind) {
  return std::visit(overloaded{
                        [](const Affine&) { return std::string("affine"); },
                        [](const ReLU&) { return std::string("relu"); },
                        [](const Conv2d&) { return std::string("conv2d"); },
                        [](const BatchNormAffine&) { return std::string("batchnorm"); },
                    },
                    kind);
}

// ---------------------------------------------------------------------------
// ParamSet

ParamSet ParamSet::zeros_like() const {
  ParamSet z;
  z.layers.reserve(layers.size());
  for (const auto& layer : layers) {
    auto& out = z.layers.emplace_back();
    for (const auto& t : layer) out.push_back(Matrix::Zero(t.rows(), t.cols()));
  }
  return z;
}

bool ParamSet::same_shape(const ParamSet& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].size() != other.layers[i].size()) return false;
    for (std::size_t j = 0; j < layers[i].size(); ++j)
      if (layers[i][j].rows() != other.layers[i][j].rows() || layers[i][j].cols() != other.layers[i][j].cols())
        return false;
  }
  return true;
}

std::size_t ParamSet::size() const {
  std::size_t n = 0;
  for (const auto& layer : layers)
    for (const auto& t : layer) n += static_cast<std::size_t>(t.size());
  return n;
}

ParamSet& ParamSet::operator+=(const ParamSet& other) {
  add_scaled(other, 1.0);
  return *this;
}

ParamSet& ParamSet::operator-=(const ParamSet& other) {
  add_scaled(other, -1.0);
  return *this;
}

ParamSet& ParamSet::operator*=(double s) {
  for (auto& layer : layers)
    for (auto& t : layer) t *= s;
  return *this;
}

void ParamSet::add_scaled(const ParamSet& other, double s) {
  require(same_shape(other), ErrorCode::ShapeMismatch, "parameter sets differ in shape");
  for (std::size_t i = 0; i < layers.size(); ++i)
    for (std::size_t j = 0; j < layers[i].size(); ++j) layers[i][j] += s * other.layers[i][j];
}

double ParamSet::squared_norm() const {
  double s = 0.0;
  for (const auto& layer : layers)
    for (const auto& t : layer) s += t.squaredNorm();
  return s;
}

bool ParamSet::all_finite() const {
  for (const auto& layer : layers)
    for (const auto& t : layer)
      if (!t.allFinite()) return false;
  return true;
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(size());
  for (const auto& layer : layers)
    for (const auto& t : layer) flat.insert(flat.end(), t.data(), t.data() + t.size());
  return flat;
}

void ParamSet::assign_flat(std::span<const double> values) {
  require(values.size() == size(), ErrorCode::ShapeMismatch, "flat parameter vector has wrong length");
  std::size_t k = 0;
  for (auto& layer : layers)
    for (auto& t : layer) {
      std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(k), t.size(), t.data());
      k += static_cast<std::size_t>(t.size());
    }
}

ParamSet operator-(ParamSet a, const ParamSet& b) {
  a -= b;
  return a;
}

ParamSet operator+(ParamSet a, const ParamSet& b) {
  a += b;
  return a;
}

const Matrix& ForwardCache::at(int layer_index) const {
  require(layer_index >= 0 && static_cast<std::size_t>(layer_index) < activations.size(), ErrorCode::MissingLayer,
          "no cached activation for layer " + std::to_string(layer_index));
  return activations[static_cast<std::size_t>(layer_index)];
}

// ---------------------------------------------------------------------------
// Network

Network::Network(std::vector<LayerKind> kinds) {
  require(!kinds.empty(), ErrorCode::ShapeMismatch, "network needs at least one layer");
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    require(intact::input_dim(kinds[i]) > 0 && intact::output_dim(kinds[i]) > 0, ErrorCode::ShapeMismatch,
            "layer " + std::to_string(i + 1) + " has an empty shape");
    if (i > 0)
      require(intact::output_dim(kinds[i - 1]) == intact::input_dim(kinds[i]), ErrorCode::ShapeMismatch,
              "layer " + std::to_string(i + 1) + " input does not match previous output");
    if (const auto* c = std::get_if<Conv2d>(&kinds[i]))
      require(c->kernel >= 1 && c->kernel <= c->in_h && c->kernel <= c->in_w, ErrorCode::ShapeMismatch,
              "conv kernel larger than input");
    specs_.push_back({kinds[i], static_cast<int>(i) + 1});
  }
  for (const auto& spec : specs_) {
    auto& p = params_.layers.emplace_back();
    auto& b = buffers_.layers.emplace_back();
    std::visit(overloaded{
                   [&](const Affine& a) {
                     p.push_back(Matrix::Zero(a.out, a.in));
                     p.push_back(Matrix::Zero(a.out, 1));
                   },
                   [&](const ReLU&) {},
                   [&](const Conv2d& c) {
                     p.push_back(Matrix::Zero(c.out_ch, c.patch_size()));
                     p.push_back(Matrix::Zero(c.out_ch, 1));
                   },
                   [&](const BatchNormAffine& bn) {
                     p.push_back(Matrix::Ones(bn.channels, 1));
                     p.push_back(Matrix::Zero(bn.channels, 1));
                     b.push_back(Matrix::Zero(bn.channels, 1));
                     b.push_back(Matrix::Ones(bn.channels, 1));
                   },
               },
               spec.kind);
  }
  bump_version();
}

Network Network::mlp(Eigen::Index in, const std::vector<Eigen::Index>& hidden, Eigen::Index out) {
  std::vector<LayerKind> kinds;
  Eigen::Index prev = in;
  for (Eigen::Index h : hidden) {
    kinds.emplace_back(Affine{prev, h});
    kinds.emplace_back(ReLU{h});
    prev = h;
  }
  kinds.emplace_back(Affine{prev, out});
  return Network(std::move(kinds));
}

void Network::init_kaiming(std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    auto& p = params_.layers[i];
    std::visit(overloaded{
                   [&](const Affine& a) {
                     const double bound = std::sqrt(6.0 / static_cast<double>(a.in));
                     for (Eigen::Index k = 0; k < p[0].size(); ++k) p[0].data()[k] = rng.uniform(-bound, bound);
                     const double bb = 1.0 / std::sqrt(static_cast<double>(a.in));
                     for (Eigen::Index k = 0; k < p[1].size(); ++k) p[1].data()[k] = rng.uniform(-bb, bb);
                   },
                   [&](const ReLU&) {},
                   [&](const Conv2d& c) {
                     const double bound = std::sqrt(6.0 / static_cast<double>(c.patch_size()));
                     for (Eigen::Index k = 0; k < p[0].size(); ++k) p[0].data()[k] = rng.uniform(-bound, bound);
                     const double bb = 1.0 / std::sqrt(static_cast<double>(c.patch_size()));
                     for (Eigen::Index k = 0; k < p[1].size(); ++k) p[1].data()[k] = rng.uniform(-bb, bb);
                   },
                   [&](const BatchNormAffine&) {
                     p[0].setOnes();
                     p[1].setZero();
                     buffers_.layers[i][0].setZero();
                     buffers_.layers[i][1].setOnes();
                   },
               },
               specs_[i].kind);
  }
  bump_version();
}

const LayerSpec& Network::layer(int layer_index) const {
  require(layer_index >= 1 && layer_index <= num_layers(), ErrorCode::MissingLayer,
          "layer index " + std::to_string(layer_index) + " out of range");
  return specs_[static_cast<std::size_t>(layer_index - 1)];
}

Eigen::Index Network::input_dim() const { return intact::input_dim(specs_.front().kind); }
Eigen::Index Network::output_dim() const { return intact::output_dim(specs_.back().kind); }

Eigen::Index Network::activation_dim(int activation_index) const {
  if (activation_index == 0) return input_dim();
  return intact::output_dim(layer(activation_index).kind);
}

ParamSet& Network::mutable_params() {
  bump_version();
  return params_;
}

ParamSet& Network::mutable_buffers() {
  bump_version();
  return buffers_;
}

void Network::bump_version() { version_ = g_version.fetch_add(1, std::memory_order_relaxed); }

ForwardCache Network::forward(const Matrix& x) const {
  require(x.cols() == input_dim(), ErrorCode::ShapeMismatch,
          "input has " + std::to_string(x.cols()) + " columns, network expects " + std::to_string(input_dim()));
  ForwardCache cache;
  cache.version = version_;
  cache.activations.reserve(specs_.size() + 1);
  cache.activations.push_back(x);
  for (std::size_t i = 0; i < specs_.size(); ++i)
    cache.activations.push_back(
        forward_layer(specs_[i].kind, params_.layers[i], buffers_.layers[i], cache.activations.back()));
  return cache;
}

Matrix Network::forward_until(const Matrix& x, int layer_index) const {
  require(x.cols() == input_dim(), ErrorCode::ShapeMismatch, "input width does not match network");
  require(layer_index >= 0 && layer_index <= num_layers(), ErrorCode::MissingLayer,
          "layer index " + std::to_string(layer_index) + " out of range");
  Matrix h = x;
  for (int i = 0; i < layer_index; ++i) {
    const auto k = static_cast<std::size_t>(i);
    h = forward_layer(specs_[k].kind, params_.layers[k], buffers_.layers[k], h);
  }
  return h;
}

ParamSet Network::backward(const ForwardCache& cache, const Matrix& output_grad, const ActivationGrads& extra) const {
  require(cache.version == version_, ErrorCode::StaleCache, "forward cache predates a parameter update");
  require(cache.activations.size() == specs_.size() + 1, ErrorCode::StaleCache, "cache depth mismatch");
  const Matrix& out = cache.output();
  require(output_grad.rows() == out.rows() && output_grad.cols() == out.cols(), ErrorCode::ShapeMismatch,
          "output gradient shape");
  for (const auto& [idx, g] : extra) {
    const Matrix& a = cache.at(idx);
    require(g.rows() == a.rows() && g.cols() == a.cols(), ErrorCode::ShapeMismatch,
            "activation gradient shape at layer " + std::to_string(idx));
  }

  ParamSet grads = params_.zeros_like();
  Matrix dy = output_grad;
  for (int l = num_layers(); l >= 1; --l) {
    if (auto it = extra.find(l); it != extra.end()) dy += it->second;
    const auto k = static_cast<std::size_t>(l - 1);
    dy = backward_layer(specs_[k].kind, params_.layers[k], buffers_.layers[k], cache.activations[k], dy,
                        grads.layers[k]);
  }
  return grads;
}

void Network::calibrate_batchnorm(int layer_index, const Matrix& x) {
  const auto& spec = layer(layer_index);
  const auto* bn = std::get_if<BatchNormAffine>(&spec.kind);
  require(bn != nullptr, ErrorCode::MissingLayer, "layer " + std::to_string(layer_index) + " is not batchnorm");
  const Matrix in = forward_until(x, layer_index - 1);
  auto& buf = buffers_.layers[static_cast<std::size_t>(layer_index - 1)];
  for (Eigen::Index ch = 0; ch < bn->channels; ++ch) {
    const auto block = in.middleCols(ch * bn->spatial, bn->spatial).array();
    const double mean = block.mean();
    buf[0](ch, 0) = mean;
    buf[1](ch, 0) = (block - mean).square().mean();
  }
  bump_version();
}

// ---------------------------------------------------------------------------
// Heads

LossValue softmax_cross_entropy(const Matrix& logits, std::span<const int> labels, const std::vector<bool>& active) {
  const Eigen::Index n = logits.rows();
  const Eigen::Index c = logits.cols();
  require(static_cast<Eigen::Index>(labels.size()) == n, ErrorCode::ShapeMismatch, "label count vs batch size");
  require(active.empty() || static_cast<Eigen::Index>(active.size()) == c, ErrorCode::ShapeMismatch,
          "class mask width");
  require(n > 0, ErrorCode::EmptyDataset, "empty batch");
  auto is_active = [&](Eigen::Index k) { return active.empty() || active[static_cast<std::size_t>(k)]; };

  LossValue out;
  out.grad = Matrix::Zero(n, c);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    require(y >= 0 && y < c && is_active(y), ErrorCode::ShapeMismatch, "label outside active classes");
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < c; ++k)
      if (is_active(k)) mx = std::max(mx, logits(i, k));
    double z = 0.0;
    for (Eigen::Index k = 0; k < c; ++k)
      if (is_active(k)) z += std::exp(logits(i, k) - mx);
    const double log_z = mx + std::log(z);
    total += log_z - logits(i, y);
    for (Eigen::Index k = 0; k < c; ++k)
      if (is_active(k)) out.grad(i, k) = std::exp(logits(i, k) - log_z) / static_cast<double>(n);
    out.grad(i, y) -= 1.0 / static_cast<double>(n);
  }
  out.value = total / static_cast<double>(n);
  return out;
}

LossValue mse_loss(const Matrix& pred, const Matrix& target) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(), ErrorCode::ShapeMismatch,
          "prediction/target shape");
  require(pred.rows() > 0, ErrorCode::EmptyDataset, "empty batch");
  const double n = static_cast<double>(pred.rows());
  const Matrix diff = pred - target;
  return {diff.squaredNorm() / n, (2.0 / n) * diff};
}

std::vector<int> argmax_rows(const Matrix& logits, const std::vector<bool>& active) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()), -1);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < logits.cols(); ++k) {
      if (!active.empty() && !active[static_cast<std::size_t>(k)]) continue;
      if (logits(i, k) > best) {
        best = logits(i, k);
        out[static_cast<std::size_t>(i)] = static_cast<int>(k);
      }
    }
  }
  return out;
}

}  // namespace intact
