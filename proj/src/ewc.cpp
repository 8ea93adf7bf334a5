#include "intact/ewc.hpp"

#include <cmath>

#include "intact/error.hpp"
#include "intact/random.hpp"

namespace intact {

void FisherDiagonal::accumulate(const ParamSet& f, const ParamSet& params) {
  if (tasks == 0)
    importance = f;
  else
    importance += f;
  anchor = params;
  ++tasks;
}

ParamSet fisher_estimate(const Network& net, const Matrix& inputs, const SampleLossGrad& loss_grad,
                         std::size_t n_samples, std::uint64_t seed) {
  const auto rows = static_cast<std::size_t>(inputs.rows());
  require(rows > 0, ErrorCode::EmptyDataset, "Fisher estimate needs data");
  std::vector<std::size_t> picks;
  if (n_samples == 0 || n_samples >= rows) {
    picks.resize(rows);
    for (std::size_t i = 0; i < rows; ++i) picks[i] = i;
  } else {
    Rng rng(seed);
    picks = rng.permutation(rows);
    picks.resize(n_samples);
  }
  ParamSet fisher = net.params().zeros_like();
  for (std::size_t i : picks) {
    const auto r = static_cast<Eigen::Index>(i);
    const ForwardCache cache = net.forward(inputs.row(r));
    const RowVector g_out = loss_grad(cache.output().row(0), r);
    const ParamSet g = net.backward(cache, g_out);
    for (std::size_t l = 0; l < g.layers.size(); ++l)
      for (std::size_t j = 0; j < g.layers[l].size(); ++j) fisher.layers[l][j] += g.layers[l][j].cwiseAbs2();
  }
  fisher *= 1.0 / static_cast<double>(picks.size());
  return fisher;
}

ParamSet fisher_estimate_classification(const Network& net, const Matrix& inputs, std::span<const int> labels,
                                        const std::vector<bool>& active, std::size_t n_samples, std::uint64_t seed) {
  require(static_cast<Eigen::Index>(labels.size()) == inputs.rows(), ErrorCode::ShapeMismatch,
          "label count vs inputs");
  return fisher_estimate(
      net, inputs,
      [&](const RowVector& out, Eigen::Index i) -> RowVector {
        const int y = labels[static_cast<std::size_t>(i)];
        return softmax_cross_entropy(out, std::span<const int>(&y, 1), active).grad.row(0);
      },
      n_samples, seed);
}

ParamSet fisher_estimate_regression(const Network& net, const Matrix& inputs, const Matrix& targets,
                                    std::size_t n_samples, std::uint64_t seed) {
  require(targets.rows() == inputs.rows(), ErrorCode::ShapeMismatch, "target count vs inputs");
  return fisher_estimate(
      net, inputs,
      // Unit-variance Gaussian likelihood: gradient of ||y - f||^2 / 2.
      [&](const RowVector& out, Eigen::Index i) -> RowVector { return out - targets.row(i); }, n_samples, seed);
}

ParamLoss ewc_penalty(const Network& net, const FisherDiagonal& fisher, double lambda) {
  require(fisher.tasks > 0, ErrorCode::MissingFisher, "EWC penalty before any Fisher estimate");
  require(fisher.importance.same_shape(net.params()) && fisher.anchor.same_shape(net.params()),
          ErrorCode::ShapeMismatch, "Fisher shape does not match the network");
  ParamLoss out{0.0, net.params().zeros_like()};
  const auto& p = net.params();
  for (std::size_t l = 0; l < p.layers.size(); ++l)
    for (std::size_t j = 0; j < p.layers[l].size(); ++j) {
      const Matrix d = p.layers[l][j] - fisher.anchor.layers[l][j];
      const Matrix fd = fisher.importance.layers[l][j].cwiseProduct(d);
      out.value += 0.5 * lambda * fd.cwiseProduct(d).sum();
      out.grads.layers[l][j] = lambda * fd;
    }
  return out;
}

}  // namespace intact
