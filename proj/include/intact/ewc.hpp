#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "intact/network.hpp"
#include "intact/regularizers.hpp"

namespace intact {

// Diagonal Fisher importances summed over finished tasks, with the anchor
// taken after the most recent one.
struct FisherDiagonal {
  ParamSet importance;
  ParamSet anchor;
  int tasks = 0;

  // importance += f; anchor = params.
  void accumulate(const ParamSet& f, const ParamSet& params);
};

// Per-sample gradient of the negative log-likelihood with respect to the
// network output, given the output row of sample i.
using SampleLossGrad = std::function<RowVector(const RowVector& output, Eigen::Index i)>;

// Mean over the selected samples of squared per-sample log-likelihood
// gradients. n_samples == 0 or >= rows uses every sample in order; otherwise a
// seeded subset without replacement. Throws EmptyDataset.
ParamSet fisher_estimate(const Network& net, const Matrix& inputs, const SampleLossGrad& loss_grad,
                         std::size_t n_samples, std::uint64_t seed);

ParamSet fisher_estimate_classification(const Network& net, const Matrix& inputs, std::span<const int> labels,
                                        const std::vector<bool>& active, std::size_t n_samples, std::uint64_t seed);
ParamSet fisher_estimate_regression(const Network& net, const Matrix& inputs, const Matrix& targets,
                                    std::size_t n_samples, std::uint64_t seed);

// lambda / 2 * sum_k F_k (theta_k - theta*_k)^2. Throws MissingFisher when no
// task has been accumulated.
ParamLoss ewc_penalty(const Network& net, const FisherDiagonal& fisher, double lambda);

}  // namespace intact
