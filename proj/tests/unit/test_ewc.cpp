#include "doctest.h"
#include "helpers.hpp"
#include "intact/error.hpp"
#include "intact/ewc.hpp"

using namespace intact;
using intact::test::fd_relative_error;
using intact::test::random_matrix;

namespace {

std::vector<int> random_labels(Rng& rng, std::size_t n, int classes) {
  std::vector<int> y(n);
  for (int& v : y) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
  return y;
}

}  // namespace

TEST_CASE("ewc penalty examples") {
  Network net({Affine{1, 1}});
  net.mutable_params().layers[0][0](0, 0) = 2.0;
  FisherDiagonal f;
  try {
    ewc_penalty(net, f, 1.0);
    FAIL("expected MissingFisher");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingFisher);
  }
  ParamSet ones = net.params().zeros_like();
  for (auto& layer : ones.layers)
    for (auto& m : layer) m.setOnes();
  f.accumulate(ones, Network({Affine{1, 1}}).params());
  const ParamLoss p = ewc_penalty(net, f, 1.0);
  CHECK(p.value == 2.0);
  CHECK(p.grads.layers[0][0](0, 0) == 2.0);

  FisherDiagonal at;
  at.accumulate(ones, net.params());
  CHECK(ewc_penalty(net, at, 5.0).value == 0.0);
}

TEST_CASE("ewc penalty gradient matches finite differences") {
  Rng rng(51);
  for (int trial = 0; trial < 50; ++trial) {
    Network net = Network::mlp(3, {4}, 2);
    net.init_kaiming(rng.next_u64());
    FisherDiagonal f;
    const ParamSet fi = fisher_estimate_classification(net, random_matrix(rng, 10, 3), random_labels(rng, 10, 2),
                                                       {true, true}, 0, 1);
    f.accumulate(fi, net.params());
    net.init_kaiming(rng.next_u64());
    const double lambda = rng.uniform(0.5, 50.0);
    const ParamLoss p = ewc_penalty(net, f, lambda);
    auto fn = [&](const std::vector<double>& theta) {
      Network probe = net;
      probe.mutable_params().assign_flat(theta);
      return ewc_penalty(probe, f, lambda).value;
    };
    // Quadratic in theta: central differences are exact, so a wide step only
    // reduces roundoff.
    CHECK(fd_relative_error(fn, net.params().flatten(), p.grads.flatten(), 1e-3) < 1e-4);
  }
}

TEST_CASE("fisher estimates") {
  Rng rng(52);
  Network net = Network::mlp(4, {6}, 3);
  net.init_kaiming(11);
  const Matrix x = random_matrix(rng, 12, 4);
  const std::vector<int> y = random_labels(rng, 12, 3);
  const std::vector<bool> active(3, true);
  const ParamSet f = fisher_estimate_classification(net, x, y, active, 0, 1);
  for (double v : f.flatten()) CHECK(v >= 0.0);

  // Duplicating the data leaves the mean unchanged.
  Matrix xx(24, 4);
  xx << x, x;
  std::vector<int> yy = y;
  yy.insert(yy.end(), y.begin(), y.end());
  const auto a = f.flatten();
  const auto b = fisher_estimate_classification(net, xx, yy, active, 0, 1).flatten();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  CHECK(worst <= 1e-12);

  // Hand oracle for a single linear unit under squared error: F = mean (r x)^2.
  Network lin({Affine{2, 1}});
  lin.mutable_params().layers[0][0] << 0.5, -1.0;
  Matrix xi(2, 2), t(2, 1);
  xi << 1.0, 2.0, -1.0, 0.5;
  t << 0.0, 1.0;
  const ParamSet fr = fisher_estimate_regression(lin, xi, t, 0, 1);
  const double r0 = (0.5 - 2.0) - 0.0, r1 = (-0.5 - 0.5) - 1.0;
  CHECK(fr.layers[0][0](0, 0) == doctest::Approx((r0 * r0 * 1.0 + r1 * r1 * 1.0) / 2.0));
  CHECK(fr.layers[0][0](0, 1) == doctest::Approx((r0 * r0 * 4.0 + r1 * r1 * 0.25) / 2.0));
  CHECK(fr.layers[0][1](0, 0) == doctest::Approx((r0 * r0 + r1 * r1) / 2.0));

  // Saturated, correct predictions give a near-zero Fisher.
  Network sat({Affine{1, 2}});
  sat.mutable_params().layers[0][0] << 50.0, -50.0;
  Matrix xs = Matrix::Ones(5, 1);
  CHECK(fisher_estimate_classification(sat, xs, std::vector<int>(5, 0), {true, true}, 0, 1).squared_norm() < 1e-60);

  // Subsets are seeded.
  const auto s1 = fisher_estimate_classification(net, x, y, active, 5, 3).flatten();
  const auto s2 = fisher_estimate_classification(net, x, y, active, 5, 3).flatten();
  CHECK(s1 == s2);
  CHECK_THROWS_AS(fisher_estimate_classification(net, Matrix(0, 4), {}, active, 0, 1), Error);
}

TEST_CASE("fisher accumulates across tasks") {
  Network net({Affine{1, 1}});
  ParamSet one = net.params().zeros_like();
  one.layers[0][0](0, 0) = 1.0;
  FisherDiagonal f;
  f.accumulate(one, net.params());
  net.mutable_params().layers[0][0](0, 0) = 3.0;
  f.accumulate(one, net.params());
  CHECK(f.tasks == 2);
  CHECK(f.importance.layers[0][0](0, 0) == 2.0);
  CHECK(f.anchor.layers[0][0](0, 0) == 3.0);
}
