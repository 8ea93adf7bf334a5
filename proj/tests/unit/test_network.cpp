#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "intact/error.hpp"
#include "intact/network.hpp"
#include "intact/optimizer.hpp"
#include "intact/snapshot.hpp"

using namespace intact;
using intact::test::fd_relative_error;
using intact::test::random_matrix;

namespace {

Network conv_net(Rng& rng) {
  Network net({Conv2d{2, 3, 2, 4, 4}, BatchNormAffine{3, 9}, ReLU{27}, Affine{27, 4}});
  net.init_kaiming(rng.next_u64());
  auto& p = net.mutable_params();
  p.layers[1][0] = random_matrix(rng, 3, 1, 0.5, 1.5);
  p.layers[1][1] = random_matrix(rng, 3, 1);
  p.layers[3][1] = random_matrix(rng, 4, 1);
  auto& b = net.mutable_buffers();
  b.layers[1][0] = random_matrix(rng, 3, 1);
  b.layers[1][1] = random_matrix(rng, 3, 1, 0.5, 2.0);
  return net;
}

template <class LossFn>
double param_fd_error(Network& net, const Matrix& x, LossFn loss) {
  const ForwardCache cache = net.forward(x);
  const LossValue lv = loss(cache.output());
  const ParamSet g = net.backward(cache, lv.grad);
  const auto x0 = net.params().flatten();
  auto f = [&](const std::vector<double>& theta) {
    Network probe = net;
    probe.mutable_params().assign_flat(theta);
    return loss(probe.predict(x)).value;
  };
  return fd_relative_error(f, x0, g.flatten());
}

}  // namespace

TEST_CASE("forward examples") {
  Network zero({Affine{3, 2}});
  CHECK(zero.predict(Matrix::Ones(4, 3)).isZero());

  Network id({Affine{2, 2}, ReLU{2}});
  id.mutable_params().layers[0][0] = Matrix::Identity(2, 2);
  Matrix x(1, 2);
  x << 0.5, 2.0;
  CHECK(id.predict(x) == x);

  // 2 -> 2 -> 1 by hand: h = relu([1 -1; 2 1] x + [0; -1]), y = [1 2] h + 0.5.
  Network mlp({Affine{2, 2}, ReLU{2}, Affine{2, 1}});
  auto& p = mlp.mutable_params();
  p.layers[0][0] << 1, -1, 2, 1;
  p.layers[0][1] << 0, -1;
  p.layers[2][0] << 1, 2;
  p.layers[2][1] << 0.5;
  Matrix in(1, 2);
  in << 3.0, 1.0;  // pre = (2, 6), h = (2, 6), y = 2 + 12 + 0.5
  CHECK(mlp.predict(in)(0, 0) == doctest::Approx(14.5));
  CHECK_THROWS_AS(mlp.forward(Matrix::Ones(1, 3)), Error);
}

TEST_CASE("layer shapes must compose") {
  CHECK_THROWS_AS(Network({Affine{3, 2}, Affine{3, 1}}), Error);
  CHECK_THROWS_AS(Network({Conv2d{1, 1, 5, 4, 4}}), Error);
  const Network mlp = Network::mlp(784, {400, 400, 400}, 10);
  CHECK(mlp.num_layers() == 7);
  CHECK(mlp.activation_dim(6) == 400);
  CHECK(mlp.activation_dim(7) == 10);
  CHECK(std::holds_alternative<ReLU>(mlp.layer(6).kind));
}

TEST_CASE("linear regression gradient has the closed form") {
  Rng rng(1);
  Network net({Affine{3, 1}});
  net.init_kaiming(2);
  const Matrix x = random_matrix(rng, 1, 3);
  const Matrix y = random_matrix(rng, 1, 1);
  const ForwardCache c = net.forward(x);
  const LossValue lv = mse_loss(c.output(), y);
  const ParamSet g = net.backward(c, lv.grad);
  const double r = (c.output() - y)(0, 0);
  CHECK((g.layers[0][0] - 2.0 * r * x).norm() <= 1e-12);
  CHECK(std::abs(g.layers[0][1](0, 0) - 2.0 * r) <= 1e-12);
  CHECK(net.backward(c, Matrix::Zero(1, 1)).squared_norm() == 0.0);
}

TEST_CASE("backward matches finite differences for every layer kind and head") {
  Rng rng(3);
  double worst_ce = 0.0;
  double worst_mse = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Network net = conv_net(rng);
    const Matrix x = random_matrix(rng, 3, 32);
    const std::vector<int> labels = {0, 3, 1};
    std::vector<bool> active = {true, true, false, true};
    worst_ce = std::max(worst_ce, param_fd_error(net, x, [&](const Matrix& out) {
                          return softmax_cross_entropy(out, labels, active);
                        }));
    const Matrix target = random_matrix(rng, 3, 4);
    worst_mse = std::max(worst_mse, param_fd_error(net, x, [&](const Matrix& out) { return mse_loss(out, target); }));
  }
  CHECK(worst_ce < 1e-4);
  CHECK(worst_mse < 1e-4);
}

TEST_CASE("injected activation gradients are propagated") {
  Rng rng(4);
  Network net = Network::mlp(5, {6, 4}, 3);
  net.init_kaiming(9);
  const Matrix x = random_matrix(rng, 4, 5);
  const Matrix w2 = random_matrix(rng, 4, 6);
  const Matrix w3 = random_matrix(rng, 4, 4);
  // L = sum(w2 . x_2) + sum(w3 . x_3); x_2 is a ReLU output, x_3 an affine output.
  auto loss = [&](const Network& n) {
    const ForwardCache c = n.forward(x);
    return c.at(2).cwiseProduct(w2).sum() + c.at(3).cwiseProduct(w3).sum();
  };
  const ForwardCache c = net.forward(x);
  const ParamSet g = net.backward(c, Matrix::Zero(4, 3), {{2, w2}, {3, w3}});
  auto f = [&](const std::vector<double>& theta) {
    Network probe = net;
    probe.mutable_params().assign_flat(theta);
    return loss(probe);
  };
  CHECK(fd_relative_error(f, net.params().flatten(), g.flatten()) < 1e-4);
}

TEST_CASE("softmax mask excludes inactive classes") {
  Matrix logits(1, 3);
  logits << 1.0, 100.0, 2.0;
  const std::vector<int> y = {2};
  const LossValue lv = softmax_cross_entropy(logits, y, {true, false, true});
  CHECK(lv.value == doctest::Approx(std::log(1.0 + std::exp(-1.0))));
  CHECK(lv.grad(0, 1) == 0.0);
  CHECK(argmax_rows(logits, {true, false, true})[0] == 2);
  CHECK(argmax_rows(logits)[0] == 1);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, std::vector<int>{1}, {true, false, true}), Error);
}

TEST_CASE("stale caches are rejected") {
  Network net = Network::mlp(2, {3}, 2);
  net.init_kaiming(1);
  const ForwardCache c = net.forward(Matrix::Ones(1, 2));
  net.mutable_params().layers[0][0](0, 0) += 1.0;
  try {
    net.backward(c, Matrix::Zero(1, 2));
    FAIL("expected StaleCache");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::StaleCache);
  }
}

TEST_CASE("snapshots and deltas") {
  Network net = Network::mlp(3, {4}, 2);
  net.init_kaiming(5);
  const ParamSnapshot snap(net, 1);
  const std::uint64_t h = hash_params(snap.params());
  CHECK(delta_params(net, snap, 1).dW.isZero());
  CHECK(delta_params(net, snap, 3).db.isZero());

  net.mutable_params().layers[2][0](1, 2) += 1.0;
  const LayerDelta d = delta_params(net, snap, 3);
  CHECK(d.dW(1, 2) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(d.dW.cwiseAbs().sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(hash_params(snap.params()) == h);

  Optimizer opt({}, net.params());
  for (int i = 0; i < 5; ++i) opt.step(net.mutable_params(), net.params());
  CHECK(hash_params(snap.params()) == h);
  CHECK_THROWS_AS(delta_params(net, snap, 2), Error);
  CHECK_THROWS_AS(delta_params(net, snap, 9), Error);
}

TEST_CASE("batchnorm effective delta") {
  Network net({BatchNormAffine{1, 1, 1.0}});
  net.mutable_buffers().layers[0][0](0, 0) = 1.0;
  net.mutable_buffers().layers[0][1](0, 0) = 3.0;
  const ParamSnapshot snap(net, 1);
  BatchNormDelta d = batchnorm_effective_delta(net, snap, 1);
  CHECK(d.dW_eff[0] == 0.0);
  CHECK(d.db_eff[0] == 0.0);

  net.mutable_params().layers[0][1](0, 0) += 0.7;
  d = batchnorm_effective_delta(net, snap, 1);
  CHECK(d.dW_eff[0] == 0.0);
  CHECK(d.db_eff[0] == doctest::Approx(0.7));

  net.mutable_params().layers[0][1](0, 0) -= 0.7;
  net.mutable_params().layers[0][0](0, 0) += 2.0;
  d = batchnorm_effective_delta(net, snap, 1);
  CHECK(d.dW_eff[0] == doctest::Approx(1.0));
  CHECK(d.db_eff[0] == doctest::Approx(-1.0));

  net.mutable_buffers().layers[0][0](0, 0) = 1.5;
  CHECK_THROWS_AS(batchnorm_effective_delta(net, snap, 1), Error);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  Rng rng(6);
  Network net = conv_net(rng);
  const auto path = std::filesystem::temp_directory_path() / "intact_ck_test.ck";
  save_checkpoint(path, net, 3);
  const Checkpoint ck = load_checkpoint(path);
  CHECK(ck.task_index == 3);
  CHECK(ck.net.num_layers() == net.num_layers());
  CHECK(ck.net.params().flatten() == net.params().flatten());
  CHECK(ck.net.buffers().flatten() == net.buffers().flatten());

  // Truncation and bad magic.
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 5);
  CHECK_THROWS_AS(load_checkpoint(path), Error);
  {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os << "NOTACKPT........";
  }
  try {
    load_checkpoint(path);
    FAIL("expected BadMagic");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BadMagic);
  }
  std::filesystem::remove(path);
}

TEST_CASE("adam and sgd steps") {
  Network net({Affine{1, 1}});
  ParamSet g = net.params().zeros_like();
  g.layers[0][0](0, 0) = 4.0;
  Optimizer sgd({OptimizerKind::Sgd, 0.5}, net.params());
  ParamSet p = net.params();
  sgd.step(p, g);
  CHECK(p.layers[0][0](0, 0) == -2.0);

  // First Adam step moves each coordinate by lr * g / (|g| + eps').
  Optimizer adam({OptimizerKind::Adam, 0.1}, net.params());
  ParamSet q = net.params();
  adam.step(q, g);
  CHECK(q.layers[0][0](0, 0) == doctest::Approx(-0.1));
  CHECK(q.layers[0][1](0, 0) == 0.0);
  CHECK(adam.steps() == 1);
  CHECK_THROWS_AS(Optimizer({OptimizerKind::Adam, -1.0}, net.params()), Error);
}

TEST_CASE("forward is deterministic") {
  Network a = Network::mlp(8, {16, 16}, 3);
  Network b = Network::mlp(8, {16, 16}, 3);
  a.init_kaiming(42);
  b.init_kaiming(42);
  Rng rng(7);
  const Matrix x = random_matrix(rng, 5, 8);
  CHECK(a.predict(x) == b.predict(x));
  CHECK(a.params().flatten() == b.params().flatten());
}
