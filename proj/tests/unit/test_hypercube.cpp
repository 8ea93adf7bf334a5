#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "intact/error.hpp"
#include "intact/hypercube.hpp"

using namespace intact;
using intact::test::random_matrix;

namespace {

// Independent oracle: numpy-style linear percentile from explicit order
// statistics.
double oracle_percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q / 100.0;
  const double lo = std::floor(h), hi = std::ceil(h);
  return v[static_cast<std::size_t>(lo)] + (h - lo) * (v[static_cast<std::size_t>(hi)] - v[static_cast<std::size_t>(lo)]);
}

Hypercube box(std::initializer_list<double> lo, std::initializer_list<double> hi) {
  Vector l(static_cast<Eigen::Index>(lo.size())), h(static_cast<Eigen::Index>(hi.size()));
  std::copy(lo.begin(), lo.end(), l.data());
  std::copy(hi.begin(), hi.end(), h.data());
  return {l, h};
}

}  // namespace

TEST_CASE("percentile hypercube examples") {
  Matrix a(101, 2);
  for (int i = 0; i <= 100; ++i) {
    a(i, 0) = 100 - i;  // reversed order on purpose
    a(i, 1) = 3.5;
  }
  const Hypercube h = compute_task_hypercube(a, 5.0);
  CHECK(h.lo()[0] == 5.0);
  CHECK(h.hi()[0] == 95.0);
  CHECK(h.lo()[1] == 3.5);
  CHECK(h.hi()[1] == 3.5);

  const Hypercube full = compute_task_hypercube(a, 0.0);
  CHECK(full.lo()[0] == 0.0);
  CHECK(full.hi()[0] == 100.0);
}

TEST_CASE("percentile matches the order-statistic oracle") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.below(60));
    const Matrix a = random_matrix(rng, n, 3, -2.0, 2.0);
    const double alpha = rng.uniform(0.0, 20.0);
    const Hypercube h = compute_task_hypercube(a, alpha);
    for (Eigen::Index j = 0; j < 3; ++j) {
      std::vector<double> col(a.col(j).data(), a.col(j).data() + n);
      CHECK(h.lo()[j] == doctest::Approx(oracle_percentile(col, alpha)).epsilon(1e-12));
      CHECK(h.hi()[j] == doctest::Approx(oracle_percentile(col, 100.0 - alpha)).epsilon(1e-12));
    }
  }
}

TEST_CASE("percentile hypercube errors") {
  CHECK_THROWS_AS(compute_task_hypercube(Matrix::Zero(1, 3), 5.0), Error);
  Matrix bad = Matrix::Zero(4, 2);
  bad(2, 1) = std::nan("");
  try {
    compute_task_hypercube(bad, 5.0);
    FAIL("expected NonFiniteActivation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteActivation);
  }
}

TEST_CASE("coverage and order symmetry") {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 20 + static_cast<Eigen::Index>(rng.below(500));
    const Matrix a = random_matrix(rng, n, 5);
    const double p = rng.uniform(50.0, 100.0);
    const Hypercube h = compute_task_hypercube(a, (100.0 - p) / 2.0);
    CHECK(min_coverage(a, h) >= ((n - 1.0) * p / 100.0 - 1.0) / n);
    const Matrix rev = a.colwise().reverse();
    CHECK(compute_task_hypercube(rev, (100.0 - p) / 2.0) == h);
  }
}

TEST_CASE("cumulative merge") {
  const Hypercube a = box({0.0}, {1.0});
  const Hypercube b = box({2.0}, {3.0});
  CHECK(merge_cumulative(a, a) == a);
  CHECK(merge_cumulative(a, b) == box({0.0}, {3.0}));
  const Hypercube inner = box({0.2, -1.0}, {0.5, 0.0});
  const Hypercube outer = box({0.0, -2.0}, {1.0, 1.0});
  CHECK(merge_cumulative(outer, inner) == outer);
  CHECK(merge_cumulative(inner, outer) == outer);
  CHECK_THROWS_AS(merge_cumulative(a, inner), Error);
}

TEST_CASE("center and radius") {
  const CenterRadius cr = center_radius(box({0.0, 0.0}, {2.0, 4.0}));
  CHECK(cr.center[0] == 1.0);
  CHECK(cr.center[1] == 2.0);
  CHECK(cr.radius[0] == 1.0);
  CHECK(cr.radius[1] == 2.0);
  CHECK(cr.r_mean == 1.5);
  CHECK(center_radius(Hypercube::point(Vector::Ones(3))).r_mean == 0.0);

  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector a = test::random_vector(rng, 4), b = test::random_vector(rng, 4);
    const Hypercube h(a.cwiseMin(b), a.cwiseMax(b));
    const CenterRadius c = center_radius(h);
    CHECK((c.center - c.radius - h.lo()).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK((c.center + c.radius - h.hi()).cwiseAbs().maxCoeff() <= 1e-15);
  }
}

TEST_CASE("store nesting and round trip") {
  Rng rng(24);
  Network net = Network::mlp(3, {5, 4}, 2);
  net.init_kaiming(3);
  HypercubeConfig cfg{{2, 4}, 90.0};
  HypercubeStore store;
  const Matrix x1 = random_matrix(rng, 200, 3);
  end_of_task_update(store, net, x1, 1, cfg);
  CHECK(store.cumulative(2) == store.per_task(2, 1));

  net.mutable_params().layers[0][1].array() += 0.5;
  const Matrix x2 = random_matrix(rng, 150, 3, 0.0, 3.0);
  end_of_task_update(store, net, x2, 2, cfg);
  for (int l : {2, 4}) {
    CHECK(store.cumulative(l).contains(store.per_task(l, 1)));
    CHECK(store.cumulative(l).contains(store.per_task(l, 2)));
    CHECK(store.history().at(l)[1].contains(store.history().at(l)[0]));
  }
  CHECK_THROWS_AS(store.per_task(2, 3), Error);
  CHECK_THROWS_AS(store.cumulative(6), Error);

  const HypercubeStore back = HypercubeStore::from_json(store.to_json());
  CHECK(back == store);
  CHECK(back.to_json() == store.to_json());
}

TEST_CASE("hypercube config validation") {
  const Network net = Network::mlp(3, {5}, 2);
  CHECK_NOTHROW(HypercubeConfig({{0, 2, 3}, 90.0}).validate(net));
  CHECK_THROWS_AS(HypercubeConfig({{}, 90.0}).validate(net), Error);
  CHECK_THROWS_AS(HypercubeConfig({{2, 9}, 90.0}).validate(net), Error);
  CHECK_THROWS_AS(HypercubeConfig({{3, 2}, 90.0}).validate(net), Error);
  CHECK_THROWS_AS(HypercubeConfig({{2}, 0.0}).validate(net), Error);
  CHECK(HypercubeConfig({{2}, 90.0}).alpha() == 5.0);
}
