#include "intact/interval.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "intact/error.hpp"

namespace intact {

Interval::Interval(double lo, double hi) : lo_(lo), hi_(hi) {
  require(std::isfinite(lo) && std::isfinite(hi), ErrorCode::InvalidInterval, "non-finite endpoint");
  require(lo <= hi, ErrorCode::InvalidInterval,
          "lower bound " + std::to_string(lo) + " exceeds upper bound " + std::to_string(hi));
}

Interval interval_add(const Interval& a, const Interval& b) { return {a.lo() + b.lo(), a.hi() + b.hi()}; }

Interval interval_sub(const Interval& a, const Interval& b) { return {a.lo() - b.hi(), a.hi() - b.lo()}; }

Interval interval_mul(const Interval& a, const Interval& b) {
  const double p1 = a.lo() * b.lo();
  const double p2 = a.lo() * b.hi();
  const double p3 = a.hi() * b.lo();
  const double p4 = a.hi() * b.hi();
  return {std::min({p1, p2, p3, p4}), std::max({p1, p2, p3, p4})};
}

Interval interval_div(const Interval& a, const Interval& b) {
  if (b.contains_zero()) fail(ErrorCode::DivisorContainsZero, "divisor interval contains 0");
  return interval_mul(a, Interval(1.0 / b.hi(), 1.0 / b.lo()));
}

Hypercube::Hypercube(Vector lo, Vector hi) : lo_(std::move(lo)), hi_(std::move(hi)) {
  require(lo_.size() >= 1, ErrorCode::DimensionMismatch, "hypercube needs at least one dimension");
  require(lo_.size() == hi_.size(), ErrorCode::DimensionMismatch, "lower/upper bound lengths differ");
  for (Eigen::Index j = 0; j < lo_.size(); ++j) {
    require(std::isfinite(lo_[j]) && std::isfinite(hi_[j]), ErrorCode::InvalidInterval,
            "non-finite bound at dimension " + std::to_string(j));
    require(lo_[j] <= hi_[j], ErrorCode::InvalidInterval, "inverted bounds at dimension " + std::to_string(j));
  }
}

bool Hypercube::contains(const Vector& x) const {
  if (x.size() != dim()) return false;
  return (x.array() >= lo_.array()).all() && (x.array() <= hi_.array()).all();
}

bool Hypercube::contains(const Hypercube& o) const {
  if (o.dim() != dim()) return false;
  return (o.lo_.array() >= lo_.array()).all() && (o.hi_.array() <= hi_.array()).all();
}

Hypercube linear_map_bounds(const Matrix& dW, const Vector& db, const Hypercube& box) {
  require(dW.cols() == box.dim(), ErrorCode::DimensionMismatch,
          "weight columns " + std::to_string(dW.cols()) + " vs box dim " + std::to_string(box.dim()));
  require(dW.rows() == db.size(), ErrorCode::DimensionMismatch, "weight rows vs bias length");
  const Matrix pos = dW.cwiseMax(0.0);
  const Matrix neg = (-dW).cwiseMax(0.0);
  Vector lo = pos * box.lo() - neg * box.hi() + db;
  Vector hi = pos * box.hi() - neg * box.lo() + db;
  return {std::move(lo), std::move(hi)};
}

IntervalMatrix::IntervalMatrix(std::size_t rows, std::size_t cols, Interval fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

IntervalMatrix IntervalMatrix::from_points(const Matrix& m) {
  IntervalMatrix out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out(r, c) = Interval::point(m(r, c));
  return out;
}

IntervalMatrix interval_matmul(const IntervalMatrix& a, const IntervalMatrix& b) {
  require(a.cols() == b.rows(), ErrorCode::DimensionMismatch, "inner dimensions differ");
  IntervalMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      Interval acc = Interval::point(0.0);
      for (std::size_t k = 0; k < a.cols(); ++k) acc = acc + a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  }
  return c;
}

IntervalTensor3::IntervalTensor3(std::size_t channels, std::size_t height, std::size_t width, Interval fill)
    : c_(channels), h_(height), w_(width), data_(channels * height * width, fill) {}

IntervalTensor3 interval_conv2d(const IntervalTensor3& x, const IntervalTensor3& kernel, const Interval& bias) {
  require(kernel.channels() == x.channels(), ErrorCode::DimensionMismatch, "kernel/input channel count");
  require(kernel.height() <= x.height() && kernel.width() <= x.width(), ErrorCode::DimensionMismatch,
          "kernel larger than input");
  const std::size_t oh = x.height() - kernel.height() + 1;
  const std::size_t ow = x.width() - kernel.width() + 1;
  IntervalTensor3 y(1, oh, ow);
  for (std::size_t i = 0; i < oh; ++i) {
    for (std::size_t j = 0; j < ow; ++j) {
      Interval acc = Interval::point(0.0);
      for (std::size_t c = 0; c < x.channels(); ++c)
        for (std::size_t k = 0; k < kernel.height(); ++k)
          for (std::size_t l = 0; l < kernel.width(); ++l) acc = acc + x(c, i + k, j + l) * kernel(c, k, l);
      y(0, i, j) = acc + bias;
    }
  }
  return y;
}

}  // namespace intact
