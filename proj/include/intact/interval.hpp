#pragma once

// Closed-interval arithmetic over doubles.
//
// Bounds are computed with round-to-nearest f64 arithmetic, so enclosures are
// rigorous only up to floating-point rounding error. Constructors reject NaN,
// infinities and inverted endpoints.

#include <cstddef>
#include <vector>

#include "intact/tensor.hpp"

namespace intact {

class Interval {
 public:
  Interval(double lo, double hi);
  static Interval point(double v) { return {v, v}; }

  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }
  double width() const noexcept { return hi_ - lo_; }
  double mid() const noexcept { return 0.5 * (lo_ + hi_); }
  double radius() const noexcept { return 0.5 * (hi_ - lo_); }
  bool contains(double x) const noexcept { return lo_ <= x && x <= hi_; }
  bool contains(const Interval& o) const noexcept { return lo_ <= o.lo_ && o.hi_ <= hi_; }
  bool contains_zero() const noexcept { return lo_ <= 0.0 && 0.0 <= hi_; }

  friend bool operator==(const Interval&, const Interval&) = default;

 private:
  double lo_;
  double hi_;
};

Interval interval_add(const Interval& a, const Interval& b);
Interval interval_sub(const Interval& a, const Interval& b);
Interval interval_mul(const Interval& a, const Interval& b);
// Throws DivisorContainsZero when 0 lies in b.
Interval interval_div(const Interval& a, const Interval& b);

inline Interval operator+(const Interval& a, const Interval& b) { return interval_add(a, b); }
inline Interval operator-(const Interval& a, const Interval& b) { return interval_sub(a, b); }
inline Interval operator*(const Interval& a, const Interval& b) { return interval_mul(a, b); }
inline Interval operator/(const Interval& a, const Interval& b) { return interval_div(a, b); }

// Axis-aligned box [lo, hi] in R^d, d >= 1.
class Hypercube {
 public:
  Hypercube(Vector lo, Vector hi);
  static Hypercube point(const Vector& x) { return {x, x}; }

  const Vector& lo() const noexcept { return lo_; }
  const Vector& hi() const noexcept { return hi_; }
  Eigen::Index dim() const noexcept { return lo_.size(); }
  Interval operator[](Eigen::Index j) const { return {lo_[j], hi_[j]}; }

  Vector center() const { return 0.5 * (hi_ + lo_); }
  Vector radius() const { return 0.5 * (hi_ - lo_); }
  double mean_radius() const { return radius().mean(); }

  bool contains(const Vector& x) const;
  bool contains(const Hypercube& o) const;

  friend bool operator==(const Hypercube& a, const Hypercube& b) {
    return a.lo_ == b.lo_ && a.hi_ == b.hi_;
  }

 private:
  Vector lo_;
  Vector hi_;
};

// Exact range of x -> dW x + db over the box, via the positive/negative split
// of each row of dW. Throws DimensionMismatch.
Hypercube linear_map_bounds(const Matrix& dW, const Vector& db, const Hypercube& box);

// Dense row-major matrix of intervals.
class IntervalMatrix {
 public:
  IntervalMatrix(std::size_t rows, std::size_t cols, Interval fill = Interval::point(0.0));
  static IntervalMatrix from_points(const Matrix& m);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  Interval& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const Interval& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<Interval> data_;
};

IntervalMatrix interval_matmul(const IntervalMatrix& a, const IntervalMatrix& b);

// Channels x height x width tensor of intervals.
class IntervalTensor3 {
 public:
  IntervalTensor3(std::size_t channels, std::size_t height, std::size_t width,
                  Interval fill = Interval::point(0.0));

  std::size_t channels() const noexcept { return c_; }
  std::size_t height() const noexcept { return h_; }
  std::size_t width() const noexcept { return w_; }
  Interval& operator()(std::size_t c, std::size_t y, std::size_t x) { return data_[(c * h_ + y) * w_ + x]; }
  const Interval& operator()(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * h_ + y) * w_ + x];
  }

 private:
  std::size_t c_;
  std::size_t h_;
  std::size_t w_;
  std::vector<Interval> data_;
};

// Single-output-channel valid convolution (stride 1, no padding):
// Y(i, j) = sum_{c,k,l} X(c, i+k, j+l) * W(c, k, l) + b.
// The result is returned as a 1 x H' x W' tensor.
IntervalTensor3 interval_conv2d(const IntervalTensor3& x, const IntervalTensor3& kernel, const Interval& bias);

}  // namespace intact
