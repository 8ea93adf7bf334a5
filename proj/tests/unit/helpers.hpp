#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "intact/network.hpp"
#include "intact/random.hpp"

namespace intact::test {

inline Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double a = -1.0, double b = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(a, b);
  return m;
}

inline Vector random_vector(Rng& rng, Eigen::Index n, double a = -1.0, double b = 1.0) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(a, b);
  return v;
}

// Largest relative error between an analytic gradient and central
// differences of f over the flattened vector x. Relative error uses
// max(|a|, |n|, floor) so that near-zero entries compare absolutely.
inline double fd_relative_error(const std::function<double(const std::vector<double>&)>& f,
                                const std::vector<double>& x, const std::vector<double>& analytic,
                                double h = 1e-5, double floor = 1e-6) {
  std::vector<double> xp = x;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    const double fp = f(xp);
    xp[i] = x[i] - h;
    const double fm = f(xp);
    xp[i] = x[i];
    const double num = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(num), std::abs(analytic[i]), floor});
    worst = std::max(worst, std::abs(num - analytic[i]) / denom);
  }
  return worst;
}

// Perturbs `w` away from zero so no kink of |.|-like terms sits within h.
inline void keep_away_from_zero(Matrix& w, double margin) {
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (std::abs(w.data()[i]) < margin) w.data()[i] = w.data()[i] < 0 ? -margin : margin;
}

}  // namespace intact::test
