#pragma once

// Central finite-difference oracle for gradient checks. Lives in test code
// only; evaluates the forward pass numerically and never touches the
// backward rules it is used to validate.

#include <cmath>
#include <functional>

#include "core/tensor.hpp"

namespace gradcheck {

using advlab::Tensor;

// f: forward-only scalar evaluation of the function under test.
using ScalarFn = std::function<double(const Tensor&)>;

inline double central_diff(const ScalarFn& f, const Tensor& x, std::size_t i, double h = 1e-5) {
  Tensor hi = x, lo = x;
  hi.data[i] += h;
  lo.data[i] -= h;
  return (f(hi) - f(lo)) / (2.0 * h);
}

inline double rel_err(double a, double b) {
  const double scale = std::max({1e-6, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) / scale;
}

// Max relative error between an analytic gradient and the central-difference
// oracle over every coordinate of x.
inline double max_rel_err(const ScalarFn& f, const Tensor& x, const Tensor& grad,
                          double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double fd = central_diff(f, x, i, h);
    worst = std::max(worst, rel_err(grad.data[i], fd));
  }
  return worst;
}

}  // namespace gradcheck
