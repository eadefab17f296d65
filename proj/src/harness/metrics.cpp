#include "harness/metrics.hpp"

#include <cmath>

namespace advlab::harness {

namespace {
void require_same(const Tensor& x, const Tensor& xp, const char* op) {
  if (x.shape != xp.shape)
    throw ShapeError(std::string(op) + ": shapes " + shape_str(x.shape) + " vs " +
                     shape_str(xp.shape));
}
}  // namespace

double linf_distortion(const Tensor& x, const Tensor& xp) {
  require_same(x, xp, "linf_distortion");
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    m = std::max(m, std::fabs(x.data[i] - xp.data[i]));
  return m;
}

double l2_raw(const Tensor& x, const Tensor& xp) {
  require_same(x, xp, "l2_distortion");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x.data[i] - xp.data[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double l2_distortion(const Tensor& x, const Tensor& xp) {
  return l2_raw(x, xp) / static_cast<double>(x.size());
}

double l2_rms(const Tensor& x, const Tensor& xp) {
  return l2_raw(x, xp) / std::sqrt(static_cast<double>(x.size()));
}

}  // namespace advlab::harness
