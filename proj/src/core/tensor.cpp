#include "core/tensor.hpp"

#include <cmath>
#include <sstream>

namespace advlab {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != data.size())
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                     std::to_string(data.size()));
}

Tensor Tensor::zeros(Shape s) {
  std::size_t n = shape_numel(s);
  return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape s, double v) {
  std::size_t n = shape_numel(s);
  return Tensor(std::move(s), std::vector<double>(n, v));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

double Tensor::item() const {
  if (data.size() != 1)
    throw ShapeError("item(): tensor " + shape_str(shape) + " is not a scalar");
  return data[0];
}

double& Tensor::at3(std::size_t i, std::size_t j, std::size_t k) {
  return data[(i * shape[1] + j) * shape[2] + k];
}
double Tensor::at3(std::size_t i, std::size_t j, std::size_t k) const {
  return data[(i * shape[1] + j) * shape[2] + k];
}
double& Tensor::at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
  return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
}
double Tensor::at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
  return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
}

Tensor Tensor::detached() const {
  Tensor t(shape, data);
  t.node = -1;
  return t;
}

bool Tensor::has_nan() const {
  for (double v : data)
    if (std::isnan(v)) return true;
  return false;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!same_shape(a, b))
    throw ShapeError("max_abs_diff: shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace advlab
