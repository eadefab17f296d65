#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "core/error.hpp"

namespace advlab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Dense n-dimensional array of 64-bit floats, row-major.
///
/// A Tensor is a plain value; when it was produced by (or fed to) a Tape it
/// additionally carries the index of its TapeNode in `node` (-1 = detached).
struct Tensor {
  Shape shape;
  std::vector<double> data;
  int node = -1;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d);

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);
  static Tensor scalar(double v);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool scalar_like() const { return data.size() == 1; }

  /// Value of a single-element tensor.
  double item() const;

  double& at3(std::size_t i, std::size_t j, std::size_t k);
  double at3(std::size_t i, std::size_t j, std::size_t k) const;
  double& at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l);
  double at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const;

  Tensor detached() const;

  bool has_nan() const;
};

bool same_shape(const Tensor& a, const Tensor& b);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace advlab
