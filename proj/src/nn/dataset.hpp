#pragma once

#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace advlab::nn {

/// Labeled image set; images are N x H x W x C with values in [0, 1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int num_classes = 10;
  std::string split;

  Dataset() = default;
  Dataset(Tensor imgs, std::vector<int> lbls, int classes, std::string split_tag);

  std::size_t size() const { return labels.size(); }
  Shape image_shape() const;

  /// Copy of image i as H x W x C.
  Tensor image(std::size_t i) const;

  /// Rows i in [first, first+count) gathered into a batch tensor.
  Tensor batch(const std::vector<std::size_t>& idx) const;

  Dataset take(std::size_t n) const;
};

/// Procedurally generated 10-class 16x16 grayscale digit set. Deterministic
/// given (n, seed, split); the split tag perturbs the stream so train and
/// test never overlap.
Dataset synthetic_digits(std::size_t n, std::uint64_t seed, const std::string& split);

}  // namespace advlab::nn
