#pragma once

#include "core/tensor.hpp"

namespace advlab::harness {

/// max |x - x'| in normalized [0, 1] units.
double linf_distortion(const Tensor& x, const Tensor& xp);

/// ||x - x'||_2 divided by the total pixel count N (the Appendix-B-consistent
/// normalization: 1.45 un-normalized on 28x28 is 1.45/784 ~ 0.0019).
double l2_distortion(const Tensor& x, const Tensor& xp);

/// Raw ||x - x'||_2, recorded alongside the normalized value.
double l2_raw(const Tensor& x, const Tensor& xp);

/// Root-mean-square perturbation ||x - x'||_2 / sqrt(N).
double l2_rms(const Tensor& x, const Tensor& xp);

}  // namespace advlab::harness
