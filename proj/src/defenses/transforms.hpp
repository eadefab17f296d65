#pragma once

#include <utility>
#include <vector>

#include "core/rng.hpp"
#include "core/tape.hpp"
#include "core/tensor.hpp"

namespace advlab::defenses {

/// l-level thermometer encoding: bit k of pixel v is 1 iff v > k/l, k = 0..l-1.
/// Output gains a trailing dimension of size l; bits are monotone
/// non-increasing in k.
Tensor thermometer_encode(const Tensor& x, int levels);

/// Differentiable surrogate: tau_hat(v)_k = clamp(v - k/l, 0, 1). Rounding it
/// up recovers the encoding exactly: ceil(tau_hat(v)_k) = tau(v)_k.
Tensor thermometer_surrogate(const Tensor& x, int levels);

/// Quantize to b bits: {i / (2^b - 1)}; idempotent.
Tensor bit_depth_reduce(const Tensor& x, int bits);

/// Per-8x8-block DCT, uniform quantization of AC coefficients with a step
/// scaled by quality (q=100 -> step 0, lossless), inverse DCT, clamp to [0,1].
/// The DC coefficient passes through so constant images are fixed points.
/// H and W must be multiples of 8.
Tensor jpeg_proxy(const Tensor& x, int quality);

/// Total-variation inpainting: fixed-budget gradient descent from z0 = x on
///   sum(mask * (z - x)^2) + lambda * TV(z)     (anisotropic TV)
/// mask is the Bernoulli keep mask (same shape as x).
Tensor tv_minimize_masked(const Tensor& x, const Tensor& mask, double lambda, int steps,
                          double step);

/// SAP draw for one activation row: r multinomial samples with
/// p_i = |a_i| / sum|a|; kept units get scale 1 / (1 - (1 - p_i)^r), dropped
/// units 0. Returned as (mask, keep_prob) so callers can divide on-tape.
/// An all-zero row comes back unchanged (mask 1, keep 1).
std::pair<std::vector<double>, std::vector<double>> sap_mask_keep(const double* a, std::size_t n,
                                                                  int samples, Rng& rng);

/// Off-tape SAP application.
Tensor sap_layer(const Tensor& activations, int samples, Rng& rng);

/// Vector-Jacobian product of tau_hat, installable as a backward override on
/// a thermometer node (elementwise, so it works on single images and batches
/// alike; the encoded tensor's trailing stride is `levels`).
BackwardRule thermometer_tau_hat_rule(int levels);

}  // namespace advlab::defenses
