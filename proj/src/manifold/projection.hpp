#pragma once

#include "manifold/decoder.hpp"

namespace advlab::manifold {

/// Input-purification defense: classify G(z*) where z* approximately
/// minimizes ||G(z) - x||^2 over the latent space, best of `restarts`
/// gradient-descent runs of `steps` iterations each.
struct ProjectionDefense {
  Decoder decoder;
  int restarts = 4;
  int steps = 200;
  double step_size = 0.05;
  std::uint64_t seed = 1;

  struct Projection {
    Tensor z;        // latent argmin
    Tensor image;    // G(z)
    double distance; // ||G(z) - x||_2 (unnormalized)
  };

  /// Deterministic function of x (restart inits derive from the defense seed
  /// alone), so repeated projection of the same input is bit-identical.
  Projection project(const Tensor& x) const;
};

/// Composite reparameterization objective on the tape:
///   ||G(z) - x||_2^2 + c * max(margin(f(G(z))), -kappa)
/// The margin follows cw_margin semantics (untargeted: label = true class).
/// Gradients flow through the generator exactly once.
Tensor record_reparam_loss(Tape& tape, const Decoder& dec, const nn::Classifier& classifier,
                           const Tensor& z_on_tape, const Tensor& x_target, double c, int label,
                           bool targeted, double kappa);

/// Same objective evaluated off-tape.
double reparam_loss_value(const Decoder& dec, const nn::Classifier& classifier, const Tensor& z,
                          const Tensor& x_target, double c, int label, bool targeted,
                          double kappa);

}  // namespace advlab::manifold
