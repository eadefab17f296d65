#pragma once

#include <functional>

#include "nn/dataset.hpp"
#include "nn/model.hpp"

namespace advlab::nn {

struct TrainOptions {
  int epochs = 10;
  double lr = 0.1;
  int batch = 64;
  double momentum = 0.9;
  std::uint64_t seed = 1;
  /// Per-image input transform applied before the classifier (defense
  /// augmentation, e.g. thermometer encoding or rescale-pad draws).
  std::function<Tensor(const Tensor&, Rng&)> augment;
};

struct AdvTrainOptions {
  TrainOptions base;
  double epsilon = 0.1;
  int pgd_steps = 7;
  double step = 0.0;  // 0 -> epsilon / 4
  bool random_start = true;
};

/// Replaces each minibatch with adversarial counterparts before the gradient
/// step. Receives the model at its current parameters.
using BatchAdversary =
    std::function<Tensor(const Classifier&, const Tensor&, const std::vector<int>&, Rng&)>;

/// Minibatch SGD with momentum; deterministic given the seed. Initializes
/// parameters from the seed when the model has none. Throws naming the epoch
/// if the loss diverges.
Classifier train(Classifier model, const Dataset& data, const TrainOptions& opt);

/// Madry-style adversarial training: the inner maximization runs PGD-linf in
/// the classifier's own input space. epsilon <= 0 degenerates to train().
Classifier adversarial_train(Classifier model, const Dataset& data, const AdvTrainOptions& opt);

/// Shared engine: train() with an optional custom inner adversary (used when
/// the inner attack must route through a defense, e.g. thermometer BPDA).
Classifier sgd_train(Classifier model, const Dataset& data, const TrainOptions& opt,
                     const BatchAdversary* adversary);

/// Batched PGD-linf on the classifier input; the default inner adversary.
Tensor pgd_batch(const Classifier& model, const Tensor& batch, const std::vector<int>& labels,
                 double epsilon, int steps, double step, bool random_start, Rng& rng);

}  // namespace advlab::nn
