#pragma once

// Shared trained-model fixtures; each trains once per test binary.

#include "defenses/defended_model.hpp"
#include "nn/dataset.hpp"
#include "nn/train.hpp"

namespace fixtures {

using namespace advlab;

inline const nn::Dataset& small_train() {
  static const nn::Dataset d = nn::synthetic_digits(1200, 101, "train");
  return d;
}

inline const nn::Dataset& small_test() {
  static const nn::Dataset d = nn::synthetic_digits(200, 101, "test");
  return d;
}

/// 16x16 -> 64 -> 10 MLP trained to high accuracy on the small set.
inline const nn::Classifier& small_mlp() {
  static const nn::Classifier m = [] {
    nn::TrainOptions opt;
    opt.epochs = 8;
    opt.lr = 0.1;
    opt.seed = 5;
    return nn::train(nn::Classifier::mlp({16, 16, 1}, {64}, 10), small_train(), opt);
  }();
  return m;
}

/// Thermometer-encoded classifier (8 levels) trained on encoded inputs.
inline const nn::Classifier& small_thermo_mlp() {
  static const nn::Classifier m = [] {
    nn::TrainOptions opt;
    opt.epochs = 8;
    opt.lr = 0.05;
    opt.seed = 6;
    defenses::Preprocessor enc = defenses::Preprocessor::thermometer(8);
    opt.augment = [enc](const Tensor& img, Rng&) { return enc.apply(img, {}); };
    return nn::train(nn::Classifier::mlp({16, 16, 8}, {64}, 10), small_train(), opt);
  }();
  return m;
}

inline defenses::DefendedModel thermo_model() {
  defenses::DefendedModel m;
  m.name = "thermometer";
  m.raw_input = {16, 16, 1};
  m.chain = {defenses::Preprocessor::thermometer(8)};
  m.classifier = small_thermo_mlp();
  return m;
}

/// First index in the small test set the model classifies correctly.
inline std::size_t correct_index(const defenses::DefendedModel& m, std::uint64_t seed = 900) {
  const nn::Dataset& d = small_test();
  Rng rng(seed);
  for (std::size_t i = 0; i < d.size(); ++i)
    if (m.classify_once(d.image(i), rng) == d.labels[i]) return i;
  throw Error("fixture model classifies nothing correctly");
}

}  // namespace fixtures
