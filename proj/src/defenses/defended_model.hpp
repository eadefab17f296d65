#pragma once

#include "defenses/preprocessor.hpp"
#include "nn/model.hpp"

namespace advlab::defenses {

struct SapConfig {
  bool enabled = false;
  /// Per-layer multinomial sample count r = ratio * layer size.
  double sample_ratio = 0.75;
};

/// Per-stage backward substitutes, keyed by chain index.
struct SurrogateRegistry {
  std::map<int, Surrogate> stages;
  Surrogate at(int stage) const {
    auto it = stages.find(stage);
    return it == stages.end() ? Surrogate::None : it->second;
  }
};

/// Preprocessor chain + classifier + stochastic-layer flags: the unit every
/// attack targets. The classifier's input shape equals the chain's output
/// shape for raw_input.
struct DefendedModel {
  std::string name = "model";
  Shape raw_input;  // H, W, C of the image the attacker perturbs
  std::vector<Preprocessor> chain;
  nn::Classifier classifier;
  SapConfig sap;

  static DefendedModel bare(nn::Classifier c);

  bool stochastic() const;
  /// Any stage whose true gradient is unusable without a surrogate?
  bool has_shattered_stage() const;

  void validate() const;

  std::vector<PreDraw> sample_draws(Rng& rng) const;
  /// Cartesian count over enumerable stages; -1 if any stage is not enumerable.
  int enumeration_count() const;
  std::vector<PreDraw> draws_at(int index) const;

  /// True forward through the chain only (no classifier).
  Tensor preprocess(const Tensor& x, const std::vector<PreDraw>& draws) const;

  /// Record preprocessors (with surrogates from the registry) and classifier
  /// onto the tape; returns 1 x num_classes logits. sap_rng drives SAP draws
  /// when enabled.
  Tensor record_logits(Tape& tape, const Tensor& x_on_tape, const std::vector<PreDraw>& draws,
                       const SurrogateRegistry* registry, Rng* sap_rng) const;

  /// One classification through the true defense with fresh randomness.
  int classify_once(const Tensor& x, Rng& rng) const;
  std::vector<int> classify_trials(const Tensor& x, int n, Rng& rng) const;
  /// The stochastic-defense accuracy convention: correct if any trial is.
  bool ever_correct(const Tensor& x, int label, int trials, Rng& rng) const;
};

/// On-tape SAP hook for classifier forward (mask / keep-probability division,
/// which is what makes the division guard matter).
nn::ForwardOptions sap_forward_options(const SapConfig& sap, Rng& rng);

}  // namespace advlab::defenses
