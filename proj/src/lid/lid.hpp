#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nn/dataset.hpp"
#include "nn/model.hpp"

namespace advlab::lid {

using DistanceFn = std::function<double(const Tensor&, const Tensor&)>;

double euclidean(const Tensor& a, const Tensor& b);

/// Maximum-likelihood LID from the k nearest-neighbor distances:
///   -(1/k * sum_i log(r_i / r_k))^-1
/// dists must hold exactly the k nearest distances (any order). Errors on a
/// zero distance and on a degenerate neighborhood (all distances equal).
double lid_from_knn(std::vector<double> dists);

/// LID of x against minibatch S with the given k and distance, excluding
/// member exclude_index from the neighbor set (-1 when x is not in S).
double lid_estimate(const Tensor& x, const std::vector<Tensor>& minibatch, int k,
                    const DistanceFn& dist, int exclude_index = -1);

struct LidFeatures {
  std::vector<double> per_layer;
  std::string source_tag;  // clean | noisy | adversarial
};

/// One LID value per probed layer (every post-activation layer plus logits),
/// using layer-activation Euclidean distances against a clean minibatch.
LidFeatures lid_features(const nn::Classifier& model, const Tensor& x, const Tensor& minibatch,
                         int k);

struct LidDetector {
  std::vector<double> weights;
  double bias = 0.0;
  std::vector<double> feat_mean, feat_std;
  double threshold = 0.5;
  std::string trained_on;
  int k = 20;

  double score(const LidFeatures& f) const;
  bool flags_adversarial(const LidFeatures& f) const { return score(f) >= threshold; }
};

struct DetectorTrainOptions {
  int epochs = 400;
  double lr = 0.1;
  double holdout_fraction = 0.25;
  std::uint64_t seed = 1;
  std::string trained_on = "unknown";
  int k = 20;
};

struct DetectorTrainResult {
  LidDetector detector;
  double holdout_auc = 0.0;
};

/// Logistic regression over LID feature vectors, clean (negative) vs
/// adversarial (positive). Deterministic given the seed; the held-out AUC is
/// recorded. Degenerate (non-finite) features are an error naming the
/// offending examples.
DetectorTrainResult train_detector(const std::vector<LidFeatures>& clean,
                                   const std::vector<LidFeatures>& adversarial,
                                   const DetectorTrainOptions& opt);

double detect(const LidDetector& det, const nn::Classifier& model, const Tensor& x,
              const Tensor& minibatch);

/// Rank-based AUC of scores (positives should score high).
double auc(const std::vector<double>& negatives, const std::vector<double>& positives);

void save_detector(const std::string& path, const LidDetector& det);
LidDetector load_detector(const std::string& path);

/// The documented negative-result harness: gradient attack on
///   ||x - x'||^2 + alpha * (xent(x') + LID(x'))
/// through a differentiable LID surrogate with the neighbor assignment frozen
/// per step. Reports how often the result is adversarial yet flagged benign.
struct AdaptiveProbeOptions {
  double alpha = 1.0;
  int iterations = 100;
  double lr = 0.02;
  std::uint64_t seed = 1;
};

struct AdaptiveProbeResult {
  int attempts = 0;
  int adversarial = 0;         // fooled the classifier
  int evaded = 0;              // fooled the classifier AND flagged benign
  double evasion_rate = 0.0;   // evaded / attempts
};

AdaptiveProbeResult adaptive_lid_probe(const nn::Classifier& model, const LidDetector& det,
                                       const nn::Dataset& samples, const Tensor& minibatch,
                                       const AdaptiveProbeOptions& opt);

}  // namespace advlab::lid
