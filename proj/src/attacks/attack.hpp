#pragma once

#include <memory>
#include <optional>
#include <string>

#include "defenses/defended_model.hpp"
#include "manifold/projection.hpp"

namespace advlab::attacks {

enum class AttackKind {
  Fgsm,
  PgdLinf,
  LagrangianL2,
  BpdaPgd,
  EotPgd,
  Reparam,
  HighConfidenceL2,
};

const char* attack_kind_name(AttackKind k);
std::optional<AttackKind> attack_kind_from(const std::string& name);

/// Loop family an attack iterates with.
enum class LossLoop { PgdLinf, LagrangianL2 };

struct AttackConfig {
  AttackKind kind = AttackKind::PgdLinf;
  std::string name;  // report label; defaults to the kind name

  // linf family
  double epsilon = 0.3;
  int iterations = 100;
  double step_size = 0.0;  // 0 -> epsilon / 4
  bool random_start = true;

  // targeting and confidence
  bool targeted = false;
  double kappa = 0.0;

  // Lagrangian l2 family
  double c_init = 1.0;
  int c_search_steps = 5;
  double l2_lr = 0.05;

  // EOT
  int eot_samples = 10;
  bool eot_enumerate = false;

  /// Inner loop for bpda_pgd / eot_pgd composition.
  LossLoop inner = LossLoop::PgdLinf;

  /// Backward substitutes per chain stage (BPDA).
  defenses::SurrogateRegistry surrogates;

  /// Latent-space machinery for the reparameterization attack.
  std::shared_ptr<const manifold::ProjectionDefense> projection;

  std::uint64_t seed = 1;
};

struct AttackOutcome {
  Tensor adversarial;
  /// Untargeted: label changed from the true one; targeted: equals the
  /// target. One fresh draw of the true defense; the harness applies the
  /// m-of-n criterion on top for stochastic defenses.
  bool success = false;
  double linf = 0.0;
  double l2_normalized = 0.0;
  double l2_raw = 0.0;
  int iterations_used = 0;
  double final_loss = 0.0;
  /// The gradient was identically zero on every step (shattering witness).
  bool zero_gradient = false;
};

/// Dispatch on cfg.kind. target_label is required when cfg.targeted.
AttackOutcome run_attack(const defenses::DefendedModel& model, const Tensor& x, int true_label,
                         int target_label, const AttackConfig& cfg);

/// Batched BPDA-PGD through a thermometer encoding: the inner maximization
/// for adversarially training encoded classifiers. Perturbs the raw batch,
/// routes the backward pass through tau_hat, and returns the raw adversarial
/// batch (callers encode it for the training step).
Tensor thermometer_bpda_pgd_batch(const nn::Classifier& encoded_classifier, int levels,
                                  const Tensor& raw_batch, const std::vector<int>& labels,
                                  double epsilon, int steps, double step, bool random_start,
                                  Rng& rng);

}  // namespace advlab::attacks
