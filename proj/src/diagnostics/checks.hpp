#pragma once

#include <map>

#include "attacks/attack.hpp"
#include "nn/dataset.hpp"

namespace advlab::diagnostics {

struct CheckRecord {
  std::string name;
  std::map<std::string, double> measured;
  bool triggered = false;
  std::string narrative;
};

struct DiagnosticReport {
  std::vector<CheckRecord> checks;
  bool obfuscation_suspected = false;
};

struct DiagnosticsOptions {
  /// The evaluation attack under scrutiny (kind, epsilon, iterations,
  /// surrogates, EOT settings). Checks derive their variants from it.
  attacks::AttackConfig attack;
  /// Images evaluated per check (subsampled from the dataset).
  int sample_limit = 100;
  /// Uniform draws per image for the brute-force search, capped at 1e5.
  int random_samples = 100000;
  std::vector<double> epsilon_grid = {0.05, 0.1, 0.2, 0.3};
  /// Trials for the ever-correct convention on stochastic defenses.
  int trials = 1;
  /// Success-rate difference regarded as signal, in percentage points.
  double tolerance_points = 2.0;
  std::uint64_t seed = 1;
};

CheckRecord check_one_step_vs_iterative(const defenses::DefendedModel& model,
                                        const nn::Dataset& data, const DiagnosticsOptions& opt);

CheckRecord check_blackbox_transfer(const defenses::DefendedModel& model,
                                    const defenses::DefendedModel& surrogate,
                                    const nn::Dataset& data, const DiagnosticsOptions& opt);

CheckRecord check_unbounded(const defenses::DefendedModel& model, const nn::Dataset& data,
                            const DiagnosticsOptions& opt);

CheckRecord check_random_sampling(const defenses::DefendedModel& model, const nn::Dataset& data,
                                  const DiagnosticsOptions& opt);

CheckRecord check_monotonicity(const defenses::DefendedModel& model, const nn::Dataset& data,
                               const DiagnosticsOptions& opt);

/// All five characteristic-behavior checks; the verdict is any-triggered.
DiagnosticReport run_all(const defenses::DefendedModel& model,
                         const defenses::DefendedModel& surrogate, const nn::Dataset& data,
                         const DiagnosticsOptions& opt);

}  // namespace advlab::diagnostics
