#include "diagnostics/checks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace advlab::diagnostics {

using attacks::AttackConfig;
using attacks::AttackKind;
using attacks::AttackOutcome;
using defenses::DefendedModel;

namespace {

std::size_t eval_count(const nn::Dataset& data, const DiagnosticsOptions& opt) {
  if (data.size() == 0) throw Error("diagnostics: empty evaluation set");
  return std::min<std::size_t>(data.size(), opt.sample_limit);
}

/// Untargeted success of a finished attack under the ever-correct convention.
bool attack_beat(const DefendedModel& model, const Tensor& adv, int label,
                 const DiagnosticsOptions& opt, Rng& rng) {
  if (opt.trials <= 1 || !model.stochastic()) {
    return model.classify_once(adv, rng) != label;
  }
  return !model.ever_correct(adv, label, opt.trials, rng);
}

double success_rate(const DefendedModel& model, const nn::Dataset& data,
                    const AttackConfig& cfg, const DiagnosticsOptions& opt,
                    std::uint64_t stream) {
  const std::size_t n = eval_count(data, opt);
  Rng root = Rng(opt.seed).split(stream);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < n; ++i) {
    AttackConfig c = cfg;
    c.seed = root.split(i).seed();
    AttackOutcome out = attacks::run_attack(model, data.image(i), data.labels[i], -1, c);
    Rng ev = root.split(i ^ 0xE7A1ull);
    if (attack_beat(model, out.adversarial, data.labels[i], opt, ev)) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(n);
}

std::string pct(double v) {
  std::ostringstream os;
  os.precision(1);
  os << std::fixed << 100.0 * v << "%";
  return os.str();
}

}  // namespace

CheckRecord check_one_step_vs_iterative(const DefendedModel& model, const nn::Dataset& data,
                                        const DiagnosticsOptions& opt) {
  CheckRecord rec;
  rec.name = "one_step_vs_iterative";

  AttackConfig one = opt.attack;
  one.kind = AttackKind::Fgsm;
  one.surrogates = opt.attack.surrogates;

  const double fgsm_rate = success_rate(model, data, one, opt, 11);
  const double iter_rate = success_rate(model, data, opt.attack, opt, 12);

  rec.measured["fgsm_success"] = fgsm_rate;
  rec.measured["iterative_success"] = iter_rate;
  rec.triggered = fgsm_rate > iter_rate + opt.tolerance_points / 100.0;
  rec.narrative = "one-step " + pct(fgsm_rate) + " vs iterative " + pct(iter_rate) +
                  (rec.triggered ? ": one-step wins, iterative optimization is stuck"
                                 : ": iterative attack is at least as strong");
  return rec;
}

CheckRecord check_blackbox_transfer(const DefendedModel& model, const DefendedModel& surrogate,
                                    const nn::Dataset& data, const DiagnosticsOptions& opt) {
  CheckRecord rec;
  rec.name = "blackbox_transfer";
  const std::size_t n = eval_count(data, opt);

  const double white_rate = success_rate(model, data, opt.attack, opt, 21);

  // black box: plain PGD on the surrogate, evaluated on the defended model
  AttackConfig bb = opt.attack;
  bb.kind = AttackKind::PgdLinf;
  bb.surrogates = {};
  bb.eot_enumerate = false;
  Rng root = Rng(opt.seed).split(21);  // same per-image seeds as the white-box run
  std::size_t ok = 0;
  for (std::size_t i = 0; i < n; ++i) {
    AttackConfig c = bb;
    c.seed = root.split(i).seed();
    AttackOutcome out = attacks::run_attack(surrogate, data.image(i), data.labels[i], -1, c);
    Rng ev = root.split(i ^ 0xE7A1ull);
    if (attack_beat(model, out.adversarial, data.labels[i], opt, ev)) ++ok;
  }
  const double transfer_rate = static_cast<double>(ok) / static_cast<double>(n);

  rec.measured["whitebox_success"] = white_rate;
  rec.measured["transfer_success"] = transfer_rate;
  rec.triggered = transfer_rate > white_rate + opt.tolerance_points / 100.0;
  rec.narrative = "white-box " + pct(white_rate) + " vs transfer " + pct(transfer_rate) +
                  (rec.triggered ? ": gradient-free transfer beats the white-box attack"
                                 : ": white-box attack dominates");
  return rec;
}

CheckRecord check_unbounded(const DefendedModel& model, const nn::Dataset& data,
                            const DiagnosticsOptions& opt) {
  CheckRecord rec;
  rec.name = "unbounded_attack";

  AttackConfig cfg = opt.attack;
  cfg.epsilon = 1.0;
  cfg.step_size = 0.0;  // epsilon / 4
  const double rate = success_rate(model, data, cfg, opt, 31);

  rec.measured["unbounded_success"] = rate;
  rec.triggered = rate < 1.0;
  rec.narrative = "unbounded success " + pct(rate) +
                  (rec.triggered ? ": below 100%, the attack is not working"
                                 : ": reaches 100% as any working attack must");
  return rec;
}

CheckRecord check_random_sampling(const DefendedModel& model, const nn::Dataset& data,
                                  const DiagnosticsOptions& opt) {
  CheckRecord rec;
  rec.name = "random_sampling";
  const std::size_t n = eval_count(data, opt);
  const int cap = std::min(opt.random_samples, 100000);
  const double eps = opt.attack.epsilon;

  Rng root = Rng(opt.seed).split(41);
  std::size_t failed = 0, found = 0;
  for (std::size_t i = 0; i < n; ++i) {
    AttackConfig c = opt.attack;
    c.seed = root.split(i).seed();
    AttackOutcome out = attacks::run_attack(model, data.image(i), data.labels[i], -1, c);
    Rng ev = root.split(i ^ 0xE7A1ull);
    if (attack_beat(model, out.adversarial, data.labels[i], opt, ev)) continue;  // skipped
    ++failed;
    if (eps == 0.0) continue;  // no sample differs from x
    Tensor x0 = data.image(i);
    Rng srng = root.split(i ^ 0x5A3Dull);
    for (int s = 0; s < cap; ++s) {
      Tensor cand = x0;
      for (double& v : cand.data) v = std::clamp(v + srng.uniform(-eps, eps), 0.0, 1.0);
      if (attack_beat(model, cand, data.labels[i], opt, srng)) {
        ++found;
        break;
      }
    }
  }

  rec.measured["images_where_attack_failed"] = static_cast<double>(failed);
  rec.measured["images_cracked_by_sampling"] = static_cast<double>(found);
  rec.triggered = found > 0;
  rec.narrative =
      "sampling cracked " + std::to_string(found) + " of " + std::to_string(failed) +
      " attack-resistant images" +
      (rec.triggered ? ": brute force beats the gradient attack" : "");
  return rec;
}

CheckRecord check_monotonicity(const DefendedModel& model, const nn::Dataset& data,
                               const DiagnosticsOptions& opt) {
  CheckRecord rec;
  rec.name = "distortion_monotonicity";
  if (opt.epsilon_grid.size() < 2) throw Error("diagnostics: grid must have >= 2 points");
  std::vector<double> grid = opt.epsilon_grid;
  std::sort(grid.begin(), grid.end());

  std::vector<double> rates;
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    AttackConfig cfg = opt.attack;
    cfg.epsilon = grid[gi];
    cfg.step_size = 0.0;
    rates.push_back(success_rate(model, data, cfg, opt, 51 + gi));
    rec.measured["success_at_" + std::to_string(grid[gi])] = rates.back();
  }

  const double tol = opt.tolerance_points / 100.0;
  bool decrease = false;
  for (std::size_t i = 0; i + 1 < rates.size(); ++i)
    for (std::size_t j = i + 1; j < rates.size(); ++j)
      if (rates[j] < rates[i] - tol) decrease = true;
  const bool flat_below_full = rates.back() < 1.0 && (rates.back() - rates.front()) < tol;

  rec.triggered = decrease || flat_below_full;
  std::ostringstream os;
  os << "success by epsilon:";
  for (std::size_t i = 0; i < grid.size(); ++i) os << " " << grid[i] << "->" << pct(rates[i]);
  if (decrease) os << "; success decreases with distortion";
  if (flat_below_full) os << "; larger distortion buys nothing while below 100%";
  rec.narrative = os.str();
  return rec;
}

DiagnosticReport run_all(const DefendedModel& model, const DefendedModel& surrogate,
                         const nn::Dataset& data, const DiagnosticsOptions& opt) {
  DiagnosticReport rep;
  rep.checks.push_back(check_one_step_vs_iterative(model, data, opt));
  rep.checks.push_back(check_blackbox_transfer(model, surrogate, data, opt));
  rep.checks.push_back(check_unbounded(model, data, opt));
  rep.checks.push_back(check_random_sampling(model, data, opt));
  rep.checks.push_back(check_monotonicity(model, data, opt));
  for (const CheckRecord& c : rep.checks) rep.obfuscation_suspected |= c.triggered;
  return rep;
}

}  // namespace advlab::diagnostics
