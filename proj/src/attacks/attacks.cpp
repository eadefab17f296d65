#include "attacks/attack.hpp"

#include <algorithm>
#include <cmath>

#include "harness/metrics.hpp"

namespace advlab::attacks {

using defenses::DefendedModel;
using defenses::PreDraw;

const char* attack_kind_name(AttackKind k) {
  switch (k) {
    case AttackKind::Fgsm: return "fgsm";
    case AttackKind::PgdLinf: return "pgd_linf";
    case AttackKind::LagrangianL2: return "lagrangian_l2";
    case AttackKind::BpdaPgd: return "bpda_pgd";
    case AttackKind::EotPgd: return "eot_pgd";
    case AttackKind::Reparam: return "reparam";
    case AttackKind::HighConfidenceL2: return "high_confidence_l2";
  }
  return "?";
}

std::optional<AttackKind> attack_kind_from(const std::string& name) {
  for (AttackKind k : {AttackKind::Fgsm, AttackKind::PgdLinf, AttackKind::LagrangianL2,
                       AttackKind::BpdaPgd, AttackKind::EotPgd, AttackKind::Reparam,
                       AttackKind::HighConfidenceL2})
    if (name == attack_kind_name(k)) return k;
  return std::nullopt;
}

namespace {

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

enum class LossKind { XentMax, MarginHinge };

/// Loss/gradient engine in image space: records the defended forward with the
/// configured surrogates, averages gradients over the defense's randomness
/// (one draw, k draws, or exact enumeration), and reports the mean loss.
class GradOracle {
 public:
  GradOracle(const DefendedModel& model, const AttackConfig& cfg, LossKind loss, int label,
             int target)
      : model_(model), cfg_(cfg), loss_(loss), label_(label), target_(target) {
    samples_ = 1;
    if (cfg.kind == AttackKind::EotPgd || cfg.kind == AttackKind::BpdaPgd)
      samples_ = std::max(1, cfg.eot_samples);
    enumerate_ = cfg.eot_enumerate;
    if (enumerate_) {
      enum_count_ = model.enumeration_count();
      if (enum_count_ < 1)
        throw Error("eot: full enumeration requested but the defense randomness is not "
                    "a finite set");
    }
  }

  Tensor build_loss(Tape& tape, const Tensor& xl, const std::vector<PreDraw>& draws,
                    Rng& sap_rng) const {
    Tensor logits =
        model_.record_logits(tape, xl, draws, &cfg_.surrogates, &sap_rng);
    if (loss_ == LossKind::XentMax) {
      if (cfg_.targeted) {
        Tensor l = tape.softmax_xent(logits, {target_});
        return tape.mul(Tensor::scalar(-1.0), l);
      }
      return tape.softmax_xent(logits, {label_});
    }
    const int anchor = cfg_.targeted ? target_ : label_;
    Tensor margin = tape.cw_margin(logits, anchor, cfg_.targeted);
    return tape.clamp(margin, -cfg_.kappa, 1e30);
  }

  /// Mean gradient of the objective at x; also yields the mean loss and
  /// whether the gradient was identically zero.
  Tensor gradient(const Tensor& x, Rng& rng, double* loss_out, bool* zero_out) const {
    double loss_sum = 0.0;
    int n = 0;
    Tensor g;
    if (enumerate_) {
      auto fn = [&](Tape& tape, const Tensor& xl, int idx) {
        Tensor l = build_loss(tape, xl, model_.draws_at(idx), rng);
        loss_sum += l.item();
        ++n;
        return l;
      };
      g = enumerated_gradient(fn, x, enum_count_);
    } else {
      StochasticObjective obj;
      obj.deterministic = !model_.stochastic();
      obj.build = [&](Tape& tape, const Tensor& xl, Rng& r) {
        Tensor l = build_loss(tape, xl, model_.sample_draws(r), r);
        loss_sum += l.item();
        ++n;
        return l;
      };
      g = expectation_gradient(obj, x, samples_, rng);
    }
    if (loss_out) *loss_out = loss_sum / n;
    if (zero_out) {
      bool zero = true;
      for (double v : g.data)
        if (v != 0.0) {
          zero = false;
          break;
        }
      *zero_out = zero;
    }
    return g;
  }

  /// Objective under one fresh draw (best-iterate selection).
  double loss_once(const Tensor& x, Rng& rng) const {
    Tape tape;
    Tensor xl = tape.leaf(x);
    return build_loss(tape, xl, model_.sample_draws(rng), rng).item();
  }

 private:
  const DefendedModel& model_;
  const AttackConfig& cfg_;
  LossKind loss_;
  int label_;
  int target_;
  int samples_ = 1;
  bool enumerate_ = false;
  int enum_count_ = 0;
};

void fill_metrics(AttackOutcome& out, const Tensor& x0) {
  out.linf = harness::linf_distortion(x0, out.adversarial);
  out.l2_raw = harness::l2_raw(x0, out.adversarial);
  out.l2_normalized = harness::l2_distortion(x0, out.adversarial);
}

bool goal_met(const DefendedModel& model, const Tensor& x, int label, int target, bool targeted,
              Rng& rng) {
  const int pred = model.classify_once(x, rng);
  return targeted ? pred == target : pred != label;
}

AttackOutcome pgd_loop(const DefendedModel& model, const Tensor& x0, int label, int target,
                       const AttackConfig& cfg, int iterations, double alpha, bool random_start) {
  GradOracle oracle(model, cfg, LossKind::XentMax, label, target);
  Rng rng(cfg.seed);
  const double eps = cfg.epsilon;

  Tensor x = x0.detached();
  if (random_start && eps > 0.0)
    for (std::size_t i = 0; i < x.size(); ++i)
      x.data[i] = std::clamp(x.data[i] + rng.uniform(-eps, eps), 0.0, 1.0);

  Tensor best = x;
  double best_loss = -std::numeric_limits<double>::infinity();
  bool have_candidate = false;
  bool all_zero = true;
  int used = 0;

  for (int t = 0; t < iterations; ++t) {
    used = t + 1;
    double loss = 0.0;
    bool zero = false;
    Tensor g = oracle.gradient(x, rng, &loss, &zero);
    if (!zero) all_zero = false;

    if (zero && !model.stochastic()) {
      // shattered and frozen; nothing further will move
      break;
    }

    for (std::size_t i = 0; i < x.size(); ++i) {
      double v = x.data[i] + alpha * sgn(g.data[i]);
      v = std::clamp(v, x0.data[i] - eps, x0.data[i] + eps);
      x.data[i] = std::clamp(v, 0.0, 1.0);
    }
    const double closs = oracle.loss_once(x, rng);
    if (!have_candidate || closs > best_loss) {
      best_loss = closs;
      best = x;
      have_candidate = true;
    }
  }

  AttackOutcome out;
  out.adversarial = best.detached();
  out.adversarial.node = -1;
  out.zero_gradient = all_zero;
  out.iterations_used = used;
  out.final_loss = have_candidate ? best_loss : oracle.loss_once(best, rng);
  out.success = goal_met(model, out.adversarial, label, target, cfg.targeted, rng);
  fill_metrics(out, x0);
  return out;
}

struct MarginEval {
  double margin;
  int pred;
};

MarginEval margin_once(const DefendedModel& model, const Tensor& x, int label, int target,
                       bool targeted, Rng& rng) {
  Tape tape;
  Tensor xl = tape.leaf(x);
  std::vector<PreDraw> draws = model.sample_draws(rng);
  Tensor logits = model.record_logits(tape, xl, draws, nullptr, &rng);
  MarginEval e;
  e.pred = nn::argmax_row(logits, 0);
  const int anchor = targeted ? target : label;
  Tape mt;
  e.margin = mt.cw_margin(logits.detached(), anchor, targeted).item();
  return e;
}

AttackOutcome l2_loop(const DefendedModel& model, const Tensor& x0, int label, int target,
                      const AttackConfig& cfg) {
  GradOracle oracle(model, cfg, LossKind::MarginHinge, label, target);
  Rng rng(cfg.seed);

  AttackOutcome out;
  out.adversarial = x0.detached();

  {  // delta = 0 is optimal when the goal is already met
    MarginEval e = margin_once(model, x0, label, target, cfg.targeted, rng);
    const bool ok = cfg.targeted ? e.pred == target : e.pred != label;
    if (ok && e.margin <= -cfg.kappa) {
      out.success = true;
      out.final_loss = e.margin;
      fill_metrics(out, x0);
      return out;
    }
  }

  // box change of variables: x' = (tanh(w) + 1) / 2
  Tensor w0 = Tensor::zeros(x0.shape);
  for (std::size_t i = 0; i < x0.size(); ++i)
    w0.data[i] = std::atanh(std::clamp(2.0 * x0.data[i] - 1.0, -1.0 + 1e-6, 1.0 - 1e-6));

  double c = cfg.c_init, lo = 0.0, hi = std::numeric_limits<double>::infinity();
  Tensor best_x;
  double best_l2 = std::numeric_limits<double>::infinity();
  double best_loss = 0.0;
  Tensor effort_x = x0.detached();   // best-effort candidate when nothing succeeds
  double effort_margin = std::numeric_limits<double>::infinity();
  int used = 0;

  for (int search = 0; search < std::max(1, cfg.c_search_steps); ++search) {
    Tensor w = w0;
    Tensor m1 = Tensor::zeros(w.shape), m2 = Tensor::zeros(w.shape);
    bool success_here = false;

    for (int t = 0; t < cfg.iterations; ++t) {
      ++used;
      Tensor x = Tensor::zeros(w.shape);
      std::vector<double> th(w.size());
      for (std::size_t i = 0; i < w.size(); ++i) {
        th[i] = std::tanh(w.data[i]);
        x.data[i] = (th[i] + 1.0) / 2.0;
      }

      double hinge = 0.0;
      Tensor gh = oracle.gradient(x, rng, &hinge, nullptr);

      // d obj / d x' = 2 (x' - x0) + c * d hinge, then through the tanh map
      Tensor gw = Tensor::zeros(w.shape);
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gx = 2.0 * (x.data[i] - x0.data[i]) + c * gh.data[i];
        gw.data[i] = gx * (1.0 - th[i] * th[i]) / 2.0;
      }

      // Adam step
      const double b1 = 0.9, b2 = 0.999, eps_a = 1e-8;
      const double corr1 = 1.0 - std::pow(b1, t + 1), corr2 = 1.0 - std::pow(b2, t + 1);
      for (std::size_t i = 0; i < w.size(); ++i) {
        m1.data[i] = b1 * m1.data[i] + (1.0 - b1) * gw.data[i];
        m2.data[i] = b2 * m2.data[i] + (1.0 - b2) * gw.data[i] * gw.data[i];
        w.data[i] -= cfg.l2_lr * (m1.data[i] / corr1) / (std::sqrt(m2.data[i] / corr2) + eps_a);
      }

      Tensor xc = Tensor::zeros(w.shape);
      for (std::size_t i = 0; i < w.size(); ++i)
        xc.data[i] = (std::tanh(w.data[i]) + 1.0) / 2.0;
      MarginEval e = margin_once(model, xc, label, target, cfg.targeted, rng);
      const bool ok = (cfg.targeted ? e.pred == target : e.pred != label) &&
                      e.margin <= -cfg.kappa;
      if (ok) {
        const double l2 = harness::l2_raw(x0, xc);
        if (l2 < best_l2) {
          best_l2 = l2;
          best_x = xc;
          best_loss = e.margin;
        }
        success_here = true;
      } else if (e.margin < effort_margin) {
        effort_margin = e.margin;
        effort_x = xc;
      }
    }

    if (success_here) {
      hi = c;
      c = (lo + hi) / 2.0;
    } else {
      lo = c;
      c = std::isinf(hi) ? c * 10.0 : (lo + hi) / 2.0;
    }
  }

  out.iterations_used = used;
  if (!std::isinf(best_l2)) {
    out.adversarial = best_x.detached();
    out.success = true;
    out.final_loss = best_loss;
  } else {
    out.adversarial = effort_x.detached();
    out.success = false;
    out.final_loss = effort_margin;
  }
  out.adversarial.node = -1;
  // success under one fresh draw of the true defense (stochastic defenses)
  if (out.success && model.stochastic())
    out.success = goal_met(model, out.adversarial, label, target, cfg.targeted, rng);
  fill_metrics(out, x0);
  return out;
}

AttackOutcome reparam_loop(const DefendedModel& model, const Tensor& x0, int label, int target,
                           const AttackConfig& cfg) {
  if (!cfg.projection) throw Error("reparam: config carries no projection defense");
  const manifold::ProjectionDefense& proj = *cfg.projection;
  const manifold::Decoder& dec = proj.decoder;
  Rng rng(cfg.seed);

  // initialize z at the manifold projection of x
  Tensor z0 = proj.project(x0).z;

  double c = cfg.c_init, lo = 0.0, hi = std::numeric_limits<double>::infinity();
  const int anchor = cfg.targeted ? target : label;
  Tensor best_img;
  double best_l2 = std::numeric_limits<double>::infinity();
  Tensor effort_img = dec.decode(z0);
  int used = 0;
  const int check_every = std::max(1, cfg.iterations / 25);

  for (int search = 0; search < std::max(1, cfg.c_search_steps); ++search) {
    Tensor z = z0;
    Tensor m1 = Tensor::zeros(z.shape), m2 = Tensor::zeros(z.shape);
    bool success_here = false;

    for (int t = 0; t < cfg.iterations; ++t) {
      ++used;
      Tape tape;
      Tensor zl = tape.leaf(z);
      Tensor loss = manifold::record_reparam_loss(tape, dec, model.classifier, zl, x0, c, anchor,
                                                  cfg.targeted, cfg.kappa);
      GradientMap gm = tape.backward(loss, {zl});
      const Tensor& g = gm.at(zl);

      const double b1 = 0.9, b2 = 0.999, eps_a = 1e-8;
      const double corr1 = 1.0 - std::pow(b1, t + 1), corr2 = 1.0 - std::pow(b2, t + 1);
      for (std::size_t i = 0; i < z.size(); ++i) {
        m1.data[i] = b1 * m1.data[i] + (1.0 - b1) * g.data[i];
        m2.data[i] = b2 * m2.data[i] + (1.0 - b2) * g.data[i] * g.data[i];
        z.data[i] -= cfg.l2_lr * (m1.data[i] / corr1) / (std::sqrt(m2.data[i] / corr2) + eps_a);
      }

      if ((t + 1) % check_every == 0 || t + 1 == cfg.iterations) {
        Tensor img = dec.decode(z);
        if (goal_met(model, img, label, target, cfg.targeted, rng)) {
          const double l2 = harness::l2_raw(x0, img);
          if (l2 < best_l2) {
            best_l2 = l2;
            best_img = img;
          }
          success_here = true;
        } else {
          effort_img = img;
        }
      }
    }

    if (success_here) {
      hi = c;
      c = (lo + hi) / 2.0;
    } else {
      lo = c;
      c = std::isinf(hi) ? c * 10.0 : (lo + hi) / 2.0;
    }
  }

  AttackOutcome out;
  out.iterations_used = used;
  if (!std::isinf(best_l2)) {
    out.adversarial = best_img.detached();
    out.success = true;
  } else {
    out.adversarial = effort_img.detached();
    out.success = false;
  }
  out.adversarial.node = -1;
  out.success = out.success &&
                goal_met(model, out.adversarial, label, target, cfg.targeted, rng);
  fill_metrics(out, x0);
  return out;
}

void validate_bpda_coverage(const DefendedModel& model, const AttackConfig& cfg) {
  for (std::size_t i = 0; i < model.chain.size(); ++i) {
    if (!model.chain[i].shattered()) continue;
    if (cfg.surrogates.at(static_cast<int>(i)) == defenses::Surrogate::None)
      throw Error("bpda: stage " + std::to_string(i) + " (" + model.chain[i].name() +
                  ") is not usefully differentiable and has no registered surrogate");
  }
}

}  // namespace

AttackOutcome run_attack(const DefendedModel& model, const Tensor& x, int true_label,
                         int target_label, const AttackConfig& cfg) {
  model.validate();
  if (cfg.targeted && (target_label < 0 || target_label >= model.classifier.num_classes))
    throw Error("attack: targeted mode needs a valid target label");
  if (cfg.targeted && target_label == true_label)
    throw Error("attack: target label equals the true label");

  switch (cfg.kind) {
    case AttackKind::Fgsm: {
      if (cfg.epsilon < 0.0) throw Error("fgsm: epsilon must be >= 0");
      return pgd_loop(model, x, true_label, target_label, cfg, 1, cfg.epsilon, false);
    }
    case AttackKind::PgdLinf: {
      if (cfg.epsilon <= 0.0) throw Error("pgd: epsilon must be > 0");
      const double alpha = cfg.step_size > 0.0 ? cfg.step_size : cfg.epsilon / 4.0;
      return pgd_loop(model, x, true_label, target_label, cfg, cfg.iterations, alpha,
                      cfg.random_start);
    }
    case AttackKind::BpdaPgd: {
      validate_bpda_coverage(model, cfg);
      if (cfg.inner == LossLoop::LagrangianL2)
        return l2_loop(model, x, true_label, target_label, cfg);
      const double alpha = cfg.step_size > 0.0 ? cfg.step_size : cfg.epsilon / 4.0;
      return pgd_loop(model, x, true_label, target_label, cfg, cfg.iterations, alpha,
                      cfg.random_start);
    }
    case AttackKind::EotPgd: {
      if (!cfg.eot_enumerate && cfg.eot_samples < 1)
        throw Error("eot: samples must be >= 1");
      if (cfg.inner == LossLoop::LagrangianL2)
        return l2_loop(model, x, true_label, target_label, cfg);
      const double alpha = cfg.step_size > 0.0 ? cfg.step_size : cfg.epsilon / 4.0;
      return pgd_loop(model, x, true_label, target_label, cfg, cfg.iterations, alpha,
                      cfg.random_start);
    }
    case AttackKind::LagrangianL2:
      return l2_loop(model, x, true_label, target_label, cfg);
    case AttackKind::HighConfidenceL2:
      // kappa = 0 degenerates to plain lagrangian_l2 (same loop)
      if (cfg.kappa < 0.0) throw Error("high_confidence: kappa must be >= 0");
      return l2_loop(model, x, true_label, target_label, cfg);
    case AttackKind::Reparam:
      return reparam_loop(model, x, true_label, target_label, cfg);
  }
  throw Error("attack: unknown kind");
}

}  // namespace advlab::attacks
