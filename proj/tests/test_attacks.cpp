#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "attacks/attack.hpp"
#include "harness/metrics.hpp"
#include "support/fixtures.hpp"

using namespace advlab;
using namespace advlab::attacks;
using defenses::DefendedModel;
using defenses::Preprocessor;
using defenses::Surrogate;

namespace {

bool same_bits(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.data[i] != b.data[i]) return false;
  return true;
}

/// One-pixel two-class model: logits = (w0 x, w1 x).
DefendedModel pixel_model(double w0, double w1) {
  nn::Classifier clf;
  clf.input_shape = {1, 1, 1};
  clf.num_classes = 2;
  clf.layers = {nn::LayerSpec::flatten(), nn::LayerSpec::dense(1, 2)};
  clf.params["l01.w"] = Tensor({1, 2}, {w0, w1});
  clf.params["l01.b"] = Tensor::zeros({2});
  return DefendedModel::bare(clf);
}

}  // namespace

TEST_CASE("fgsm: epsilon 0 returns x; success iff already misclassified") {
  DefendedModel m = DefendedModel::bare(fixtures::small_mlp());
  const nn::Dataset& d = fixtures::small_test();

  AttackConfig cfg;
  cfg.kind = AttackKind::Fgsm;
  cfg.epsilon = 0.0;

  const std::size_t good = fixtures::correct_index(m);
  AttackOutcome out = run_attack(m, d.image(good), d.labels[good], -1, cfg);
  CHECK(same_bits(out.adversarial, d.image(good)));
  CHECK_FALSE(out.success);
  CHECK(out.linf == 0.0);
}

TEST_CASE("fgsm: step is epsilon times the gradient sign") {
  // logits (2x, -x): for label 1, d xent / dx = p0*2 - (1-p1)*(-1) > 0
  DefendedModel m = pixel_model(2.0, -1.0);
  Tensor x = Tensor({1, 1, 1}, {0.4});

  AttackConfig cfg;
  cfg.kind = AttackKind::Fgsm;
  cfg.epsilon = 0.1;
  AttackOutcome out = run_attack(m, x, 1, -1, cfg);
  CHECK(out.adversarial.data[0] == doctest::Approx(0.5).epsilon(1e-12));

  // flipped weights flip the sign
  DefendedModel m2 = pixel_model(-1.0, 2.0);
  AttackOutcome out2 = run_attack(m2, x, 1, -1, cfg);
  CHECK(out2.adversarial.data[0] == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("fgsm: thermometer without surrogate raises the zero-gradient flag") {
  DefendedModel m = fixtures::thermo_model();
  const nn::Dataset& d = fixtures::small_test();
  const std::size_t good = fixtures::correct_index(m);

  AttackConfig cfg;
  cfg.kind = AttackKind::Fgsm;
  cfg.epsilon = 0.1;
  AttackOutcome out = run_attack(m, d.image(good), d.labels[good], -1, cfg);
  CHECK(out.zero_gradient);
  CHECK(same_bits(out.adversarial, d.image(good)));
}

TEST_CASE("pgd: ball-then-box projection pins a saturated pixel") {
  // x0 = 1.0, eps = 0.2, one step of size 0.3 proposes 1.3 -> ball 1.2 -> box 1.0
  DefendedModel m = pixel_model(2.0, -1.0);  // gradient pushes up for label 1
  Tensor x = Tensor({1, 1, 1}, {1.0});
  AttackConfig cfg;
  cfg.kind = AttackKind::PgdLinf;
  cfg.epsilon = 0.2;
  cfg.step_size = 0.3;
  cfg.iterations = 1;
  cfg.random_start = false;
  AttackOutcome out = run_attack(m, x, 1, -1, cfg);
  CHECK(out.adversarial.data[0] == 1.0);
}

TEST_CASE("pgd: one step with alpha = epsilon and no random start equals fgsm") {
  DefendedModel m = DefendedModel::bare(fixtures::small_mlp());
  const nn::Dataset& d = fixtures::small_test();
  const std::size_t i = fixtures::correct_index(m);

  AttackConfig fg;
  fg.kind = AttackKind::Fgsm;
  fg.epsilon = 0.12;
  fg.seed = 42;
  AttackConfig pg;
  pg.kind = AttackKind::PgdLinf;
  pg.epsilon = 0.12;
  pg.step_size = 0.12;
  pg.iterations = 1;
  pg.random_start = false;
  pg.seed = 42;

  AttackOutcome a = run_attack(m, d.image(i), d.labels[i], -1, fg);
  AttackOutcome b = run_attack(m, d.image(i), d.labels[i], -1, pg);
  CHECK(same_bits(a.adversarial, b.adversarial));
  CHECK(a.success == b.success);
}

TEST_CASE("eot with a point-mass distribution is exactly pgd") {
  DefendedModel m = DefendedModel::bare(fixtures::small_mlp());
  const nn::Dataset& d = fixtures::small_test();
  const std::size_t i = fixtures::correct_index(m);

  AttackConfig pg;
  pg.kind = AttackKind::PgdLinf;
  pg.epsilon = 0.1;
  pg.iterations = 12;
  pg.seed = 7;
  AttackConfig eot = pg;
  eot.kind = AttackKind::EotPgd;
  eot.eot_samples = 10;

  AttackOutcome a = run_attack(m, d.image(i), d.labels[i], -1, pg);
  AttackOutcome b = run_attack(m, d.image(i), d.labels[i], -1, eot);
  CHECK(same_bits(a.adversarial, b.adversarial));
  CHECK(a.final_loss == b.final_loss);
}

TEST_CASE("bpda with single draw equals pgd on a differentiable stochastic stage") {
  DefendedModel m;
  m.name = "crop";
  m.raw_input = {16, 16, 1};
  m.chain = {Preprocessor::crop_rescale(0.8)};
  m.classifier = fixtures::small_mlp();

  const nn::Dataset& d = fixtures::small_test();
  const std::size_t i = fixtures::correct_index(m);

  AttackConfig pg;
  pg.kind = AttackKind::PgdLinf;
  pg.epsilon = 0.15;
  pg.iterations = 10;
  pg.seed = 21;
  AttackConfig bp = pg;
  bp.kind = AttackKind::BpdaPgd;
  bp.eot_samples = 1;  // same single-draw gradient as pgd

  AttackOutcome a = run_attack(m, d.image(i), d.labels[i], -1, pg);
  AttackOutcome b = run_attack(m, d.image(i), d.labels[i], -1, bp);
  CHECK(same_bits(a.adversarial, b.adversarial));
}

TEST_CASE("bpda: unregistered shattered stage is a named error") {
  DefendedModel m = fixtures::thermo_model();
  const nn::Dataset& d = fixtures::small_test();
  AttackConfig cfg;
  cfg.kind = AttackKind::BpdaPgd;
  CHECK_THROWS_WITH_AS(run_attack(m, d.image(0), d.labels[0], -1, cfg),
                       doctest::Contains("thermometer"), Error);
}

TEST_CASE("bpda with tau_hat drives the thermometer model off a correct image") {
  DefendedModel m = fixtures::thermo_model();
  const nn::Dataset& d = fixtures::small_test();
  const std::size_t i = fixtures::correct_index(m);

  AttackConfig cfg;
  cfg.kind = AttackKind::BpdaPgd;
  cfg.epsilon = 0.3;
  cfg.iterations = 40;
  cfg.seed = 3;
  cfg.surrogates.stages[0] = Surrogate::TauHat;

  AttackOutcome out = run_attack(m, d.image(i), d.labels[i], -1, cfg);
  CHECK_FALSE(out.zero_gradient);
  CHECK(out.success);
  CHECK(out.linf <= 0.3 + 1e-9);
}

TEST_CASE("budget respect and box containment over random configs") {
  DefendedModel m = DefendedModel::bare(fixtures::small_mlp());
  const nn::Dataset& d = fixtures::small_test();
  Rng rng(33);
  for (int t = 0; t < 6; ++t) {
    AttackConfig cfg;
    cfg.kind = AttackKind::PgdLinf;
    cfg.epsilon = rng.uniform(0.02, 0.4);
    cfg.iterations = 5 + static_cast<int>(rng.below(10));
    cfg.seed = rng.bits();
    const std::size_t i = rng.below(d.size());
    AttackOutcome out = run_attack(m, d.image(i), d.labels[i], -1, cfg);
    CHECK(out.linf <= cfg.epsilon + 1e-9);
    for (double v : out.adversarial.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("seeded determinism: identical config and seed give identical bits") {
  DefendedModel m;
  m.name = "sap";
  m.raw_input = {16, 16, 1};
  m.classifier = fixtures::small_mlp();
  m.sap.enabled = true;

  const nn::Dataset& d = fixtures::small_test();
  AttackConfig cfg;
  cfg.kind = AttackKind::EotPgd;
  cfg.epsilon = 0.2;
  cfg.iterations = 6;
  cfg.eot_samples = 4;
  cfg.seed = 99;

  AttackOutcome a = run_attack(m, d.image(3), d.labels[3], -1, cfg);
  AttackOutcome b = run_attack(m, d.image(3), d.labels[3], -1, cfg);
  CHECK(same_bits(a.adversarial, b.adversarial));
  CHECK(a.final_loss == b.final_loss);
  CHECK(a.success == b.success);
}

TEST_CASE("lagrangian: already-misclassified input returns delta = 0") {
  DefendedModel m = DefendedModel::bare(fixtures::small_mlp());
  const nn::Dataset& d = fixtures::small_test();
  Rng rng(1);
  std::size_t wrong = d.size();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (m.classify_once(d.image(i), rng) != d.labels[i]) {
      wrong = i;
      break;
    }
  if (wrong == d.size()) {
    // model classifies everything; mislabel deliberately
    wrong = 0;
    AttackConfig cfg;
    cfg.kind = AttackKind::LagrangianL2;
    const int fake_label = (m.classify_once(d.image(0), rng) + 1) % 10;
    AttackOutcome out = run_attack(m, d.image(0), fake_label, -1, cfg);
    CHECK(out.success);
    CHECK(out.l2_raw == 0.0);
  } else {
    AttackConfig cfg;
    cfg.kind = AttackKind::LagrangianL2;
    AttackOutcome out = run_attack(m, d.image(wrong), d.labels[wrong], -1, cfg);
    CHECK(out.success);
    CHECK(out.l2_raw == 0.0);
  }
}

TEST_CASE("lagrangian: finds small-distortion untargeted examples") {
  DefendedModel m = DefendedModel::bare(fixtures::small_mlp());
  const nn::Dataset& d = fixtures::small_test();
  const std::size_t i = fixtures::correct_index(m);

  AttackConfig cfg;
  cfg.kind = AttackKind::LagrangianL2;
  cfg.iterations = 80;
  cfg.c_search_steps = 4;
  cfg.seed = 11;
  AttackOutcome out = run_attack(m, d.image(i), d.labels[i], -1, cfg);
  CHECK(out.success);
  CHECK(out.l2_raw > 0.0);
  CHECK(out.l2_raw < 4.0);
}

TEST_CASE("high confidence: kappa 0 is exactly lagrangian_l2; margin >= kappa at success") {
  DefendedModel m = DefendedModel::bare(fixtures::small_mlp());
  const nn::Dataset& d = fixtures::small_test();
  const std::size_t i = fixtures::correct_index(m);

  AttackConfig la;
  la.kind = AttackKind::LagrangianL2;
  la.iterations = 40;
  la.c_search_steps = 3;
  la.seed = 13;
  AttackConfig hc = la;
  hc.kind = AttackKind::HighConfidenceL2;
  hc.kappa = 0.0;

  AttackOutcome a = run_attack(m, d.image(i), d.labels[i], -1, la);
  AttackOutcome b = run_attack(m, d.image(i), d.labels[i], -1, hc);
  CHECK(same_bits(a.adversarial, b.adversarial));

  // kappa > 0: the logit margin of the adversarial class is at least kappa
  AttackConfig hc2 = hc;
  hc2.kappa = 1.5;
  hc2.iterations = 120;
  hc2.c_search_steps = 5;
  AttackOutcome c = run_attack(m, d.image(i), d.labels[i], -1, hc2);
  REQUIRE(c.success);
  Tensor batch(Shape{1, 16, 16, 1}, c.adversarial.data);
  Tensor z = m.classifier.logits(batch);
  const int y = d.labels[i];
  double best_other = -1e300;
  for (int k = 0; k < 10; ++k)
    if (k != y) best_other = std::max(best_other, z.data[k]);
  CHECK(best_other - z.data[y] >= 1.5 - 1e-9);

  // confidence costs distortion
  CHECK(c.l2_raw >= a.l2_raw);
}

TEST_CASE("targeted mode validates the target label") {
  DefendedModel m = DefendedModel::bare(fixtures::small_mlp());
  AttackConfig cfg;
  cfg.kind = AttackKind::PgdLinf;
  cfg.targeted = true;
  CHECK_THROWS_AS(run_attack(m, fixtures::small_test().image(0), 3, -1, cfg), Error);
  CHECK_THROWS_AS(run_attack(m, fixtures::small_test().image(0), 3, 3, cfg), Error);
}

TEST_CASE("reparam: c = 0 reproduces the projection; success only if it misclassifies") {
  // tiny decoder trained briefly on the small set
  manifold::DecoderTrainOptions dopt;
  dopt.epochs = 4;
  dopt.hidden = 64;
  dopt.seed = 3;
  manifold::TrainedDecoder td = manifold::train_decoder(fixtures::small_train(), 16, dopt);

  auto proj = std::make_shared<manifold::ProjectionDefense>();
  proj->decoder = td.decoder;
  proj->restarts = 2;
  proj->steps = 60;
  proj->seed = 17;

  DefendedModel bare = DefendedModel::bare(fixtures::small_mlp());
  const nn::Dataset& d = fixtures::small_test();
  const std::size_t i = fixtures::correct_index(bare);

  AttackConfig cfg;
  cfg.kind = AttackKind::Reparam;
  cfg.projection = proj;
  cfg.c_init = 0.0;
  cfg.c_search_steps = 1;
  cfg.iterations = 10;
  cfg.l2_lr = 0.0;  // stay at the initialization: x' = G(project(x).z)
  cfg.seed = 5;

  AttackOutcome out = run_attack(bare, d.image(i), d.labels[i], -1, cfg);
  Tensor projected = proj->project(d.image(i)).image;
  CHECK(max_abs_diff(out.adversarial, projected) < 1e-9);
  Rng rng(2);
  const bool proj_misclassifies = bare.classify_once(projected, rng) != d.labels[i];
  CHECK(out.success == proj_misclassifies);
}
