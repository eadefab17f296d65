#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "defenses/defended_model.hpp"
#include "nn/dataset.hpp"
#include "nn/train.hpp"

using namespace advlab;
using namespace advlab::defenses;

namespace {

Tensor img_of(std::initializer_list<double> vals, std::size_t h, std::size_t w) {
  return Tensor({h, w, 1}, std::vector<double>(vals));
}

std::string bits_of(const Tensor& enc, std::size_t pixel, int levels) {
  std::string s;
  for (int k = 0; k < levels; ++k)
    s += enc.data[pixel * levels + k] == 1.0 ? '1' : '0';
  return s;
}

}  // namespace

TEST_CASE("thermometer: encoding boundaries and monotone bits") {
  Tensor x = img_of({0.66}, 1, 1);
  Tensor enc = thermometer_encode(x, 10);
  CHECK(enc.shape == Shape{1, 1, 1, 10});
  // bit k is 1 iff 0.66 > k/10, k = 0..9
  CHECK(bits_of(enc, 0, 10) == "1111111000");

  CHECK(bits_of(thermometer_encode(img_of({0.0}, 1, 1), 10), 0, 10) == "0000000000");
  CHECK(bits_of(thermometer_encode(img_of({1.0}, 1, 1), 10), 0, 10) == "1111111111");

  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const double v = rng.uniform01();
    Tensor e = thermometer_encode(img_of({v}, 1, 1), 10);
    for (int k = 0; k + 1 < 10; ++k) CHECK(e.data[k] >= e.data[k + 1]);
  }
}

TEST_CASE("thermometer: surrogate values and rounding identity") {
  Tensor x = img_of({0.66}, 1, 1);
  Tensor s = thermometer_surrogate(x, 10);
  CHECK(s.data[0] == doctest::Approx(0.66).epsilon(1e-12));
  CHECK(s.data[6] == doctest::Approx(0.06).epsilon(1e-12));
  CHECK(s.data[7] == 0.0);

  // tau_hat(1.0)_k = 1 - k/l clipped to [0, 1]
  Tensor s1 = thermometer_surrogate(img_of({1.0}, 1, 1), 10);
  for (int k = 0; k < 10; ++k)
    CHECK(s1.data[k] == doctest::Approx(std::clamp(1.0 - k / 10.0, 0.0, 1.0)).epsilon(1e-12));

  // rounding the surrogate up recovers the encoding exactly
  Rng rng(3);
  for (int t = 0; t < 10000; ++t) {
    const double v = rng.uniform01();
    Tensor enc = thermometer_encode(img_of({v}, 1, 1), 10);
    Tensor sur = thermometer_surrogate(img_of({v}, 1, 1), 10);
    for (int k = 0; k < 10; ++k) CHECK(std::ceil(sur.data[k]) == enc.data[k]);
  }
}

TEST_CASE("thermometer: true backward is zero, tau_hat override matches the derivative") {
  Preprocessor p = Preprocessor::thermometer(10);
  Tensor x = img_of({0.66}, 1, 1);

  {  // no override: shattered
    Tape tape;
    Tensor xl = tape.leaf(x);
    Tensor enc = p.record(tape, xl, {}, Surrogate::None);
    Tensor loss = tape.sum(enc);
    GradientMap g = tape.backward(loss, {xl});
    CHECK(g.at(xl).data[0] == 0.0);
  }
  {  // tau_hat: per-bit derivative is 1 exactly for 0 < 0.66 - k/10 < 1 (k = 0..6)
    Tape tape;
    Tensor xl = tape.leaf(x);
    Tensor enc = p.record(tape, xl, {}, Surrogate::TauHat);
    Tensor loss = tape.sum(enc);
    GradientMap g = tape.backward(loss, {xl});
    CHECK(g.at(xl).data[0] == 7.0);  // seven active bits, derivative 1 each
  }
}

TEST_CASE("bit depth: rounding, idempotence, fixed point") {
  CHECK(bit_depth_reduce(img_of({0.6}, 1, 1), 1).data[0] == 1.0);
  CHECK(bit_depth_reduce(img_of({0.5}, 1, 1), 3).data[0] ==
        doctest::Approx(4.0 / 7.0).epsilon(1e-12));

  Rng rng(4);
  for (int b : {1, 3, 5, 8}) {
    Tensor x = Tensor::zeros({4, 4, 1});
    for (double& v : x.data) v = rng.uniform01();
    Tensor once = bit_depth_reduce(x, b);
    Tensor twice = bit_depth_reduce(once, b);
    CHECK(max_abs_diff(once, twice) == 0.0);
  }

  // 8-bit data is a fixed point of b = 8
  Tensor x = Tensor::zeros({2, 2, 1});
  x.data = {0.0, 17.0 / 255.0, 128.0 / 255.0, 1.0};
  CHECK(max_abs_diff(bit_depth_reduce(x, 8), x) < 1e-12);
}

TEST_CASE("jpeg proxy: constant image is a fixed point") {
  for (double v : {0.0, 0.37, 1.0}) {
    Tensor x = Tensor::full({8, 8, 1}, v);
    CHECK(max_abs_diff(jpeg_proxy(x, 10), x) < 1e-12);
  }
}

TEST_CASE("jpeg proxy: quality 100 is near-lossless") {
  Rng rng(5);
  Tensor x = Tensor::zeros({16, 16, 1});
  for (double& v : x.data) v = rng.uniform01();
  CHECK(max_abs_diff(jpeg_proxy(x, 100), x) < 1e-6);
}

TEST_CASE("jpeg proxy: checkerboard at q=10 loses its high-frequency coefficient") {
  Tensor x = Tensor::zeros({8, 8, 1});
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) x.at3(i, j, 0) = (i + j) % 2 ? 1.0 : 0.0;

  Tensor y = jpeg_proxy(x, 10);

  // independent direct DCT of the output: the dominant (7,7) coefficient of a
  // checkerboard must be quantized to zero at q=10
  auto coeff77 = [](const Tensor& img) {
    double acc = 0.0;
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) {
        const double ci = std::sqrt(2.0 / 8.0) * std::cos(M_PI * (2 * i + 1) * 7 / 16.0);
        const double cj = std::sqrt(2.0 / 8.0) * std::cos(M_PI * (2 * j + 1) * 7 / 16.0);
        acc += img.at3(i, j, 0) * ci * cj;
      }
    return acc;
  };
  CHECK(std::fabs(coeff77(x)) > 3.0);       // present in the input
  CHECK(std::fabs(coeff77(y)) < 1e-9);      // zeroed by quantization

  // flattened toward the mean
  double dev_in = 0.0, dev_out = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dev_in += std::fabs(x.data[i] - 0.5);
    dev_out += std::fabs(y.data[i] - 0.5);
  }
  CHECK(dev_out < dev_in);
}

TEST_CASE("tv minimize: data-term-only and constant fixed point") {
  Rng rng(6);
  Tensor x = Tensor::zeros({6, 6, 1});
  for (double& v : x.data) v = rng.uniform01();
  Tensor full_mask = Tensor::full(x.shape, 1.0);

  // lambda = 0: z stays exactly at the initialization x
  Tensor z = tv_minimize_masked(x, full_mask, 0.0, 30, 0.1);
  CHECK(max_abs_diff(z, x) == 0.0);

  // constant image: TV already zero, any lambda
  Tensor c = Tensor::full({6, 6, 1}, 0.42);
  Tensor zc = tv_minimize_masked(c, full_mask, 0.5, 30, 0.1);
  CHECK(max_abs_diff(zc, c) < 1e-12);
}

TEST_CASE("tv minimize: impulse amplitude strictly shrinks") {
  Tensor x = Tensor::zeros({7, 7, 1});
  x.at3(3, 3, 0) = 1.0;
  Tensor full_mask = Tensor::full(x.shape, 1.0);
  Tensor z = tv_minimize_masked(x, full_mask, 0.3, 30, 0.1);
  CHECK(z.at3(3, 3, 0) < 1.0);
  CHECK(z.at3(3, 3, 0) >= 0.0);
}

TEST_CASE("rescale_pad: shape contract, identity draw, enumeration count") {
  Preprocessor p = Preprocessor::rescale_pad(19);
  Rng rng(7);
  Tensor x = Tensor::zeros({16, 16, 1});
  for (double& v : x.data) v = rng.uniform01();

  for (int t = 0; t < 20; ++t) {
    Tensor y = p.apply_sampled(x, rng);
    CHECK(y.shape == Shape{19, 19, 1});
  }

  // r = h, offset (0, 0): original image lands in the top-left corner
  PreDraw d;
  d.ints = {16, 0, 0};
  Tensor y = p.apply(x, d);
  for (std::size_t i = 0; i < 19; ++i)
    for (std::size_t j = 0; j < 19; ++j) {
      const double want = (i < 16 && j < 16) ? x.at3(i, j, 0) : 0.0;
      CHECK(y.at3(i, j, 0) == want);
    }

  // 16 + 9 + 4 = 29 patterns at desk geometry
  CHECK(p.enumeration_count({16, 16, 1}) == 29);
  // draw_at covers each exactly once
  int count_r16 = 0, count_r17 = 0, count_r18 = 0;
  for (int i = 0; i < 29; ++i) {
    PreDraw di = p.draw_at({16, 16, 1}, i);
    if (di.ints[0] == 16) ++count_r16;
    if (di.ints[0] == 17) ++count_r17;
    if (di.ints[0] == 18) ++count_r18;
  }
  CHECK(count_r16 == 16);
  CHECK(count_r17 == 9);
  CHECK(count_r18 == 4);
}

TEST_CASE("sap: degenerate rows") {
  Rng rng(8);
  // all-zero layer comes back unchanged
  Tensor zero = Tensor::zeros({1, 6});
  Tensor out = sap_layer(zero, 4, rng);
  for (double v : out.data) CHECK(v == 0.0);

  // single nonzero unit: p = 1, always kept, scale exactly 1
  Tensor one = Tensor::zeros({1, 5});
  one.data[2] = -0.7;
  Tensor kept = sap_layer(one, 3, rng);
  CHECK(kept.data[2] == -0.7);
  for (int i : {0, 1, 3, 4}) CHECK(kept.data[i] == 0.0);
}

TEST_CASE("sap: inverse-keep-probability scaling is unbiased (Monte-Carlo oracle)") {
  Rng rng(9);
  Tensor a = Tensor({1, 6}, {0.9, -0.4, 0.2, 1.4, -0.05, 0.6});
  const int r = 4;
  std::vector<double> mean(6, 0.0);
  const int trials = 100000;
  for (int t = 0; t < trials; ++t) {
    Tensor s = sap_layer(a, r, rng);
    for (int i = 0; i < 6; ++i) mean[i] += s.data[i];
  }
  for (int i = 0; i < 6; ++i) {
    mean[i] /= trials;
    CHECK(std::fabs(mean[i] - a.data[i]) / std::fabs(a.data[i]) < 0.02);
  }
}

TEST_CASE("crop_rescale: fraction 1 is the identity; fixed draw is deterministic") {
  Preprocessor p = Preprocessor::crop_rescale(1.0);
  Rng rng(10);
  Tensor x = Tensor::zeros({8, 8, 1});
  for (double& v : x.data) v = rng.uniform01();
  Tensor y = p.apply_sampled(x, rng);
  CHECK(max_abs_diff(y, x) == 0.0);

  Preprocessor half = Preprocessor::crop_rescale(0.75);
  PreDraw d;
  d.ints = {1, 1};
  Tensor a = half.apply(x, d);
  Tensor b = half.apply(x, d);
  CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("crop_rescale: full-enumeration EOT equals the averaged per-crop gradient") {
  Preprocessor p = Preprocessor::crop_rescale(0.75);
  Rng rng(11);
  Tensor x = Tensor::zeros({8, 8, 1});
  for (double& v : x.data) v = rng.uniform01();
  Tensor w = Tensor::zeros({8, 8, 1});
  for (double& v : w.data) v = rng.uniform(-1.0, 1.0);

  const int n = p.enumeration_count(x.shape);
  CHECK(n == 9);  // 8 -> 6 crop side, 3 x 3 offsets

  auto loss_for = [&](Tape& t, const Tensor& xl, int idx) {
    Tensor y = p.record(t, xl, p.draw_at(x.shape, idx), Surrogate::None);
    return t.sum(t.mul(y, w));
  };

  Tensor got = enumerated_gradient(loss_for, x, n);

  Tensor want = Tensor::zeros(x.shape);
  for (int i = 0; i < n; ++i) {
    Tape t;
    Tensor xl = t.leaf(x);
    GradientMap g = t.backward(loss_for(t, xl, i), {xl});
    for (std::size_t j = 0; j < want.size(); ++j) want.data[j] += g.at(xl).data[j];
  }
  for (double& v : want.data) v /= n;

  for (std::size_t j = 0; j < want.size(); ++j) CHECK(got.data[j] == want.data[j]);
}

TEST_CASE("shattering witness: zero backward through quantizer stages") {
  Rng rng(12);
  Tensor x = Tensor::zeros({8, 8, 1});
  for (double& v : x.data) v = rng.uniform01();

  for (Preprocessor p : {Preprocessor::thermometer(8), Preprocessor::bit_depth(3),
                         Preprocessor::jpeg(75)}) {
    CAPTURE(p.name());
    CHECK(p.shattered());
    Tape tape;
    Tensor xl = tape.leaf(x);
    Tensor y = p.record(tape, xl, {}, Surrogate::None);
    Tensor loss = tape.sum(y);
    GradientMap g = tape.backward(loss, {xl});
    for (double v : g.at(xl).data) CHECK(v == 0.0);
  }
}

TEST_CASE("g(x) ~ x: shape-preserving stages stay close to the input on clean data") {
  nn::Dataset data = nn::synthetic_digits(60, 13, "test");
  Rng rng(14);

  std::vector<Preprocessor> pres = {
      Preprocessor::bit_depth(3),
      Preprocessor::jpeg(75),
      Preprocessor::tv_minimize(0.6, 0.05, 30, 0.1),
      Preprocessor::crop_rescale(0.75),
  };
  for (const Preprocessor& p : pres) {
    CAPTURE(p.name());
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      Tensor x = data.image(i);
      Tensor y = p.apply_sampled(x, rng);
      for (std::size_t j = 0; j < x.size(); ++j) total += std::fabs(y.data[j] - x.data[j]);
      count += x.size();
    }
    CHECK(total / count <= 0.15);
  }
}

TEST_CASE("defended model: disabled defenses reduce to the bare classifier") {
  nn::Dataset data = nn::synthetic_digits(300, 15, "train");
  nn::TrainOptions topt;
  topt.epochs = 6;
  topt.seed = 2;
  nn::Classifier clf = nn::train(nn::Classifier::mlp({16, 16, 1}, {32}, 10), data, topt);

  DefendedModel m = DefendedModel::bare(clf);
  m.validate();
  Rng rng(16);
  for (int i = 0; i < 20; ++i) {
    Tensor x = data.image(i);
    CHECK(m.classify_once(x, rng) == clf.predict_one(x));
  }
}

TEST_CASE("defended model: chain shape validation") {
  nn::Classifier clf = nn::Classifier::mlp({16, 16, 1}, {16}, 10);
  Rng rng(17);
  clf.init_params(rng);
  DefendedModel m;
  m.name = "thermo";
  m.raw_input = {16, 16, 1};
  m.chain = {Preprocessor::thermometer(8)};
  m.classifier = clf;  // expects 16x16x1, chain emits 16x16x8
  CHECK_THROWS_WITH_AS(m.validate(), doctest::Contains("thermo"), Error);
}

TEST_CASE("sap: keeps clean accuracy within 5 points at default drop parameters") {
  nn::Dataset train_set = nn::synthetic_digits(1500, 18, "train");
  nn::Dataset test_set = nn::synthetic_digits(300, 18, "test");
  nn::TrainOptions topt;
  topt.epochs = 8;
  topt.seed = 3;
  nn::Classifier clf = nn::train(nn::Classifier::mlp({16, 16, 1}, {128}, 10), train_set, topt);

  DefendedModel sapm = DefendedModel::bare(clf);
  sapm.sap.enabled = true;
  sapm.sap.sample_ratio = 0.75;

  // accuracy under the stochastic-defense convention: correct if ever
  // classified correctly across 10 fresh trials
  Rng rng(19);
  std::size_t plain_hits = 0, sap_hits = 0;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    Tensor x = test_set.image(i);
    if (clf.predict_one(x) == test_set.labels[i]) ++plain_hits;
    if (sapm.ever_correct(x, test_set.labels[i], 10, rng)) ++sap_hits;
  }
  const double plain_acc = static_cast<double>(plain_hits) / test_set.size();
  const double sap_acc = static_cast<double>(sap_hits) / test_set.size();
  CHECK(sap_acc >= plain_acc - 0.05);
}
