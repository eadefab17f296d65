#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "nn/checkpoint.hpp"
#include "nn/dataset.hpp"
#include "nn/train.hpp"
#include "support/gradcheck.hpp"

using namespace advlab;
using namespace advlab::nn;

namespace {

Dataset two_blob_toy(std::size_t n, std::uint64_t seed) {
  // linearly separable 2-class set on a 4x4 canvas: class = which half lights up
  Rng rng(seed);
  Tensor imgs = Tensor::zeros({n, 4, 4, 1});
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(rng.below(2));
    labels[i] = cls;
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        const bool lit = cls == 0 ? c < 2 : c >= 2;
        imgs.data[(i * 4 + r) * 4 + c] = lit ? rng.uniform(0.6, 1.0) : rng.uniform(0.0, 0.2);
      }
  }
  return Dataset(std::move(imgs), std::move(labels), 2, "train");
}

bool params_equal(const ParamMap& a, const ParamMap& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, p] : a) {
    auto it = b.find(name);
    if (it == b.end() || it->second.shape != p.shape) return false;
    for (std::size_t i = 0; i < p.size(); ++i)
      if (p.data[i] != it->second.data[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("forward: all-zero weights give uniform (zero) logits") {
  Classifier m = Classifier::mlp({4, 4, 1}, {8}, 5);
  Rng rng(1);
  m.init_params(rng);
  for (auto& [name, p] : m.params)
    for (double& v : p.data) v = 0.0;
  Tensor batch = Tensor::full({2, 4, 4, 1}, 0.7);
  Tensor z = m.logits(batch);
  for (double v : z.data) CHECK(v == 0.0);
}

TEST_CASE("forward: identity dense copies a one-hot input") {
  Classifier m;
  m.input_shape = {1, 1, 4};
  m.num_classes = 4;
  m.layers = {LayerSpec::flatten(), LayerSpec::dense(4, 4)};
  Tensor eye = Tensor::zeros({4, 4});
  for (int i = 0; i < 4; ++i) eye.data[i * 4 + i] = 1.0;
  m.params["l01.w"] = eye;
  m.params["l01.b"] = Tensor::zeros({4});

  Tensor x = Tensor::zeros({1, 1, 1, 4});
  x.data[2] = 1.0;
  Tensor z = m.logits(x);
  CHECK(z.data[0] == 0.0);
  CHECK(z.data[1] == 0.0);
  CHECK(z.data[2] == 1.0);
  CHECK(z.data[3] == 0.0);
}

TEST_CASE("forward: batch shape mismatch is an error") {
  Classifier m = Classifier::mlp({4, 4, 1}, {8}, 3);
  Rng rng(2);
  m.init_params(rng);
  CHECK_THROWS_AS(m.logits(Tensor::zeros({1, 5, 4, 1})), ShapeError);
}

TEST_CASE("loss: maximum entropy, saturated, and a hand-computed row") {
  Tape tape;
  // uniform logits over 10 classes -> ln 10
  Tensor u = Tensor::zeros({1, 10});
  CHECK(tape.softmax_xent(u, {3}).item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  // correct logit +1000 -> loss < 1e-6
  Tensor sat = Tensor::zeros({1, 5});
  sat.data[2] = 1000.0;
  CHECK(tape.softmax_xent(sat, {2}).item() < 1e-6);

  // logits [2,1,0], label 0: -log softmax_0 computed directly
  Tensor z({1, 3}, {2.0, 1.0, 0.0});
  const double direct =
      -std::log(std::exp(2.0) / (std::exp(2.0) + std::exp(1.0) + std::exp(0.0)));
  const double got = tape.softmax_xent(z, {0}).item();
  CHECK(got == doctest::Approx(direct).epsilon(1e-12));
  CHECK(got == doctest::Approx(0.40761).epsilon(1e-4));
}

TEST_CASE("loss: label out of range") {
  Tape tape;
  CHECK_THROWS_AS(tape.softmax_xent(Tensor::zeros({1, 3}), {3}), Error);
}

TEST_CASE("parameter gradients match finite differences (sampled coordinates)") {
  Classifier m = Classifier::cnn({8, 8, 1}, 4);
  Rng rng(5);
  m.init_params(rng);
  Tensor batch = Tensor::zeros({2, 8, 8, 1});
  for (double& v : batch.data) v = rng.uniform(0.0, 1.0);
  std::vector<int> labels = {1, 3};

  for (const char* name : {"l00.w", "l00.b", "l03.w", "l07.w", "l07.b"}) {
    CAPTURE(name);
    Tape tape;
    ParamMap attached;
    for (const auto& [n, p] : m.params) attached[n] = tape.leaf(p);
    ForwardOptions fo;
    fo.params = &attached;
    Tensor loss = tape.softmax_xent(m.forward(tape, batch, fo), labels);
    GradientMap gm = tape.backward(loss, {attached.at(name)});
    const Tensor& g = gm.at(attached.at(name));

    Rng pick(7);
    for (int probe = 0; probe < 5; ++probe) {
      const std::size_t i = pick.below(m.params.at(name).size());
      auto fwd = [&](double v) {
        Classifier m2 = m;
        m2.params.at(name).data[i] = v;
        return loss_value(m2, batch, labels);
      };
      const double x0 = m.params.at(name).data[i];
      const double fd = (fwd(x0 + 1e-5) - fwd(x0 - 1e-5)) / 2e-5;
      CHECK(gradcheck::rel_err(g.data[i], fd) < 1e-3);
    }
  }
}

TEST_CASE("train: zero epochs leaves parameters unchanged") {
  Classifier m = Classifier::mlp({4, 4, 1}, {6}, 2);
  Rng rng(9);
  m.init_params(rng);
  ParamMap before = m.params;
  TrainOptions opt;
  opt.epochs = 0;
  Classifier t = train(m, two_blob_toy(64, 1), opt);
  CHECK(params_equal(before, t.params));
}

TEST_CASE("train: linearly separable toy reaches >= 99% within 50 epochs") {
  Dataset toy = two_blob_toy(256, 3);
  TrainOptions opt;
  opt.epochs = 50;
  opt.lr = 0.05;
  opt.seed = 4;
  Classifier m = train(Classifier::mlp({4, 4, 1}, {8}, 2), toy, opt);
  CHECK(accuracy(m, toy) >= 0.99);
}

TEST_CASE("train: fixed seed twice gives bit-identical parameters") {
  Dataset toy = two_blob_toy(128, 5);
  TrainOptions opt;
  opt.epochs = 3;
  opt.seed = 77;
  Classifier a = train(Classifier::mlp({4, 4, 1}, {6}, 2), toy, opt);
  Classifier b = train(Classifier::mlp({4, 4, 1}, {6}, 2), toy, opt);
  CHECK(params_equal(a.params, b.params));
}

TEST_CASE("train: empty dataset is an error") {
  TrainOptions opt;
  CHECK_THROWS_AS(train(Classifier::mlp({4, 4, 1}, {6}, 2), Dataset(), opt), Error);
}

TEST_CASE("adversarial_train: epsilon 0 behaves exactly like train") {
  Dataset toy = two_blob_toy(128, 6);
  TrainOptions base;
  base.epochs = 3;
  base.seed = 15;
  AdvTrainOptions adv;
  adv.base = base;
  adv.epsilon = 0.0;
  Classifier a = train(Classifier::mlp({4, 4, 1}, {6}, 2), toy, base);
  Classifier b = adversarial_train(Classifier::mlp({4, 4, 1}, {6}, 2), toy, adv);
  CHECK(params_equal(a.params, b.params));
}

TEST_CASE("pgd_batch: one step with alpha = epsilon and no random start is FGSM") {
  Dataset toy = two_blob_toy(8, 8);
  Classifier m = Classifier::mlp({4, 4, 1}, {6}, 2);
  Rng rng(2);
  m.init_params(rng);

  std::vector<std::size_t> idx = {0, 1, 2, 3};
  Tensor batch = toy.batch(idx);
  std::vector<int> labels(toy.labels.begin(), toy.labels.begin() + 4);
  const double eps = 0.11;

  Rng r1(0);
  Tensor got = pgd_batch(m, batch, labels, eps, 1, eps, false, r1);

  // FGSM by hand: x + eps * sign(grad), boxed
  Tape tape;
  Tensor xl = tape.leaf(batch);
  Tensor loss = tape.softmax_xent(m.forward(tape, xl), labels);
  GradientMap gm = tape.backward(loss, {xl});
  const Tensor& g = gm.at(xl);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double s = g.data[i] > 0 ? 1.0 : (g.data[i] < 0 ? -1.0 : 0.0);
    const double want = std::clamp(batch.data[i] + eps * s, 0.0, 1.0);
    CHECK(got.data[i] == want);
  }
}

TEST_CASE("prediction argmax is invariant to adding a constant to all logits") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor z = Tensor::zeros({1, 7});
    for (double& v : z.data) v = rng.uniform(-3.0, 3.0);
    const int a = argmax_row(z, 0);
    Tensor shifted = z;
    const double c = rng.uniform(-10.0, 10.0);
    for (double& v : shifted.data) v += c;
    CHECK(argmax_row(shifted, 0) == a);
  }
}

TEST_CASE("checkpoint: round-trip is bit-exact") {
  Classifier m = Classifier::cnn({8, 8, 1}, 3);
  Rng rng(33);
  m.init_params(rng);
  CheckpointMeta meta;
  meta.epochs = 12;
  meta.seed = 99;
  meta.adversarial = true;
  meta.epsilon = 0.3;

  const std::string path = "ckpt_roundtrip.bin";
  save_network(path, RecordKind::Classifier, m, meta);
  LoadedNetwork back = load_network(path);
  std::filesystem::remove(path);

  CHECK(back.kind == RecordKind::Classifier);
  CHECK(back.net.layers == m.layers);
  CHECK(back.net.input_shape == m.input_shape);
  CHECK(back.net.num_classes == m.num_classes);
  CHECK(back.meta.epochs == meta.epochs);
  CHECK(back.meta.seed == meta.seed);
  CHECK(back.meta.adversarial == meta.adversarial);
  CHECK(back.meta.epsilon == meta.epsilon);
  CHECK(params_equal(back.net.params, m.params));
}

TEST_CASE("checkpoint: bad magic and truncation are distinct errors") {
  {
    std::FILE* f = std::fopen("ckpt_bad.bin", "wb");
    std::fputs("NOTACKPTXXXXXXXXXXXXXXXX", f);
    std::fclose(f);
    CHECK_THROWS_WITH_AS(load_network("ckpt_bad.bin"), doctest::Contains("magic"), IoError);
    std::filesystem::remove("ckpt_bad.bin");
  }
  {
    Classifier m = Classifier::mlp({4, 4, 1}, {4}, 2);
    Rng rng(1);
    m.init_params(rng);
    save_network("ckpt_full.bin", RecordKind::Classifier, m, {});
    auto sz = std::filesystem::file_size("ckpt_full.bin");
    std::filesystem::resize_file("ckpt_full.bin", sz / 2);
    CHECK_THROWS_WITH_AS(load_network("ckpt_full.bin"), doctest::Contains("truncated"), IoError);
    std::filesystem::remove("ckpt_full.bin");
  }
  CHECK_THROWS_AS(load_network("does_not_exist.bin"), IoError);
}

TEST_CASE("synthetic digits: deterministic, in range, balanced") {
  Dataset a = synthetic_digits(200, 7, "train");
  Dataset b = synthetic_digits(200, 7, "train");
  CHECK(a.images.data == b.images.data);
  CHECK(a.labels == b.labels);

  Dataset t = synthetic_digits(200, 7, "test");
  CHECK(t.images.data != a.images.data);  // split tag perturbs the stream

  std::vector<int> counts(10, 0);
  for (int y : a.labels) counts[y]++;
  for (int c : counts) CHECK(c == 20);
  for (double v : a.images.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("synthetic digits: a small model separates a small sample quickly") {
  Dataset train_set = synthetic_digits(1500, 11, "train");
  Dataset test_set = synthetic_digits(200, 11, "test");
  TrainOptions opt;
  opt.epochs = 8;
  opt.lr = 0.1;
  opt.seed = 1;
  Classifier m = train(Classifier::mlp({16, 16, 1}, {64}, 10), train_set, opt);
  CHECK(accuracy(m, test_set) >= 0.90);  // full 4000-image set trains to ~1.0 (acceptance suite)
}
