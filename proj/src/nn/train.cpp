#include "nn/train.hpp"

#include <algorithm>
#include <cmath>

namespace advlab::nn {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

Tensor pgd_batch(const Classifier& model, const Tensor& batch, const std::vector<int>& labels,
                 double epsilon, int steps, double step, bool random_start, Rng& rng) {
  if (step <= 0.0) step = epsilon / 4.0;
  Tensor x = batch;
  if (random_start)
    for (std::size_t i = 0; i < x.size(); ++i)
      x.data[i] = std::clamp(x.data[i] + rng.uniform(-epsilon, epsilon), 0.0, 1.0);

  for (int s = 0; s < steps; ++s) {
    Tape tape;
    Tensor xl = tape.leaf(x);
    Tensor z = model.forward(tape, xl);
    Tensor loss = tape.softmax_xent(z, labels);
    GradientMap gm = tape.backward(loss, {xl});
    const Tensor& g = gm.at(xl);
    for (std::size_t i = 0; i < x.size(); ++i) {
      double v = x.data[i] + step * sign(g.data[i]);
      v = std::clamp(v, batch.data[i] - epsilon, batch.data[i] + epsilon);
      x.data[i] = std::clamp(v, 0.0, 1.0);
    }
  }
  return x;
}

Classifier sgd_train(Classifier model, const Dataset& data, const TrainOptions& opt,
                     const BatchAdversary* adversary) {
  if (data.size() == 0) throw Error("train: dataset is empty");
  if (model.params.empty()) {
    Rng init = Rng(opt.seed).split(0xA110C);
    model.init_params(init);
  }

  Rng order = Rng(opt.seed).split(1);
  Rng aug = Rng(opt.seed).split(2);
  Rng adv = Rng(opt.seed).split(3);

  ParamMap velocity;
  for (const auto& [name, p] : model.params) velocity[name] = Tensor::zeros(p.shape);

  std::vector<std::size_t> perm(data.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[order.below(i)]);

    for (std::size_t at = 0; at < perm.size(); at += opt.batch) {
      std::vector<std::size_t> idx(perm.begin() + at,
                                   perm.begin() + std::min(at + opt.batch, perm.size()));
      Tensor batch = data.batch(idx);
      std::vector<int> labels(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) labels[k] = data.labels[idx[k]];

      if (opt.augment) {
        std::vector<Tensor> transformed;
        transformed.reserve(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) {
          Tensor img = Tensor::zeros({batch.shape[1], batch.shape[2], batch.shape[3]});
          std::copy_n(batch.data.begin() + k * img.size(), img.size(), img.data.begin());
          transformed.push_back(opt.augment(img, aug));
        }
        const Shape& s = transformed[0].shape;
        Tensor enc = Tensor::zeros({idx.size(), s[0], s[1], s[2]});
        for (std::size_t k = 0; k < idx.size(); ++k)
          std::copy(transformed[k].data.begin(), transformed[k].data.end(),
                    enc.data.begin() + k * transformed[k].size());
        batch = std::move(enc);
      }

      if (adversary && *adversary) batch = (*adversary)(model, batch, labels, adv);

      double loss_val = 0.0;
      try {
        Tape tape;
        ParamMap attached;
        for (const auto& [name, p] : model.params) attached[name] = tape.leaf(p);
        Tensor xb = tape.leaf(batch);
        ForwardOptions fo;
        fo.params = &attached;
        Tensor z = model.forward(tape, xb, fo);
        Tensor loss = tape.softmax_xent(z, labels);
        loss_val = loss.item();
        if (!std::isfinite(loss_val)) throw NumericError("loss is not finite");

        std::vector<Tensor> leaves;
        leaves.reserve(attached.size());
        for (const auto& [name, p] : attached) leaves.push_back(p);
        GradientMap grads = tape.backward(loss, std::span<const Tensor>(leaves));

        for (auto& [name, p] : model.params) {
          const Tensor& g = grads.at(attached.at(name));
          Tensor& v = velocity[name];
          for (std::size_t i = 0; i < p.size(); ++i) {
            v.data[i] = opt.momentum * v.data[i] + g.data[i];
            p.data[i] -= opt.lr * v.data[i];
          }
        }
      } catch (const NumericError& e) {
        throw Error("train: diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
  }
  return model;
}

Classifier train(Classifier model, const Dataset& data, const TrainOptions& opt) {
  return sgd_train(std::move(model), data, opt, nullptr);
}

Classifier adversarial_train(Classifier model, const Dataset& data, const AdvTrainOptions& opt) {
  if (opt.epsilon <= 0.0) return sgd_train(std::move(model), data, opt.base, nullptr);
  if (opt.pgd_steps < 1) throw Error("adversarial_train: pgd_steps must be >= 1");
  BatchAdversary adv = [&opt](const Classifier& m, const Tensor& b, const std::vector<int>& y,
                              Rng& rng) {
    return pgd_batch(m, b, y, opt.epsilon, opt.pgd_steps, opt.step, opt.random_start, rng);
  };
  return sgd_train(std::move(model), data, opt.base, &adv);
}

}  // namespace advlab::nn
