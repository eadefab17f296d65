#include "manifold/projection.hpp"

#include <cmath>

namespace advlab::manifold {

ProjectionDefense::Projection ProjectionDefense::project(const Tensor& x) const {
  if (decoder.net.params.empty()) throw Error("project: decoder has no parameters");
  const int d = decoder.latent_dim;

  Rng rng = Rng(seed).split(0x9107EC7);
  Projection best;
  best.distance = std::numeric_limits<double>::infinity();

  for (int r = 0; r < restarts; ++r) {
    Tensor z = Tensor::zeros({static_cast<std::size_t>(d)});
    for (double& v : z.data) v = rng.uniform(-1.0, 1.0);

    for (int s = 0; s < steps; ++s) {
      Tape tape;
      Tensor zl = tape.leaf(z);
      Tensor img = decoder.record_decode(tape, zl);
      Tensor diff = tape.sub(img, x.detached());
      Tensor loss = tape.sum(tape.mul(diff, diff));
      GradientMap gm = tape.backward(loss, {zl});
      const Tensor& g = gm.at(zl);
      for (int i = 0; i < d; ++i) z.data[i] -= step_size * g.data[i];
    }

    Tensor img = decoder.decode(z);
    double sq = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) {
      const double dd = img.data[i] - x.data[i];
      sq += dd * dd;
    }
    const double dist = std::sqrt(sq);
    if (dist < best.distance) {
      best.distance = dist;
      best.z = z;
      best.image = std::move(img);
    }
  }
  return best;
}

Tensor record_reparam_loss(Tape& tape, const Decoder& dec, const nn::Classifier& classifier,
                           const Tensor& z_on_tape, const Tensor& x_target, double c, int label,
                           bool targeted, double kappa) {
  Tensor img = dec.record_decode(tape, z_on_tape);  // H x W x C
  Tensor diff = tape.sub(img, x_target.detached());
  Tensor recon = tape.sum(tape.mul(diff, diff));
  if (c == 0.0) return recon;

  Tensor batch = tape.reshape(img, {1, img.shape[0], img.shape[1], img.shape[2]});
  Tensor logits = classifier.forward(tape, batch);
  Tensor margin = tape.cw_margin(logits, label, targeted);
  Tensor hinge = tape.clamp(margin, -kappa, 1e30);
  return tape.add(recon, tape.mul(Tensor::scalar(c), hinge));
}

double reparam_loss_value(const Decoder& dec, const nn::Classifier& classifier, const Tensor& z,
                          const Tensor& x_target, double c, int label, bool targeted,
                          double kappa) {
  Tape tape;
  Tensor zl = tape.leaf(z);
  return record_reparam_loss(tape, dec, classifier, zl, x_target, c, label, targeted, kappa)
      .item();
}

}  // namespace advlab::manifold
