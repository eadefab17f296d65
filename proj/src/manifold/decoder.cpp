#include "manifold/decoder.hpp"

#include <cmath>

namespace advlab::manifold {

using nn::Classifier;
using nn::LayerSpec;
using nn::ParamMap;

Tensor Decoder::decode(const Tensor& z) const {
  Tape tape;
  Tensor zl = tape.leaf(z);
  return record_decode(tape, zl).detached();
}

Tensor Decoder::record_decode(Tape& tape, const Tensor& z_on_tape) const {
  Tensor z = z_on_tape;
  if (z.rank() == 1) z = tape.reshape(z, {1, 1, 1, static_cast<std::size_t>(latent_dim)});
  else if (z.rank() == 2)
    z = tape.reshape(z, {z.shape[0], 1, 1, static_cast<std::size_t>(latent_dim)});
  else
    throw ShapeError("decode: latent must be rank 1 or 2, got " + shape_str(z.shape));
  Tensor flat = net.forward(tape, z);  // N x (H*W*C), sigmoid outputs
  if (flat.shape[0] == 1)
    return tape.reshape(flat, image_shape);
  return tape.reshape(flat, {flat.shape[0], image_shape[0], image_shape[1], image_shape[2]});
}

namespace {

Classifier make_encoder(const Shape& img, int hidden, int d) {
  Classifier enc;
  enc.input_shape = img;
  enc.num_classes = d;
  enc.layers = {LayerSpec::flatten(), LayerSpec::dense(static_cast<int>(shape_numel(img)), hidden),
                LayerSpec::relu(), LayerSpec::dense(hidden, d), LayerSpec::tanh()};
  return enc;
}

Classifier make_decoder_net(const Shape& img, int hidden, int d) {
  Classifier dec;
  dec.input_shape = {1, 1, static_cast<std::size_t>(d)};
  dec.num_classes = static_cast<int>(shape_numel(img));
  dec.layers = {LayerSpec::flatten(), LayerSpec::dense(d, hidden), LayerSpec::relu(),
                LayerSpec::dense(hidden, static_cast<int>(shape_numel(img))),
                LayerSpec::sigmoid()};
  return dec;
}

}  // namespace

TrainedDecoder train_decoder(const nn::Dataset& data, int latent_dim,
                             const DecoderTrainOptions& opt) {
  if (data.size() == 0) throw Error("train_decoder: dataset is empty");
  const Shape img = data.image_shape();
  const std::size_t px = shape_numel(img);

  TrainedDecoder out;
  out.decoder.latent_dim = latent_dim;
  out.decoder.image_shape = img;
  out.decoder.net = make_decoder_net(img, opt.hidden, latent_dim);
  out.encoder = make_encoder(img, opt.hidden, latent_dim);

  Rng init = Rng(opt.seed).split(0xDEC0DE);
  out.encoder.init_params(init);
  out.decoder.net.init_params(init);

  Rng order = Rng(opt.seed).split(1);
  std::vector<std::size_t> perm(data.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;

  ParamMap vel_enc, vel_dec;
  for (const auto& [n, p] : out.encoder.params) vel_enc[n] = Tensor::zeros(p.shape);
  for (const auto& [n, p] : out.decoder.net.params) vel_dec[n] = Tensor::zeros(p.shape);

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[order.below(i)]);
    for (std::size_t at = 0; at < perm.size(); at += opt.batch) {
      std::vector<std::size_t> idx(perm.begin() + at,
                                   perm.begin() + std::min(at + opt.batch, perm.size()));
      Tensor batch = data.batch(idx);

      try {
        Tape tape;
        ParamMap enc_attached, dec_attached;
        for (const auto& [n, p] : out.encoder.params) enc_attached[n] = tape.leaf(p);
        for (const auto& [n, p] : out.decoder.net.params) dec_attached[n] = tape.leaf(p);

        Tensor xb = tape.leaf(batch);
        nn::ForwardOptions fe;
        fe.params = &enc_attached;
        Tensor z = out.encoder.forward(tape, xb, fe);  // B x d

        Tensor z4 = tape.reshape(z, {idx.size(), 1, 1, static_cast<std::size_t>(latent_dim)});
        nn::ForwardOptions fd;
        fd.params = &dec_attached;
        Tensor recon = out.decoder.net.forward(tape, z4, fd);  // B x px

        Tensor target = tape.reshape(xb, {idx.size(), px});
        Tensor diff = tape.sub(recon, target);
        Tensor loss = tape.mean(tape.mul(diff, diff));
        if (!std::isfinite(loss.item()))
          throw NumericError("reconstruction loss is not finite");

        std::vector<Tensor> leaves;
        for (const auto& [n, p] : enc_attached) leaves.push_back(p);
        for (const auto& [n, p] : dec_attached) leaves.push_back(p);
        GradientMap grads = tape.backward(loss, std::span<const Tensor>(leaves));

        auto update = [&](ParamMap& params, ParamMap& vel, const ParamMap& attached) {
          for (auto& [n, p] : params) {
            const Tensor& g = grads.at(attached.at(n));
            Tensor& v = vel[n];
            for (std::size_t k = 0; k < p.size(); ++k) {
              v.data[k] = opt.momentum * v.data[k] + g.data[k];
              p.data[k] -= opt.lr * v.data[k];
            }
          }
        };
        update(out.encoder.params, vel_enc, enc_attached);
        update(out.decoder.net.params, vel_dec, dec_attached);
      } catch (const NumericError& e) {
        throw Error("train_decoder: diverged at epoch " + std::to_string(epoch) + ": " +
                    e.what());
      }
    }
  }

  out.reconstruction_rms = reconstruction_rms(out.decoder, out.encoder, data);
  return out;
}

double reconstruction_rms(const Decoder& dec, const nn::Classifier& enc, const nn::Dataset& data) {
  const std::size_t px = shape_numel(dec.image_shape);
  double sq = 0.0;
  const std::size_t chunk = 256;
  for (std::size_t at = 0; at < data.size(); at += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = at; i < std::min(at + chunk, data.size()); ++i) idx.push_back(i);
    Tensor batch = data.batch(idx);
    Tape tape;
    Tensor z = enc.forward(tape, batch);
    Tensor z4 = tape.reshape(z, {idx.size(), 1, 1, static_cast<std::size_t>(dec.latent_dim)});
    Tensor recon = dec.net.forward(tape, z4);
    for (std::size_t i = 0; i < idx.size() * px; ++i) {
      const double d = recon.data[i] - batch.data[i];
      sq += d * d;
    }
  }
  return std::sqrt(sq / static_cast<double>(data.size() * px));
}

}  // namespace advlab::manifold
