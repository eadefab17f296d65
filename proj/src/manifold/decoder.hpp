#pragma once

#include "nn/dataset.hpp"
#include "nn/model.hpp"

namespace advlab::manifold {

/// Latent-to-image generator. The net maps a 1x1xd "image" through a dense
/// stack to H*W*C sigmoid outputs; decode() reshapes them back to an image.
/// Latent coordinates live in (-1, 1) (the encoder ends in tanh).
struct Decoder {
  int latent_dim = 0;
  Shape image_shape;  // H, W, C
  nn::Classifier net;

  Tensor decode(const Tensor& z) const;
  Tensor record_decode(Tape& tape, const Tensor& z_on_tape) const;
};

struct DecoderTrainOptions {
  int epochs = 30;
  double lr = 0.2;
  int batch = 64;
  double momentum = 0.9;
  int hidden = 128;
  std::uint64_t seed = 1;
};

struct TrainedDecoder {
  Decoder decoder;
  nn::Classifier encoder;
  /// Per-pixel RMS of G(E(x)) - x over the training set, recorded at train time.
  double reconstruction_rms = 0.0;
};

/// Trains encoder+decoder jointly on squared reconstruction error and keeps
/// the decoder half. Deterministic given the seed; throws on divergence.
TrainedDecoder train_decoder(const nn::Dataset& data, int latent_dim,
                             const DecoderTrainOptions& opt);

/// Per-pixel RMS reconstruction error of an encoder/decoder pair on a dataset.
double reconstruction_rms(const Decoder& dec, const nn::Classifier& enc, const nn::Dataset& data);

}  // namespace advlab::manifold
