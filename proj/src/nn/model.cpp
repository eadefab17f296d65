#include "nn/model.hpp"

#include <cmath>

#include "nn/dataset.hpp"

namespace advlab::nn {

const char* layer_name(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv: return "conv";
    case LayerKind::Relu: return "relu";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::Tanh: return "tanh";
    case LayerKind::MaxPool2: return "maxpool2";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

namespace {

std::string pname(std::size_t layer, const char* which) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "l%02zu.%s", layer, which);
  return buf;
}

bool is_activation(LayerKind k) {
  return k == LayerKind::Relu || k == LayerKind::Sigmoid || k == LayerKind::Tanh;
}

}  // namespace

Classifier Classifier::mlp(Shape input, const std::vector<int>& hidden, int classes) {
  Classifier m;
  m.input_shape = std::move(input);
  m.num_classes = classes;
  m.layers.push_back(LayerSpec::flatten());
  int in = static_cast<int>(m.input_numel());
  for (int h : hidden) {
    m.layers.push_back(LayerSpec::dense(in, h));
    m.layers.push_back(LayerSpec::relu());
    in = h;
  }
  m.layers.push_back(LayerSpec::dense(in, classes));
  return m;
}

Classifier Classifier::cnn(Shape input, int classes) {
  Classifier m;
  m.input_shape = std::move(input);
  m.num_classes = classes;
  const int c = static_cast<int>(m.input_shape[2]);
  m.layers.push_back(LayerSpec::conv(3, 3, c, 8, true));
  m.layers.push_back(LayerSpec::relu());
  m.layers.push_back(LayerSpec::maxpool2());
  m.layers.push_back(LayerSpec::conv(3, 3, 8, 16, true));
  m.layers.push_back(LayerSpec::relu());
  m.layers.push_back(LayerSpec::maxpool2());
  m.layers.push_back(LayerSpec::flatten());
  const int hw = static_cast<int>(m.input_shape[0] / 4) * static_cast<int>(m.input_shape[1] / 4);
  m.layers.push_back(LayerSpec::dense(hw * 16, classes));
  return m;
}

void Classifier::init_params(Rng& rng) {
  params.clear();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.kind == LayerKind::Dense) {
      Tensor w = Tensor::zeros({static_cast<std::size_t>(l.a), static_cast<std::size_t>(l.b)});
      const double scale = std::sqrt(2.0 / static_cast<double>(l.a));
      for (double& v : w.data) v = scale * rng.normal();
      params[pname(i, "w")] = std::move(w);
      params[pname(i, "b")] = Tensor::zeros({static_cast<std::size_t>(l.b)});
    } else if (l.kind == LayerKind::Conv) {
      Tensor w = Tensor::zeros({static_cast<std::size_t>(l.a), static_cast<std::size_t>(l.b),
                                static_cast<std::size_t>(l.c), static_cast<std::size_t>(l.d)});
      const double scale = std::sqrt(2.0 / static_cast<double>(l.a * l.b * l.c));
      for (double& v : w.data) v = scale * rng.normal();
      params[pname(i, "w")] = std::move(w);
      params[pname(i, "b")] = Tensor::zeros({static_cast<std::size_t>(l.d)});
    }
  }
}

Tensor Classifier::forward(Tape& tape, const Tensor& batch, const ForwardOptions& opt) const {
  if (batch.rank() != 4 || batch.shape[1] != input_shape[0] || batch.shape[2] != input_shape[1] ||
      batch.shape[3] != input_shape[2])
    throw ShapeError("forward: batch " + shape_str(batch.shape) + " does not match input " +
                     shape_str(input_shape));
  const ParamMap& theta = opt.params ? *opt.params : params;

  Tensor h = batch;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    switch (l.kind) {
      case LayerKind::Dense: {
        if (h.rank() != 2) throw ShapeError("forward: dense layer expects a flattened batch");
        h = tape.bias_add(tape.matmul(h, theta.at(pname(i, "w"))), theta.at(pname(i, "b")));
        break;
      }
      case LayerKind::Conv: {
        h = tape.bias_add(tape.conv2d(h, theta.at(pname(i, "w")), l.flag), theta.at(pname(i, "b")));
        break;
      }
      case LayerKind::Relu: h = tape.relu(h); break;
      case LayerKind::Sigmoid: h = tape.sigmoid(h); break;
      case LayerKind::Tanh: h = tape.tanh(h); break;
      case LayerKind::MaxPool2: h = tape.maxpool2(h); break;
      case LayerKind::Flatten: {
        const std::size_t n = h.shape[0];
        h = tape.reshape(h, {n, h.size() / n});
        break;
      }
    }
    if (is_activation(l.kind)) {
      if (opt.post_activation) h = opt.post_activation(tape, h, static_cast<int>(i));
      if (opt.capture) opt.capture->push_back(h);
    }
  }
  if (opt.capture) opt.capture->push_back(h);
  return h;
}

Tensor Classifier::logits(const Tensor& batch) const {
  Tape tape;
  return forward(tape, batch).detached();
}

int argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t c = logits.shape.back();
  const double* z = &logits.data[row * c];
  int best = 0;
  for (std::size_t i = 1; i < c; ++i)
    if (z[i] > z[best]) best = static_cast<int>(i);
  return best;
}

std::vector<int> Classifier::predict(const Tensor& batch) const {
  Tensor z = logits(batch);
  std::vector<int> out(z.shape[0]);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax_row(z, i);
  return out;
}

int Classifier::predict_one(const Tensor& image) const {
  Tensor b(Shape{1, image.shape[0], image.shape[1], image.shape[2]}, image.data);
  return predict(b)[0];
}

double loss_value(const Classifier& model, const Tensor& batch, const std::vector<int>& labels) {
  Tape tape;
  Tensor z = model.forward(tape, batch);
  return tape.softmax_xent(z, labels).item();
}

double accuracy(const Classifier& model, const Dataset& data) {
  if (data.size() == 0) throw Error("accuracy: empty dataset");
  std::size_t hit = 0;
  const std::size_t chunk = 256;
  for (std::size_t at = 0; at < data.size(); at += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = at; i < std::min(at + chunk, data.size()); ++i) idx.push_back(i);
    std::vector<int> pred = model.predict(data.batch(idx));
    for (std::size_t i = 0; i < idx.size(); ++i)
      if (pred[i] == data.labels[idx[i]]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

}  // namespace advlab::nn
