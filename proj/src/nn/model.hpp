#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tape.hpp"

namespace advlab::nn {

enum class LayerKind { Dense, Conv, Relu, Sigmoid, Tanh, MaxPool2, Flatten };

const char* layer_name(LayerKind k);

struct LayerSpec {
  LayerKind kind = LayerKind::Flatten;
  // Dense: a=in, b=out. Conv: a=kh, b=kw, c=cin, d=cout, flag=same padding.
  int a = 0, b = 0, c = 0, d = 0;
  bool flag = false;

  static LayerSpec dense(int in, int out) { return {LayerKind::Dense, in, out, 0, 0, false}; }
  static LayerSpec conv(int kh, int kw, int cin, int cout, bool same) {
    return {LayerKind::Conv, kh, kw, cin, cout, same};
  }
  static LayerSpec relu() { return {LayerKind::Relu}; }
  static LayerSpec sigmoid() { return {LayerKind::Sigmoid}; }
  static LayerSpec tanh() { return {LayerKind::Tanh}; }
  static LayerSpec maxpool2() { return {LayerKind::MaxPool2}; }
  static LayerSpec flatten() { return {LayerKind::Flatten}; }

  bool operator==(const LayerSpec&) const = default;
};

using ParamMap = std::map<std::string, Tensor>;

struct ForwardOptions {
  /// Applied after every activation layer; the SAP insertion point.
  std::function<Tensor(Tape&, const Tensor&, int layer_index)> post_activation;
  /// When set, receives each post-activation tensor plus the logits (the LID probe set).
  std::vector<Tensor>* capture = nullptr;
  /// Attached (on-tape) parameters override the stored ones; used by training.
  const ParamMap* params = nullptr;
};

/// Feed-forward classifier: ordered layer specs plus named parameters.
/// Forward on an N x H x W x C batch yields N x num_classes logits.
struct Classifier {
  Shape input_shape;  // H, W, C
  int num_classes = 0;
  std::vector<LayerSpec> layers;
  ParamMap params;

  static Classifier mlp(Shape input, const std::vector<int>& hidden, int classes);
  static Classifier cnn(Shape input, int classes);

  void init_params(Rng& rng);

  Tensor forward(Tape& tape, const Tensor& batch, const ForwardOptions& opt = {}) const;

  /// Forward on a throwaway tape.
  Tensor logits(const Tensor& batch) const;
  std::vector<int> predict(const Tensor& batch) const;
  int predict_one(const Tensor& image) const;

  /// Flattened-input dimension (product of input_shape).
  std::size_t input_numel() const { return shape_numel(input_shape); }
};

/// Mean softmax cross-entropy on a throwaway tape (fused log-sum-exp).
double loss_value(const Classifier& model, const Tensor& batch, const std::vector<int>& labels);

/// argmax over one logit row.
int argmax_row(const Tensor& logits, std::size_t row);

/// Fraction of the dataset classified correctly (batched forward).
struct Dataset;
double accuracy(const Classifier& model, const Dataset& data);

}  // namespace advlab::nn
