#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace advlab {

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  BiasAdd,
  MatMul,
  Conv2d,
  Relu,
  Sigmoid,
  Tanh,
  Exp,
  Log,
  MaxPool2,
  SoftmaxXent,
  CwMargin,
  Sum,
  Mean,
  Reshape,
  Pad,
  Slice,
  ResizeNearest,
  ResizeBilinear,
  Floor,
  Round,
  Clamp,
  Custom,
};

const char* op_name(OpKind k);

struct ConvAttrs {
  bool same_pad = false;  // false = valid
};
struct PadAttrs {
  int top = 0, bottom = 0, left = 0, right = 0;
};
struct SliceAttrs {
  int y0 = 0, x0 = 0, h = 0, w = 0;
};
struct ResizeAttrs {
  int out_h = 0, out_w = 0;
};
struct ClampAttrs {
  double lo = 0.0, hi = 1.0;
};
struct ReshapeAttrs {
  Shape target;
};
struct XentAttrs {
  std::vector<int> labels;
};
/// Logit-margin loss attributes. Untargeted: margin = z[label] - max_{i != label} z[i]
/// (label = true class, drive negative). Targeted: margin = max_{i != label} z[i] - z[label]
/// (label = target class, drive negative).
struct MarginAttrs {
  int label = 0;
  bool targeted = false;
};
using OpAttrs = std::variant<std::monostate, ConvAttrs, PadAttrs, SliceAttrs, ResizeAttrs,
                             ClampAttrs, ReshapeAttrs, XentAttrs, MarginAttrs>;

class Tape;
struct TapeNode;

/// Vector-Jacobian product: upstream gradient -> gradient w.r.t. each input.
using BackwardRule =
    std::function<std::vector<Tensor>(const Tape&, const TapeNode&, const Tensor&)>;

/// One recorded operation. `value` holds the forward result; `override_rule`,
/// when set, substitutes the analytic backward rule on subsequent backward
/// passes (the forward value is never touched).
struct TapeNode {
  OpKind kind = OpKind::Leaf;
  std::vector<int> inputs;
  Tensor value;
  OpAttrs attrs;
  std::string name;            // custom-stage name, used in error messages
  BackwardRule custom_rule;    // default backward for OpKind::Custom
  BackwardRule override_rule;  // BPDA hook; wins over the analytic rule
};

/// Gradients of one scalar output w.r.t. a set of leaves, keyed by node id.
class GradientMap {
 public:
  void put(int node, Tensor g) { grads_[node] = std::move(g); }
  const Tensor& at(int node) const;
  const Tensor& at(const Tensor& leaf) const;
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<int, Tensor> grads_;
};

/// Reverse-mode autodiff tape. Nodes are recorded in evaluation order (which
/// is therefore a valid topological order); backward walks them in reverse.
/// Single-threaded by contract; distinct tapes are fully independent.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Record a tensor as a leaf (gradients may be requested for it).
  Tensor leaf(const Tensor& value);

  /// Generic recording entry point; named helpers below all land here.
  Tensor record(OpKind kind, const std::vector<Tensor>& inputs, OpAttrs attrs = {});

  /// Record an externally computed forward value as a single opaque node with
  /// the given default backward rule (zero_rule() for shattered stages).
  Tensor custom(const std::string& name, const std::vector<Tensor>& inputs, Tensor forward,
                BackwardRule default_rule);

  // Elementwise (equal shapes, or either side a 1-element scalar).
  Tensor add(const Tensor& a, const Tensor& b) { return record(OpKind::Add, {a, b}); }
  Tensor sub(const Tensor& a, const Tensor& b) { return record(OpKind::Sub, {a, b}); }
  Tensor mul(const Tensor& a, const Tensor& b) { return record(OpKind::Mul, {a, b}); }
  Tensor div(const Tensor& a, const Tensor& b) { return record(OpKind::Div, {a, b}); }
  /// x (rank >= 1) + bias (rank 1, length = trailing dim of x).
  Tensor bias_add(const Tensor& x, const Tensor& b) { return record(OpKind::BiasAdd, {x, b}); }
  Tensor matmul(const Tensor& a, const Tensor& b) { return record(OpKind::MatMul, {a, b}); }
  /// x: N x H x W x Cin, k: kh x kw x Cin x Cout, stride 1.
  Tensor conv2d(const Tensor& x, const Tensor& k, bool same_pad) {
    return record(OpKind::Conv2d, {x, k}, ConvAttrs{same_pad});
  }
  Tensor relu(const Tensor& x) { return record(OpKind::Relu, {x}); }
  Tensor sigmoid(const Tensor& x) { return record(OpKind::Sigmoid, {x}); }
  Tensor tanh(const Tensor& x) { return record(OpKind::Tanh, {x}); }
  Tensor exp(const Tensor& x) { return record(OpKind::Exp, {x}); }
  Tensor log(const Tensor& x) { return record(OpKind::Log, {x}); }
  /// 2x2 max pooling, stride 2; x: N x H x W x C with even H, W.
  Tensor maxpool2(const Tensor& x) { return record(OpKind::MaxPool2, {x}); }
  /// Mean softmax cross-entropy over the batch, fused log-sum-exp; logits N x C.
  Tensor softmax_xent(const Tensor& logits, std::vector<int> labels) {
    return record(OpKind::SoftmaxXent, {logits}, XentAttrs{std::move(labels)});
  }
  /// Logit margin (see MarginAttrs); logits 1 x C or C.
  Tensor cw_margin(const Tensor& logits, int label, bool targeted) {
    return record(OpKind::CwMargin, {logits}, MarginAttrs{label, targeted});
  }
  Tensor sum(const Tensor& x) { return record(OpKind::Sum, {x}); }
  Tensor mean(const Tensor& x) { return record(OpKind::Mean, {x}); }
  Tensor reshape(const Tensor& x, Shape target) {
    return record(OpKind::Reshape, {x}, ReshapeAttrs{std::move(target)});
  }
  /// Zero-pad spatial dims of H x W x C.
  Tensor pad(const Tensor& x, int top, int bottom, int left, int right) {
    return record(OpKind::Pad, {x}, PadAttrs{top, bottom, left, right});
  }
  /// Spatial window of H x W x C.
  Tensor slice(const Tensor& x, int y0, int x0, int h, int w) {
    return record(OpKind::Slice, {x}, SliceAttrs{y0, x0, h, w});
  }
  Tensor resize_nearest(const Tensor& x, int out_h, int out_w) {
    return record(OpKind::ResizeNearest, {x}, ResizeAttrs{out_h, out_w});
  }
  Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    return record(OpKind::ResizeBilinear, {x}, ResizeAttrs{out_h, out_w});
  }
  Tensor floor(const Tensor& x) { return record(OpKind::Floor, {x}); }
  Tensor round(const Tensor& x) { return record(OpKind::Round, {x}); }
  Tensor clamp(const Tensor& x, double lo, double hi) {
    return record(OpKind::Clamp, {x}, ClampAttrs{lo, hi});
  }

  /// Install a surrogate backward rule on an existing node (the BPDA hook).
  void set_override(int node, BackwardRule rule);
  void set_override(const Tensor& t, BackwardRule rule) { set_override(require_node(t), rule); }
  void clear_override(int node);

  /// The node's analytic backward rule, packaged so it can be re-installed
  /// as an override (self-substitution must be a no-op).
  BackwardRule true_rule(int node) const;

  /// A rule returning zero gradients for every input (shattered stages).
  static BackwardRule zero_rule();
  /// A rule passing the upstream gradient through unchanged to input 0
  /// (requires matching shapes; the identity surrogate of BPDA).
  static BackwardRule identity_rule();

  /// d(output)/d(leaf) for each requested leaf; output must be scalar.
  GradientMap backward(const Tensor& output, std::span<const Tensor> leaves) const;
  GradientMap backward(const Tensor& output, std::initializer_list<Tensor> leaves) const {
    return backward(output, std::span<const Tensor>(leaves.begin(), leaves.size()));
  }

  const TapeNode& node(int id) const;
  const Tensor& value(int id) const { return node(id).value; }
  std::size_t size() const { return nodes_.size(); }

  int require_node(const Tensor& t) const;

 private:
  friend struct TapeOps;
  Tensor attach(Tensor t, int id) {
    t.node = id;
    return t;
  }
  int push(TapeNode n);
  std::vector<TapeNode> nodes_;
};

/// A stochastic scalar objective for expectation-over-transformation
/// gradients. `build` records one realization of the randomness onto the
/// given tape and returns the scalar loss node.
struct StochasticObjective {
  std::function<Tensor(Tape&, const Tensor& x_on_tape, Rng&)> build;
  /// True when the randomness is a point mass; the expectation then collapses
  /// to a single evaluation.
  bool deterministic = false;
};

/// Mean of d(loss)/dx over `samples` fresh draws of the objective's
/// randomness. With a point-mass objective this is exactly one backward call.
Tensor expectation_gradient(const StochasticObjective& fn, const Tensor& x, int samples, Rng& rng);

/// Exact expectation gradient over an enumerated finite transformation set:
/// the mean over all `count` realizations, taken in index order.
Tensor enumerated_gradient(const std::function<Tensor(Tape&, const Tensor&, int)>& fn,
                           const Tensor& x, int count);

}  // namespace advlab
