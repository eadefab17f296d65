#include "core/tape.hpp"

#include <cmath>

namespace advlab {

Tensor forward_op(OpKind kind, const std::vector<const Tensor*>& in, const OpAttrs& attrs);
std::vector<Tensor> default_vjp(const Tape& tape, const TapeNode& node, const Tensor& g);

const Tensor& GradientMap::at(int node) const {
  auto it = grads_.find(node);
  if (it == grads_.end())
    throw Error("gradient map: node " + std::to_string(node) + " was not requested");
  return it->second;
}

const Tensor& GradientMap::at(const Tensor& leaf) const {
  if (leaf.node < 0) throw Error("gradient map: tensor is not attached to a tape");
  return at(leaf.node);
}

int Tape::require_node(const Tensor& t) const {
  if (t.node < 0 || static_cast<std::size_t>(t.node) >= nodes_.size())
    throw Error("tensor is not on this tape (node=" + std::to_string(t.node) + ")");
  return t.node;
}

int Tape::push(TapeNode n) {
  const int id = static_cast<int>(nodes_.size());
  n.value.node = id;
  nodes_.push_back(std::move(n));
  return id;
}

const TapeNode& Tape::node(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    throw Error("tape: node " + std::to_string(id) + " out of range");
  return nodes_[id];
}

Tensor Tape::leaf(const Tensor& value) {
  TapeNode n;
  n.kind = OpKind::Leaf;
  n.value = value.detached();
  const int id = push(std::move(n));
  return attach(value.detached(), id);
}

Tensor Tape::record(OpKind kind, const std::vector<Tensor>& inputs, OpAttrs attrs) {
  std::vector<const Tensor*> vals;
  std::vector<int> ids;
  vals.reserve(inputs.size());
  ids.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    int id = t.node;
    if (id < 0) {
      id = leaf(t).node;  // implicit constant leaf
    } else if (static_cast<std::size_t>(id) >= nodes_.size()) {
      throw Error(std::string(op_name(kind)) + ": input node " + std::to_string(id) +
                  " is not on this tape");
    }
    ids.push_back(id);
  }
  for (int id : ids) vals.push_back(&nodes_[id].value);

  Tensor out = forward_op(kind, vals, attrs);
  if (out.has_nan())
    throw NumericError(std::string(op_name(kind)) + ": forward produced NaN");

  TapeNode n;
  n.kind = kind;
  n.inputs = std::move(ids);
  n.value = std::move(out);
  n.attrs = std::move(attrs);
  const int id = push(std::move(n));
  return attach(nodes_[id].value.detached(), id);
}

Tensor Tape::custom(const std::string& name, const std::vector<Tensor>& inputs, Tensor forward,
                    BackwardRule default_rule) {
  if (forward.has_nan()) throw NumericError("custom stage '" + name + "': forward value has NaN");
  std::vector<int> ids;
  for (const Tensor& t : inputs) {
    int id = t.node;
    if (id < 0) id = leaf(t).node;
    else if (static_cast<std::size_t>(id) >= nodes_.size())
      throw Error("custom stage '" + name + "': input node not on this tape");
    ids.push_back(id);
  }
  TapeNode n;
  n.kind = OpKind::Custom;
  n.inputs = std::move(ids);
  n.value = std::move(forward);
  n.name = name;
  n.custom_rule = std::move(default_rule);
  const int id = push(std::move(n));
  return attach(nodes_[id].value.detached(), id);
}

void Tape::set_override(int node, BackwardRule rule) {
  if (node < 0 || static_cast<std::size_t>(node) >= nodes_.size())
    throw Error("set_override: node " + std::to_string(node) + " out of range");
  nodes_[node].override_rule = std::move(rule);
}

void Tape::clear_override(int node) {
  if (node < 0 || static_cast<std::size_t>(node) >= nodes_.size())
    throw Error("clear_override: node " + std::to_string(node) + " out of range");
  nodes_[node].override_rule = nullptr;
}

BackwardRule Tape::true_rule(int id) const {
  const TapeNode& n = node(id);
  if (n.kind == OpKind::Custom) {
    if (!n.custom_rule) throw Error("true_rule: custom node '" + n.name + "' has no rule");
    return n.custom_rule;
  }
  return [](const Tape& t, const TapeNode& nd, const Tensor& g) { return default_vjp(t, nd, g); };
}

BackwardRule Tape::zero_rule() {
  return [](const Tape& t, const TapeNode& nd, const Tensor&) {
    std::vector<Tensor> out;
    out.reserve(nd.inputs.size());
    for (int id : nd.inputs) out.push_back(Tensor::zeros(t.value(id).shape));
    return out;
  };
}

BackwardRule Tape::identity_rule() {
  return [](const Tape& t, const TapeNode& nd, const Tensor& g) {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < nd.inputs.size(); ++i) {
      const Tensor& in = t.value(nd.inputs[i]);
      if (i == 0) {
        if (in.size() != g.size())
          throw Error("identity surrogate on '" + nd.name + "': input " + shape_str(in.shape) +
                      " and output " + shape_str(g.shape) + " sizes differ");
        Tensor gi(in.shape, g.data);
        out.push_back(std::move(gi));
      } else {
        out.push_back(Tensor::zeros(in.shape));
      }
    }
    return out;
  };
}

GradientMap Tape::backward(const Tensor& output, std::span<const Tensor> leaves) const {
  const int out_id = require_node(output);
  if (nodes_[out_id].value.size() != 1)
    throw ShapeError("backward: output " + shape_str(nodes_[out_id].value.shape) +
                     " is not scalar");

  std::vector<Tensor> adj(nodes_.size());
  std::vector<bool> seen(nodes_.size(), false);
  adj[out_id] = Tensor::full(nodes_[out_id].value.shape, 1.0);
  seen[out_id] = true;

  for (int id = out_id; id >= 0; --id) {
    if (!seen[id]) continue;
    const TapeNode& n = nodes_[id];
    if (n.kind == OpKind::Leaf) continue;

    std::vector<Tensor> gins;
    if (n.override_rule) {
      gins = n.override_rule(*this, n, adj[id]);
    } else if (n.kind == OpKind::Custom) {
      if (!n.custom_rule)
        throw Error("backward: custom node '" + n.name + "' has no backward rule");
      gins = n.custom_rule(*this, n, adj[id]);
    } else {
      gins = default_vjp(*this, n, adj[id]);
    }
    if (gins.size() != n.inputs.size())
      throw Error(std::string("backward: rule for ") + op_name(n.kind) + " '" + n.name +
                  "' returned " + std::to_string(gins.size()) + " gradients for " +
                  std::to_string(n.inputs.size()) + " inputs");

    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      const int src = n.inputs[i];
      const Tensor& want = nodes_[src].value;
      if (gins[i].shape != want.shape)
        throw ShapeError(std::string("backward: rule for ") + op_name(n.kind) +
                         " produced gradient " + shape_str(gins[i].shape) + " for input " +
                         shape_str(want.shape));
      if (!seen[src]) {
        adj[src] = std::move(gins[i]);
        seen[src] = true;
      } else {
        Tensor& acc = adj[src];
        for (std::size_t j = 0; j < acc.size(); ++j) acc.data[j] += gins[i].data[j];
      }
    }
  }

  GradientMap gm;
  for (const Tensor& leaf : leaves) {
    const int id = require_node(leaf);
    if (seen[id]) {
      Tensor g = adj[id];
      g.node = -1;
      gm.put(id, std::move(g));
    } else {
      gm.put(id, Tensor::zeros(nodes_[id].value.shape));
    }
  }
  return gm;
}

Tensor expectation_gradient(const StochasticObjective& fn, const Tensor& x, int samples,
                            Rng& rng) {
  if (samples < 1) throw Error("expectation_gradient: samples must be >= 1");
  if (!fn.build) throw Error("expectation_gradient: empty objective");
  // a point mass makes the expectation a single evaluation
  const int draws = fn.deterministic ? 1 : samples;

  Tensor acc = Tensor::zeros(x.shape);
  for (int s = 0; s < draws; ++s) {
    try {
      Tape tape;
      Tensor xl = tape.leaf(x);
      Tensor loss = fn.build(tape, xl, rng);
      GradientMap gm = tape.backward(loss, {xl});
      const Tensor& gx = gm.at(xl);
      for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += gx.data[i];
    } catch (const Error& e) {
      throw Error("expectation_gradient: draw " + std::to_string(s) + ": " + e.what());
    }
  }
  if (draws > 1)
    for (double& v : acc.data) v /= static_cast<double>(draws);
  return acc;
}

Tensor enumerated_gradient(const std::function<Tensor(Tape&, const Tensor&, int)>& fn,
                           const Tensor& x, int count) {
  if (count < 1) throw Error("enumerated_gradient: count must be >= 1");
  Tensor acc = Tensor::zeros(x.shape);
  for (int s = 0; s < count; ++s) {
    try {
      Tape tape;
      Tensor xl = tape.leaf(x);
      Tensor loss = fn(tape, xl, s);
      GradientMap gm = tape.backward(loss, {xl});
      const Tensor& gx = gm.at(xl);
      for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += gx.data[i];
    } catch (const Error& e) {
      throw Error("enumerated_gradient: transform " + std::to_string(s) + ": " + e.what());
    }
  }
  if (count > 1)
    for (double& v : acc.data) v /= static_cast<double>(count);
  return acc;
}

}  // namespace advlab
