#include "c2freg/autodiff.hpp"

namespace c2freg::ad {

void Node::add_grad(const NdArray& g) {
  if (grad.empty()) {
    if (g.shape() != value.shape()) throw_shape_error("add_grad", value.shape(), g.shape());
    grad = g;
  } else {
    grad.accumulate(g);
  }
}

NdArray& Node::grad_buffer() {
  if (grad.empty()) grad = NdArray(value.shape(), 0.0);
  return grad;
}

Var Tape::parameter(NdArray value) {
  auto node = std::make_shared<Node>();
  node->kind = "parameter";
  node->value = std::move(value);
  node->requires_grad = recording_;
  node->is_param = true;
  node->param_id = params_.size();
  params_.push_back(node);
  if (recording_) order_.push_back(node);
  return Var(node, this);
}

Var Tape::constant(NdArray value) {
  auto node = std::make_shared<Node>();
  node->kind = "constant";
  node->value = std::move(value);
  return Var(node, this);
}

Var Tape::record(std::string_view kind, NdArray value, std::vector<Var> inputs,
                 std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->kind = kind;
  node->value = std::move(value);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (recording_ && needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
    order_.push_back(node);
  }
  return Var(node, this);
}

Gradients Tape::backprop(const Var& output) {
  if (output.shape() != Shape{1})
    throw ShapeError("backprop: output must have shape [1], got " +
                     shape_str(output.shape()));
  if (!recording_) throw std::logic_error("backprop: tape is not recording");

  for (auto& n : order_) n->grad = NdArray();
  if (output.requires_grad()) {
    output.node()->grad = NdArray::scalar(1.0);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      Node& n = **it;
      if (n.grad.empty() || !n.backward) continue;
      n.backward(n);
    }
  }

  Gradients out;
  for (const auto& p : params_) {
    out.emplace(p->param_id, p->grad.empty() ? NdArray(p->value.shape(), 0.0) : p->grad);
  }
  return out;
}

void Tape::clear() {
  order_.clear();
  params_.clear();
}

}  // namespace c2freg::ad
