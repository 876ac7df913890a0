#pragma once

// Reverse-mode differentiation over NdArray values.
//
// A Tape records every primitive evaluated on values that depend on a
// parameter leaf. Nodes are appended in creation order, so walking the
// record backwards is a valid reverse topological order; backprop visits
// each reached node exactly once.

#include <functional>
#include <map>
#include <memory>
#include <string_view>
#include <vector>

#include "c2freg/ndarray.hpp"

namespace c2freg::ad {

using ParamId = std::size_t;
using Gradients = std::map<ParamId, NdArray>;

struct Node {
  std::string_view kind;
  NdArray value;
  NdArray grad;  // empty until reached during backprop
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs that require grad.
  std::function<void(Node&)> backward;
  bool requires_grad = false;
  bool is_param = false;
  ParamId param_id = 0;

  /// Adds g into grad, allocating on first contact.
  void add_grad(const NdArray& g);
  /// Mutable view of grad, zero-initialized on first contact.
  NdArray& grad_buffer();
};

class Tape;

/// Handle to a value produced on a tape.
class Var {
 public:
  Var() = default;
  Var(std::shared_ptr<Node> node, Tape* tape) : node_(std::move(node)), tape_(tape) {}

  const NdArray& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_param() const { return node_->is_param; }
  ParamId param_id() const { return node_->param_id; }
  Tape& tape() const { return *tape_; }
  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
  Tape* tape_ = nullptr;
};

class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  /// Leaf whose gradient is reported by backprop.
  Var parameter(NdArray value);
  Var constant(NdArray value);

  /// Used by primitives. Records a node when recording is on and any input
  /// requires grad; otherwise returns an untracked value.
  Var record(std::string_view kind, NdArray value, std::vector<Var> inputs,
             std::function<void(Node&)> backward);

  /// Gradients of a shape-[1] output w.r.t. every parameter leaf of this tape.
  /// Leaves the output does not depend on receive zeros.
  Gradients backprop(const Var& output);

  std::size_t node_count() const { return order_.size(); }
  void clear();

 private:
  bool recording_;
  std::vector<std::shared_ptr<Node>> order_;
  std::vector<std::shared_ptr<Node>> params_;
};

}  // namespace c2freg::ad
