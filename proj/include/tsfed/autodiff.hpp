// Copyright 2026 The tsfed Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal reverse-mode automatic differentiation over dense tensors.
//
// Values are computed eagerly when a node is pushed, so "evaluating" a graph
// is reading the value of its root. Gradients come in two flavours:
//
//   Tape::Grad       numeric adjoints (plain tensors), the fast path used for
//                    ordinary training;
//   Tape::GradGraph  adjoints recorded as new nodes on the same tape, so the
//                    result can itself be differentiated. This is what lets
//                    an unrolled run of gradient descent be differentiated
//                    with respect to the data it was trained on.
//
// Both flavours share one set of backward rules (BackwardRule below), written
// once against a context that supplies either tensors or variables.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsfed/error.hpp"
#include "tsfed/tensor.hpp"

namespace tsfed::ad {

enum class OpKind : std::uint8_t {
  kLeaf,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kScale,
  kMatMul,
  kTranspose,
  kAddRow,
  kSumRows,
  kBroadcastRows,
  kSum,
  kBroadcastScalar,
  kRelu,
  kSquare,
  kSlice,
  kEmbed,
  kReshape,
};

inline const char* OpName(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kSumRows: return "sum_rows";
    case OpKind::kBroadcastRows: return "broadcast_rows";
    case OpKind::kSum: return "sum";
    case OpKind::kBroadcastScalar: return "broadcast_scalar";
    case OpKind::kRelu: return "relu";
    case OpKind::kSquare: return "square";
    case OpKind::kSlice: return "slice";
    case OpKind::kEmbed: return "embed";
    case OpKind::kReshape: return "reshape";
  }
  return "?";
}

// One recorded operation. Parents always precede the node on the tape.
struct TapeNode {
  OpKind op = OpKind::kLeaf;
  std::array<int, 2> parents{-1, -1};
  Tensor value;
  double factor = 0.0;       // kScale
  std::size_t offset = 0;    // kSlice, kEmbed
  std::size_t extent = 0;    // kEmbed: flat length; kBroadcastRows: batch
  Tensor::Shape attr_shape;  // kSlice/kReshape: target; kBroadcastScalar: out
};

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

  inline const Tensor& value() const;
  Tensor::Shape shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable input.
  Var Leaf(Tensor value) {
    TapeNode n;
    n.op = OpKind::kLeaf;
    n.value = std::move(value);
    return Push(std::move(n));
  }

  // Input that never receives a gradient.
  Var Constant(Tensor value) {
    TapeNode n;
    n.op = OpKind::kConstant;
    n.value = std::move(value);
    return Push(std::move(n));
  }

  // Forward value of any node (the "eval" of the graph rooted there).
  const Tensor& Value(Var v) const {
    CheckOwned(v);
    return nodes_[static_cast<std::size_t>(v.id())].value;
  }

  std::size_t size() const { return nodes_.size(); }
  const TapeNode& node(int id) const {
    return nodes_.at(static_cast<std::size_t>(id));
  }

  // Number of nodes the most recent backward pass iterated over.
  std::size_t last_backward_visits() const { return last_visits_; }

  // d(root)/d(wrt[i]) as plain tensors. `wrt` may be any nodes, not only
  // leaves; a node the root does not depend on gets a zero tensor.
  std::vector<Tensor> Grad(Var root, std::span<const Var> wrt);

  // Same as Grad, but each adjoint is itself recorded on this tape so that
  // the returned variables can be differentiated again.
  std::vector<Var> GradGraph(Var root, std::span<const Var> wrt);

  Var Push(TapeNode node) {
    nodes_.push_back(std::move(node));
    return Var(this, static_cast<int>(nodes_.size() - 1));
  }

  void CheckOwned(Var v) const {
    if (v.tape() != this || v.id() < 0 ||
        static_cast<std::size_t>(v.id()) >= nodes_.size()) {
      throw Error("variable does not belong to this tape");
    }
  }

 private:
  template <typename Ctx>
  void Backward(Var root, std::span<const Var> wrt, Ctx& ctx);

  std::vector<TapeNode> nodes_;
  std::size_t last_visits_ = 0;
};

inline const Tensor& Var::value() const { return tape_->Value(*this); }

// ---------------------------------------------------------------------------
// Differentiable operations. Each computes its value eagerly, which is where
// shape errors surface.

namespace detail {

inline Tape& SameTape(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
    throw Error(std::string(op) + ": operands live on different tapes");
  }
  return *a.tape();
}

inline Var Unary(Var a, OpKind op, Tensor value) {
  TapeNode n;
  n.op = op;
  n.parents = {a.id(), -1};
  n.value = std::move(value);
  return a.tape()->Push(std::move(n));
}

inline Var Binary(Var a, Var b, OpKind op, Tensor value) {
  TapeNode n;
  n.op = op;
  n.parents = {a.id(), b.id()};
  n.value = std::move(value);
  return a.tape()->Push(std::move(n));
}

}  // namespace detail

inline Var add(Var a, Var b) {
  detail::SameTape(a, b, "add");
  return detail::Binary(a, b, OpKind::kAdd, tsfed::add(a.value(), b.value()));
}

inline Var sub(Var a, Var b) {
  detail::SameTape(a, b, "sub");
  return detail::Binary(a, b, OpKind::kSub, tsfed::sub(a.value(), b.value()));
}

inline Var mul(Var a, Var b) {
  detail::SameTape(a, b, "mul");
  return detail::Binary(a, b, OpKind::kMul, tsfed::mul(a.value(), b.value()));
}

inline Var scale(Var a, double c) {
  TapeNode n;
  n.op = OpKind::kScale;
  n.parents = {a.id(), -1};
  n.factor = c;
  n.value = tsfed::scale(a.value(), c);
  return a.tape()->Push(std::move(n));
}

inline Var matmul(Var a, Var b) {
  detail::SameTape(a, b, "matmul");
  return detail::Binary(a, b, OpKind::kMatMul,
                        tsfed::matmul(a.value(), b.value()));
}

inline Var transpose(Var a) {
  return detail::Unary(a, OpKind::kTranspose, tsfed::transpose(a.value()));
}

inline Var add_row(Var a, Var row) {
  detail::SameTape(a, row, "add_row");
  return detail::Binary(a, row, OpKind::kAddRow,
                        tsfed::add_row(a.value(), row.value()));
}

inline Var sum_rows(Var a) {
  return detail::Unary(a, OpKind::kSumRows, tsfed::sum_rows(a.value()));
}

inline Var broadcast_rows(Var row, std::size_t batch) {
  TapeNode n;
  n.op = OpKind::kBroadcastRows;
  n.parents = {row.id(), -1};
  n.extent = batch;
  n.value = tsfed::broadcast_rows(row.value(), batch);
  return row.tape()->Push(std::move(n));
}

inline Var sum(Var a) {
  return detail::Unary(a, OpKind::kSum, tsfed::sum(a.value()));
}

inline Var mean(Var a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

inline Var broadcast_scalar(Var s, Tensor::Shape shape) {
  TapeNode n;
  n.op = OpKind::kBroadcastScalar;
  n.parents = {s.id(), -1};
  n.attr_shape = shape;
  n.value = tsfed::broadcast_scalar(s.value(), shape);
  return s.tape()->Push(std::move(n));
}

inline Var relu(Var a) {
  return detail::Unary(a, OpKind::kRelu, tsfed::relu(a.value()));
}

inline Var square(Var a) {
  return detail::Unary(a, OpKind::kSquare, tsfed::square(a.value()));
}

inline Var slice(Var flat, std::size_t offset, Tensor::Shape shape) {
  TapeNode n;
  n.op = OpKind::kSlice;
  n.parents = {flat.id(), -1};
  n.offset = offset;
  n.attr_shape = shape;
  n.value = tsfed::slice(flat.value(), offset, shape);
  return flat.tape()->Push(std::move(n));
}

inline Var embed(Var part, std::size_t offset, std::size_t total) {
  TapeNode n;
  n.op = OpKind::kEmbed;
  n.parents = {part.id(), -1};
  n.offset = offset;
  n.extent = total;
  n.value = tsfed::embed(part.value(), offset, total);
  return part.tape()->Push(std::move(n));
}

inline Var reshape(Var a, Tensor::Shape shape) {
  TapeNode n;
  n.op = OpKind::kReshape;
  n.parents = {a.id(), -1};
  n.attr_shape = shape;
  n.value = tsfed::reshape(a.value(), shape);
  return a.tape()->Push(std::move(n));
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }

// ---------------------------------------------------------------------------
// Backward rules.

namespace detail {

// Numeric adjoints.
struct TensorCtx {
  using Adj = Tensor;
  const Tape* tape;
  std::vector<std::optional<Tensor>> adj;
  std::vector<char> wants;

  const Tensor& val(int id) const { return tape->node(id).value; }
  Tensor constant(Tensor t) const { return t; }
  void accumulate(int id, Tensor g) {
    auto& slot = adj[static_cast<std::size_t>(id)];
    if (!slot) {
      slot = std::move(g);
    } else {
      auto& acc = *slot;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
    }
  }
};

// Adjoints recorded on the tape itself.
struct GraphCtx {
  using Adj = Var;
  Tape* tape;
  std::vector<std::optional<Var>> adj;
  std::vector<char> wants;

  Var val(int id) const { return Var(tape, id); }
  Var constant(Tensor t) const { return tape->Constant(std::move(t)); }
  void accumulate(int id, Var g) {
    auto& slot = adj[static_cast<std::size_t>(id)];
    slot = slot ? add(*slot, g) : g;
  }
};

// Propagates the adjoint `g` of `node` into its parents. `node` is a copy:
// in graph mode the tape grows while the rule runs.
template <typename Ctx>
void BackwardRule(const TapeNode& node, const typename Ctx::Adj& g, Ctx& ctx) {
  const int a = node.parents[0];
  const int b = node.parents[1];
  auto wants = [&](int id) {
    return id >= 0 && ctx.wants[static_cast<std::size_t>(id)];
  };
  switch (node.op) {
    case OpKind::kLeaf:
    case OpKind::kConstant:
      break;
    case OpKind::kAdd:
      if (wants(a)) ctx.accumulate(a, g);
      if (wants(b)) ctx.accumulate(b, g);
      break;
    case OpKind::kSub:
      if (wants(a)) ctx.accumulate(a, g);
      if (wants(b)) ctx.accumulate(b, scale(g, -1.0));
      break;
    case OpKind::kMul:
      if (wants(a)) ctx.accumulate(a, mul(g, ctx.val(b)));
      if (wants(b)) ctx.accumulate(b, mul(g, ctx.val(a)));
      break;
    case OpKind::kScale:
      if (wants(a)) ctx.accumulate(a, scale(g, node.factor));
      break;
    case OpKind::kMatMul:
      if (wants(a)) ctx.accumulate(a, matmul(g, transpose(ctx.val(b))));
      if (wants(b)) ctx.accumulate(b, matmul(transpose(ctx.val(a)), g));
      break;
    case OpKind::kTranspose:
      if (wants(a)) ctx.accumulate(a, transpose(g));
      break;
    case OpKind::kAddRow:
      if (wants(a)) ctx.accumulate(a, g);
      if (wants(b)) {
        ctx.accumulate(b, reshape(sum_rows(g), ctx.tape->node(b).value.shape()));
      }
      break;
    case OpKind::kSumRows:
      if (wants(a)) {
        ctx.accumulate(a, broadcast_rows(g, ctx.tape->node(a).value.rows()));
      }
      break;
    case OpKind::kBroadcastRows:
      if (wants(a)) {
        ctx.accumulate(a, reshape(sum_rows(g), ctx.tape->node(a).value.shape()));
      }
      break;
    case OpKind::kSum:
      if (wants(a)) {
        ctx.accumulate(a, broadcast_scalar(g, ctx.tape->node(a).value.shape()));
      }
      break;
    case OpKind::kBroadcastScalar:
      if (wants(a)) ctx.accumulate(a, sum(g));
      break;
    case OpKind::kRelu:
      if (wants(a)) {
        ctx.accumulate(a, mul(g, ctx.constant(tsfed::step(
                                     ctx.tape->node(a).value))));
      }
      break;
    case OpKind::kSquare:
      if (wants(a)) ctx.accumulate(a, mul(g, scale(ctx.val(a), 2.0)));
      break;
    case OpKind::kSlice:
      if (wants(a)) {
        ctx.accumulate(a, embed(g, node.offset, ctx.tape->node(a).value.size()));
      }
      break;
    case OpKind::kEmbed:
      if (wants(a)) {
        ctx.accumulate(a,
                       slice(g, node.offset, ctx.tape->node(a).value.shape()));
      }
      break;
    case OpKind::kReshape:
      if (wants(a)) {
        ctx.accumulate(a, reshape(g, ctx.tape->node(a).value.shape()));
      }
      break;
  }
}

}  // namespace detail

template <typename Ctx>
void Tape::Backward(Var root, std::span<const Var> wrt, Ctx& ctx) {
  CheckOwned(root);
  if (Value(root).size() != 1) {
    throw ShapeError("gradient root must be a scalar, got shape " +
                     ShapeToString(Value(root).shape()));
  }
  const auto root_id = static_cast<std::size_t>(root.id());

  // Mark the nodes that lie downstream of a requested input; only those can
  // carry a non-zero adjoint towards it.
  ctx.wants.assign(root_id + 1, 0);
  std::size_t first = root_id + 1;
  for (Var v : wrt) {
    CheckOwned(v);
    const auto id = static_cast<std::size_t>(v.id());
    if (id <= root_id) {
      ctx.wants[id] = 1;
      first = std::min(first, id);
    }
  }
  for (std::size_t i = first; i <= root_id; ++i) {
    const auto& n = nodes_[i];
    for (int p : n.parents) {
      if (p >= 0 && ctx.wants[static_cast<std::size_t>(p)]) ctx.wants[i] = 1;
    }
  }

  ctx.adj.assign(root_id + 1, std::nullopt);
  if (ctx.wants[root_id]) {
    ctx.accumulate(root.id(), ctx.constant(Tensor(Value(root).shape(), 1.0)));
  }

  // Each node is visited exactly once, in reverse tape order.
  std::size_t visits = 0;
  for (std::size_t i = root_id + 1; i-- > 0;) {
    ++visits;
    if (!ctx.wants[i] || !ctx.adj[i]) continue;
    const TapeNode node = [&] {
      // Graph mode appends to nodes_, so take what the rule needs by value
      // without copying the (possibly large) forward value.
      const TapeNode& src = nodes_[i];
      TapeNode n;
      n.op = src.op;
      n.parents = src.parents;
      n.factor = src.factor;
      n.offset = src.offset;
      n.extent = src.extent;
      n.attr_shape = src.attr_shape;
      return n;
    }();
    const auto g = *ctx.adj[i];
    detail::BackwardRule(node, g, ctx);
  }
  last_visits_ = visits;
}

inline std::vector<Tensor> Tape::Grad(Var root, std::span<const Var> wrt) {
  detail::TensorCtx ctx{this, {}, {}};
  Backward(root, wrt, ctx);
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (Var v : wrt) {
    const auto id = static_cast<std::size_t>(v.id());
    if (id < ctx.adj.size() && ctx.adj[id]) {
      out.push_back(*ctx.adj[id]);
    } else {
      out.emplace_back(Value(v).shape(), 0.0);
    }
  }
  return out;
}

inline std::vector<Var> Tape::GradGraph(Var root, std::span<const Var> wrt) {
  detail::GraphCtx ctx{this, {}, {}};
  Backward(root, wrt, ctx);
  std::vector<Var> out;
  out.reserve(wrt.size());
  for (Var v : wrt) {
    const auto id = static_cast<std::size_t>(v.id());
    if (id < ctx.adj.size() && ctx.adj[id]) {
      out.push_back(*ctx.adj[id]);
    } else {
      out.push_back(Constant(Tensor(Value(v).shape(), 0.0)));
    }
  }
  return out;
}

inline std::vector<Tensor> grad(Var root, std::span<const Var> wrt) {
  return root.tape()->Grad(root, wrt);
}

inline std::vector<Tensor> grad(Var root, std::initializer_list<Var> wrt) {
  return root.tape()->Grad(root, std::span<const Var>(wrt.begin(), wrt.size()));
}

// Loss as a function of a flat parameter variable; must be built on the
// same tape as the parameter.
using LossFn = std::function<Var(Var params)>;

// Runs `steps` plain gradient-descent steps
//
//   w_{k+1} = w_k - lr * dL(w_k)/dw_k
//
// recording every step on the tape, so the returned variable can be
// differentiated with respect to anything the loss depends on (typically the
// training data). All intermediate states are kept; there is no
// checkpointing.
inline Var unrolled_sgd(Var params0, const LossFn& loss, int steps, double lr) {
  if (steps < 1) {
    throw ConfigError("unrolled_sgd: steps must be >= 1, got " +
                      std::to_string(steps));
  }
  if (!(lr >= 0.0)) {
    throw ConfigError("unrolled_sgd: learning rate must be >= 0");
  }
  Tape& tape = *params0.tape();
  Var w = params0;
  for (int k = 0; k < steps; ++k) {
    Var l = loss(w);
    const double lv = l.value().item();
    if (!std::isfinite(lv)) {
      throw NumericError("unrolled_sgd: non-finite loss at step " +
                         std::to_string(k));
    }
    if (lr == 0.0) continue;  // keeps params0 bitwise, signed zeros included
    const Var wrt[] = {w};
    Var g = tape.GradGraph(l, wrt)[0];
    w = sub(w, scale(g, lr));
  }
  return w;
}

}  // namespace tsfed::ad
