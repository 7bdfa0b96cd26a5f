#pragma once

// Reverse-mode automatic differentiation on dense float64 tensors.
//
// A Tape is a linear record of primitive operations built eagerly: each op
// computes its value at construction, replay() re-executes the whole record
// against the current leaf values, backward() runs the reverse sweep.
// Indicator-style comparisons (greater_mask) are constants in the backward
// pass; maximum() routes the gradient to the larger element.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stuq/common.hpp"
#include "stuq/tensor.hpp"

namespace stuq {

enum class Op {
  Param,
  Input,
  Add,
  Sub,
  Mul,
  Div,
  Maximum,
  GreaterMask,
  Scale,
  ScaleBy,
  AddConst,
  AddRow,
  Matmul,
  Conv2D,
  Sigmoid,
  Tanh,
  Relu,
  Abs,
  Exp,
  Log,
  Softplus,
  Concat,
  SliceLast,
  Pick,
  Reshape,
  SumAll,
  MeanAll,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Param: return "param";
    case Op::Input: return "input";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Maximum: return "maximum";
    case Op::GreaterMask: return "greater-mask";
    case Op::Scale: return "scale";
    case Op::ScaleBy: return "scale-by";
    case Op::AddConst: return "add-const";
    case Op::AddRow: return "add-row";
    case Op::Matmul: return "matmul";
    case Op::Conv2D: return "conv2d";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::Abs: return "abs";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Softplus: return "softplus";
    case Op::Concat: return "concat";
    case Op::SliceLast: return "slice-last";
    case Op::Pick: return "pick";
    case Op::Reshape: return "reshape";
    case Op::SumAll: return "sum-all";
    case Op::MeanAll: return "mean-all";
  }
  return "?";
}

enum class Pad { Zero, Periodic };

class Tape;

struct Value {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
};

struct Node {
  Op op;
  std::vector<int> inputs;
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  // op payload
  double c = 0.0;
  std::int64_t p0 = 0, p1 = 0;
  Shape aux;
};

class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool check_finite = true;

  std::size_t size() const { return nodes_.size(); }

  // Number of recorded non-leaf operations.
  std::size_t num_ops() const { return op_count_; }

  Value param(Tensor t) {
    Node n;
    n.op = Op::Param;
    n.value = std::move(t);
    n.requires_grad = true;
    return push(std::move(n));
  }

  Value input(Tensor t) {
    Node n;
    n.op = Op::Input;
    n.value = std::move(t);
    n.requires_grad = false;
    return push(std::move(n));
  }

  Tensor& value(Value v) { return node(v).value; }
  const Tensor& value(Value v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  const Tensor& grad(Value v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }

  double scalar(Value v) const {
    const Tensor& t = value(v);
    require(t.is_scalar(), "scalar(): value has shape " + t.shape.str());
    return t.data[0];
  }

  // Overwrite a leaf's value in place (for replay with fresh inputs).
  void set_leaf(Value v, const Tensor& t) {
    Node& n = node(v);
    require(n.op == Op::Param || n.op == Op::Input, "set_leaf: not a leaf node");
    require(n.value.shape == t.shape, "set_leaf: shape mismatch " + n.value.shape.str() +
                                          " vs " + t.shape.str());
    n.value.data = t.data;
  }

  // Re-execute every recorded op in order against current leaf values.
  // Deterministic: identical leaves reproduce identical outputs bit-for-bit.
  void replay() {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (n.op == Op::Param || n.op == Op::Input) continue;
      compute(n);
      if (check_finite && !n.value.all_finite())
        throw DivergenceError(std::string("non-finite value produced by ") + op_name(n.op));
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) {
      if (n.grad.data.size() != n.value.data.size() || !(n.grad.shape == n.value.shape))
        n.grad = Tensor::zeros(n.value.shape);
      else
        n.grad.fill(0.0);
    }
  }

  // Reverse sweep from a scalar loss. Accumulates d(loss)/d(node) into every
  // node's grad; leaf parameters untouched by the loss keep exact zeros.
  void backward(Value loss) {
    const Tensor& lv = value(loss);
    require(lv.is_scalar(), "backward: loss must be scalar, got shape " + lv.shape.str());
    zero_grad();
    nodes_[static_cast<std::size_t>(loss.id)].grad.data[0] = 1.0;
    for (std::size_t k = nodes_.size(); k-- > 0;) {
      Node& n = nodes_[k];
      if (!n.requires_grad || n.op == Op::Param || n.op == Op::Input) continue;
      propagate(n);
    }
    if (check_finite) {
      for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.requires_grad && !n.grad.all_finite())
          throw DivergenceError(std::string("non-finite gradient at ") + op_name(n.op));
      }
    }
  }

  // ---- op constructors ----

  Value add(Value a, Value b) { return binary(Op::Add, a, b); }
  Value sub(Value a, Value b) { return binary(Op::Sub, a, b); }
  Value mul(Value a, Value b) { return binary(Op::Mul, a, b); }
  Value div(Value a, Value b) { return binary(Op::Div, a, b); }
  Value maximum(Value a, Value b) { return binary(Op::Maximum, a, b); }

  // 1 where a > b, else 0; constant in the backward pass.
  Value greater_mask(Value a, Value b) {
    Value v = binary(Op::GreaterMask, a, b);
    node(v).requires_grad = false;
    return v;
  }

  Value scale(Value a, double c) {
    Node n = unary_node(Op::Scale, a);
    n.c = c;
    return push_and_compute(std::move(n));
  }

  Value add_const(Value a, double c) {
    Node n = unary_node(Op::AddConst, a);
    n.c = c;
    return push_and_compute(std::move(n));
  }

  // Multiply a tensor by a scalar-valued node (broadcast product).
  Value scale_by(Value a, Value s) {
    require(value(s).is_scalar(), "scale-by: second operand must be scalar, got " +
                                      value(s).shape.str());
    Node n;
    n.op = Op::ScaleBy;
    n.inputs = {a.id, s.id};
    n.value = Tensor(value(a).shape);
    n.requires_grad = node(a).requires_grad || node(s).requires_grad;
    return push_and_compute(std::move(n));
  }

  // Broadcast a rank-1 vector over the last axis: out[..., j] = a[..., j] + b[j].
  Value add_rowvec(Value a, Value b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.shape.rank() >= 1 && tb.shape.rank() == 1,
            "add-row: expects rank>=1 and rank-1 operands, got " + ta.shape.str() + " and " +
                tb.shape.str());
    require(ta.shape[ta.shape.rank() - 1] == tb.shape[0],
            "add-row: last dim mismatch, " + ta.shape.str() + " vs " + tb.shape.str());
    Node n;
    n.op = Op::AddRow;
    n.inputs = {a.id, b.id};
    n.value = Tensor(ta.shape);
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    return push_and_compute(std::move(n));
  }

  Value neg(Value a) { return scale(a, -1.0); }
  Value one_minus(Value a) { return add_const(scale(a, -1.0), 1.0); }

  Value sigmoid(Value a) { return push_and_compute(unary_node(Op::Sigmoid, a)); }
  Value tanh_(Value a) { return push_and_compute(unary_node(Op::Tanh, a)); }
  Value relu(Value a) { return push_and_compute(unary_node(Op::Relu, a)); }
  Value abs_(Value a) { return push_and_compute(unary_node(Op::Abs, a)); }
  Value exp_(Value a) { return push_and_compute(unary_node(Op::Exp, a)); }
  Value log_(Value a) { return push_and_compute(unary_node(Op::Log, a)); }
  Value softplus(Value a) { return push_and_compute(unary_node(Op::Softplus, a)); }

  // Named lookup used by config-driven surfaces; unknown names fail at
  // construction time.
  Value unary_by_name(Value a, const std::string& name) {
    if (name == "sigmoid") return sigmoid(a);
    if (name == "tanh") return tanh_(a);
    if (name == "relu") return relu(a);
    if (name == "abs") return abs_(a);
    if (name == "exp") return exp_(a);
    if (name == "log") return log_(a);
    if (name == "softplus") return softplus(a);
    throw ValidationError("unsupported primitive: " + name);
  }

  Value matmul(Value a, Value b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.shape.rank() == 2 && tb.shape.rank() == 2,
            "matmul: expects rank-2 operands, got " + ta.shape.str() + " and " + tb.shape.str());
    require(ta.shape[1] == tb.shape[0],
            "matmul: inner dimensions differ, " + ta.shape.str() + " vs " + tb.shape.str());
    Node n;
    n.op = Op::Matmul;
    n.inputs = {a.id, b.id};
    n.value = Tensor(Shape{ta.shape[0], tb.shape[1]});
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    return push_and_compute(std::move(n));
  }

  // x: (gw, gh, cin), w: (kh, kw, cin, cout) with kh, kw odd; same padding.
  Value conv2d(Value x, Value w, Pad pad = Pad::Zero) {
    const Tensor& tx = value(x);
    const Tensor& tw = value(w);
    require(tx.shape.rank() == 3, "conv2d: input must be rank 3 (gw, gh, cin), got " + tx.shape.str());
    require(tw.shape.rank() == 4, "conv2d: kernel must be rank 4 (kh, kw, cin, cout), got " + tw.shape.str());
    require(tw.shape[0] % 2 == 1 && tw.shape[1] % 2 == 1, "conv2d: kernel extents must be odd");
    require(tw.shape[2] == tx.shape[2],
            "conv2d: channel mismatch, input " + tx.shape.str() + " kernel " + tw.shape.str());
    Node n;
    n.op = Op::Conv2D;
    n.inputs = {x.id, w.id};
    n.p0 = (pad == Pad::Periodic) ? 1 : 0;
    n.value = Tensor(Shape{tx.shape[0], tx.shape[1], tw.shape[3]});
    n.requires_grad = node(x).requires_grad || node(w).requires_grad;
    return push_and_compute(std::move(n));
  }

  Value concat_last(const std::vector<Value>& parts) {
    require(!parts.empty(), "concat: needs at least one input");
    const Shape& s0 = value(parts[0]).shape;
    std::int64_t last = 0;
    bool rg = false;
    Node n;
    n.op = Op::Concat;
    for (Value p : parts) {
      const Shape& s = value(p).shape;
      require(s.rank() == s0.rank(), "concat: rank mismatch");
      for (std::int64_t i = 0; i + 1 < s.rank(); ++i)
        require(s[i] == s0[i], "concat: leading dims differ, " + s.str() + " vs " + s0.str());
      last += s.rank() == 0 ? 1 : s[s.rank() - 1];
      rg = rg || node(p).requires_grad;
      n.inputs.push_back(p.id);
    }
    std::vector<std::int64_t> od(s0.dims);
    if (od.empty()) od.push_back(last);
    else od.back() = last;
    n.value = Tensor(Shape(od));
    n.requires_grad = rg;
    return push_and_compute(std::move(n));
  }

  Value slice_last(Value a, std::int64_t start, std::int64_t len) {
    const Shape& s = value(a).shape;
    require(s.rank() >= 1, "slice-last: operand must have rank >= 1");
    std::int64_t last = s[s.rank() - 1];
    require(start >= 0 && len >= 1 && start + len <= last, "slice-last: range out of bounds");
    Node n;
    n.op = Op::SliceLast;
    n.inputs = {a.id};
    n.p0 = start;
    n.p1 = len;
    std::vector<std::int64_t> od(s.dims);
    od.back() = len;
    n.value = Tensor(Shape(od));
    n.requires_grad = node(a).requires_grad;
    return push_and_compute(std::move(n));
  }

  // Extract one element (by flat row-major index) as a scalar.
  Value pick(Value a, std::int64_t flat_index) {
    require(flat_index >= 0 && flat_index < value(a).numel(), "pick: index out of range");
    Node n;
    n.op = Op::Pick;
    n.inputs = {a.id};
    n.p0 = flat_index;
    n.value = Tensor(Shape{});
    n.requires_grad = node(a).requires_grad;
    return push_and_compute(std::move(n));
  }

  Value reshape(Value a, Shape s) {
    require(s.numel() == value(a).numel(),
            "reshape: element count mismatch, " + value(a).shape.str() + " -> " + s.str());
    Node n;
    n.op = Op::Reshape;
    n.inputs = {a.id};
    n.aux = s;
    n.value = Tensor(s);
    n.requires_grad = node(a).requires_grad;
    return push_and_compute(std::move(n));
  }

  Value sum_all(Value a) {
    Node n;
    n.op = Op::SumAll;
    n.inputs = {a.id};
    n.value = Tensor(Shape{});
    n.requires_grad = node(a).requires_grad;
    return push_and_compute(std::move(n));
  }

  Value mean_all(Value a) {
    Node n;
    n.op = Op::MeanAll;
    n.inputs = {a.id};
    n.value = Tensor(Shape{});
    n.requires_grad = node(a).requires_grad;
    return push_and_compute(std::move(n));
  }

  Value constant(double c) { return input(Tensor::scalar(c)); }

private:
  std::vector<Node> nodes_;
  std::size_t op_count_ = 0;

  Node& node(Value v) { return nodes_[static_cast<std::size_t>(v.id)]; }

  Value push(Node n) {
    if (n.op != Op::Param && n.op != Op::Input) ++op_count_;
    nodes_.push_back(std::move(n));
    return Value{this, static_cast<int>(nodes_.size() - 1)};
  }

  Value push_and_compute(Node n) {
    Value v = push(std::move(n));
    Node& stored = node(v);
    compute(stored);
    if (check_finite && !stored.value.all_finite())
      throw DivergenceError(std::string("non-finite value produced by ") + op_name(stored.op));
    return v;
  }

  Node unary_node(Op op, Value a) {
    Node n;
    n.op = op;
    n.inputs = {a.id};
    n.value = Tensor(value(a).shape);
    n.requires_grad = node(a).requires_grad;
    return n;
  }

  Value binary(Op op, Value a, Value b) {
    require(a.tape == this && b.tape == this, "op: operands from another tape");
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    require(ta.shape == tb.shape, std::string(op_name(op)) + ": shape mismatch " +
                                      ta.shape.str() + " vs " + tb.shape.str());
    Node n;
    n.op = op;
    n.inputs = {a.id, b.id};
    n.value = Tensor(ta.shape);
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    return push_and_compute(std::move(n));
  }

  const Tensor& in(const Node& n, int k) const {
    return nodes_[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(k)])].value;
  }
  Tensor& ingrad(Node& n, int k) {
    return nodes_[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(k)])].grad;
  }
  bool in_rg(const Node& n, int k) const {
    return nodes_[static_cast<std::size_t>(n.inputs[static_cast<std::size_t>(k)])].requires_grad;
  }

  static double stable_softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
  }

  void compute(Node& n) {
    switch (n.op) {
      case Op::Param:
      case Op::Input:
        return;
      case Op::Add: {
        const auto &a = in(n, 0), &b = in(n, 1);
        for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] = a.data[i] + b.data[i];
        return;
      }
      case Op::Sub: {
        const auto &a = in(n, 0), &b = in(n, 1);
        for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] = a.data[i] - b.data[i];
        return;
      }
      case Op::Mul: {
        const auto &a = in(n, 0), &b = in(n, 1);
        for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] = a.data[i] * b.data[i];
        return;
      }
      case Op::Div: {
        const auto &a = in(n, 0), &b = in(n, 1);
        for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] = a.data[i] / b.data[i];
        return;
      }
      case Op::Maximum: {
        const auto &a = in(n, 0), &b = in(n, 1);
        for (std::size_t i = 0; i < n.value.data.size(); ++i)
          n.value.data[i] = a.data[i] >= b.data[i] ? a.data[i] : b.data[i];
        return;
      }
      case Op::GreaterMask: {
        const auto &a = in(n, 0), &b = in(n, 1);
        for (std::size_t i = 0; i < n.value.data.size(); ++i)
          n.value.data[i] = a.data[i] > b.data[i] ? 1.0 : 0.0;
        return;
      }
      case Op::Scale: {
        const auto& a = in(n, 0);
        for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] = a.data[i] * n.c;
        return;
      }
      case Op::AddConst: {
        const auto& a = in(n, 0);
        for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] = a.data[i] + n.c;
        return;
      }
      case Op::ScaleBy: {
        const auto& a = in(n, 0);
        const double s = in(n, 1).data[0];
        for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] = a.data[i] * s;
        return;
      }
      case Op::AddRow: {
        const auto &a = in(n, 0), &b = in(n, 1);
        const std::size_t w = b.data.size();
        for (std::size_t i = 0; i < n.value.data.size(); ++i)
          n.value.data[i] = a.data[i] + b.data[i % w];
        return;
      }
      case Op::Matmul: {
        const auto &a = in(n, 0), &b = in(n, 1);
        const std::int64_t m = a.shape[0], k = a.shape[1], p = b.shape[1];
        n.value.fill(0.0);
        for (std::int64_t i = 0; i < m; ++i)
          for (std::int64_t t = 0; t < k; ++t) {
            const double av = a.data[static_cast<std::size_t>(i * k + t)];
            if (av == 0.0) continue;
            const double* brow = b.data.data() + t * p;
            double* orow = n.value.data.data() + i * p;
            for (std::int64_t j = 0; j < p; ++j) orow[j] += av * brow[j];
          }
        return;
      }
      case Op::Conv2D: {
        const auto &x = in(n, 0), &w = in(n, 1);
        conv2d_forward(x, w, n.value, n.p0 == 1);
        return;
      }
      case Op::Sigmoid: {
        const auto& a = in(n, 0);
        for (std::size_t i = 0; i < n.value.data.size(); ++i)
          n.value.data[i] = 1.0 / (1.0 + std::exp(-a.data[i]));
        return;
      }
      case Op::Tanh: {
        const auto& a = in(n, 0);
        for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] = std::tanh(a.data[i]);
        return;
      }
      case Op::Relu: {
        const auto& a = in(n, 0);
        for (std::size_t i = 0; i < n.value.data.size(); ++i)
          n.value.data[i] = a.data[i] > 0.0 ? a.data[i] : 0.0;
        return;
      }
      case Op::Abs: {
        const auto& a = in(n, 0);
        for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] = std::fabs(a.data[i]);
        return;
      }
      case Op::Exp: {
        const auto& a = in(n, 0);
        for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] = std::exp(a.data[i]);
        return;
      }
      case Op::Log: {
        const auto& a = in(n, 0);
        for (std::size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] = std::log(a.data[i]);
        return;
      }
      case Op::Softplus: {
        const auto& a = in(n, 0);
        for (std::size_t i = 0; i < n.value.data.size(); ++i)
          n.value.data[i] = stable_softplus(a.data[i]);
        return;
      }
      case Op::Concat: {
        std::size_t pos = 0;
        const Shape& os = n.value.shape;
        const std::int64_t olast = os.rank() == 0 ? 1 : os[os.rank() - 1];
        const std::int64_t rows = n.value.numel() / olast;
        std::int64_t off = 0;
        for (int k = 0; k < static_cast<int>(n.inputs.size()); ++k) {
          const Tensor& part = in(n, k);
          const std::int64_t plast = part.shape.rank() == 0 ? 1 : part.shape[part.shape.rank() - 1];
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < plast; ++j)
              n.value.data[static_cast<std::size_t>(r * olast + off + j)] =
                  part.data[static_cast<std::size_t>(r * plast + j)];
          off += plast;
        }
        (void)pos;
        return;
      }
      case Op::SliceLast: {
        const auto& a = in(n, 0);
        const std::int64_t last = a.shape[a.shape.rank() - 1];
        const std::int64_t rows = a.numel() / last;
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t j = 0; j < n.p1; ++j)
            n.value.data[static_cast<std::size_t>(r * n.p1 + j)] =
                a.data[static_cast<std::size_t>(r * last + n.p0 + j)];
        return;
      }
      case Op::Pick: {
        n.value.data[0] = in(n, 0).data[static_cast<std::size_t>(n.p0)];
        return;
      }
      case Op::Reshape: {
        n.value.data = in(n, 0).data;
        return;
      }
      case Op::SumAll: {
        const auto& a = in(n, 0);
        double s = 0.0;
        for (double v : a.data) s += v;
        n.value.data[0] = s;
        return;
      }
      case Op::MeanAll: {
        const auto& a = in(n, 0);
        double s = 0.0;
        for (double v : a.data) s += v;
        n.value.data[0] = s / static_cast<double>(a.data.size());
        return;
      }
    }
  }

  void propagate(Node& n) {
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::Param:
      case Op::Input:
      case Op::GreaterMask:
        return;
      case Op::Add: {
        for (int k = 0; k < 2; ++k)
          if (in_rg(n, k)) {
            Tensor& d = ingrad(n, k);
            for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] += g.data[i];
          }
        return;
      }
      case Op::Sub: {
        if (in_rg(n, 0)) {
          Tensor& d = ingrad(n, 0);
          for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] += g.data[i];
        }
        if (in_rg(n, 1)) {
          Tensor& d = ingrad(n, 1);
          for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] -= g.data[i];
        }
        return;
      }
      case Op::Mul: {
        const auto &a = in(n, 0), &b = in(n, 1);
        if (in_rg(n, 0)) {
          Tensor& d = ingrad(n, 0);
          for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] += g.data[i] * b.data[i];
        }
        if (in_rg(n, 1)) {
          Tensor& d = ingrad(n, 1);
          for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] += g.data[i] * a.data[i];
        }
        return;
      }
      case Op::Div: {
        const auto &a = in(n, 0), &b = in(n, 1);
        if (in_rg(n, 0)) {
          Tensor& d = ingrad(n, 0);
          for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] += g.data[i] / b.data[i];
        }
        if (in_rg(n, 1)) {
          Tensor& d = ingrad(n, 1);
          for (std::size_t i = 0; i < g.data.size(); ++i)
            d.data[i] -= g.data[i] * a.data[i] / (b.data[i] * b.data[i]);
        }
        return;
      }
      case Op::Maximum: {
        // identity over the larger element; ties go to the first operand
        const auto &a = in(n, 0), &b = in(n, 1);
        if (in_rg(n, 0)) {
          Tensor& d = ingrad(n, 0);
          for (std::size_t i = 0; i < g.data.size(); ++i)
            if (a.data[i] >= b.data[i]) d.data[i] += g.data[i];
        }
        if (in_rg(n, 1)) {
          Tensor& d = ingrad(n, 1);
          for (std::size_t i = 0; i < g.data.size(); ++i)
            if (a.data[i] < b.data[i]) d.data[i] += g.data[i];
        }
        return;
      }
      case Op::Scale: {
        if (in_rg(n, 0)) {
          Tensor& d = ingrad(n, 0);
          for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] += g.data[i] * n.c;
        }
        return;
      }
      case Op::AddConst: {
        if (in_rg(n, 0)) {
          Tensor& d = ingrad(n, 0);
          for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] += g.data[i];
        }
        return;
      }
      case Op::ScaleBy: {
        const auto& a = in(n, 0);
        const double s = in(n, 1).data[0];
        if (in_rg(n, 0)) {
          Tensor& d = ingrad(n, 0);
          for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] += g.data[i] * s;
        }
        if (in_rg(n, 1)) {
          double acc = 0.0;
          for (std::size_t i = 0; i < g.data.size(); ++i) acc += g.data[i] * a.data[i];
          ingrad(n, 1).data[0] += acc;
        }
        return;
      }
      case Op::AddRow: {
        if (in_rg(n, 0)) {
          Tensor& d = ingrad(n, 0);
          for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] += g.data[i];
        }
        if (in_rg(n, 1)) {
          Tensor& d = ingrad(n, 1);
          const std::size_t w = d.data.size();
          for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i % w] += g.data[i];
        }
        return;
      }
      case Op::Matmul: {
        const auto &a = in(n, 0), &b = in(n, 1);
        const std::int64_t m = a.shape[0], k = a.shape[1], p = b.shape[1];
        if (in_rg(n, 0)) {  // dA += g * B^T
          Tensor& d = ingrad(n, 0);
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t t = 0; t < k; ++t) {
              double s = 0.0;
              const double* grow = g.data.data() + i * p;
              const double* brow = b.data.data() + t * p;
              for (std::int64_t j = 0; j < p; ++j) s += grow[j] * brow[j];
              d.data[static_cast<std::size_t>(i * k + t)] += s;
            }
        }
        if (in_rg(n, 1)) {  // dB += A^T * g
          Tensor& d = ingrad(n, 1);
          for (std::int64_t i = 0; i < m; ++i) {
            const double* arow = a.data.data() + i * k;
            const double* grow = g.data.data() + i * p;
            for (std::int64_t t = 0; t < k; ++t) {
              const double av = arow[t];
              if (av == 0.0) continue;
              double* drow = d.data.data() + t * p;
              for (std::int64_t j = 0; j < p; ++j) drow[j] += av * grow[j];
            }
          }
        }
        return;
      }
      case Op::Conv2D: {
        const auto &x = in(n, 0), &w = in(n, 1);
        Tensor* dx = in_rg(n, 0) ? &ingrad(n, 0) : nullptr;
        Tensor* dw = in_rg(n, 1) ? &ingrad(n, 1) : nullptr;
        conv2d_backward(x, w, g, dx, dw, n.p0 == 1);
        return;
      }
      case Op::Sigmoid: {
        if (in_rg(n, 0)) {
          Tensor& d = ingrad(n, 0);
          for (std::size_t i = 0; i < g.data.size(); ++i) {
            const double s = n.value.data[i];
            d.data[i] += g.data[i] * s * (1.0 - s);
          }
        }
        return;
      }
      case Op::Tanh: {
        if (in_rg(n, 0)) {
          Tensor& d = ingrad(n, 0);
          for (std::size_t i = 0; i < g.data.size(); ++i) {
            const double t = n.value.data[i];
            d.data[i] += g.data[i] * (1.0 - t * t);
          }
        }
        return;
      }
      case Op::Relu: {
        if (in_rg(n, 0)) {
          const auto& a = in(n, 0);
          Tensor& d = ingrad(n, 0);
          for (std::size_t i = 0; i < g.data.size(); ++i)
            if (a.data[i] > 0.0) d.data[i] += g.data[i];
        }
        return;
      }
      case Op::Abs: {
        if (in_rg(n, 0)) {
          const auto& a = in(n, 0);
          Tensor& d = ingrad(n, 0);
          for (std::size_t i = 0; i < g.data.size(); ++i) {
            if (a.data[i] > 0.0) d.data[i] += g.data[i];
            else if (a.data[i] < 0.0) d.data[i] -= g.data[i];
          }
        }
        return;
      }
      case Op::Exp: {
        if (in_rg(n, 0)) {
          Tensor& d = ingrad(n, 0);
          for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] += g.data[i] * n.value.data[i];
        }
        return;
      }
      case Op::Log: {
        if (in_rg(n, 0)) {
          const auto& a = in(n, 0);
          Tensor& d = ingrad(n, 0);
          for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] += g.data[i] / a.data[i];
        }
        return;
      }
      case Op::Softplus: {
        if (in_rg(n, 0)) {
          const auto& a = in(n, 0);
          Tensor& d = ingrad(n, 0);
          for (std::size_t i = 0; i < g.data.size(); ++i)
            d.data[i] += g.data[i] / (1.0 + std::exp(-a.data[i]));
        }
        return;
      }
      case Op::Concat: {
        const Shape& os = n.value.shape;
        const std::int64_t olast = os.rank() == 0 ? 1 : os[os.rank() - 1];
        const std::int64_t rows = n.value.numel() / olast;
        std::int64_t off = 0;
        for (int k = 0; k < static_cast<int>(n.inputs.size()); ++k) {
          const Tensor& part = in(n, k);
          const std::int64_t plast = part.shape.rank() == 0 ? 1 : part.shape[part.shape.rank() - 1];
          if (in_rg(n, k)) {
            Tensor& d = ingrad(n, k);
            for (std::int64_t r = 0; r < rows; ++r)
              for (std::int64_t j = 0; j < plast; ++j)
                d.data[static_cast<std::size_t>(r * plast + j)] +=
                    g.data[static_cast<std::size_t>(r * olast + off + j)];
          }
          off += plast;
        }
        return;
      }
      case Op::SliceLast: {
        if (in_rg(n, 0)) {
          const auto& a = in(n, 0);
          const std::int64_t last = a.shape[a.shape.rank() - 1];
          const std::int64_t rows = a.numel() / last;
          Tensor& d = ingrad(n, 0);
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < n.p1; ++j)
              d.data[static_cast<std::size_t>(r * last + n.p0 + j)] +=
                  g.data[static_cast<std::size_t>(r * n.p1 + j)];
        }
        return;
      }
      case Op::Pick: {
        if (in_rg(n, 0)) ingrad(n, 0).data[static_cast<std::size_t>(n.p0)] += g.data[0];
        return;
      }
      case Op::Reshape: {
        if (in_rg(n, 0)) {
          Tensor& d = ingrad(n, 0);
          for (std::size_t i = 0; i < g.data.size(); ++i) d.data[i] += g.data[i];
        }
        return;
      }
      case Op::SumAll: {
        if (in_rg(n, 0)) {
          Tensor& d = ingrad(n, 0);
          const double gv = g.data[0];
          for (auto& v : d.data) v += gv;
        }
        return;
      }
      case Op::MeanAll: {
        if (in_rg(n, 0)) {
          Tensor& d = ingrad(n, 0);
          const double gv = g.data[0] / static_cast<double>(d.data.size());
          for (auto& v : d.data) v += gv;
        }
        return;
      }
    }
  }

  static void conv2d_forward(const Tensor& x, const Tensor& w, Tensor& out, bool periodic) {
    const std::int64_t gw = x.shape[0], gh = x.shape[1], ci = x.shape[2];
    const std::int64_t kh = w.shape[0], kw = w.shape[1], co = w.shape[3];
    const std::int64_t oh = kh / 2, ow = kw / 2;
    out.fill(0.0);
    for (std::int64_t m = 0; m < gw; ++m)
      for (std::int64_t nn = 0; nn < gh; ++nn)
        for (std::int64_t i = 0; i < kh; ++i) {
          std::int64_t mi = m + i - oh;
          if (periodic) mi = ((mi % gw) + gw) % gw;
          else if (mi < 0 || mi >= gw) continue;
          for (std::int64_t j = 0; j < kw; ++j) {
            std::int64_t nj = nn + j - ow;
            if (periodic) nj = ((nj % gh) + gh) % gh;
            else if (nj < 0 || nj >= gh) continue;
            const double* xin = x.data.data() + (mi * gh + nj) * ci;
            const double* wk = w.data.data() + (i * kw + j) * ci * co;
            double* op = out.data.data() + (m * gh + nn) * co;
            for (std::int64_t c = 0; c < ci; ++c) {
              const double xv = xin[c];
              if (xv == 0.0) continue;
              const double* wrow = wk + c * co;
              for (std::int64_t oc = 0; oc < co; ++oc) op[oc] += xv * wrow[oc];
            }
          }
        }
  }

  static void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& g, Tensor* dx,
                              Tensor* dw, bool periodic) {
    const std::int64_t gw = x.shape[0], gh = x.shape[1], ci = x.shape[2];
    const std::int64_t kh = w.shape[0], kw = w.shape[1], co = w.shape[3];
    const std::int64_t oh = kh / 2, ow = kw / 2;
    for (std::int64_t m = 0; m < gw; ++m)
      for (std::int64_t nn = 0; nn < gh; ++nn) {
        const double* gp = g.data.data() + (m * gh + nn) * co;
        for (std::int64_t i = 0; i < kh; ++i) {
          std::int64_t mi = m + i - oh;
          if (periodic) mi = ((mi % gw) + gw) % gw;
          else if (mi < 0 || mi >= gw) continue;
          for (std::int64_t j = 0; j < kw; ++j) {
            std::int64_t nj = nn + j - ow;
            if (periodic) nj = ((nj % gh) + gh) % gh;
            else if (nj < 0 || nj >= gh) continue;
            const double* xin = x.data.data() + (mi * gh + nj) * ci;
            const double* wk = w.data.data() + (i * kw + j) * ci * co;
            for (std::int64_t c = 0; c < ci; ++c) {
              double acc = 0.0;
              const double* wrow = wk + c * co;
              for (std::int64_t oc = 0; oc < co; ++oc) {
                const double gv = gp[oc];
                if (dw) dw->data[static_cast<std::size_t>(((i * kw + j) * ci + c) * co + oc)] += xin[c] * gv;
                acc += wrow[oc] * gv;
              }
              if (dx) dx->data[static_cast<std::size_t>((mi * gh + nj) * ci + c)] += acc;
            }
          }
        }
      }
  }
};

// Build a tape by running a program of primitive ops.
template <class F>
std::unique_ptr<Tape> record(F&& program) {
  auto tape = std::make_unique<Tape>();
  program(*tape);
  return tape;
}

// Max over all parameter coordinates of |analytic - central difference| /
// max(1, |analytic|). The loss must be scalar and `step` positive.
inline double finite_difference_check(Tape& tape, Value loss, const std::vector<Value>& params,
                                      double step) {
  require(step > 0.0, "finite_difference_check: step must be positive");
  require(tape.value(loss).is_scalar(), "finite_difference_check: loss must be scalar");
  tape.backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Value p : params) analytic.push_back(tape.grad(p));

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Value p = params[pi];
    Tensor base = tape.value(p);
    Tensor work = base;
    for (std::int64_t i = 0; i < base.numel(); ++i) {
      work.data[static_cast<std::size_t>(i)] = base[i] + step;
      tape.set_leaf(p, work);
      tape.replay();
      const double fp = tape.scalar(loss);
      work.data[static_cast<std::size_t>(i)] = base[i] - step;
      tape.set_leaf(p, work);
      tape.replay();
      const double fm = tape.scalar(loss);
      work.data[static_cast<std::size_t>(i)] = base[i];
      const double central = (fp - fm) / (2.0 * step);
      const double a = analytic[pi][i];
      const double rel = std::fabs(a - central) / std::max(1.0, std::fabs(a));
      if (rel > max_rel) max_rel = rel;
    }
    tape.set_leaf(p, base);
  }
  tape.replay();
  return max_rel;
}

}  // namespace stuq
