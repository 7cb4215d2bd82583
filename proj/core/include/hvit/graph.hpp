#pragma once

#include <cstddef>
#include <vector>

#include "hvit/tensor.hpp"

namespace hvit {

using NodeId = std::size_t;

/// Handle to a node on a Graph tape.
struct Value {
  NodeId id = 0;
};

/// Reverse-mode autodiff over a topologically ordered tape. Nodes are
/// appended in creation order, so the tape is acyclic by construction and
/// backward() visits each node exactly once, in reverse.
///
/// The op set is deliberately small: matmul, transpose, elementwise
/// add/sub/mul, constant scale, bias-add over the last axis, row softmax,
/// layer norm, tanh-approximation GELU, row/column slicing and
/// concatenation, and total sum. There is no broadcasting beyond the
/// bias-add so every gradient rule stays auditable.
class Graph {
public:
  /// Registers a leaf tensor. Trainable leaves are recorded as parameters
  /// and receive gradients in backward().
  Value leaf(Tensor t, bool trainable = false);

  Value matmul(Value a, Value b);
  Value transpose(Value a);
  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);
  Value scale(Value a, double s);
  /// a: [m, n], bias: [n]; adds bias to every row.
  Value add_row_bias(Value a, Value bias);
  /// Row-wise softmax with max-subtraction; rows sum to 1 within 1e-12.
  Value softmax_rows(Value a);
  /// Normalizes the last axis to zero mean / unit variance, then applies
  /// gain and bias (both [d]). eps must be positive.
  Value layer_norm(Value a, Value gain, Value bias, double eps);
  Value gelu(Value a);
  Value slice_rows(Value a, std::size_t r0, std::size_t r1);
  Value slice_cols(Value a, std::size_t c0, std::size_t c1);
  Value concat_rows(Value a, Value b);
  Value concat_cols(const std::vector<Value>& parts);
  /// Sums all entries into a [1] scalar.
  Value sum(Value a);

  const Tensor& value(Value v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward() loss w.r.t. this node. Only nodes on a
  /// trainable path carry gradients.
  const Tensor& grad(Value v) const;

  /// Exact reverse-mode gradients for every trainable leaf. The loss node
  /// must hold a single value.
  void backward(Value loss);

  /// Compares backward() against central finite differences
  /// (f(x+h) - f(x-h)) / 2h per trainable-parameter coordinate and returns
  /// the max relative error (absolute floor 1 in the denominator). Restores
  /// all values before returning.
  double grad_check(Value loss, double h);

  const std::vector<NodeId>& parameters() const { return params_; }
  std::size_t node_count() const { return nodes_.size(); }

private:
  enum class Op {
    kLeaf,
    kMatMul,
    kTranspose,
    kAdd,
    kSub,
    kMul,
    kScale,
    kAddRowBias,
    kSoftmaxRows,
    kLayerNorm,
    kGelu,
    kSliceRows,
    kSliceCols,
    kConcatRows,
    kConcatCols,
    kSum,
  };

  struct Node {
    Op op = Op::kLeaf;
    std::vector<NodeId> in;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool trainable = false;
    double aux = 0.0;        // scale factor or layer-norm eps
    std::size_t b0 = 0, b1 = 0;  // slice bounds
  };

  NodeId push(Op op, std::vector<NodeId> in);
  void eval(Node& n);
  void recompute();
  void backprop_node(Node& n);
  Tensor& grad_of(NodeId id);

  std::vector<Node> nodes_;
  std::vector<NodeId> params_;
};

}  // namespace hvit
