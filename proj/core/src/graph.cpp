#include "hvit/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hvit {

namespace {

constexpr double kGeluCoeff = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / 3.14159265358979323846);

void require_rank2(const Tensor& t, const char* who) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(who) + " expects a rank-2 tensor, got " + t.shape_str());
  }
}

// c += a * b
void addmul(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* Bp = B + p * n;
      double* Ci = C + i * n;
      for (std::size_t j = 0; j < n; ++j) Ci[j] += av * Bp[j];
    }
  }
}

// c += a * b^T  with a: [m, k], b: [n, k]
void addmul_nt(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      const double* Ai = A + i * k;
      const double* Bj = B + j * k;
      for (std::size_t p = 0; p < k; ++p) s += Ai[p] * Bj[p];
      C[i * n + j] += s;
    }
  }
}

// c += a^T * b  with a: [k, m], b: [k, n]
void addmul_tn(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = c.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* Ap = A + p * m;
    const double* Bp = B + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = Ap[i];
      double* Ci = C + i * n;
      for (std::size_t j = 0; j < n; ++j) Ci[j] += av * Bp[j];
    }
  }
}

double gelu_scalar(double x) {
  const double u = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad_scalar(double x) {
  const double u = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
  const double t = std::tanh(u);
  const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

}  // namespace

NodeId Graph::push(Op op, std::vector<NodeId> in) {
  Node n;
  n.op = op;
  n.in = std::move(in);
  for (NodeId i : n.in) {
    if (i >= nodes_.size()) throw std::logic_error("graph node input out of range");
    n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
  }
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Value Graph::leaf(Tensor t, bool trainable) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(t);
  n.trainable = trainable;
  n.requires_grad = trainable;
  nodes_.push_back(std::move(n));
  const NodeId id = nodes_.size() - 1;
  if (trainable) params_.push_back(id);
  return Value{id};
}

Value Graph::matmul(Value a, Value b) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  require_rank2(ta, "matmul");
  require_rank2(tb, "matmul");
  if (ta.cols() != tb.rows()) {
    throw std::invalid_argument("matmul inner dimensions disagree: " + ta.shape_str() + " x " + tb.shape_str());
  }
  const NodeId id = push(Op::kMatMul, {a.id, b.id});
  eval(nodes_[id]);
  return Value{id};
}

Value Graph::transpose(Value a) {
  require_rank2(nodes_[a.id].value, "transpose");
  const NodeId id = push(Op::kTranspose, {a.id});
  eval(nodes_[id]);
  return Value{id};
}

Value Graph::add(Value a, Value b) {
  if (!nodes_[a.id].value.same_shape(nodes_[b.id].value)) {
    throw std::invalid_argument("add shape mismatch: " + nodes_[a.id].value.shape_str() + " vs " +
                                nodes_[b.id].value.shape_str());
  }
  const NodeId id = push(Op::kAdd, {a.id, b.id});
  eval(nodes_[id]);
  return Value{id};
}

Value Graph::sub(Value a, Value b) {
  if (!nodes_[a.id].value.same_shape(nodes_[b.id].value)) {
    throw std::invalid_argument("sub shape mismatch: " + nodes_[a.id].value.shape_str() + " vs " +
                                nodes_[b.id].value.shape_str());
  }
  const NodeId id = push(Op::kSub, {a.id, b.id});
  eval(nodes_[id]);
  return Value{id};
}

Value Graph::mul(Value a, Value b) {
  if (!nodes_[a.id].value.same_shape(nodes_[b.id].value)) {
    throw std::invalid_argument("mul shape mismatch: " + nodes_[a.id].value.shape_str() + " vs " +
                                nodes_[b.id].value.shape_str());
  }
  const NodeId id = push(Op::kMul, {a.id, b.id});
  eval(nodes_[id]);
  return Value{id};
}

Value Graph::scale(Value a, double s) {
  const NodeId id = push(Op::kScale, {a.id});
  nodes_[id].aux = s;
  eval(nodes_[id]);
  return Value{id};
}

Value Graph::add_row_bias(Value a, Value bias) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[bias.id].value;
  require_rank2(ta, "add_row_bias");
  if (tb.rank() != 1 || tb.size() != ta.cols()) {
    throw std::invalid_argument("add_row_bias needs bias [n] matching " + ta.shape_str() + ", got " +
                                tb.shape_str());
  }
  const NodeId id = push(Op::kAddRowBias, {a.id, bias.id});
  eval(nodes_[id]);
  return Value{id};
}

Value Graph::softmax_rows(Value a) {
  require_rank2(nodes_[a.id].value, "softmax_rows");
  const NodeId id = push(Op::kSoftmaxRows, {a.id});
  eval(nodes_[id]);
  return Value{id};
}

Value Graph::layer_norm(Value a, Value gain, Value bias, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("layer_norm eps must be positive");
  const Tensor& ta = nodes_[a.id].value;
  if (ta.rank() < 1) throw std::invalid_argument("layer_norm needs rank >= 1");
  const std::size_t d = ta.shape().back();
  const Tensor& tg = nodes_[gain.id].value;
  const Tensor& tb = nodes_[bias.id].value;
  if (tg.rank() != 1 || tg.size() != d || tb.rank() != 1 || tb.size() != d) {
    throw std::invalid_argument("layer_norm gain/bias must be [" + std::to_string(d) + "], got " +
                                tg.shape_str() + " and " + tb.shape_str());
  }
  const NodeId id = push(Op::kLayerNorm, {a.id, gain.id, bias.id});
  nodes_[id].aux = eps;
  eval(nodes_[id]);
  return Value{id};
}

Value Graph::gelu(Value a) {
  const NodeId id = push(Op::kGelu, {a.id});
  eval(nodes_[id]);
  return Value{id};
}

Value Graph::slice_rows(Value a, std::size_t r0, std::size_t r1) {
  const Tensor& ta = nodes_[a.id].value;
  require_rank2(ta, "slice_rows");
  if (r0 >= r1 || r1 > ta.rows()) {
    throw std::invalid_argument("slice_rows [" + std::to_string(r0) + ", " + std::to_string(r1) +
                                ") out of range for " + ta.shape_str());
  }
  const NodeId id = push(Op::kSliceRows, {a.id});
  nodes_[id].b0 = r0;
  nodes_[id].b1 = r1;
  eval(nodes_[id]);
  return Value{id};
}

Value Graph::slice_cols(Value a, std::size_t c0, std::size_t c1) {
  const Tensor& ta = nodes_[a.id].value;
  require_rank2(ta, "slice_cols");
  if (c0 >= c1 || c1 > ta.cols()) {
    throw std::invalid_argument("slice_cols [" + std::to_string(c0) + ", " + std::to_string(c1) +
                                ") out of range for " + ta.shape_str());
  }
  const NodeId id = push(Op::kSliceCols, {a.id});
  nodes_[id].b0 = c0;
  nodes_[id].b1 = c1;
  eval(nodes_[id]);
  return Value{id};
}

Value Graph::concat_rows(Value a, Value b) {
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  require_rank2(ta, "concat_rows");
  require_rank2(tb, "concat_rows");
  if (ta.cols() != tb.cols()) {
    throw std::invalid_argument("concat_rows column mismatch: " + ta.shape_str() + " vs " + tb.shape_str());
  }
  const NodeId id = push(Op::kConcatRows, {a.id, b.id});
  eval(nodes_[id]);
  return Value{id};
}

Value Graph::concat_cols(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols needs at least one part");
  std::vector<NodeId> in;
  in.reserve(parts.size());
  const std::size_t m = nodes_[parts[0].id].value.rows();
  for (Value v : parts) {
    const Tensor& t = nodes_[v.id].value;
    require_rank2(t, "concat_cols");
    if (t.rows() != m) {
      throw std::invalid_argument("concat_cols row mismatch: " + t.shape_str() + " vs " +
                                  nodes_[parts[0].id].value.shape_str());
    }
    in.push_back(v.id);
  }
  const NodeId id = push(Op::kConcatCols, std::move(in));
  eval(nodes_[id]);
  return Value{id};
}

Value Graph::sum(Value a) {
  const NodeId id = push(Op::kSum, {a.id});
  eval(nodes_[id]);
  return Value{id};
}

void Graph::eval(Node& n) {
  switch (n.op) {
    case Op::kLeaf:
      return;
    case Op::kMatMul: {
      const Tensor& a = nodes_[n.in[0]].value;
      const Tensor& b = nodes_[n.in[1]].value;
      if (n.value.empty()) n.value = Tensor({a.rows(), b.cols()});
      std::fill(n.value.data().begin(), n.value.data().end(), 0.0);
      addmul(a, b, n.value);
      return;
    }
    case Op::kTranspose: {
      const Tensor& a = nodes_[n.in[0]].value;
      if (n.value.empty()) n.value = Tensor({a.cols(), a.rows()});
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) n.value.at2(j, i) = a.at2(i, j);
      return;
    }
    case Op::kAdd: {
      const Tensor& a = nodes_[n.in[0]].value;
      const Tensor& b = nodes_[n.in[1]].value;
      if (n.value.empty()) n.value = Tensor(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] + b[i];
      return;
    }
    case Op::kSub: {
      const Tensor& a = nodes_[n.in[0]].value;
      const Tensor& b = nodes_[n.in[1]].value;
      if (n.value.empty()) n.value = Tensor(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] - b[i];
      return;
    }
    case Op::kMul: {
      const Tensor& a = nodes_[n.in[0]].value;
      const Tensor& b = nodes_[n.in[1]].value;
      if (n.value.empty()) n.value = Tensor(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] * b[i];
      return;
    }
    case Op::kScale: {
      const Tensor& a = nodes_[n.in[0]].value;
      if (n.value.empty()) n.value = Tensor(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] * n.aux;
      return;
    }
    case Op::kAddRowBias: {
      const Tensor& a = nodes_[n.in[0]].value;
      const Tensor& b = nodes_[n.in[1]].value;
      if (n.value.empty()) n.value = Tensor(a.shape());
      const std::size_t cols = a.cols();
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < cols; ++j) n.value[i * cols + j] = a[i * cols + j] + b[j];
      return;
    }
    case Op::kSoftmaxRows: {
      const Tensor& a = nodes_[n.in[0]].value;
      if (n.value.empty()) n.value = Tensor(a.shape());
      const std::size_t cols = a.cols();
      for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* row = a.data().data() + i * cols;
        double* out = n.value.data().data() + i * cols;
        double mx = row[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
          out[j] = std::exp(row[j] - mx);
          s += out[j];
        }
        for (std::size_t j = 0; j < cols; ++j) out[j] /= s;
      }
      return;
    }
    case Op::kLayerNorm: {
      const Tensor& a = nodes_[n.in[0]].value;
      const Tensor& g = nodes_[n.in[1]].value;
      const Tensor& b = nodes_[n.in[2]].value;
      if (n.value.empty()) n.value = Tensor(a.shape());
      const std::size_t d = a.shape().back();
      const std::size_t rows = a.size() / d;
      for (std::size_t i = 0; i < rows; ++i) {
        const double* row = a.data().data() + i * d;
        double* out = n.value.data().data() + i * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + n.aux);
        for (std::size_t j = 0; j < d; ++j) out[j] = (row[j] - mean) * inv * g[j] + b[j];
      }
      return;
    }
    case Op::kGelu: {
      const Tensor& a = nodes_[n.in[0]].value;
      if (n.value.empty()) n.value = Tensor(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = gelu_scalar(a[i]);
      return;
    }
    case Op::kSliceRows: {
      const Tensor& a = nodes_[n.in[0]].value;
      if (n.value.empty()) n.value = Tensor({n.b1 - n.b0, a.cols()});
      const std::size_t cols = a.cols();
      std::copy(a.data().begin() + n.b0 * cols, a.data().begin() + n.b1 * cols, n.value.data().begin());
      return;
    }
    case Op::kSliceCols: {
      const Tensor& a = nodes_[n.in[0]].value;
      if (n.value.empty()) n.value = Tensor({a.rows(), n.b1 - n.b0});
      const std::size_t w = n.b1 - n.b0;
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < w; ++j) n.value.at2(i, j) = a.at2(i, n.b0 + j);
      return;
    }
    case Op::kConcatRows: {
      const Tensor& a = nodes_[n.in[0]].value;
      const Tensor& b = nodes_[n.in[1]].value;
      if (n.value.empty()) n.value = Tensor({a.rows() + b.rows(), a.cols()});
      std::copy(a.data().begin(), a.data().end(), n.value.data().begin());
      std::copy(b.data().begin(), b.data().end(), n.value.data().begin() + a.size());
      return;
    }
    case Op::kConcatCols: {
      std::size_t total = 0;
      for (NodeId i : n.in) total += nodes_[i].value.cols();
      const std::size_t m = nodes_[n.in[0]].value.rows();
      if (n.value.empty()) n.value = Tensor({m, total});
      std::size_t off = 0;
      for (NodeId id : n.in) {
        const Tensor& p = nodes_[id].value;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < p.cols(); ++j) n.value.at2(i, off + j) = p.at2(i, j);
        off += p.cols();
      }
      return;
    }
    case Op::kSum: {
      const Tensor& a = nodes_[n.in[0]].value;
      if (n.value.empty()) n.value = Tensor({1});
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
      n.value[0] = s;
      return;
    }
  }
}

void Graph::recompute() {
  for (Node& n : nodes_) {
    if (n.op != Op::kLeaf) eval(n);
  }
}

Tensor& Graph::grad_of(NodeId id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

const Tensor& Graph::grad(Value v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) {
    throw std::logic_error("node has no gradient; run backward() over a path that reaches it");
  }
  return n.grad;
}

void Graph::backward(Value loss) {
  Node& top = nodes_[loss.id];
  if (top.value.size() != 1) {
    throw std::invalid_argument("backward needs a scalar loss node, got " + top.value.shape_str());
  }
  for (Node& n : nodes_) {
    if (n.requires_grad && !n.grad.empty()) {
      std::fill(n.grad.data().begin(), n.grad.data().end(), 0.0);
    }
  }
  for (NodeId pid : params_) grad_of(pid);  // params always end up with a gradient
  if (!top.requires_grad) return;           // no trainable leaf feeds the loss
  grad_of(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.op == Op::kLeaf || n.grad.empty()) continue;
    backprop_node(n);
  }
}

void Graph::backprop_node(Node& n) {
  const Tensor& up = n.grad;
  switch (n.op) {
    case Op::kLeaf:
      return;
    case Op::kMatMul: {
      Node& a = nodes_[n.in[0]];
      Node& b = nodes_[n.in[1]];
      if (a.requires_grad) addmul_nt(up, b.value, grad_of(n.in[0]));
      if (b.requires_grad) addmul_tn(a.value, up, grad_of(n.in[1]));
      return;
    }
    case Op::kTranspose: {
      if (!nodes_[n.in[0]].requires_grad) return;
      Tensor& da = grad_of(n.in[0]);
      for (std::size_t i = 0; i < up.rows(); ++i)
        for (std::size_t j = 0; j < up.cols(); ++j) da.at2(j, i) += up.at2(i, j);
      return;
    }
    case Op::kAdd: {
      for (int k = 0; k < 2; ++k) {
        if (!nodes_[n.in[k]].requires_grad) continue;
        Tensor& d = grad_of(n.in[k]);
        for (std::size_t i = 0; i < up.size(); ++i) d[i] += up[i];
      }
      return;
    }
    case Op::kSub: {
      if (nodes_[n.in[0]].requires_grad) {
        Tensor& d = grad_of(n.in[0]);
        for (std::size_t i = 0; i < up.size(); ++i) d[i] += up[i];
      }
      if (nodes_[n.in[1]].requires_grad) {
        Tensor& d = grad_of(n.in[1]);
        for (std::size_t i = 0; i < up.size(); ++i) d[i] -= up[i];
      }
      return;
    }
    case Op::kMul: {
      const Tensor& a = nodes_[n.in[0]].value;
      const Tensor& b = nodes_[n.in[1]].value;
      if (nodes_[n.in[0]].requires_grad) {
        Tensor& d = grad_of(n.in[0]);
        for (std::size_t i = 0; i < up.size(); ++i) d[i] += up[i] * b[i];
      }
      if (nodes_[n.in[1]].requires_grad) {
        Tensor& d = grad_of(n.in[1]);
        for (std::size_t i = 0; i < up.size(); ++i) d[i] += up[i] * a[i];
      }
      return;
    }
    case Op::kScale: {
      if (!nodes_[n.in[0]].requires_grad) return;
      Tensor& d = grad_of(n.in[0]);
      for (std::size_t i = 0; i < up.size(); ++i) d[i] += up[i] * n.aux;
      return;
    }
    case Op::kAddRowBias: {
      const std::size_t cols = up.cols();
      if (nodes_[n.in[0]].requires_grad) {
        Tensor& d = grad_of(n.in[0]);
        for (std::size_t i = 0; i < up.size(); ++i) d[i] += up[i];
      }
      if (nodes_[n.in[1]].requires_grad) {
        Tensor& d = grad_of(n.in[1]);
        for (std::size_t i = 0; i < up.rows(); ++i)
          for (std::size_t j = 0; j < cols; ++j) d[j] += up.at2(i, j);
      }
      return;
    }
    case Op::kSoftmaxRows: {
      if (!nodes_[n.in[0]].requires_grad) return;
      Tensor& d = grad_of(n.in[0]);
      const Tensor& y = n.value;
      const std::size_t cols = y.cols();
      for (std::size_t i = 0; i < y.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += up.at2(i, j) * y.at2(i, j);
        for (std::size_t j = 0; j < cols; ++j) d.at2(i, j) += y.at2(i, j) * (up.at2(i, j) - dot);
      }
      return;
    }
    case Op::kLayerNorm: {
      const Tensor& a = nodes_[n.in[0]].value;
      const Tensor& g = nodes_[n.in[1]].value;
      const std::size_t d = a.shape().back();
      const std::size_t rows = a.size() / d;
      const bool need_a = nodes_[n.in[0]].requires_grad;
      const bool need_g = nodes_[n.in[1]].requires_grad;
      const bool need_b = nodes_[n.in[2]].requires_grad;
      for (std::size_t i = 0; i < rows; ++i) {
        const double* row = a.data().data() + i * d;
        const double* u = up.data().data() + i * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + n.aux);
        if (need_g || need_b) {
          for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (row[j] - mean) * inv;
            if (need_g) grad_of(n.in[1])[j] += u[j] * xhat;
            if (need_b) grad_of(n.in[2])[j] += u[j];
          }
        }
        if (need_a) {
          double sum1 = 0.0, sum2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (row[j] - mean) * inv;
            const double dxhat = u[j] * g[j];
            sum1 += dxhat;
            sum2 += dxhat * xhat;
          }
          Tensor& da = grad_of(n.in[0]);
          double* dst = da.data().data() + i * d;
          const double dn = static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (row[j] - mean) * inv;
            const double dxhat = u[j] * g[j];
            dst[j] += inv * (dxhat - sum1 / dn - xhat * sum2 / dn);
          }
        }
      }
      return;
    }
    case Op::kGelu: {
      if (!nodes_[n.in[0]].requires_grad) return;
      const Tensor& a = nodes_[n.in[0]].value;
      Tensor& d = grad_of(n.in[0]);
      for (std::size_t i = 0; i < up.size(); ++i) d[i] += up[i] * gelu_grad_scalar(a[i]);
      return;
    }
    case Op::kSliceRows: {
      if (!nodes_[n.in[0]].requires_grad) return;
      Tensor& d = grad_of(n.in[0]);
      const std::size_t cols = d.cols();
      for (std::size_t i = 0; i < up.rows(); ++i)
        for (std::size_t j = 0; j < cols; ++j) d.at2(n.b0 + i, j) += up.at2(i, j);
      return;
    }
    case Op::kSliceCols: {
      if (!nodes_[n.in[0]].requires_grad) return;
      Tensor& d = grad_of(n.in[0]);
      for (std::size_t i = 0; i < up.rows(); ++i)
        for (std::size_t j = 0; j < up.cols(); ++j) d.at2(i, n.b0 + j) += up.at2(i, j);
      return;
    }
    case Op::kConcatRows: {
      const std::size_t top_rows = nodes_[n.in[0]].value.rows();
      const std::size_t cols = up.cols();
      if (nodes_[n.in[0]].requires_grad) {
        Tensor& d = grad_of(n.in[0]);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += up[i];
      }
      if (nodes_[n.in[1]].requires_grad) {
        Tensor& d = grad_of(n.in[1]);
        const std::size_t off = top_rows * cols;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += up[off + i];
      }
      return;
    }
    case Op::kConcatCols: {
      std::size_t off = 0;
      for (NodeId id : n.in) {
        const std::size_t w = nodes_[id].value.cols();
        if (nodes_[id].requires_grad) {
          Tensor& d = grad_of(id);
          for (std::size_t i = 0; i < d.rows(); ++i)
            for (std::size_t j = 0; j < w; ++j) d.at2(i, j) += up.at2(i, off + j);
        }
        off += w;
      }
      return;
    }
    case Op::kSum: {
      if (!nodes_[n.in[0]].requires_grad) return;
      Tensor& d = grad_of(n.in[0]);
      const double u = up[0];
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += u;
      return;
    }
  }
}

double Graph::grad_check(Value loss, double h) {
  if (h <= 0.0) throw std::invalid_argument("grad_check step must be positive");
  if (nodes_[loss.id].value.size() != 1) {
    throw std::invalid_argument("grad_check needs a scalar loss node");
  }
  backward(loss);
  double max_err = 0.0;
  for (NodeId pid : params_) {
    Tensor& p = nodes_[pid].value;
    const Tensor& g = nodes_[pid].grad;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p[i];
      p[i] = keep + h;
      recompute();
      const double fp = nodes_[loss.id].value[0];
      p[i] = keep - h;
      recompute();
      const double fm = nodes_[loss.id].value[0];
      p[i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = g.empty() ? 0.0 : g[i];
      const double denom = std::max({1.0, std::abs(fd), std::abs(ad)});
      max_err = std::max(max_err, std::abs(ad - fd) / denom);
    }
  }
  recompute();
  return max_err;
}

}  // namespace hvit
