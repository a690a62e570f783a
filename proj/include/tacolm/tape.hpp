#pragma once
// Define-by-run reverse-mode tape. Each builder call runs the forward kernel
// immediately, records the op kind plus input ids, and validates the result
// (shape + finiteness, failing fast with the op name). backward() walks the
// node list once in reverse. Single-threaded by design; one tape per graph.

#include <algorithm>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "tacolm/array.hpp"
#include "tacolm/kernels.hpp"
#include "tacolm/mask.hpp"
#include "tacolm/rng.hpp"

namespace tacolm {

enum class OpKind : unsigned char {
  Leaf,
  Add,
  Sub,
  Mul,
  Neg,
  Scale,
  Sigmoid,
  Silu,
  Tanh,
  MatMul,
  Transpose,
  Softmax,
  AttnProbs,
  DampedEma,
  Rope,
  LayerNorm,
  GatherRows,
  SliceRows,
  SliceCols,
  ConcatRows,
  ConcatCols,
  Dropout,
  CrossEntropy,
  Sum,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Neg: return "neg";
    case OpKind::Scale: return "scale";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Silu: return "silu";
    case OpKind::Tanh: return "tanh";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Softmax: return "softmax";
    case OpKind::AttnProbs: return "attn_probs";
    case OpKind::DampedEma: return "damped_ema";
    case OpKind::Rope: return "rope";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::SliceRows: return "slice_rows";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::ConcatRows: return "concat_rows";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::Dropout: return "dropout";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::Sum: return "sum";
  }
  return "?";
}

using NodeId = int;

template <typename Real>
class Tape {
 public:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<NodeId> inputs;
    DenseArray<Real> value;
    DenseArray<Real> adjoint;
    DenseArray<Real> aux;             // op-specific stash (EMA states, CE probs, LN stats)
    std::vector<int> ints;            // ids / positions / targets / slice bounds
    std::vector<unsigned char> bytes; // dropout keep-mask or CE row mask
    Real r0 = 0, r1 = 0;              // scalar attributes
    std::shared_ptr<const PrefixMask> mask;
    long long i0 = 0, i1 = 0;         // integer attributes (offsets, widths)
    bool needs_grad = false;
  };

  // When set, backward() releases each interior node's value and adjoint as
  // soon as they are consumed, so peak memory stays near the forward peak.
  // Leaf values and leaf adjoints always survive.
  bool free_on_backward = false;

  long long size() const { return static_cast<long long>(nodes_.size()); }
  const Node& node(NodeId id) const { return nodes_[check(id)]; }
  const DenseArray<Real>& val(NodeId id) const { return nodes_[check(id)].value; }
  const DenseArray<Real>& grad(NodeId id) const {
    const Node& n = nodes_[check(id)];
    if (n.adjoint.empty()) throw std::runtime_error("no adjoint on node (backward not run or no grad path)");
    return n.adjoint;
  }
  bool has_grad(NodeId id) const { return !nodes_[check(id)].adjoint.empty(); }

  // ------------------------------------------------------------- builders

  NodeId leaf(DenseArray<Real> v, bool requires_grad) {
    Node n;
    n.kind = OpKind::Leaf;
    n.value = std::move(v);
    n.needs_grad = requires_grad;
    return push(std::move(n), "leaf");
  }
  NodeId constant(DenseArray<Real> v) { return leaf(std::move(v), false); }

  NodeId add(NodeId a, NodeId b) { return binary(OpKind::Add, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary(OpKind::Sub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return binary(OpKind::Mul, a, b); }

  NodeId neg(NodeId a) {
    Node n = unary(OpKind::Neg, a);
    kernels::map(nodes_[a].value, n.value, [](Real x) { return -x; });
    return push(std::move(n), "neg");
  }
  NodeId scale(NodeId a, Real c) {
    Node n = unary(OpKind::Scale, a);
    n.r0 = c;
    kernels::map(nodes_[a].value, n.value, [c](Real x) { return c * x; });
    return push(std::move(n), "scale");
  }
  NodeId sigmoid(NodeId a) {
    Node n = unary(OpKind::Sigmoid, a);
    kernels::map(nodes_[a].value, n.value, [](Real x) { return kernels::sigmoid(x); });
    return push(std::move(n), "sigmoid");
  }
  NodeId silu(NodeId a) {
    Node n = unary(OpKind::Silu, a);
    kernels::map(nodes_[a].value, n.value, [](Real x) { return kernels::silu(x); });
    return push(std::move(n), "silu");
  }
  NodeId tanh_op(NodeId a) {
    Node n = unary(OpKind::Tanh, a);
    kernels::map(nodes_[a].value, n.value, [](Real x) { return std::tanh(x); });
    return push(std::move(n), "tanh");
  }

  NodeId matmul(NodeId a, NodeId b) {
    Node n;
    n.kind = OpKind::MatMul;
    n.inputs = {a, b};
    n.value = kernels::matmul(nodes_[check(a)].value, nodes_[check(b)].value);
    return push(std::move(n), "matmul");
  }

  NodeId transpose_op(NodeId a) {
    Node n = unary(OpKind::Transpose, a);
    n.value = kernels::transpose(nodes_[a].value);
    return push(std::move(n), "transpose");
  }

  NodeId softmax(NodeId a) {
    Node n = unary(OpKind::Softmax, a);
    const DenseArray<Real>& x = nodes_[a].value;
    if (x.rank() < 1) throw std::runtime_error("softmax: rank >= 1 required");
    n.value = x;
    long long cols = x.shape.back();
    long long rows = x.numel() / cols;
    for (long long r = 0; r < rows; ++r) kernels::softmax_row(n.value.data.data() + r * cols, cols);
    return push(std::move(n), "softmax");
  }

  // probs = row_softmax(Q K^T * scale + mask_bias). Masked-out entries get a
  // -1e9 additive offset whose exp underflows to exactly zero. row_off /
  // col_off place the Q rows / K rows inside the mask's coordinate frame
  // (used by chunked attention); a null mask means everything is visible.
  NodeId attn_probs(NodeId q, NodeId k, Real scl, std::shared_ptr<const PrefixMask> mask,
                    long long row_off = 0, long long col_off = 0) {
    Node n;
    n.kind = OpKind::AttnProbs;
    n.inputs = {check(q), check(k)};
    n.r0 = scl;
    n.mask = std::move(mask);
    n.i0 = row_off;
    n.i1 = col_off;
    n.value = kernels::attn_probs_rows(nodes_[q].value, nodes_[k].value, scl, n.mask.get(), row_off, col_off);
    return push(std::move(n), "attn_probs");
  }

  // x:[T,d]  beta,alpha,delta,eta:[d,h]  omega:[d]; aux keeps the H trajectory
  NodeId damped_ema(NodeId x, NodeId beta, NodeId alpha, NodeId delta, NodeId eta, NodeId omega) {
    Node n;
    n.kind = OpKind::DampedEma;
    n.inputs = {check(x), check(beta), check(alpha), check(delta), check(eta), check(omega)};
    n.value = kernels::ema_scan(nodes_[x].value, nodes_[beta].value, nodes_[alpha].value, nodes_[delta].value,
                                nodes_[eta].value, nodes_[omega].value, &n.aux);
    return push(std::move(n), "damped_ema");
  }

  NodeId rope(NodeId x, const std::vector<int>& positions, Real base) {
    const DenseArray<Real>& X = nodes_[check(x)].value;
    if (static_cast<long long>(positions.size()) != X.shape[0])
      throw std::runtime_error("rope: positions size != rows");
    Node n = unary(OpKind::Rope, x);
    n.ints = positions;
    n.r0 = base;
    n.value = kernels::rope_rows(X, positions.data(), static_cast<double>(base), false);
    return push(std::move(n), "rope");
  }

  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, Real eps) {
    Node n;
    n.kind = OpKind::LayerNorm;
    n.inputs = {check(x), check(gain), check(bias)};
    n.r0 = eps;
    n.value = kernels::layer_norm_rows(nodes_[x].value, nodes_[gain].value, nodes_[bias].value, eps, &n.aux);
    return push(std::move(n), "layer_norm");
  }

  NodeId gather_rows(NodeId table, const std::vector<int>& ids) {
    const DenseArray<Real>& Tb = nodes_[check(table)].value;
    if (Tb.rank() != 2) throw std::runtime_error("gather_rows: rank-2 table required");
    Node n = unary(OpKind::GatherRows, table);
    n.ints = ids;
    n.value = DenseArray<Real>(Shape{static_cast<long long>(ids.size()), Tb.shape[1]});
    for (std::size_t r = 0; r < ids.size(); ++r) {
      int id = ids[r];
      if (id < 0 || id >= Tb.shape[0])
        throw std::runtime_error("gather_rows: id " + std::to_string(id) + " outside table of " +
                                 std::to_string(Tb.shape[0]) + " rows");
      std::memcpy(n.value.row_ptr(static_cast<long long>(r)), Tb.row_ptr(id),
                  static_cast<std::size_t>(Tb.shape[1]) * sizeof(Real));
    }
    return push(std::move(n), "gather_rows");
  }

  NodeId slice_rows(NodeId x, long long r0, long long r1) {
    const DenseArray<Real>& X = nodes_[check(x)].value;
    if (X.rank() != 2 || r0 < 0 || r1 > X.shape[0] || r0 >= r1)
      throw std::runtime_error("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) + ") of " +
                               shape_str(X.shape));
    Node n = unary(OpKind::SliceRows, x);
    n.i0 = r0;
    n.i1 = r1;
    n.value = DenseArray<Real>(Shape{r1 - r0, X.shape[1]});
    std::memcpy(n.value.data.data(), X.row_ptr(r0), static_cast<std::size_t>((r1 - r0) * X.shape[1]) * sizeof(Real));
    return push(std::move(n), "slice_rows");
  }

  NodeId slice_cols(NodeId x, long long c0, long long c1) {
    const DenseArray<Real>& X = nodes_[check(x)].value;
    if (X.rank() != 2 || c0 < 0 || c1 > X.shape[1] || c0 >= c1) throw std::runtime_error("slice_cols: bad range");
    Node n = unary(OpKind::SliceCols, x);
    n.i0 = c0;
    n.i1 = c1;
    n.value = DenseArray<Real>(Shape{X.shape[0], c1 - c0});
    for (long long r = 0; r < X.shape[0]; ++r)
      std::memcpy(n.value.row_ptr(r), X.row_ptr(r) + c0, static_cast<std::size_t>(c1 - c0) * sizeof(Real));
    return push(std::move(n), "slice_cols");
  }

  NodeId concat_rows(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw std::runtime_error("concat_rows: no inputs");
    long long rows = 0, cols = nodes_[check(xs[0])].value.shape[1];
    for (NodeId x : xs) {
      const DenseArray<Real>& X = nodes_[check(x)].value;
      if (X.rank() != 2 || X.shape[1] != cols) throw std::runtime_error("concat_rows: width mismatch");
      rows += X.shape[0];
    }
    Node n;
    n.kind = OpKind::ConcatRows;
    n.inputs = xs;
    n.value = DenseArray<Real>(Shape{rows, cols});
    long long r = 0;
    for (NodeId x : xs) {
      const DenseArray<Real>& X = nodes_[x].value;
      std::memcpy(n.value.row_ptr(r), X.data.data(), X.data.size() * sizeof(Real));
      r += X.shape[0];
    }
    return push(std::move(n), "concat_rows");
  }

  NodeId concat_cols(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw std::runtime_error("concat_cols: no inputs");
    long long rows = nodes_[check(xs[0])].value.shape[0], cols = 0;
    for (NodeId x : xs) {
      const DenseArray<Real>& X = nodes_[check(x)].value;
      if (X.rank() != 2 || X.shape[0] != rows) throw std::runtime_error("concat_cols: height mismatch");
      cols += X.shape[1];
    }
    Node n;
    n.kind = OpKind::ConcatCols;
    n.inputs = xs;
    n.value = DenseArray<Real>(Shape{rows, cols});
    long long c = 0;
    for (NodeId x : xs) {
      const DenseArray<Real>& X = nodes_[x].value;
      for (long long r = 0; r < rows; ++r)
        std::memcpy(n.value.row_ptr(r) + c, X.row_ptr(r), static_cast<std::size_t>(X.shape[1]) * sizeof(Real));
      c += X.shape[1];
    }
    return push(std::move(n), "concat_cols");
  }

  // Inverted dropout. rate == 0 is the identity and records nothing.
  NodeId dropout(NodeId x, Real rate, Rng& rng) {
    if (rate == Real(0)) return x;
    if (!(rate > Real(0) && rate < Real(1))) throw std::runtime_error("dropout: rate must be in [0,1)");
    Node n = unary(OpKind::Dropout, x);
    n.r0 = rate;
    const DenseArray<Real>& X = nodes_[x].value;
    n.bytes.resize(X.data.size());
    n.value = DenseArray<Real>(X.shape);
    Real inv = Real(1) / (Real(1) - rate);
    for (std::size_t i = 0; i < X.data.size(); ++i) {
      bool keep = rng.u01() >= static_cast<double>(rate);
      n.bytes[i] = keep ? 1 : 0;
      n.value.data[i] = keep ? X.data[i] * inv : Real(0);
    }
    return push(std::move(n), "dropout");
  }

  // Mean NLL over rows whose mask byte is non-zero; scalar output.
  NodeId cross_entropy(NodeId logits, const std::vector<int>& targets, const std::vector<unsigned char>& row_mask) {
    const DenseArray<Real>& L = nodes_[check(logits)].value;
    if (L.rank() != 2) throw std::runtime_error("cross_entropy: rank-2 logits required");
    if (static_cast<long long>(targets.size()) != L.shape[0] ||
        (!row_mask.empty() && row_mask.size() != targets.size()))
      throw std::runtime_error("cross_entropy: targets/mask size mismatch");
    Node n = unary(OpKind::CrossEntropy, logits);
    n.ints = targets;
    n.bytes = row_mask;
    long long counted = 0;
    double mean = kernels::cross_entropy_rows(L, targets.data(), row_mask.empty() ? nullptr : row_mask.data(),
                                              L.shape[0], &n.aux, &counted);
    n.i0 = counted;
    n.value = DenseArray<Real>::scalar(static_cast<Real>(mean));
    return push(std::move(n), "cross_entropy");
  }

  NodeId sum(NodeId x) {
    Node n = unary(OpKind::Sum, x);
    n.value = DenseArray<Real>::scalar(static_cast<Real>(kernels::sum_all(nodes_[x].value)));
    return push(std::move(n), "sum");
  }

  // ------------------------------------------------------------- backward

  void backward(NodeId root) {
    if (backward_done_)
      throw std::runtime_error("backward already run on this tape; build a fresh graph or reset_grads() first");
    Node& r = nodes_[check(root)];
    if (r.value.numel() != 1) throw std::runtime_error("backward: root must be scalar");
    if (!r.needs_grad) throw std::runtime_error("backward: root does not depend on any differentiable leaf");
    r.adjoint = DenseArray<Real>(r.value.shape, Real(1));
    for (NodeId id = root; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.adjoint.empty() || n.kind == OpKind::Leaf) continue;
      dispatch_backward(n);
      if (free_on_backward) {
        n.value.release();
        n.adjoint.release();
        n.aux.release();
      }
    }
    backward_done_ = true;
  }

  void reset_grads() {
    if (free_on_backward && backward_done_)
      throw std::runtime_error("reset_grads: interior values were freed; build a fresh graph");
    for (Node& n : nodes_) n.adjoint.release();
    backward_done_ = false;
  }

 private:
  std::vector<Node> nodes_;
  bool backward_done_ = false;

  NodeId check(NodeId id) const {
    if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) throw std::runtime_error("bad node id");
    return id;
  }

  Node unary(OpKind k, NodeId a) {
    Node n;
    n.kind = k;
    n.inputs = {check(a)};
    return n;
  }

  NodeId binary(OpKind k, NodeId a, NodeId b) {
    Node n;
    n.kind = k;
    n.inputs = {check(a), check(b)};
    const DenseArray<Real>& A = nodes_[a].value;
    const DenseArray<Real>& B = nodes_[b].value;
    switch (k) {
      case OpKind::Add:
        kernels::broadcast_binary(A, B, n.value, [](Real x, Real y) { return x + y; }, "add");
        break;
      case OpKind::Sub:
        kernels::broadcast_binary(A, B, n.value, [](Real x, Real y) { return x - y; }, "sub");
        break;
      case OpKind::Mul:
        kernels::broadcast_binary(A, B, n.value, [](Real x, Real y) { return x * y; }, "mul");
        break;
      default:
        throw std::runtime_error("binary: bad kind");
    }
    return push(std::move(n), op_name(k));
  }

  NodeId push(Node&& n, const char* who) {
    require_finite(n.value, who);
    for (NodeId i : n.inputs) n.needs_grad = n.needs_grad || nodes_[i].needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  void accum(NodeId id, const DenseArray<Real>& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.adjoint.empty()) n.adjoint = DenseArray<Real>(n.value.shape);
    if (n.adjoint.shape != g.shape) throw std::runtime_error("adjoint shape mismatch");
    for (std::size_t i = 0; i < g.data.size(); ++i) n.adjoint.data[i] += g.data[i];
  }

  // reduce g (shaped like the broadcast output) back onto target's shape
  void accum_reduced(NodeId id, const DenseArray<Real>& g, Real sign) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    const Shape& ts = n.value.shape;
    if (n.adjoint.empty()) n.adjoint = DenseArray<Real>(ts);
    if (ts == g.shape) {
      for (std::size_t i = 0; i < g.data.size(); ++i) n.adjoint.data[i] += sign * g.data[i];
      return;
    }
    int ra = g.rank();
    Shape tp(static_cast<std::size_t>(ra), 1);
    for (int i = 0; i < static_cast<int>(ts.size()); ++i)
      tp[static_cast<std::size_t>(ra - static_cast<int>(ts.size()) + i)] = ts[static_cast<std::size_t>(i)];
    std::vector<long long> tstride(static_cast<std::size_t>(ra), 0);
    long long acc = 1;
    for (int i = ra - 1; i >= 0; --i) {
      if (tp[static_cast<std::size_t>(i)] != 1) {
        tstride[static_cast<std::size_t>(i)] = acc;
        acc *= tp[static_cast<std::size_t>(i)];
      }
    }
    std::vector<long long> ix(static_cast<std::size_t>(ra), 0);
    long long toff = 0;
    for (std::size_t lin = 0; lin < g.data.size(); ++lin) {
      n.adjoint.data[static_cast<std::size_t>(toff)] += sign * g.data[lin];
      for (int d = ra - 1; d >= 0; --d) {
        auto ud = static_cast<std::size_t>(d);
        ++ix[ud];
        toff += tstride[ud];
        if (ix[ud] < g.shape[ud]) break;
        toff -= tstride[ud] * ix[ud];
        ix[ud] = 0;
      }
    }
  }

  void dispatch_backward(Node& n) {
    const DenseArray<Real>& g = n.adjoint;
    switch (n.kind) {
      case OpKind::Leaf:
        break;
      case OpKind::Add:
        accum_reduced(n.inputs[0], g, Real(1));
        accum_reduced(n.inputs[1], g, Real(1));
        break;
      case OpKind::Sub:
        accum_reduced(n.inputs[0], g, Real(1));
        accum_reduced(n.inputs[1], g, Real(-1));
        break;
      case OpKind::Mul: {
        const DenseArray<Real>& A = nodes_[n.inputs[0]].value;
        const DenseArray<Real>& B = nodes_[n.inputs[1]].value;
        if (nodes_[n.inputs[0]].needs_grad) {
          DenseArray<Real> da;
          kernels::broadcast_binary(g, B, da, [](Real x, Real y) { return x * y; }, "mul.bwd");
          accum_reduced(n.inputs[0], da, Real(1));
        }
        if (nodes_[n.inputs[1]].needs_grad) {
          DenseArray<Real> db;
          kernels::broadcast_binary(g, A, db, [](Real x, Real y) { return x * y; }, "mul.bwd");
          accum_reduced(n.inputs[1], db, Real(1));
        }
        break;
      }
      case OpKind::Neg: {
        DenseArray<Real> da;
        kernels::map(g, da, [](Real x) { return -x; });
        accum(n.inputs[0], da);
        break;
      }
      case OpKind::Scale: {
        DenseArray<Real> da;
        Real c = n.r0;
        kernels::map(g, da, [c](Real x) { return c * x; });
        accum(n.inputs[0], da);
        break;
      }
      case OpKind::Sigmoid: {
        DenseArray<Real> da(g.shape);
        for (std::size_t i = 0; i < g.data.size(); ++i)
          da.data[i] = g.data[i] * kernels::dsigmoid_from_y(n.value.data[i]);
        accum(n.inputs[0], da);
        break;
      }
      case OpKind::Silu: {
        const DenseArray<Real>& X = nodes_[n.inputs[0]].value;
        DenseArray<Real> da(g.shape);
        for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] = g.data[i] * kernels::dsilu(X.data[i]);
        accum(n.inputs[0], da);
        break;
      }
      case OpKind::Tanh: {
        DenseArray<Real> da(g.shape);
        for (std::size_t i = 0; i < g.data.size(); ++i)
          da.data[i] = g.data[i] * kernels::dtanh_from_y(n.value.data[i]);
        accum(n.inputs[0], da);
        break;
      }
      case OpKind::MatMul: {
        const DenseArray<Real>& A = nodes_[n.inputs[0]].value;
        const DenseArray<Real>& B = nodes_[n.inputs[1]].value;
        if (nodes_[n.inputs[0]].needs_grad) accum(n.inputs[0], kernels::matmul_nt(g, B));
        if (nodes_[n.inputs[1]].needs_grad) accum(n.inputs[1], kernels::matmul_tn(A, g));
        break;
      }
      case OpKind::Transpose:
        accum(n.inputs[0], kernels::transpose(g));
        break;
      case OpKind::Softmax: {
        DenseArray<Real> da(g.shape);
        long long cols = g.shape.back();
        long long rows = g.numel() / cols;
        for (long long r = 0; r < rows; ++r) {
          const Real* y = n.value.data.data() + r * cols;
          const Real* gr = g.data.data() + r * cols;
          double dot = 0.0;
          for (long long j = 0; j < cols; ++j) dot += static_cast<double>(gr[j]) * static_cast<double>(y[j]);
          Real* dr = da.data.data() + r * cols;
          for (long long j = 0; j < cols; ++j) dr[j] = y[j] * (gr[j] - static_cast<Real>(dot));
        }
        accum(n.inputs[0], da);
        break;
      }
      case OpKind::AttnProbs: {
        const DenseArray<Real>& Q = nodes_[n.inputs[0]].value;
        const DenseArray<Real>& K = nodes_[n.inputs[1]].value;
        long long tq = n.value.shape[0], tk = n.value.shape[1];
        DenseArray<Real> ds(Shape{tq, tk});
        for (long long r = 0; r < tq; ++r) {
          const Real* y = n.value.row_ptr(r);
          const Real* gr = g.row_ptr(r);
          double dot = 0.0;
          for (long long j = 0; j < tk; ++j) dot += static_cast<double>(gr[j]) * static_cast<double>(y[j]);
          Real* dr = ds.row_ptr(r);
          for (long long j = 0; j < tk; ++j) dr[j] = n.r0 * y[j] * (gr[j] - static_cast<Real>(dot));
        }
        if (nodes_[n.inputs[0]].needs_grad) accum(n.inputs[0], kernels::matmul(ds, K));
        if (nodes_[n.inputs[1]].needs_grad) accum(n.inputs[1], kernels::matmul_tn(ds, Q));
        break;
      }
      case OpKind::DampedEma:
        ema_backward(n);
        break;
      case OpKind::Rope:
        accum(n.inputs[0], kernels::rope_rows(g, n.ints.data(), static_cast<double>(n.r0), true));
        break;
      case OpKind::LayerNorm:
        layer_norm_backward(n);
        break;
      case OpKind::GatherRows: {
        Node& tb = nodes_[n.inputs[0]];
        if (!tb.needs_grad) break;
        if (tb.adjoint.empty()) tb.adjoint = DenseArray<Real>(tb.value.shape);
        long long w = tb.value.shape[1];
        for (std::size_t r = 0; r < n.ints.size(); ++r) {
          Real* dst = tb.adjoint.row_ptr(n.ints[r]);
          const Real* src = g.row_ptr(static_cast<long long>(r));
          for (long long j = 0; j < w; ++j) dst[j] += src[j];
        }
        break;
      }
      case OpKind::SliceRows: {
        Node& x = nodes_[n.inputs[0]];
        if (!x.needs_grad) break;
        if (x.adjoint.empty()) x.adjoint = DenseArray<Real>(x.value.shape);
        long long w = x.value.shape[1];
        for (long long r = n.i0; r < n.i1; ++r) {
          Real* dst = x.adjoint.row_ptr(r);
          const Real* src = g.row_ptr(r - n.i0);
          for (long long j = 0; j < w; ++j) dst[j] += src[j];
        }
        break;
      }
      case OpKind::SliceCols: {
        Node& x = nodes_[n.inputs[0]];
        if (!x.needs_grad) break;
        if (x.adjoint.empty()) x.adjoint = DenseArray<Real>(x.value.shape);
        for (long long r = 0; r < g.shape[0]; ++r) {
          Real* dst = x.adjoint.row_ptr(r) + n.i0;
          const Real* src = g.row_ptr(r);
          for (long long j = 0; j < g.shape[1]; ++j) dst[j] += src[j];
        }
        break;
      }
      case OpKind::ConcatRows: {
        long long r = 0;
        for (NodeId xi : n.inputs) {
          Node& x = nodes_[xi];
          long long nr = x.value.shape[0];
          if (x.needs_grad) {
            if (x.adjoint.empty()) x.adjoint = DenseArray<Real>(x.value.shape);
            for (std::size_t i = 0; i < x.adjoint.data.size(); ++i)
              x.adjoint.data[i] += g.data[static_cast<std::size_t>(r * g.shape[1]) + i];
          }
          r += nr;
        }
        break;
      }
      case OpKind::ConcatCols: {
        long long c = 0;
        for (NodeId xi : n.inputs) {
          Node& x = nodes_[xi];
          long long w = x.value.shape[1];
          if (x.needs_grad) {
            if (x.adjoint.empty()) x.adjoint = DenseArray<Real>(x.value.shape);
            for (long long r = 0; r < g.shape[0]; ++r) {
              Real* dst = x.adjoint.row_ptr(r);
              const Real* src = g.row_ptr(r) + c;
              for (long long j = 0; j < w; ++j) dst[j] += src[j];
            }
          }
          c += w;
        }
        break;
      }
      case OpKind::Dropout: {
        DenseArray<Real> da(g.shape);
        Real inv = Real(1) / (Real(1) - n.r0);
        for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] = n.bytes[i] ? g.data[i] * inv : Real(0);
        accum(n.inputs[0], da);
        break;
      }
      case OpKind::CrossEntropy: {
        Node& x = nodes_[n.inputs[0]];
        if (!x.needs_grad) break;
        Real gs = g.data[0] / static_cast<Real>(n.i0);
        DenseArray<Real> da(x.value.shape);
        long long v = x.value.shape[1];
        for (long long r = 0; r < x.value.shape[0]; ++r) {
          if (!n.bytes.empty() && !n.bytes[static_cast<std::size_t>(r)]) continue;
          const Real* p = n.aux.row_ptr(r);
          Real* dr = da.row_ptr(r);
          for (long long j = 0; j < v; ++j) dr[j] = gs * p[j];
          dr[n.ints[static_cast<std::size_t>(r)]] -= gs;
        }
        accum(n.inputs[0], da);
        break;
      }
      case OpKind::Sum: {
        DenseArray<Real> da(nodes_[n.inputs[0]].value.shape, g.data[0]);
        accum(n.inputs[0], da);
        break;
      }
    }
  }

  void ema_backward(Node& n) {
    const DenseArray<Real>& X = nodes_[n.inputs[0]].value;
    const DenseArray<Real>& B = nodes_[n.inputs[1]].value;
    const DenseArray<Real>& AL = nodes_[n.inputs[2]].value;
    const DenseArray<Real>& DL = nodes_[n.inputs[3]].value;
    const DenseArray<Real>& E = nodes_[n.inputs[4]].value;
    const DenseArray<Real>& W = nodes_[n.inputs[5]].value;
    const DenseArray<Real>& g = n.adjoint;
    long long T = X.shape[0], d = X.shape[1], h = B.shape[1];

    DenseArray<Real> A, D;
    kernels::map(AL, A, [](Real v) { return kernels::sigmoid(v); });
    kernels::map(DL, D, [](Real v) { return kernels::sigmoid(v); });

    DenseArray<Real> dX(X.shape), dB(B.shape), dAl(B.shape), dDl(B.shape), dE(B.shape), dW(W.shape);
    std::vector<Real> gH(static_cast<std::size_t>(d * h), Real(0));
    for (long long t = T - 1; t >= 0; --t) {
      const Real* hrow = n.aux.row_ptr(t);
      const Real* hprev = t > 0 ? n.aux.row_ptr(t - 1) : nullptr;
      for (long long j = 0; j < d; ++j) {
        Real xt = X.at(t, j);
        Real gy = g.at(t, j);
        Real dx = gy * W.data[static_cast<std::size_t>(j)];
        dW.data[static_cast<std::size_t>(j)] += gy * xt;
        for (long long c = 0; c < h; ++c) {
          std::size_t jc = static_cast<std::size_t>(j * h + c);
          Real a = A.data[jc], dd = D.data[jc], b = B.data[jc];
          Real hp = hprev ? hprev[j * h + c] : Real(0);
          Real gh = gH[jc] + gy * E.data[jc];
          dE.data[jc] += gy * hrow[j * h + c];
          dB.data[jc] += gh * a * xt;
          Real dA = gh * (b * xt - dd * hp);
          Real dD = gh * (-a * hp);
          dAl.data[jc] += dA * kernels::dsigmoid_from_y(a);
          dDl.data[jc] += dD * kernels::dsigmoid_from_y(dd);
          dx += gh * a * b;
          gH[jc] = gh * (Real(1) - a * dd);
        }
        dX.at(t, j) = dx;
      }
    }
    accum(n.inputs[0], dX);
    accum(n.inputs[1], dB);
    accum(n.inputs[2], dAl);
    accum(n.inputs[3], dDl);
    accum(n.inputs[4], dE);
    accum(n.inputs[5], dW);
  }

  void layer_norm_backward(Node& n) {
    Node& xn = nodes_[n.inputs[0]];
    const DenseArray<Real>& X = xn.value;
    const DenseArray<Real>& G = nodes_[n.inputs[1]].value;
    const DenseArray<Real>& g = n.adjoint;
    long long T = X.shape[0], d = X.shape[1];
    DenseArray<Real> dX(X.shape), dG(G.shape), dBias(G.shape);
    for (long long t = 0; t < T; ++t) {
      Real mean = n.aux.at(t, 0), inv = n.aux.at(t, 1);
      const Real* x = X.row_ptr(t);
      const Real* gr = g.row_ptr(t);
      double s1 = 0.0, s2 = 0.0;
      for (long long j = 0; j < d; ++j) {
        Real xhat = (x[j] - mean) * inv;
        Real gg = gr[j] * G.data[static_cast<std::size_t>(j)];
        dG.data[static_cast<std::size_t>(j)] += gr[j] * xhat;
        dBias.data[static_cast<std::size_t>(j)] += gr[j];
        s1 += static_cast<double>(gg);
        s2 += static_cast<double>(gg) * static_cast<double>(xhat);
      }
      s1 /= static_cast<double>(d);
      s2 /= static_cast<double>(d);
      Real* dx = dX.row_ptr(t);
      for (long long j = 0; j < d; ++j) {
        Real xhat = (x[j] - mean) * inv;
        Real gg = gr[j] * G.data[static_cast<std::size_t>(j)];
        dx[j] = inv * (gg - static_cast<Real>(s1) - xhat * static_cast<Real>(s2));
      }
    }
    accum(n.inputs[0], dX);
    accum(n.inputs[1], dG);
    accum(n.inputs[2], dBias);
  }
};

}  // namespace tacolm
