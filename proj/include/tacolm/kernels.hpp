#pragma once
// Shared numeric kernels. The training graph, the no-grad batched forward and
// the incremental decoding session all route through these exact routines so
// that a given sequence of values produces the same bit patterns everywhere.
// Accumulation orders are fixed (row-major, k-inner-ascending) and nothing
// here may be rewritten in a way that changes them.

#include <cmath>
#include <cstring>

#include "tacolm/array.hpp"
#include "tacolm/mask.hpp"

namespace tacolm::kernels {

// ---------------------------------------------------------------- scalars

template <typename Real>
inline Real sigmoid(Real x) {
  if (x >= Real(0)) {
    Real e = std::exp(-x);
    return Real(1) / (Real(1) + e);
  }
  Real e = std::exp(x);
  return e / (Real(1) + e);
}

template <typename Real>
inline Real silu(Real x) {
  return x * sigmoid(x);
}

template <typename Real>
inline Real dsigmoid_from_y(Real y) {
  return y * (Real(1) - y);
}

template <typename Real>
inline Real dsilu(Real x) {
  Real s = sigmoid(x);
  return s * (Real(1) + x * (Real(1) - s));
}

template <typename Real>
inline Real dtanh_from_y(Real y) {
  return Real(1) - y * y;
}

// ------------------------------------------------------------- elementwise

template <typename Real, typename F>
inline void map(const DenseArray<Real>& a, DenseArray<Real>& out, F f) {
  out.shape = a.shape;
  out.data.resize(a.data.size());
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i]);
}

// Right-aligned broadcast of b against a. Covers the shapes the model uses:
// identical shapes, a trailing-suffix operand (bias rows), and trailing
// singleton extents. The generic odometer path handles the rest.
template <typename Real, typename F>
inline void broadcast_binary(const DenseArray<Real>& a, const DenseArray<Real>& b,
                             DenseArray<Real>& out, F f, const char* who) {
  if (a.shape == b.shape) {
    out.shape = a.shape;
    out.data.resize(a.data.size());
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = f(a.data[i], b.data[i]);
    return;
  }
  // b as a plain suffix of a (ignoring leading 1-extents on b)
  Shape bs = b.shape;
  while (!bs.empty() && bs.front() == 1) bs.erase(bs.begin());
  bool suffix = bs.size() <= a.shape.size();
  if (suffix) {
    for (std::size_t i = 0; i < bs.size(); ++i)
      if (bs[bs.size() - 1 - i] != a.shape[a.shape.size() - 1 - i]) suffix = false;
  }
  if (suffix) {
    long long inner = shape_numel(bs);
    if (inner == 0) throw std::runtime_error(std::string(who) + ": empty broadcast operand");
    long long outer = shape_numel(a.shape) / inner;
    out.shape = a.shape;
    out.data.resize(a.data.size());
    for (long long o = 0; o < outer; ++o) {
      const Real* pa = a.data.data() + o * inner;
      Real* po = out.data.data() + o * inner;
      for (long long i = 0; i < inner; ++i) po[i] = f(pa[i], b.data[static_cast<std::size_t>(i)]);
    }
    return;
  }
  // generic: pad b's shape with leading 1s, every extent must match or be 1
  int ra = a.rank();
  Shape bp(static_cast<std::size_t>(ra), 1);
  for (int i = 0; i < b.rank(); ++i) bp[static_cast<std::size_t>(ra - b.rank() + i)] = b.shape[static_cast<std::size_t>(i)];
  std::vector<long long> bstride(static_cast<std::size_t>(ra), 0);
  long long acc = 1;
  for (int i = ra - 1; i >= 0; --i) {
    if (bp[static_cast<std::size_t>(i)] != 1 && bp[static_cast<std::size_t>(i)] != a.shape[static_cast<std::size_t>(i)])
      throw std::runtime_error(std::string(who) + ": shapes " + shape_str(a.shape) + " and " +
                               shape_str(b.shape) + " do not broadcast");
    if (bp[static_cast<std::size_t>(i)] != 1) {
      bstride[static_cast<std::size_t>(i)] = acc;
      acc *= bp[static_cast<std::size_t>(i)];
    }
  }
  out.shape = a.shape;
  out.data.resize(a.data.size());
  std::vector<long long> ix(static_cast<std::size_t>(ra), 0);
  long long boff = 0;
  for (std::size_t lin = 0; lin < a.data.size(); ++lin) {
    out.data[lin] = f(a.data[lin], b.data[static_cast<std::size_t>(boff)]);
    for (int d = ra - 1; d >= 0; --d) {
      auto ud = static_cast<std::size_t>(d);
      ++ix[ud];
      boff += bstride[ud];
      if (ix[ud] < a.shape[ud]) break;
      boff -= bstride[ud] * ix[ud];
      ix[ud] = 0;
    }
  }
}

// ----------------------------------------------------------------- matmul

// C[i,j] += A[i,k] * B[k,j], k ascending. Row i's accumulation sequence does
// not depend on the number of rows, which is what lets a one-row step in the
// decoder reproduce the batched product bit for bit.
template <typename Real>
inline void matmul_acc(const Real* a, const Real* b, Real* c, long long m, long long k, long long n) {
  for (long long i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    Real* crow = c + i * n;
    for (long long p = 0; p < k; ++p) {
      Real av = arow[p];
      const Real* brow = b + p * n;
      for (long long j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename Real>
inline DenseArray<Real> matmul(const DenseArray<Real>& a, const DenseArray<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
    throw std::runtime_error("matmul: incompatible shapes " + shape_str(a.shape) + " x " + shape_str(b.shape));
  DenseArray<Real> c(Shape{a.shape[0], b.shape[1]});
  matmul_acc(a.data.data(), b.data.data(), c.data.data(), a.shape[0], a.shape[1], b.shape[1]);
  return c;
}

// C = A^T * B, used by backward passes (dW = X^T dY)
template <typename Real>
inline DenseArray<Real> matmul_tn(const DenseArray<Real>& a, const DenseArray<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[0] != b.shape[0])
    throw std::runtime_error("matmul_tn: incompatible shapes");
  long long k = a.shape[0], m = a.shape[1], n = b.shape[1];
  DenseArray<Real> c(Shape{m, n});
  for (long long p = 0; p < k; ++p) {
    const Real* arow = a.data.data() + p * m;
    const Real* brow = b.data.data() + p * n;
    for (long long i = 0; i < m; ++i) {
      Real av = arow[i];
      Real* crow = c.data.data() + i * n;
      for (long long j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// C = A * B^T, used by backward passes (dX = dY W^T)
template <typename Real>
inline DenseArray<Real> matmul_nt(const DenseArray<Real>& a, const DenseArray<Real>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[1])
    throw std::runtime_error("matmul_nt: incompatible shapes");
  long long m = a.shape[0], k = a.shape[1], n = b.shape[0];
  DenseArray<Real> c(Shape{m, n});
  for (long long i = 0; i < m; ++i) {
    const Real* arow = a.data.data() + i * k;
    Real* crow = c.data.data() + i * n;
    for (long long j = 0; j < n; ++j) {
      const Real* brow = b.data.data() + j * k;
      Real s = 0;
      for (long long p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] = s;
    }
  }
  return c;
}

template <typename Real>
inline DenseArray<Real> transpose(const DenseArray<Real>& a) {
  if (a.rank() != 2) throw std::runtime_error("transpose: rank-2 input required");
  DenseArray<Real> t(Shape{a.shape[1], a.shape[0]});
  for (long long i = 0; i < a.shape[0]; ++i)
    for (long long j = 0; j < a.shape[1]; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

// ------------------------------------------------------------ row softmax

// In place, max-subtracted. exp(-1e9 - m) underflows to exactly +0, so rows
// carrying the mask offset come out with hard zeros, not small weights.
template <typename Real>
inline void softmax_row(Real* x, long long n) {
  Real m = x[0];
  for (long long j = 1; j < n; ++j)
    if (x[j] > m) m = x[j];
  double sum = 0.0;
  for (long long j = 0; j < n; ++j) {
    Real e = std::exp(x[j] - m);
    x[j] = e;
    sum += static_cast<double>(e);
  }
  for (long long j = 0; j < n; ++j) x[j] = static_cast<Real>(static_cast<double>(x[j]) / sum);
}

// out[j] += sum_k p[k] * v[k*n + j]; same element order as matmul_acc row
template <typename Real>
inline void weighted_rows_acc(const Real* p, const Real* v, Real* out, long long k, long long n) {
  for (long long r = 0; r < k; ++r) {
    Real w = p[r];
    const Real* vrow = v + r * n;
    for (long long j = 0; j < n; ++j) out[j] += w * vrow[j];
  }
}

// ------------------------------------------------------------------- rope

// Rotary position code on even-width rows. Angles are evaluated in double no
// matter what Real is: float argument reduction at positions ~1e5 would cost
// per-mille level errors and break shift invariance.
template <typename Real>
inline void rope_row(const Real* x, Real* out, long long d, long long pos, double base, bool backward_rotation) {
  for (long long i = 0; i < d; i += 2) {
    double theta = static_cast<double>(pos) * std::pow(base, -static_cast<double>(i) / static_cast<double>(d));
    double c = std::cos(theta), s = std::sin(theta);
    if (backward_rotation) s = -s;
    double x0 = static_cast<double>(x[i]), x1 = static_cast<double>(x[i + 1]);
    out[i] = static_cast<Real>(x0 * c - x1 * s);
    out[i + 1] = static_cast<Real>(x0 * s + x1 * c);
  }
}

// ------------------------------------------------------------- layer norm

template <typename Real>
inline void layer_norm_row(const Real* x, const Real* gain, const Real* bias, Real* out, long long d, Real eps) {
  double mean = 0.0;
  for (long long j = 0; j < d; ++j) mean += static_cast<double>(x[j]);
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (long long j = 0; j < d; ++j) {
    double c = static_cast<double>(x[j]) - mean;
    var += c * c;
  }
  var /= static_cast<double>(d);
  double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
  for (long long j = 0; j < d; ++j)
    out[j] = static_cast<Real>((static_cast<double>(x[j]) - mean) * inv * static_cast<double>(gain[j]) +
                               static_cast<double>(bias[j]));
}

// -------------------------------------------------------------- damped EMA

// Multi-channel damped exponential moving average over time.
//   u[j,c]   = beta[j,c] * x_t[j]
//   H[j,c]   = A[j,c] * u[j,c] + (1 - A[j,c]*D[j,c]) * H_prev[j,c]
//   y_t[j]   = sum_c eta[j,c] * H[j,c] + omega[j] * x_t[j]
// A = sigmoid(alpha_logit), D = sigmoid(delta_logit) are precomputed once per
// forward so batched and incremental paths share the same bits.
template <typename Real>
inline void ema_step(const Real* x, const Real* beta, const Real* A, const Real* D, const Real* eta,
                     const Real* omega, Real* H, Real* y, long long d, long long h) {
  for (long long j = 0; j < d; ++j) {
    const Real* bj = beta + j * h;
    const Real* aj = A + j * h;
    const Real* dj = D + j * h;
    const Real* ej = eta + j * h;
    Real* hj = H + j * h;
    Real acc = 0;
    for (long long c = 0; c < h; ++c) {
      Real u = bj[c] * x[j];
      hj[c] = aj[c] * u + (Real(1) - aj[c] * dj[c]) * hj[c];
      acc += ej[c] * hj[c];
    }
    y[j] = acc + omega[j] * x[j];
  }
}

// --------------------------------------------------- batched layer kernels

// probs = row_softmax(Q K^T * scale + mask offset). The per-row work is a
// plain dot loop followed by softmax_row, so an incremental decoder evaluating
// one query row against cached keys reproduces these bits exactly.
template <typename Real>
inline DenseArray<Real> attn_probs_rows(const DenseArray<Real>& Q, const DenseArray<Real>& K, Real scl,
                                        const PrefixMask* mask, long long row_off, long long col_off) {
  if (Q.rank() != 2 || K.rank() != 2 || Q.shape[1] != K.shape[1])
    throw std::runtime_error("attn_probs: Q " + shape_str(Q.shape) + " vs K " + shape_str(K.shape));
  long long tq = Q.shape[0], tk = K.shape[0], dd = Q.shape[1];
  DenseArray<Real> P(Shape{tq, tk});
  for (long long i = 0; i < tq; ++i) {
    Real* row = P.row_ptr(i);
    const Real* qi = Q.row_ptr(i);
    bool any = false;
    for (long long j = 0; j < tk; ++j) {
      const Real* kj = K.row_ptr(j);
      Real s = 0;
      for (long long p = 0; p < dd; ++p) s += qi[p] * kj[p];
      s *= scl;
      if (mask && !mask->visible(row_off + i, col_off + j))
        s += Real(-1e9);
      else
        any = true;
      row[j] = s;
    }
    if (!any) throw std::runtime_error("attn_probs: query row " + std::to_string(row_off + i) + " sees no keys");
    softmax_row(row, tk);
  }
  return P;
}

// full scan of the damped EMA; h_traj (optional) receives the hidden states
// per step, which the backward pass needs
template <typename Real>
inline DenseArray<Real> ema_scan(const DenseArray<Real>& X, const DenseArray<Real>& B, const DenseArray<Real>& AL,
                                 const DenseArray<Real>& DL, const DenseArray<Real>& E, const DenseArray<Real>& W,
                                 DenseArray<Real>* h_traj) {
  if (X.rank() != 2 || B.rank() != 2 || B.shape[0] != X.shape[1])
    throw std::runtime_error("damped_ema: x " + shape_str(X.shape) + " beta " + shape_str(B.shape));
  if (AL.shape != B.shape || DL.shape != B.shape || E.shape != B.shape)
    throw std::runtime_error("damped_ema: parameter shape mismatch");
  long long T = X.shape[0], d = X.shape[1], h = B.shape[1];
  if (W.numel() != d) throw std::runtime_error("damped_ema: omega must have d entries");
  DenseArray<Real> A, D, Y(Shape{T, d});
  map(AL, A, [](Real v) { return sigmoid(v); });
  map(DL, D, [](Real v) { return sigmoid(v); });
  if (h_traj) *h_traj = DenseArray<Real>(Shape{T, d * h});
  std::vector<Real> H(static_cast<std::size_t>(d * h), Real(0));
  for (long long t = 0; t < T; ++t) {
    ema_step(X.row_ptr(t), B.data.data(), A.data.data(), D.data.data(), E.data.data(), W.data.data(), H.data(),
             Y.row_ptr(t), d, h);
    if (h_traj) std::memcpy(h_traj->row_ptr(t), H.data(), static_cast<std::size_t>(d * h) * sizeof(Real));
  }
  return Y;
}

template <typename Real>
inline DenseArray<Real> rope_rows(const DenseArray<Real>& X, const int* positions, double base, bool backward_rot) {
  if (X.rank() != 2 || X.shape[1] % 2 != 0)
    throw std::runtime_error("rope: rank-2 input with even width required, got " + shape_str(X.shape));
  DenseArray<Real> Y(X.shape);
  for (long long t = 0; t < X.shape[0]; ++t)
    rope_row(X.row_ptr(t), Y.row_ptr(t), X.shape[1], positions[t], base, backward_rot);
  return Y;
}

// aux (optional) receives per-row (mean, inv std) for the backward pass
template <typename Real>
inline DenseArray<Real> layer_norm_rows(const DenseArray<Real>& X, const DenseArray<Real>& G,
                                        const DenseArray<Real>& Bi, Real eps, DenseArray<Real>* aux) {
  if (X.rank() != 2) throw std::runtime_error("layer_norm: rank-2 input required");
  long long d = X.shape[1];
  if (G.numel() != d || Bi.numel() != d) throw std::runtime_error("layer_norm: gain/bias width mismatch");
  DenseArray<Real> Y(X.shape);
  if (aux) *aux = DenseArray<Real>(Shape{X.shape[0], 2});
  for (long long t = 0; t < X.shape[0]; ++t) {
    layer_norm_row(X.row_ptr(t), G.data.data(), Bi.data.data(), Y.row_ptr(t), d, eps);
    if (aux) {
      double mean = 0.0;
      for (long long j = 0; j < d; ++j) mean += static_cast<double>(X.at(t, j));
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (long long j = 0; j < d; ++j) {
        double c = static_cast<double>(X.at(t, j)) - mean;
        var += c * c;
      }
      var /= static_cast<double>(d);
      aux->at(t, 0) = static_cast<Real>(mean);
      aux->at(t, 1) = static_cast<Real>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    }
  }
  return Y;
}

// ----------------------------------------------------------- cross entropy

// Mean negative log-likelihood over rows with mask!=0. probs_out (optional)
// receives the row softmax for the backward pass.
template <typename Real>
inline double cross_entropy_rows(const DenseArray<Real>& logits, const int* targets, const unsigned char* mask,
                                 long long n_rows, DenseArray<Real>* probs_out, long long* counted_out) {
  long long v = logits.cols();
  if (probs_out) {
    probs_out->shape = logits.shape;
    probs_out->data.resize(logits.data.size());
  }
  double total = 0.0;
  long long counted = 0;
  for (long long r = 0; r < n_rows; ++r) {
    const Real* row = logits.row_ptr(r);
    if (mask && !mask[r]) {
      if (probs_out) std::memset(probs_out->row_ptr(r), 0, static_cast<std::size_t>(v) * sizeof(Real));
      continue;
    }
    int t = targets[r];
    if (t < 0 || t >= v)
      throw std::runtime_error("cross_entropy: target " + std::to_string(t) + " outside vocabulary of " +
                               std::to_string(v));
    Real m = row[0];
    for (long long j = 1; j < v; ++j)
      if (row[j] > m) m = row[j];
    double sum = 0.0;
    for (long long j = 0; j < v; ++j) sum += std::exp(static_cast<double>(row[j]) - static_cast<double>(m));
    double lse = static_cast<double>(m) + std::log(sum);
    total += lse - static_cast<double>(row[t]);
    ++counted;
    if (probs_out) {
      Real* prow = probs_out->row_ptr(r);
      for (long long j = 0; j < v; ++j)
        prow[j] = static_cast<Real>(std::exp(static_cast<double>(row[j]) - static_cast<double>(m)) / sum);
    }
  }
  if (counted_out) *counted_out = counted;
  if (counted == 0) throw std::runtime_error("cross_entropy: empty loss mask");
  return total / static_cast<double>(counted);
}

template <typename Real>
inline double sum_all(const DenseArray<Real>& a) {
  double s = 0.0;
  for (Real v : a.data) s += static_cast<double>(v);
  return s;
}

}  // namespace tacolm::kernels
