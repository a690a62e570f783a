#pragma once
// Layer zoo: multidimensional damped EMA, gated prefix self-attention (GPSA),
// gated cross-attention (GCA), feed-forward block, and a vanilla multi-head
// attention baseline. Each pipeline is written once against an engine concept
// and instantiated with TapeEngine (training, differentiable) or RawEngine
// (no-grad inference); both run the same kernels in the same order, so their
// outputs are bit-identical.

#include <cmath>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "tacolm/kernels.hpp"
#include "tacolm/tape.hpp"

namespace tacolm {

inline constexpr double kLnEps = 1e-5;

// ------------------------------------------------------------- param store

template <typename Real>
struct ParamStore {
  std::vector<std::string> names;
  std::vector<DenseArray<Real>> arrays;
  std::unordered_map<std::string, int> index;

  int add(const std::string& name, DenseArray<Real> a) {
    if (index.count(name)) throw std::runtime_error("duplicate parameter name: " + name);
    index[name] = static_cast<int>(arrays.size());
    names.push_back(name);
    arrays.push_back(std::move(a));
    return static_cast<int>(arrays.size()) - 1;
  }
  int find(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw std::runtime_error("unknown parameter: " + name);
    return it->second;
  }
  long long total_params() const {
    long long n = 0;
    for (const auto& a : arrays) n += a.numel();
    return n;
  }
};

// ----------------------------------------------------------- registration

template <typename Real>
int add_he_uniform(ParamStore<Real>& s, const std::string& name, long long fan_in, long long fan_out, Rng& rng) {
  DenseArray<Real> w(Shape{fan_in, fan_out});
  double lim = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : w.data) v = static_cast<Real>(rng.uniform(-lim, lim));
  return s.add(name, std::move(w));
}

template <typename Real>
int add_const(ParamStore<Real>& s, const std::string& name, Shape shape, Real fill) {
  return s.add(name, DenseArray<Real>(std::move(shape), fill));
}

template <typename Real>
int add_gauss(ParamStore<Real>& s, const std::string& name, Shape shape, double sigma, Rng& rng) {
  DenseArray<Real> w(std::move(shape));
  for (auto& v : w.data) v = static_cast<Real>(sigma * rng.gauss());
  return s.add(name, std::move(w));
}

// --------------------------------------------------------- param bundles

struct EmaParams {
  int beta, alpha, delta, eta, omega;
};

struct GpsaParams {
  EmaParams ema;
  int ln_g, ln_b;
  int w_z, b_z;          // shared projection producing Z
  int kq, mq, kk, mk;    // per-dimension query/key scale+offset over Z
  int w_v, b_v;          // value projection
  int w_r, b_r;          // reset gate (d -> v)
  int w_u, b_u;          // update gate (d -> d)
  int w_h, b_h, u_h;     // candidate projections (d -> d and v -> d)
};

struct GcaParams {
  int ln_g, ln_b;        // over the audio stream input
  int w_q, b_q;          // query from audio
  int w_k, b_k, w_v, b_v;  // key/value from text only
  int w_r, b_r, w_u, b_u, w_h, b_h, u_h;
};

struct FfnParams {
  int ln_g, ln_b, w1, b1, w2, b2;
};

struct MhaParams {
  int ln_g, ln_b, w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
  int heads = 1;
};

// decay rates spread geometrically over channels: sigma(alpha) in [0.1, 0.9]
template <typename Real>
int add_ema_decay_logits(ParamStore<Real>& s, const std::string& name, long long d, long long h) {
  DenseArray<Real> a(Shape{d, h});
  for (long long j = 0; j < d; ++j)
    for (long long c = 0; c < h; ++c) {
      double v = h > 1 ? 0.1 * std::pow(9.0, static_cast<double>(c) / static_cast<double>(h - 1)) : 0.5;
      a.at(j, c) = static_cast<Real>(std::log(v / (1.0 - v)));
    }
  return s.add(name, std::move(a));
}

template <typename Real>
EmaParams register_ema(ParamStore<Real>& s, const std::string& p, long long d, long long h, Rng& rng) {
  EmaParams e;
  e.beta = add_gauss(s, p + ".beta", Shape{d, h}, 0.2, rng);
  e.alpha = add_ema_decay_logits(s, p + ".alpha", d, h);
  e.delta = add_const<Real>(s, p + ".delta", Shape{d, h}, Real(0));  // sigmoid -> 0.5
  e.eta = add_gauss(s, p + ".eta", Shape{d, h}, 1.0 / std::sqrt(static_cast<double>(h)), rng);
  e.omega = add_const<Real>(s, p + ".omega", Shape{d}, Real(1));
  return e;
}

inline long long ema_param_count(long long d, long long h) { return 4 * d * h + d; }

template <typename Real>
GpsaParams register_gpsa(ParamStore<Real>& s, const std::string& p, long long d, long long z, long long h, Rng& rng) {
  GpsaParams g;
  g.ema = register_ema(s, p + ".ema", d, h, rng);
  g.ln_g = add_const<Real>(s, p + ".ln_g", Shape{d}, Real(1));
  g.ln_b = add_const<Real>(s, p + ".ln_b", Shape{d}, Real(0));
  g.w_z = add_he_uniform(s, p + ".w_z", d, z, rng);
  g.b_z = add_const<Real>(s, p + ".b_z", Shape{z}, Real(0));
  g.kq = add_const<Real>(s, p + ".kq", Shape{z}, Real(1));
  g.mq = add_const<Real>(s, p + ".mq", Shape{z}, Real(0));
  g.kk = add_const<Real>(s, p + ".kk", Shape{z}, Real(1));
  g.mk = add_const<Real>(s, p + ".mk", Shape{z}, Real(0));
  g.w_v = add_he_uniform(s, p + ".w_v", d, z, rng);
  g.b_v = add_const<Real>(s, p + ".b_v", Shape{z}, Real(0));
  g.w_r = add_he_uniform(s, p + ".w_r", d, z, rng);
  g.b_r = add_const<Real>(s, p + ".b_r", Shape{z}, Real(0));
  g.w_u = add_he_uniform(s, p + ".w_u", d, d, rng);
  g.b_u = add_const<Real>(s, p + ".b_u", Shape{d}, Real(0));
  g.w_h = add_he_uniform(s, p + ".w_h", d, d, rng);
  g.b_h = add_const<Real>(s, p + ".b_h", Shape{d}, Real(0));
  g.u_h = add_he_uniform(s, p + ".u_h", z, d, rng);
  return g;
}

inline long long gpsa_param_count(long long d, long long z, long long h) {
  // ema + layernorm + {w_z, w_v, w_r} affines + query/key scale-offsets
  // + {w_u, w_h} affines + u_h
  return ema_param_count(d, h) + 2 * d + 3 * (d * z + z) + 4 * z + 2 * (d * d + d) + z * d;
}

template <typename Real>
GcaParams register_gca(ParamStore<Real>& s, const std::string& p, long long d, long long z, Rng& rng) {
  GcaParams g;
  g.ln_g = add_const<Real>(s, p + ".ln_g", Shape{d}, Real(1));
  g.ln_b = add_const<Real>(s, p + ".ln_b", Shape{d}, Real(0));
  g.w_q = add_he_uniform(s, p + ".w_q", d, z, rng);
  g.b_q = add_const<Real>(s, p + ".b_q", Shape{z}, Real(0));
  g.w_k = add_he_uniform(s, p + ".w_k", d, z, rng);
  g.b_k = add_const<Real>(s, p + ".b_k", Shape{z}, Real(0));
  g.w_v = add_he_uniform(s, p + ".w_v", d, z, rng);
  g.b_v = add_const<Real>(s, p + ".b_v", Shape{z}, Real(0));
  g.w_r = add_he_uniform(s, p + ".w_r", d, z, rng);
  g.b_r = add_const<Real>(s, p + ".b_r", Shape{z}, Real(0));
  g.w_u = add_he_uniform(s, p + ".w_u", d, d, rng);
  g.b_u = add_const<Real>(s, p + ".b_u", Shape{d}, Real(0));
  g.w_h = add_he_uniform(s, p + ".w_h", d, d, rng);
  g.b_h = add_const<Real>(s, p + ".b_h", Shape{d}, Real(0));
  g.u_h = add_he_uniform(s, p + ".u_h", z, d, rng);
  return g;
}

inline long long gca_param_count(long long d, long long z) {
  return 2 * d + 4 * (d * z + z) + 2 * (d * d + d) + z * d;
}

template <typename Real>
FfnParams register_ffn(ParamStore<Real>& s, const std::string& p, long long d, long long f, Rng& rng) {
  FfnParams q;
  q.ln_g = add_const<Real>(s, p + ".ln_g", Shape{d}, Real(1));
  q.ln_b = add_const<Real>(s, p + ".ln_b", Shape{d}, Real(0));
  q.w1 = add_he_uniform(s, p + ".w1", d, f, rng);
  q.b1 = add_const<Real>(s, p + ".b1", Shape{f}, Real(0));
  q.w2 = add_he_uniform(s, p + ".w2", f, d, rng);
  q.b2 = add_const<Real>(s, p + ".b2", Shape{d}, Real(0));
  return q;
}

inline long long ffn_param_count(long long d, long long f) { return 2 * d + d * f + f + f * d + d; }

template <typename Real>
MhaParams register_mha(ParamStore<Real>& s, const std::string& p, long long d, int heads, Rng& rng) {
  if (heads < 1 || d % heads != 0) throw std::runtime_error("mha: head count must divide d_model");
  MhaParams m;
  m.heads = heads;
  m.ln_g = add_const<Real>(s, p + ".ln_g", Shape{d}, Real(1));
  m.ln_b = add_const<Real>(s, p + ".ln_b", Shape{d}, Real(0));
  m.w_q = add_he_uniform(s, p + ".w_q", d, d, rng);
  m.b_q = add_const<Real>(s, p + ".b_q", Shape{d}, Real(0));
  m.w_k = add_he_uniform(s, p + ".w_k", d, d, rng);
  m.b_k = add_const<Real>(s, p + ".b_k", Shape{d}, Real(0));
  m.w_v = add_he_uniform(s, p + ".w_v", d, d, rng);
  m.b_v = add_const<Real>(s, p + ".b_v", Shape{d}, Real(0));
  m.w_o = add_he_uniform(s, p + ".w_o", d, d, rng);
  m.b_o = add_const<Real>(s, p + ".b_o", Shape{d}, Real(0));
  return m;
}

inline long long mha_param_count(long long d) { return 2 * d + 4 * (d * d + d); }

// ----------------------------------------------------------------- engines

struct RopeConfig {
  double base = 10000.0;
  bool enabled = true;
};

template <typename Real>
class TapeEngine {
 public:
  using H = NodeId;

  TapeEngine(Tape<Real>& t, const ParamStore<Real>& s, Real dropout_rate = 0, Rng* rng = nullptr)
      : tape_(t), store_(s), rate_(dropout_rate), rng_(rng), cache_(s.arrays.size(), -1) {
    if (rate_ > 0 && !rng_) throw std::runtime_error("dropout requires an rng");
  }

  Tape<Real>& tape() { return tape_; }
  H param(int i) {
    if (cache_[static_cast<std::size_t>(i)] < 0)
      cache_[static_cast<std::size_t>(i)] = tape_.leaf(store_.arrays[static_cast<std::size_t>(i)], true);
    return cache_[static_cast<std::size_t>(i)];
  }
  // store-index -> adjoint (null when the parameter never entered the graph
  // or received no gradient)
  const DenseArray<Real>* grad_of(int i) const {
    NodeId n = cache_[static_cast<std::size_t>(i)];
    if (n < 0 || !tape_.has_grad(n)) return nullptr;
    return &tape_.grad(n);
  }

  H input(DenseArray<Real> v) { return tape_.leaf(std::move(v), false); }
  const DenseArray<Real>& value(H h) const { return tape_.val(h); }

  H matmul(H a, H b) { return tape_.matmul(a, b); }
  H add(H a, H b) { return tape_.add(a, b); }
  H sub(H a, H b) { return tape_.sub(a, b); }
  H mul(H a, H b) { return tape_.mul(a, b); }
  H silu(H a) { return tape_.silu(a); }
  H sigmoid(H a) { return tape_.sigmoid(a); }
  H layer_norm(H x, H g, H b) { return tape_.layer_norm(x, g, b, static_cast<Real>(kLnEps)); }
  H damped_ema(H x, const EmaParams& p) {
    return tape_.damped_ema(x, param(p.beta), param(p.alpha), param(p.delta), param(p.eta), param(p.omega));
  }
  H rope(H x, const std::vector<int>& pos, double base) { return tape_.rope(x, pos, static_cast<Real>(base)); }
  H attn_probs(H q, H k, Real scl, std::shared_ptr<const PrefixMask> m, long long ro, long long co) {
    return tape_.attn_probs(q, k, scl, std::move(m), ro, co);
  }
  H dropout(H x) { return rate_ > 0 ? tape_.dropout(x, rate_, *rng_) : x; }
  H gather_rows(H t, const std::vector<int>& ids) { return tape_.gather_rows(t, ids); }
  H slice_rows(H x, long long a, long long b) { return tape_.slice_rows(x, a, b); }
  H slice_cols(H x, long long a, long long b) { return tape_.slice_cols(x, a, b); }
  H concat_rows(const std::vector<H>& xs) { return tape_.concat_rows(xs); }
  H concat_cols(const std::vector<H>& xs) { return tape_.concat_cols(xs); }

 private:
  Tape<Real>& tape_;
  const ParamStore<Real>& store_;
  Real rate_;
  Rng* rng_;
  std::vector<NodeId> cache_;
};

// no-grad evaluation over the same kernels; dropout is always off here
template <typename Real>
class RawEngine {
 public:
  using H = std::shared_ptr<const DenseArray<Real>>;

  explicit RawEngine(const ParamStore<Real>& s) : store_(s) {}

  H param(int i) const { return H(H{}, &store_.arrays[static_cast<std::size_t>(i)]); }
  H input(DenseArray<Real> v) const { return std::make_shared<DenseArray<Real>>(std::move(v)); }
  const DenseArray<Real>& value(H h) const { return *h; }

  H matmul(H a, H b) const { return wrap(kernels::matmul(*a, *b)); }
  H add(H a, H b) const {
    DenseArray<Real> out;
    kernels::broadcast_binary(*a, *b, out, [](Real x, Real y) { return x + y; }, "add");
    return wrap(std::move(out));
  }
  H sub(H a, H b) const {
    DenseArray<Real> out;
    kernels::broadcast_binary(*a, *b, out, [](Real x, Real y) { return x - y; }, "sub");
    return wrap(std::move(out));
  }
  H mul(H a, H b) const {
    DenseArray<Real> out;
    kernels::broadcast_binary(*a, *b, out, [](Real x, Real y) { return x * y; }, "mul");
    return wrap(std::move(out));
  }
  H silu(H a) const {
    DenseArray<Real> out;
    kernels::map(*a, out, [](Real x) { return kernels::silu(x); });
    return wrap(std::move(out));
  }
  H sigmoid(H a) const {
    DenseArray<Real> out;
    kernels::map(*a, out, [](Real x) { return kernels::sigmoid(x); });
    return wrap(std::move(out));
  }
  H layer_norm(H x, H g, H b) const {
    return wrap(kernels::layer_norm_rows<Real>(*x, *g, *b, static_cast<Real>(kLnEps), nullptr));
  }
  H damped_ema(H x, const EmaParams& p) const {
    return wrap(kernels::ema_scan<Real>(*x, store_.arrays[p.beta], store_.arrays[p.alpha], store_.arrays[p.delta],
                                        store_.arrays[p.eta], store_.arrays[p.omega], nullptr));
  }
  H rope(H x, const std::vector<int>& pos, double base) const {
    return wrap(kernels::rope_rows(*x, pos.data(), base, false));
  }
  H attn_probs(H q, H k, Real scl, std::shared_ptr<const PrefixMask> m, long long ro, long long co) const {
    return wrap(kernels::attn_probs_rows(*q, *k, scl, m.get(), ro, co));
  }
  H dropout(H x) const { return x; }
  H gather_rows(H t, const std::vector<int>& ids) const {
    const DenseArray<Real>& T = *t;
    DenseArray<Real> out(Shape{static_cast<long long>(ids.size()), T.shape[1]});
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (ids[r] < 0 || ids[r] >= T.shape[0])
        throw std::runtime_error("gather_rows: id " + std::to_string(ids[r]) + " outside table of " +
                                 std::to_string(T.shape[0]) + " rows");
      std::memcpy(out.row_ptr(static_cast<long long>(r)), T.row_ptr(ids[r]),
                  static_cast<std::size_t>(T.shape[1]) * sizeof(Real));
    }
    return wrap(std::move(out));
  }
  H slice_rows(H x, long long a, long long b) const {
    const DenseArray<Real>& X = *x;
    if (a < 0 || b > X.shape[0] || a >= b) throw std::runtime_error("slice_rows: bad range");
    DenseArray<Real> out(Shape{b - a, X.shape[1]});
    std::memcpy(out.data.data(), X.row_ptr(a), static_cast<std::size_t>((b - a) * X.shape[1]) * sizeof(Real));
    return wrap(std::move(out));
  }
  H slice_cols(H x, long long a, long long b) const {
    const DenseArray<Real>& X = *x;
    if (a < 0 || b > X.shape[1] || a >= b) throw std::runtime_error("slice_cols: bad range");
    DenseArray<Real> out(Shape{X.shape[0], b - a});
    for (long long r = 0; r < X.shape[0]; ++r)
      std::memcpy(out.row_ptr(r), X.row_ptr(r) + a, static_cast<std::size_t>(b - a) * sizeof(Real));
    return wrap(std::move(out));
  }
  H concat_rows(const std::vector<H>& xs) const {
    long long rows = 0, cols = (*xs.at(0)).shape[1];
    for (const H& x : xs) rows += (*x).shape[0];
    DenseArray<Real> out(Shape{rows, cols});
    long long r = 0;
    for (const H& x : xs) {
      std::memcpy(out.row_ptr(r), (*x).data.data(), (*x).data.size() * sizeof(Real));
      r += (*x).shape[0];
    }
    return wrap(std::move(out));
  }
  H concat_cols(const std::vector<H>& xs) const {
    long long rows = (*xs.at(0)).shape[0], cols = 0;
    for (const H& x : xs) cols += (*x).shape[1];
    DenseArray<Real> out(Shape{rows, cols});
    long long c = 0;
    for (const H& x : xs) {
      for (long long r = 0; r < rows; ++r)
        std::memcpy(out.row_ptr(r) + c, (*x).row_ptr(r), static_cast<std::size_t>((*x).shape[1]) * sizeof(Real));
      c += (*x).shape[1];
    }
    return wrap(std::move(out));
  }

 private:
  const ParamStore<Real>& store_;
  static H wrap(DenseArray<Real>&& a) {
    require_finite(a, "raw_forward");
    return std::make_shared<DenseArray<Real>>(std::move(a));
  }
};

// --------------------------------------------------------------- pipelines

// x' = damped_ema(ln(x)); Z = silu(x'Wz); Q,K = affine reuses of Z (+rope);
// V = silu(ln(x) Wv); O = masked softmax attention; gamma/phi gates from x';
// out = phi .* silu(x'Wh + (gamma.*O)Uh) + (1-phi) .* x
template <typename Real, typename E>
typename E::H gpsa_layer(E& e, const GpsaParams& p, typename E::H x, std::shared_ptr<const PrefixMask> mask,
                         const std::vector<int>& positions, const RopeConfig& rope, long long chunk = 0) {
  using H = typename E::H;
  if (mask && e.value(x).shape[0] != mask->total())
    throw std::runtime_error("gpsa_layer: mask extent does not match sequence length");
  H xn = e.layer_norm(x, e.param(p.ln_g), e.param(p.ln_b));
  H xe = e.damped_ema(xn, p.ema);
  H z = e.silu(e.add(e.matmul(xe, e.param(p.w_z)), e.param(p.b_z)));
  H q = e.add(e.mul(z, e.param(p.kq)), e.param(p.mq));
  H k = e.add(e.mul(z, e.param(p.kk)), e.param(p.mk));
  if (rope.enabled) {
    q = e.rope(q, positions, rope.base);
    k = e.rope(k, positions, rope.base);
  }
  H v = e.silu(e.add(e.matmul(xn, e.param(p.w_v)), e.param(p.b_v)));
  long long zdim = e.value(z).shape[1];
  Real scl = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(zdim)));
  long long T = e.value(x).shape[0];
  H o;
  if (chunk > 0 && T > chunk) {
    std::vector<H> outs;
    for (long long a = 0; a < T; a += chunk) {
      long long b = std::min(T, a + chunk);
      H pr = e.dropout(e.attn_probs(e.slice_rows(q, a, b), e.slice_rows(k, a, b), scl, mask, a, a));
      outs.push_back(e.matmul(pr, e.slice_rows(v, a, b)));
    }
    o = e.concat_rows(outs);
  } else {
    o = e.matmul(e.dropout(e.attn_probs(q, k, scl, mask, 0, 0)), v);
  }
  H gam = e.silu(e.add(e.matmul(xe, e.param(p.w_r)), e.param(p.b_r)));
  H phi = e.sigmoid(e.add(e.matmul(xe, e.param(p.w_u)), e.param(p.b_u)));
  H cand = e.silu(e.add(e.add(e.matmul(xe, e.param(p.w_h)), e.param(p.b_h)), e.matmul(e.mul(gam, o), e.param(p.u_h))));
  cand = e.dropout(cand);
  return e.add(e.mul(phi, cand), e.sub(x, e.mul(phi, x)));
}

// Q from the (normalized) audio stream, K/V from the text stream only, no
// mask; gating identical in form to gpsa_layer, residual to the audio stream.
template <typename Real, typename E>
typename E::H gca_layer(E& e, const GcaParams& p, typename E::H audio, typename E::H text,
                        const std::vector<int>& audio_pos, const std::vector<int>& text_pos,
                        const RopeConfig& rope) {
  using H = typename E::H;
  if (e.value(text).shape[0] < 1) throw std::runtime_error("gca_layer: empty text stream");
  H an = e.layer_norm(audio, e.param(p.ln_g), e.param(p.ln_b));
  H q = e.add(e.matmul(an, e.param(p.w_q)), e.param(p.b_q));
  H k = e.add(e.matmul(text, e.param(p.w_k)), e.param(p.b_k));
  if (rope.enabled) {
    q = e.rope(q, audio_pos, rope.base);
    k = e.rope(k, text_pos, rope.base);
  }
  H v = e.silu(e.add(e.matmul(text, e.param(p.w_v)), e.param(p.b_v)));
  long long zdim = e.value(q).shape[1];
  Real scl = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(zdim)));
  H o = e.matmul(e.dropout(e.attn_probs(q, k, scl, nullptr, 0, 0)), v);
  H gam = e.silu(e.add(e.matmul(an, e.param(p.w_r)), e.param(p.b_r)));
  H phi = e.sigmoid(e.add(e.matmul(an, e.param(p.w_u)), e.param(p.b_u)));
  H cand = e.silu(e.add(e.add(e.matmul(an, e.param(p.w_h)), e.param(p.b_h)), e.matmul(e.mul(gam, o), e.param(p.u_h))));
  cand = e.dropout(cand);
  return e.add(e.mul(phi, cand), e.sub(audio, e.mul(phi, audio)));
}

template <typename Real, typename E>
typename E::H ffn_block(E& e, const FfnParams& p, typename E::H x) {
  using H = typename E::H;
  H h = e.silu(e.add(e.matmul(e.layer_norm(x, e.param(p.ln_g), e.param(p.ln_b)), e.param(p.w1)), e.param(p.b1)));
  h = e.dropout(h);
  return e.add(x, e.add(e.matmul(h, e.param(p.w2)), e.param(p.b2)));
}

// pre-norm multi-head scaled-dot attention with residual; per-head RoPE
template <typename Real, typename E>
typename E::H mha_baseline_layer(E& e, const MhaParams& p, typename E::H x, std::shared_ptr<const PrefixMask> mask,
                                 const std::vector<int>& positions, const RopeConfig& rope) {
  using H = typename E::H;
  long long d = e.value(x).shape[1];
  if (d % p.heads != 0) throw std::runtime_error("mha: head count must divide width");
  long long dh = d / p.heads;
  if (rope.enabled && dh % 2 != 0) throw std::runtime_error("mha: head width must be even for rotation");
  H xn = e.layer_norm(x, e.param(p.ln_g), e.param(p.ln_b));
  H q = e.add(e.matmul(xn, e.param(p.w_q)), e.param(p.b_q));
  H k = e.add(e.matmul(xn, e.param(p.w_k)), e.param(p.b_k));
  H v = e.add(e.matmul(xn, e.param(p.w_v)), e.param(p.b_v));
  Real scl = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(dh)));
  std::vector<H> heads;
  for (int hh = 0; hh < p.heads; ++hh) {
    H qh = e.slice_cols(q, hh * dh, (hh + 1) * dh);
    H kh = e.slice_cols(k, hh * dh, (hh + 1) * dh);
    if (rope.enabled) {
      qh = e.rope(qh, positions, rope.base);
      kh = e.rope(kh, positions, rope.base);
    }
    H pr = e.dropout(e.attn_probs(qh, kh, scl, mask, 0, 0));
    heads.push_back(e.matmul(pr, e.slice_cols(v, hh * dh, (hh + 1) * dh)));
  }
  H o = p.heads == 1 ? heads[0] : e.concat_cols(heads);
  return e.add(x, e.add(e.matmul(o, e.param(p.w_o)), e.param(p.b_o)));
}

}  // namespace tacolm
