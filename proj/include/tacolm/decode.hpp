#pragma once
// Inference: top-k sampling of first-stage codes through an incremental
// session (appended key/value caches plus one carried EMA hidden vector per
// block), greedy layer-by-layer completion of the remaining quantizers, and
// synthesis through the toy codec. The incremental path feeds single rows to
// the very kernels the batched forward runs over whole sequences, so its
// logits match a full re-forward bit for bit.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacolm/codec.hpp"
#include "tacolm/model.hpp"
#include "tacolm/tokenizer.hpp"

namespace tacolm {

// ---------------------------------------------------------------- sampling

struct DecodeOptions {
  double temperature = 1.0;
  int top_k = 64;
  long long max_new_tokens = 15 * kFrameRate;  // 15 s of layer-1 codes
  std::uint64_t seed = 0;
  int eos_id = kArEosClass;

  void validate() const {
    if (!std::isfinite(temperature) || temperature <= 0)
      throw std::runtime_error("decode: temperature must be finite and positive");
    if (top_k < 1 || top_k > kArHeadClasses)
      throw std::runtime_error("decode: top_k must lie in [1, " + std::to_string(kArHeadClasses) + "]");
    if (max_new_tokens < 1) throw std::runtime_error("decode: max_new_tokens must be at least 1");
  }
};

// keep the top_k logits, temperature-scale, softmax, draw categorically; ties
// in the ranking resolve to the lower id so top_k=1 is a deterministic argmax
template <typename Real>
int sample_next(const Real* logits, long long n, const DecodeOptions& opts, Rng& rng) {
  opts.validate();
  if (n < 1) throw std::runtime_error("sample_next: empty logit row");
  for (long long i = 0; i < n; ++i)
    if (!std::isfinite(static_cast<double>(logits[i]))) throw std::runtime_error("sample_next: non-finite logit");
  long long k = std::min<long long>(opts.top_k, n);
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), [&](int a, int b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  });
  if (k == 1) return idx[0];
  double top = static_cast<double>(logits[idx[0]]);
  std::vector<double> p(static_cast<std::size_t>(k));
  double total = 0.0;
  for (long long i = 0; i < k; ++i) {
    p[static_cast<std::size_t>(i)] =
        std::exp((static_cast<double>(logits[idx[static_cast<std::size_t>(i)]]) - top) / opts.temperature);
    total += p[static_cast<std::size_t>(i)];
  }
  double r = rng.u01() * total;
  double cum = 0.0;
  for (long long i = 0; i < k; ++i) {
    cum += p[static_cast<std::size_t>(i)];
    if (r < cum) return idx[static_cast<std::size_t>(i)];
  }
  return idx[static_cast<std::size_t>(k - 1)];
}

// ------------------------------------------------------- row-level helpers

namespace decode_detail {

template <typename Real>
DenseArray<Real> ew_add(const DenseArray<Real>& a, const DenseArray<Real>& b) {
  DenseArray<Real> out;
  kernels::broadcast_binary(a, b, out, [](Real x, Real y) { return x + y; }, "add");
  return out;
}

template <typename Real>
DenseArray<Real> ew_sub(const DenseArray<Real>& a, const DenseArray<Real>& b) {
  DenseArray<Real> out;
  kernels::broadcast_binary(a, b, out, [](Real x, Real y) { return x - y; }, "sub");
  return out;
}

template <typename Real>
DenseArray<Real> ew_mul(const DenseArray<Real>& a, const DenseArray<Real>& b) {
  DenseArray<Real> out;
  kernels::broadcast_binary(a, b, out, [](Real x, Real y) { return x * y; }, "mul");
  return out;
}

template <typename Real>
DenseArray<Real> silu_map(const DenseArray<Real>& a) {
  DenseArray<Real> out;
  kernels::map(a, out, [](Real x) { return kernels::silu(x); });
  return out;
}

template <typename Real>
DenseArray<Real> sigmoid_map(const DenseArray<Real>& a) {
  DenseArray<Real> out;
  kernels::map(a, out, [](Real x) { return kernels::sigmoid(x); });
  return out;
}

template <typename Real>
DenseArray<Real> affine(const DenseArray<Real>& x, const DenseArray<Real>& w, const DenseArray<Real>& b) {
  return ew_add(kernels::matmul(x, w), b);
}

template <typename Real>
DenseArray<Real> ln_rows(const DenseArray<Real>& x, const DenseArray<Real>& g, const DenseArray<Real>& b) {
  return kernels::layer_norm_rows<Real>(x, g, b, static_cast<Real>(kLnEps), nullptr);
}

template <typename Real>
void append_rows(DenseArray<Real>& cache, const DenseArray<Real>& rows) {
  cache.data.insert(cache.data.end(), rows.data.begin(), rows.data.end());
  cache.shape[0] += rows.shape[0];
}

template <typename Real>
DenseArray<Real> col_slice(const DenseArray<Real>& x, long long a, long long b) {
  DenseArray<Real> out(Shape{x.shape[0], b - a});
  for (long long r = 0; r < x.shape[0]; ++r)
    std::memcpy(out.row_ptr(r), x.row_ptr(r) + a, static_cast<std::size_t>(b - a) * sizeof(Real));
  return out;
}

}  // namespace decode_detail

// ------------------------------------------------------ incremental session

// One generation session over a frozen first-stage model. Construction runs
// the text span through every block and seeds the caches; each step() feeds
// one audio id (BOS first, then codes) and returns the logit row scoring the
// following slot.
template <typename Real>
class ArSession {
 public:
  ArSession(const ArModel<Real>& m, const std::vector<int>& text) : m_(m), rope_(m.cfg.rope()) {
    if (m.cfg.chunk != 0)
      throw std::runtime_error("incremental decoding requires full attention (chunk = 0)");
    check_text_ids(text, m.cfg.text_vocab);
    lt_ = static_cast<long long>(text.size());
    states_.resize(m.blocks.size());
    prefill(text);
  }

  long long audio_rows() const { return apos_; }

  // The cross-attention context is computed from the text span at prefill and
  // never rewritten by audio steps; these expose it so that invariant can be
  // checked from outside.
  const DenseArray<Real>& cross_keys(std::size_t block) const { return cross_state(block).gk; }
  const DenseArray<Real>& cross_values(std::size_t block) const { return cross_state(block).gv; }

  // id in [0, 1024]: a layer-1 code or the audio start marker
  DenseArray<Real> step(int audio_id) {
    namespace dd = decode_detail;
    const auto& P = m_.store.arrays;
    if (audio_id < 0 || audio_id > kArBosId)
      throw std::runtime_error("audio code " + std::to_string(audio_id) + " out of range");

    const long long d = m_.cfg.d_model;
    DenseArray<Real> x(Shape{1, d});
    {
      const Real* emb = P[static_cast<std::size_t>(m_.audio_emb)].row_ptr(audio_id);
      const Real* typ = P[static_cast<std::size_t>(m_.type_emb)].row_ptr(1);
      for (long long j = 0; j < d; ++j) x.data[static_cast<std::size_t>(j)] = emb[j] + typ[j];
    }

    const int abs_pos = static_cast<int>(lt_ + apos_);
    const int gca_pos = static_cast<int>(apos_);
    for (std::size_t bi = 0; bi < m_.blocks.size(); ++bi) {
      const auto& blk = m_.blocks[bi];
      BlockState& st = states_[bi];
      if (m_.variant == ArVariant::NoGcaNoGpsa)
        x = mha_row(blk.mha, st, x, abs_pos);
      else
        x = gpsa_row(blk.gpsa, st, x, abs_pos);
      if (m_.variant == ArVariant::Full) x = gca_row(blk.gca, st, x, gca_pos);
      x = ffn_rows(blk.ffn, x);
    }
    ++apos_;
    x = dd::ln_rows(x, P[static_cast<std::size_t>(m_.final_ln_g)], P[static_cast<std::size_t>(m_.final_ln_b)]);
    return dd::affine(x, P[static_cast<std::size_t>(m_.head_w)], P[static_cast<std::size_t>(m_.head_b)]);
  }

 private:
  struct BlockState {
    DenseArray<Real> decay, damp;  // sigmoided EMA rates, fixed per session
    std::vector<Real> hidden;      // carried EMA state, d * h
    DenseArray<Real> k, v;         // self-attention caches, grow by one row per step
    DenseArray<Real> gk, gv;       // cross-attention keys/values over the text span
  };

  const BlockState& cross_state(std::size_t block) const {
    if (m_.variant != ArVariant::Full)
      throw std::runtime_error("this trunk variant has no cross-attention state");
    if (block >= states_.size()) throw std::runtime_error("block index out of range");
    return states_[block];
  }

  // runs the text rows through every block exactly as the batched forward
  // does (they are causally independent of the audio rows), keeping only the
  // caches and the EMA carry
  void prefill(const std::vector<int>& text) {
    namespace dd = decode_detail;
    const auto& P = m_.store.arrays;
    const long long d = m_.cfg.d_model;

    DenseArray<Real> tstream(Shape{lt_, d});
    for (long long r = 0; r < lt_; ++r) {
      const Real* emb = P[static_cast<std::size_t>(m_.text_emb)].row_ptr(text[static_cast<std::size_t>(r)]);
      const Real* typ = P[static_cast<std::size_t>(m_.type_emb)].row_ptr(0);
      Real* out = tstream.row_ptr(r);
      for (long long j = 0; j < d; ++j) out[j] = emb[j] + typ[j];
    }

    std::vector<int> tpos(static_cast<std::size_t>(lt_));
    std::iota(tpos.begin(), tpos.end(), 0);

    DenseArray<Real> x = tstream;
    for (std::size_t bi = 0; bi < m_.blocks.size(); ++bi) {
      const auto& blk = m_.blocks[bi];
      BlockState& st = states_[bi];
      if (m_.variant == ArVariant::NoGcaNoGpsa)
        x = mha_prefill(blk.mha, st, x, tpos);
      else
        x = gpsa_prefill(blk.gpsa, st, x, tpos);
      if (m_.variant == ArVariant::Full) {
        DenseArray<Real> gk = dd::affine(tstream, P[static_cast<std::size_t>(blk.gca.w_k)],
                                         P[static_cast<std::size_t>(blk.gca.b_k)]);
        if (rope_.enabled) gk = kernels::rope_rows(gk, tpos.data(), rope_.base, false);
        st.gk = std::move(gk);
        st.gv = dd::silu_map(dd::affine(tstream, P[static_cast<std::size_t>(blk.gca.w_v)],
                                        P[static_cast<std::size_t>(blk.gca.b_v)]));
        // the text rows themselves bypass cross-attention
      }
      x = ffn_rows(blk.ffn, x);
    }
  }

  DenseArray<Real> gpsa_prefill(const GpsaParams& p, BlockState& st, const DenseArray<Real>& x,
                                const std::vector<int>& pos) {
    namespace dd = decode_detail;
    const auto& P = m_.store.arrays;
    kernels::map(P[static_cast<std::size_t>(p.ema.alpha)], st.decay, [](Real v) { return kernels::sigmoid(v); });
    kernels::map(P[static_cast<std::size_t>(p.ema.delta)], st.damp, [](Real v) { return kernels::sigmoid(v); });

    DenseArray<Real> xn = dd::ln_rows(x, P[static_cast<std::size_t>(p.ln_g)], P[static_cast<std::size_t>(p.ln_b)]);
    DenseArray<Real> traj;
    DenseArray<Real> xe = kernels::ema_scan<Real>(
        xn, P[static_cast<std::size_t>(p.ema.beta)], P[static_cast<std::size_t>(p.ema.alpha)],
        P[static_cast<std::size_t>(p.ema.delta)], P[static_cast<std::size_t>(p.ema.eta)],
        P[static_cast<std::size_t>(p.ema.omega)], &traj);
    st.hidden.assign(static_cast<std::size_t>(traj.shape[1]), Real(0));
    std::memcpy(st.hidden.data(), traj.row_ptr(traj.shape[0] - 1),
                static_cast<std::size_t>(traj.shape[1]) * sizeof(Real));
    return gpsa_tail(p, st, x, xn, xe, pos);
  }

  DenseArray<Real> gpsa_row(const GpsaParams& p, BlockState& st, const DenseArray<Real>& x, int pos) {
    namespace dd = decode_detail;
    const auto& P = m_.store.arrays;
    const DenseArray<Real>& beta = P[static_cast<std::size_t>(p.ema.beta)];
    DenseArray<Real> xn = dd::ln_rows(x, P[static_cast<std::size_t>(p.ln_g)], P[static_cast<std::size_t>(p.ln_b)]);
    DenseArray<Real> xe(xn.shape);
    kernels::ema_step(xn.row_ptr(0), beta.data.data(), st.decay.data.data(), st.damp.data.data(),
                      P[static_cast<std::size_t>(p.ema.eta)].data.data(),
                      P[static_cast<std::size_t>(p.ema.omega)].data.data(), st.hidden.data(), xe.row_ptr(0),
                      beta.shape[0], beta.shape[1]);
    return gpsa_tail(p, st, x, xn, xe, {pos});
  }

  // everything after the EMA, shared between prefill (many rows) and a step
  // (one row); appends this call's keys/values to the cache
  DenseArray<Real> gpsa_tail(const GpsaParams& p, BlockState& st, const DenseArray<Real>& x,
                             const DenseArray<Real>& xn, const DenseArray<Real>& xe, const std::vector<int>& pos) {
    namespace dd = decode_detail;
    const auto& P = m_.store.arrays;
    DenseArray<Real> z = dd::silu_map(
        dd::affine(xe, P[static_cast<std::size_t>(p.w_z)], P[static_cast<std::size_t>(p.b_z)]));
    DenseArray<Real> q =
        dd::ew_add(dd::ew_mul(z, P[static_cast<std::size_t>(p.kq)]), P[static_cast<std::size_t>(p.mq)]);
    DenseArray<Real> k =
        dd::ew_add(dd::ew_mul(z, P[static_cast<std::size_t>(p.kk)]), P[static_cast<std::size_t>(p.mk)]);
    if (rope_.enabled) {
      q = kernels::rope_rows(q, pos.data(), rope_.base, false);
      k = kernels::rope_rows(k, pos.data(), rope_.base, false);
    }
    DenseArray<Real> v = dd::silu_map(
        dd::affine(xn, P[static_cast<std::size_t>(p.w_v)], P[static_cast<std::size_t>(p.b_v)]));
    if (st.k.rank() == 0) {
      st.k = k;
      st.v = v;
    } else {
      dd::append_rows(st.k, k);
      dd::append_rows(st.v, v);
    }
    Real scl = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(z.shape[1])));
    // every cached key is visible to these query rows, so no mask is needed
    DenseArray<Real> o = kernels::matmul(kernels::attn_probs_rows<Real>(q, st.k, scl, nullptr, 0, 0), st.v);
    DenseArray<Real> gam = dd::silu_map(
        dd::affine(xe, P[static_cast<std::size_t>(p.w_r)], P[static_cast<std::size_t>(p.b_r)]));
    DenseArray<Real> phi = dd::sigmoid_map(
        dd::affine(xe, P[static_cast<std::size_t>(p.w_u)], P[static_cast<std::size_t>(p.b_u)]));
    DenseArray<Real> cand = dd::silu_map(
        dd::ew_add(dd::affine(xe, P[static_cast<std::size_t>(p.w_h)], P[static_cast<std::size_t>(p.b_h)]),
                   kernels::matmul(dd::ew_mul(gam, o), P[static_cast<std::size_t>(p.u_h)])));
    return dd::ew_add(dd::ew_mul(phi, cand), dd::ew_sub(x, dd::ew_mul(phi, x)));
  }

  DenseArray<Real> gca_row(const GcaParams& p, const BlockState& st, const DenseArray<Real>& a, int pos) {
    namespace dd = decode_detail;
    const auto& P = m_.store.arrays;
    DenseArray<Real> an = dd::ln_rows(a, P[static_cast<std::size_t>(p.ln_g)], P[static_cast<std::size_t>(p.ln_b)]);
    DenseArray<Real> q = dd::affine(an, P[static_cast<std::size_t>(p.w_q)], P[static_cast<std::size_t>(p.b_q)]);
    if (rope_.enabled) {
      const int pv[1] = {pos};
      q = kernels::rope_rows(q, pv, rope_.base, false);
    }
    Real scl = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(q.shape[1])));
    DenseArray<Real> o = kernels::matmul(kernels::attn_probs_rows<Real>(q, st.gk, scl, nullptr, 0, 0), st.gv);
    DenseArray<Real> gam = dd::silu_map(
        dd::affine(an, P[static_cast<std::size_t>(p.w_r)], P[static_cast<std::size_t>(p.b_r)]));
    DenseArray<Real> phi = dd::sigmoid_map(
        dd::affine(an, P[static_cast<std::size_t>(p.w_u)], P[static_cast<std::size_t>(p.b_u)]));
    DenseArray<Real> cand = dd::silu_map(
        dd::ew_add(dd::affine(an, P[static_cast<std::size_t>(p.w_h)], P[static_cast<std::size_t>(p.b_h)]),
                   kernels::matmul(dd::ew_mul(gam, o), P[static_cast<std::size_t>(p.u_h)])));
    return dd::ew_add(dd::ew_mul(phi, cand), dd::ew_sub(a, dd::ew_mul(phi, a)));
  }

  DenseArray<Real> mha_prefill(const MhaParams& p, BlockState& st, const DenseArray<Real>& x,
                               const std::vector<int>& pos) {
    return mha_tail(p, st, x, pos);
  }

  DenseArray<Real> mha_row(const MhaParams& p, BlockState& st, const DenseArray<Real>& x, int pos) {
    return mha_tail(p, st, x, {pos});
  }

  DenseArray<Real> mha_tail(const MhaParams& p, BlockState& st, const DenseArray<Real>& x,
                            const std::vector<int>& pos) {
    namespace dd = decode_detail;
    const auto& P = m_.store.arrays;
    const long long d = x.shape[1];
    const long long dh = d / p.heads;
    DenseArray<Real> xn = dd::ln_rows(x, P[static_cast<std::size_t>(p.ln_g)], P[static_cast<std::size_t>(p.ln_b)]);
    DenseArray<Real> q = dd::affine(xn, P[static_cast<std::size_t>(p.w_q)], P[static_cast<std::size_t>(p.b_q)]);
    DenseArray<Real> k = dd::affine(xn, P[static_cast<std::size_t>(p.w_k)], P[static_cast<std::size_t>(p.b_k)]);
    DenseArray<Real> v = dd::affine(xn, P[static_cast<std::size_t>(p.w_v)], P[static_cast<std::size_t>(p.b_v)]);

    // cache keys after rotation (each key keeps its own position forever)
    DenseArray<Real> kr(k.shape);
    for (int hh = 0; hh < p.heads; ++hh) {
      DenseArray<Real> kh = dd::col_slice(k, hh * dh, (hh + 1) * dh);
      if (rope_.enabled) kh = kernels::rope_rows(kh, pos.data(), rope_.base, false);
      for (long long r = 0; r < kr.shape[0]; ++r)
        std::memcpy(kr.row_ptr(r) + hh * dh, kh.row_ptr(r), static_cast<std::size_t>(dh) * sizeof(Real));
    }
    if (st.k.rank() == 0) {
      st.k = std::move(kr);
      st.v = std::move(v);
    } else {
      dd::append_rows(st.k, kr);
      dd::append_rows(st.v, v);
    }

    Real scl = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(dh)));
    DenseArray<Real> o(Shape{x.shape[0], d});
    for (int hh = 0; hh < p.heads; ++hh) {
      DenseArray<Real> qh = dd::col_slice(q, hh * dh, (hh + 1) * dh);
      if (rope_.enabled) qh = kernels::rope_rows(qh, pos.data(), rope_.base, false);
      DenseArray<Real> oh = kernels::matmul(
          kernels::attn_probs_rows<Real>(qh, dd::col_slice(st.k, hh * dh, (hh + 1) * dh), scl, nullptr, 0, 0),
          dd::col_slice(st.v, hh * dh, (hh + 1) * dh));
      for (long long r = 0; r < o.shape[0]; ++r)
        std::memcpy(o.row_ptr(r) + hh * dh, oh.row_ptr(r), static_cast<std::size_t>(dh) * sizeof(Real));
    }
    return dd::ew_add(x, dd::affine(o, P[static_cast<std::size_t>(p.w_o)], P[static_cast<std::size_t>(p.b_o)]));
  }

  DenseArray<Real> ffn_rows(const FfnParams& p, const DenseArray<Real>& x) {
    namespace dd = decode_detail;
    const auto& P = m_.store.arrays;
    DenseArray<Real> h = dd::silu_map(dd::affine(
        dd::ln_rows(x, P[static_cast<std::size_t>(p.ln_g)], P[static_cast<std::size_t>(p.ln_b)]),
        P[static_cast<std::size_t>(p.w1)], P[static_cast<std::size_t>(p.b1)]));
    return dd::ew_add(x, dd::affine(h, P[static_cast<std::size_t>(p.w2)], P[static_cast<std::size_t>(p.b2)]));
  }

  const ArModel<Real>& m_;
  RopeConfig rope_;
  long long lt_ = 0;
  long long apos_ = 0;  // audio rows fed so far, start marker included
  std::vector<BlockState> states_;
};

// -------------------------------------------------------- stage-1 sampling

struct ArGeneration {
  std::vector<int> codes;   // prompt codes followed by sampled continuation
  bool truncated = false;   // hit max_new_tokens before the end-of-audio class
};

template <typename Real>
ArGeneration ar_generate(const ArModel<Real>& m, const std::vector<int>& text, const std::vector<int>& prompt,
                         const DecodeOptions& opts) {
  opts.validate();
  Rng rng(opts.seed);
  ArSession<Real> sess(m, text);
  DenseArray<Real> logits = sess.step(kArBosId);

  ArGeneration out;
  out.codes.reserve(prompt.size() + static_cast<std::size_t>(opts.max_new_tokens));
  for (int c : prompt) {
    if (c < 0 || c >= kCodebookSize)
      throw std::runtime_error("prompt code " + std::to_string(c) + " out of range");
    out.codes.push_back(c);
    logits = sess.step(c);
  }
  for (long long n = 0; n < opts.max_new_tokens; ++n) {
    int id = sample_next(logits.data.data(), logits.shape[1], opts, rng);
    if (id == opts.eos_id) return out;
    out.codes.push_back(id);
    logits = sess.step(id);
  }
  out.truncated = true;
  return out;
}

// ------------------------------------------------------- stage-2 filling

// layers 2..8 in order, each conditioned on everything below it; frames
// covered by the prompt keep their known codes on every layer
template <typename Real>
CodeMatrix nar_generate(const NarModel<Real>& m, const std::vector<int>& text, const CodeMatrix& prompt,
                        const std::vector<int>& layer1) {
  const long long t = static_cast<long long>(layer1.size());
  if (t < 1) throw std::runtime_error("nar_generate: layer 1 provides no frames");
  prompt.validate();
  if (prompt.frames > t)
    throw std::runtime_error("nar_generate: prompt spans " + std::to_string(prompt.frames) +
                             " frames but layer 1 provides only " + std::to_string(t));
  for (long long f = 0; f < t; ++f)
    if (layer1[static_cast<std::size_t>(f)] < 0 || layer1[static_cast<std::size_t>(f)] >= kCodebookSize)
      throw std::runtime_error("nar_generate: layer-1 code out of range at frame " + std::to_string(f));
  for (long long f = 0; f < prompt.frames; ++f)
    if (prompt.at(f, 0) != layer1[static_cast<std::size_t>(f)])
      throw std::runtime_error("nar_generate: prompt layer-1 codes disagree with the provided sequence at frame " +
                               std::to_string(f));

  CodeMatrix out(t);
  for (long long f = 0; f < t; ++f) out.at(f, 0) = layer1[static_cast<std::size_t>(f)];
  for (long long f = 0; f < prompt.frames; ++f)
    for (int k = 1; k < kQuantizers; ++k) out.at(f, k) = prompt.at(f, k);

  for (int l = 2; l <= kQuantizers; ++l) {
    DenseArray<Real> logits = nar_forward(m, text, out, l);
    for (long long f = prompt.frames; f < t; ++f) {
      const Real* row = logits.row_ptr(f);
      int best = 0;
      for (int j = 1; j < kCodebookSize; ++j)
        if (row[j] > row[best]) best = j;
      out.at(f, l - 1) = best;
    }
  }
  return out;
}

// ------------------------------------------------------------ full pipeline

struct SynthesisRequest {
  std::string text;
  CodeMatrix prompt;  // optional enrollment frames, all 8 layers known
  DecodeOptions opts;
};

struct SynthesisReport {
  long long frames = 0;  // frames synthesized into the waveform
  double seconds = 0.0;  // wall clock across all three stages
  double rtf = 0.0;      // seconds per second of synthesized audio
  bool truncated = false;
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const SynthesisReport& r) {
  j = nlohmann::json{{"frames", r.frames},
                     {"seconds", r.seconds},
                     {"rtf", r.rtf},
                     {"truncated", r.truncated},
                     {"seed", r.seed}};
}

struct SynthesisResult {
  std::vector<float> waveform;
  CodeMatrix codes;
  SynthesisReport report;
};

template <typename Real>
SynthesisResult synthesize(const SynthesisRequest& req, const ArModel<Real>& ar, const NarModel<Real>& nar,
                           const ToyCodec& codec, const ToyTextTokenizer& tok) {
  if (ar.cfg.text_vocab != nar.cfg.text_vocab)
    throw std::runtime_error("the two stages disagree on the text vocabulary size");
  if (static_cast<long long>(tok.vocab.size()) > ar.cfg.text_vocab)
    throw std::runtime_error("tokenizer vocabulary exceeds the model's text embedding table");

  auto t0 = std::chrono::steady_clock::now();
  std::vector<int> ids = tok.tokenize(req.text);
  ArGeneration gen = ar_generate(ar, ids, req.prompt.layer(0), req.opts);

  SynthesisResult res;
  res.report.truncated = gen.truncated;
  res.report.seed = req.opts.seed;
  if (!gen.codes.empty()) {
    res.codes = nar_generate(nar, ids, req.prompt, gen.codes);
    res.waveform = codec.decode(res.codes);
  }
  auto t1 = std::chrono::steady_clock::now();

  res.report.frames = res.codes.frames;
  res.report.seconds = std::chrono::duration<double>(t1 - t0).count();
  if (res.codes.frames > 0)
    res.report.rtf =
        res.report.seconds / (static_cast<double>(res.codes.frames) / static_cast<double>(kFrameRate));
  return res;
}

}  // namespace tacolm
