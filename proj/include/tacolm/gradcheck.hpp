#pragma once
// Central-difference gradient oracle. Perturbs one parameter entry at a time,
// re-evaluating a scalar-valued closure; refuses to run if the closure is not
// deterministic at the base point (dropout left on, for instance). The audit
// namespace below packages randomized test cases per building block, shared
// by the gradcheck CLI subcommand and the acceptance gate.

#include <functional>
#include <numeric>

#include "tacolm/array.hpp"
#include "tacolm/mask.hpp"
#include "tacolm/model.hpp"

namespace tacolm {

// f() must re-run the full forward using the current contents of `param`.
template <typename Real, typename F>
DenseArray<Real> fd_gradient(F&& f, DenseArray<Real>& param, Real h) {
  Real base1 = static_cast<Real>(f());
  Real base2 = static_cast<Real>(f());
  if (base1 != base2)
    throw std::runtime_error("fd_gradient: objective is not deterministic at the base point");
  DenseArray<Real> grad(param.shape);
  for (std::size_t i = 0; i < param.data.size(); ++i) {
    Real keep = param.data[i];
    param.data[i] = keep + h;
    Real up = static_cast<Real>(f());
    param.data[i] = keep - h;
    Real dn = static_cast<Real>(f());
    param.data[i] = keep;
    grad.data[i] = (up - dn) / (Real(2) * h);
  }
  return grad;
}

// |a-b| / max(1, |a|, |b|), maximised over entries
template <typename Real>
double max_rel_error(const DenseArray<Real>& a, const DenseArray<Real>& b) {
  if (a.shape != b.shape) throw std::runtime_error("max_rel_error: shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    double x = static_cast<double>(a.data[i]), y = static_cast<double>(b.data[i]);
    double den = std::max({1.0, std::fabs(x), std::fabs(y)});
    worst = std::max(worst, std::fabs(x - y) / den);
  }
  return worst;
}

// Randomized gradient-audit cases. Each family draws small shapes, runs one
// tape backward, and returns the worst relative error between the analytic
// gradients (every reachable parameter plus the inputs) and finite
// differences of a 64-bit raw-engine re-evaluation.
namespace audit {

inline constexpr double kFdStep = 1e-5;

inline DenseArray<double> randn(Rng& rng, Shape s, double scl = 1.0) {
  DenseArray<double> a(s);
  for (double& v : a.data) v = scl * rng.gauss();
  return a;
}

inline std::vector<int> iota_pos(long long n) {
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  return p;
}

// worst relative error across every parameter gradient and the input gradient
template <typename Forward>
double layer_case(ParamStore<double>& s, DenseArray<double> X, Forward&& fwd) {
  Tape<double> tape;
  TapeEngine<double> eng(tape, s);
  NodeId x = tape.leaf(X, true);
  tape.backward(tape.sum(fwd(eng, x)));
  auto objective = [&] {
    RawEngine<double> re(s);
    auto xin = re.input(X);
    return kernels::sum_all(*fwd(re, xin));
  };
  double worst = 0.0;
  for (int i = 0; i < static_cast<int>(s.arrays.size()); ++i) {
    const DenseArray<double>* g = eng.grad_of(i);
    if (!g) continue;
    worst = std::max(worst, max_rel_error(*g, fd_gradient(objective, s.arrays[static_cast<std::size_t>(i)], kFdStep)));
  }
  worst = std::max(worst, max_rel_error(tape.grad(x), fd_gradient(objective, X, kFdStep)));
  return worst;
}

// full-model audits cover the embedding tables, the heads, and the final norm
template <typename Model, typename ForwardOn, typename Objective>
double model_case(Model& m, ForwardOn&& fwd, Objective&& objective) {
  Tape<double> tape;
  TapeEngine<double> eng(tape, m.store);
  tape.backward(fwd(eng));
  double worst = 0.0;
  for (int i = 0; i < static_cast<int>(m.store.arrays.size()); ++i) {
    const DenseArray<double>* g = eng.grad_of(i);
    if (!g) continue;  // parameters of untargeted quantizer heads sit outside the graph
    worst = std::max(worst, max_rel_error(*g, fd_gradient(objective, m.store.arrays[static_cast<std::size_t>(i)], kFdStep)));
  }
  return worst;
}

inline double damped_ema(Rng& rng) {
  long long d = 1 + static_cast<long long>(rng.below(4));
  long long h = 1 + static_cast<long long>(rng.below(3));
  long long rows = 2 + static_cast<long long>(rng.below(5));
  ParamStore<double> s;
  EmaParams p = register_ema(s, "e", d, h, rng);
  return layer_case(s, randn(rng, {rows, d}), [&](auto& e, auto x) { return e.damped_ema(x, p); });
}

inline double gpsa(Rng& rng) {
  long long d = 2 + 2 * static_cast<long long>(rng.below(3));
  long long z = 2 + 2 * static_cast<long long>(rng.below(2));
  long long ema = 1 + static_cast<long long>(rng.below(3));
  long long rows = 2 + static_cast<long long>(rng.below(4));
  long long text = static_cast<long long>(rng.below(static_cast<std::uint64_t>(rows)));
  long long chunk = rng.below(3) == 0 ? 2 : 0;
  RopeConfig rope;
  ParamStore<double> s;
  GpsaParams p = register_gpsa(s, "g", d, z, ema, rng);
  auto mask = build_prefix_mask(text, rows - text);
  auto pos = iota_pos(rows);
  return layer_case(s, randn(rng, {rows, d}), [&](auto& e, auto x) {
    return gpsa_layer<double>(e, p, x, mask, pos, rope, chunk);
  });
}

inline double gca(Rng& rng) {
  long long d = 2 + 2 * static_cast<long long>(rng.below(3));
  long long z = 2 + 2 * static_cast<long long>(rng.below(2));
  long long arow = 2 + static_cast<long long>(rng.below(3));
  long long trow = 1 + static_cast<long long>(rng.below(3));
  RopeConfig rope;
  ParamStore<double> s;
  GcaParams p = register_gca(s, "c", d, z, rng);
  DenseArray<double> T = randn(rng, {trow, d});
  auto apos = iota_pos(arow), tpos = iota_pos(trow);
  // text enters as a second differentiable input, so this one gets its own body
  Tape<double> tape;
  TapeEngine<double> eng(tape, s);
  DenseArray<double> A = randn(rng, {arow, d});
  NodeId a = tape.leaf(A, true), t = tape.leaf(T, true);
  tape.backward(tape.sum(gca_layer<double>(eng, p, a, t, apos, tpos, rope)));
  auto objective = [&] {
    RawEngine<double> re(s);
    return kernels::sum_all(*gca_layer<double>(re, p, re.input(A), re.input(T), apos, tpos, rope));
  };
  double worst = 0.0;
  for (int i = 0; i < static_cast<int>(s.arrays.size()); ++i)
    worst = std::max(worst,
                     max_rel_error(*eng.grad_of(i), fd_gradient(objective, s.arrays[static_cast<std::size_t>(i)], kFdStep)));
  worst = std::max(worst, max_rel_error(tape.grad(a), fd_gradient(objective, A, kFdStep)));
  worst = std::max(worst, max_rel_error(tape.grad(t), fd_gradient(objective, T, kFdStep)));
  return worst;
}

inline double ffn(Rng& rng) {
  long long d = 2 + static_cast<long long>(rng.below(5));
  long long w = 1 + static_cast<long long>(rng.below(8));
  long long rows = 1 + static_cast<long long>(rng.below(5));
  ParamStore<double> s;
  FfnParams p = register_ffn(s, "f", d, w, rng);
  return layer_case(s, randn(rng, {rows, d}), [&](auto& e, auto x) { return ffn_block<double>(e, p, x); });
}

inline double mha(Rng& rng) {
  long long d = rng.below(2) == 0 ? 4 : 8;
  int heads = 1 + static_cast<int>(rng.below(2));
  long long rows = 2 + static_cast<long long>(rng.below(4));
  long long text = static_cast<long long>(rng.below(static_cast<std::uint64_t>(rows)));
  RopeConfig rope;
  ParamStore<double> s;
  MhaParams p = register_mha(s, "m", d, heads, rng);
  auto mask = build_prefix_mask(text, rows - text);
  auto pos = iota_pos(rows);
  return layer_case(s, randn(rng, {rows, d}), [&](auto& e, auto x) {
    return mha_baseline_layer<double>(e, p, x, mask, pos, rope);
  });
}

inline ModelConfig micro_config(Rng& rng) {
  ModelConfig c;
  c.d_model = 2 + 2 * static_cast<long long>(rng.below(2));
  c.d_ffn = 3;
  c.ema_dim = 1 + static_cast<long long>(rng.below(2));
  c.qk_v_dim = 2 + 2 * static_cast<long long>(rng.below(2));
  c.ar_blocks = 1;
  c.nar_layers = 1;
  c.text_vocab = 3 + static_cast<long long>(rng.below(5));
  c.dropout = 0.0;
  c.mha_heads = 1;
  return c;
}

inline double ar_model(Rng& rng) {
  ModelConfig cfg = micro_config(rng);
  ArModel<double> m(cfg, ArVariant::Full, rng.next_u64());
  std::vector<int> text, codes;
  for (int i = 0; i < 2 + static_cast<int>(rng.below(3)); ++i)
    text.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.text_vocab))));
  for (int i = 0; i < 3 + static_cast<int>(rng.below(3)); ++i)
    codes.push_back(static_cast<int>(rng.below(kCodebookSize)));
  std::vector<int> targets = codes;
  targets.push_back(kArEosClass);
  return model_case(
      m,
      [&](TapeEngine<double>& eng) {
        return eng.tape().cross_entropy(ar_forward_on<double>(eng, m, text, codes), targets, {});
      },
      [&] {
        RawEngine<double> re(m.store);
        auto logits = ar_forward_on<double>(re, m, text, codes);
        return kernels::cross_entropy_rows<double>(*logits, targets.data(), nullptr, logits->shape[0], nullptr,
                                                   nullptr);
      });
}

inline double nar_model(Rng& rng) {
  ModelConfig cfg = micro_config(rng);
  NarModel<double> m(cfg, rng.next_u64());
  std::vector<int> text;
  for (int i = 0; i < 2 + static_cast<int>(rng.below(3)); ++i)
    text.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.text_vocab))));
  CodeMatrix codes(3 + static_cast<long long>(rng.below(3)));
  for (long long t = 0; t < codes.frames; ++t)
    for (int k = 0; k < kQuantizers; ++k) codes.at(t, k) = static_cast<int>(rng.below(kCodebookSize));
  int layer = 2 + static_cast<int>(rng.below(kQuantizers - 1));
  std::vector<int> targets = codes.layer(layer - 1);
  return model_case(
      m,
      [&](TapeEngine<double>& eng) {
        return eng.tape().cross_entropy(nar_forward_on<double>(eng, m, text, codes, layer), targets, {});
      },
      [&] {
        RawEngine<double> re(m.store);
        auto logits = nar_forward_on<double>(re, m, text, codes, layer);
        return kernels::cross_entropy_rows<double>(*logits, targets.data(), nullptr, logits->shape[0], nullptr,
                                                   nullptr);
      });
}

inline constexpr int kFamilyCount = 7;
inline constexpr const char* kFamilyNames[kFamilyCount] = {"damped_ema", "gpsa",          "gca",
                                                           "ffn",        "mha",           "ar_end_to_end",
                                                           "nar_end_to_end"};

inline double run_family(int f, Rng& rng) {
  switch (f) {
    case 0: return damped_ema(rng);
    case 1: return gpsa(rng);
    case 2: return gca(rng);
    case 3: return ffn(rng);
    case 4: return mha(rng);
    case 5: return ar_model(rng);
    case 6: return nar_model(rng);
  }
  throw std::runtime_error("audit: no such family");
}

}  // namespace audit

}  // namespace tacolm
