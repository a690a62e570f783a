#pragma once
// The two-stage codec language model. The first stage predicts layer-1 codes
// autoregressively from text over a [text][BOS][codes] sequence with a prefix
// mask (bidirectional text, causal audio). The second stage fills layers 2..8
// in parallel from the sum of all lower-layer embeddings, fully bidirectional.
// Both are built on the engine-templated layer pipelines, so the same code
// runs under the tape (training) and the raw evaluator (inference).

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacolm/checkpoint.hpp"
#include "tacolm/codes.hpp"
#include "tacolm/layers.hpp"

namespace tacolm {

struct ModelConfig {
  long long d_model = 384;
  long long d_ffn = 768;
  long long ema_dim = 24;
  long long qk_v_dim = 240;
  int ar_blocks = 6;
  int nar_layers = 12;
  long long text_vocab = 2005;  // tokenizer target 2000 plus reserved ids
  long long audio_vocab = 1024;
  int n_quantizers = 8;
  double dropout = 0.1;
  double rope_base = 10000.0;
  bool rope_enabled = true;
  long long chunk = 0;  // 0 = full attention
  int mha_heads = 8;    // ablation baseline only
  std::string precision = "f32";

  void validate() const {
    if (n_quantizers != kQuantizers) throw std::runtime_error("config: quantizer count must be 8");
    if (audio_vocab != kCodebookSize) throw std::runtime_error("config: audio codebook size must be 1024");
    if (d_model < 1 || d_ffn < 1 || ema_dim < 1 || qk_v_dim < 1 || text_vocab < 1 || ar_blocks < 1 ||
        nar_layers < 1)
      throw std::runtime_error("config: every extent must be at least 1");
    if (d_model % 2 != 0) throw std::runtime_error("config: d_model must be even for rotary pairing");
    if (qk_v_dim % 2 != 0) throw std::runtime_error("config: qk_v_dim must be even for rotary pairing");
    if (mha_heads < 1 || d_model % mha_heads != 0)
      throw std::runtime_error("config: mha_heads must divide d_model");
    if (chunk < 0) throw std::runtime_error("config: chunk must be >= 0");
    if (dropout < 0 || dropout >= 1) throw std::runtime_error("config: dropout must lie in [0,1)");
    if (precision != "f32" && precision != "f64") throw std::runtime_error("config: precision must be f32 or f64");
  }

  RopeConfig rope() const { return RopeConfig{rope_base, rope_enabled}; }

  // desk-scale preset used by tests and the synthetic-corpus trainer
  static ModelConfig tiny() {
    ModelConfig c;
    c.d_model = 64;
    c.d_ffn = 128;
    c.ema_dim = 8;
    c.qk_v_dim = 32;
    c.ar_blocks = 2;
    c.nar_layers = 3;
    c.text_vocab = 256;
    c.mha_heads = 2;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d_model", c.d_model},       {"d_ffn", c.d_ffn},
                     {"ema_dim", c.ema_dim},       {"qk_v_dim", c.qk_v_dim},
                     {"ar_blocks", c.ar_blocks},   {"nar_layers", c.nar_layers},
                     {"text_vocab", c.text_vocab}, {"audio_vocab", c.audio_vocab},
                     {"n_quantizers", c.n_quantizers}, {"dropout", c.dropout},
                     {"rope_base", c.rope_base},   {"rope_enabled", c.rope_enabled},
                     {"chunk", c.chunk},           {"mha_heads", c.mha_heads},
                     {"precision", c.precision}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("d_model").get_to(c.d_model);
  j.at("d_ffn").get_to(c.d_ffn);
  j.at("ema_dim").get_to(c.ema_dim);
  j.at("qk_v_dim").get_to(c.qk_v_dim);
  j.at("ar_blocks").get_to(c.ar_blocks);
  j.at("nar_layers").get_to(c.nar_layers);
  j.at("text_vocab").get_to(c.text_vocab);
  j.at("audio_vocab").get_to(c.audio_vocab);
  j.at("n_quantizers").get_to(c.n_quantizers);
  j.at("dropout").get_to(c.dropout);
  j.at("rope_base").get_to(c.rope_base);
  j.at("rope_enabled").get_to(c.rope_enabled);
  j.at("chunk").get_to(c.chunk);
  j.at("mha_heads").get_to(c.mha_heads);
  j.at("precision").get_to(c.precision);
}

// first-stage trunk variants benchmarked against each other
enum class ArVariant { Full, NoGca, NoGcaNoGpsa };

inline const char* variant_name(ArVariant v) {
  switch (v) {
    case ArVariant::Full: return "full";
    case ArVariant::NoGca: return "no_gca";
    case ArVariant::NoGcaNoGpsa: return "no_gca_no_gpsa";
  }
  throw std::runtime_error("unreachable variant");
}

inline ArVariant parse_variant(const std::string& s) {
  if (s == "full") return ArVariant::Full;
  if (s == "no_gca") return ArVariant::NoGca;
  if (s == "no_gca_no_gpsa") return ArVariant::NoGcaNoGpsa;
  throw std::runtime_error("unknown model variant: " + s + " (expected full, no_gca, or no_gca_no_gpsa)");
}

// ablations swap GCA out for extra depth; the attention-free budget goes into
// a conventional 4x feed-forward for the vanilla-attention baseline
inline int ar_depth(const ModelConfig& c, ArVariant v) {
  return v == ArVariant::Full ? c.ar_blocks : 2 * c.ar_blocks;
}
inline long long ar_ffn_width(const ModelConfig& c, ArVariant v) {
  return v == ArVariant::NoGcaNoGpsa ? 4 * c.d_model : c.d_ffn;
}

template <typename Real>
struct ArModel {
  ModelConfig cfg;
  ArVariant variant = ArVariant::Full;
  ParamStore<Real> store;

  int text_emb = -1, audio_emb = -1, type_emb = -1;
  struct Block {
    GpsaParams gpsa{};
    GcaParams gca{};
    MhaParams mha{};
    FfnParams ffn{};
  };
  std::vector<Block> blocks;
  int final_ln_g = -1, final_ln_b = -1, head_w = -1, head_b = -1;

  ArModel(ModelConfig c, ArVariant v, std::uint64_t seed) : cfg(std::move(c)), variant(v) {
    cfg.validate();
    if (v == ArVariant::NoGcaNoGpsa && cfg.rope_enabled && (cfg.d_model / cfg.mha_heads) % 2 != 0)
      throw std::runtime_error("config: per-head width must be even for rotary pairing");
    Rng rng(seed);
    const long long d = cfg.d_model;
    text_emb = add_gauss(store, "text_emb", Shape{cfg.text_vocab, d}, 0.02, rng);
    audio_emb = add_gauss(store, "audio_emb", Shape{kCodebookSize + 1, d}, 0.02, rng);
    type_emb = add_gauss(store, "type_emb", Shape{2, d}, 0.02, rng);
    for (int b = 0; b < ar_depth(cfg, variant); ++b) {
      Block blk;
      std::string pre = "block" + std::to_string(b);
      if (variant == ArVariant::NoGcaNoGpsa)
        blk.mha = register_mha(store, pre + ".mha", d, cfg.mha_heads, rng);
      else
        blk.gpsa = register_gpsa(store, pre + ".gpsa", d, cfg.qk_v_dim, cfg.ema_dim, rng);
      if (variant == ArVariant::Full) blk.gca = register_gca(store, pre + ".gca", d, cfg.qk_v_dim, rng);
      blk.ffn = register_ffn(store, pre + ".ffn", d, ar_ffn_width(cfg, variant), rng);
      blocks.push_back(blk);
    }
    final_ln_g = add_const<Real>(store, "final_ln.g", Shape{d}, Real(1));
    final_ln_b = add_const<Real>(store, "final_ln.b", Shape{d}, Real(0));
    // zero head: at initialization every class is exactly equally likely
    head_w = add_const<Real>(store, "head.w", Shape{d, kArHeadClasses}, Real(0));
    head_b = add_const<Real>(store, "head.b", Shape{kArHeadClasses}, Real(0));
  }
};

template <typename Real>
struct NarModel {
  ModelConfig cfg;
  ParamStore<Real> store;

  int text_emb = -1, type_emb = -1, qidx_emb = -1;
  std::vector<int> audio_emb;  // 8 independent tables
  struct Block {
    GpsaParams gpsa{};
    FfnParams ffn{};
  };
  std::vector<Block> blocks;
  int final_ln_g = -1, final_ln_b = -1;
  std::vector<int> head_w, head_b;  // 7 heads, target layers 2..8

  explicit NarModel(ModelConfig c, std::uint64_t seed) : cfg(std::move(c)) {
    cfg.validate();
    Rng rng(seed);
    const long long d = cfg.d_model;
    text_emb = add_gauss(store, "text_emb", Shape{cfg.text_vocab, d}, 0.02, rng);
    for (int k = 0; k < kQuantizers; ++k)
      audio_emb.push_back(add_gauss(store, "audio_emb" + std::to_string(k + 1), Shape{kCodebookSize, d}, 0.02, rng));
    qidx_emb = add_gauss(store, "qidx_emb", Shape{kQuantizers - 1, d}, 0.02, rng);
    type_emb = add_gauss(store, "type_emb", Shape{2, d}, 0.02, rng);
    for (int b = 0; b < cfg.nar_layers; ++b) {
      Block blk;
      std::string pre = "block" + std::to_string(b);
      blk.gpsa = register_gpsa(store, pre + ".gpsa", d, cfg.qk_v_dim, cfg.ema_dim, rng);
      blk.ffn = register_ffn(store, pre + ".ffn", d, cfg.d_ffn, rng);
      blocks.push_back(blk);
    }
    final_ln_g = add_const<Real>(store, "final_ln.g", Shape{d}, Real(1));
    final_ln_b = add_const<Real>(store, "final_ln.b", Shape{d}, Real(0));
    for (int l = 2; l <= kQuantizers; ++l) {
      head_w.push_back(add_const<Real>(store, "head" + std::to_string(l) + ".w", Shape{d, kCodebookSize}, Real(0)));
      head_b.push_back(add_const<Real>(store, "head" + std::to_string(l) + ".b", Shape{kCodebookSize}, Real(0)));
    }
  }
};

// ------------------------------------------------------------ param counts

inline long long ar_param_count(const ModelConfig& c, ArVariant v) {
  const long long d = c.d_model;
  long long per_block = ffn_param_count(d, ar_ffn_width(c, v));
  per_block += v == ArVariant::NoGcaNoGpsa ? mha_param_count(d) : gpsa_param_count(d, c.qk_v_dim, c.ema_dim);
  if (v == ArVariant::Full) per_block += gca_param_count(d, c.qk_v_dim);
  return c.text_vocab * d + (kCodebookSize + 1) * d + 2 * d          // embeddings
         + ar_depth(c, v) * per_block                                // trunk
         + 2 * d + d * kArHeadClasses + kArHeadClasses;              // final norm + head
}

inline long long nar_param_count(const ModelConfig& c) {
  const long long d = c.d_model;
  long long per_block = gpsa_param_count(d, c.qk_v_dim, c.ema_dim) + ffn_param_count(d, c.d_ffn);
  return c.text_vocab * d + kQuantizers * kCodebookSize * d + (kQuantizers - 1) * d + 2 * d +
         c.nar_layers * per_block + 2 * d + (kQuantizers - 1) * (d * kCodebookSize + kCodebookSize);
}

// --------------------------------------------------------------- forwards

inline void check_text_ids(const std::vector<int>& text, long long vocab) {
  if (text.empty()) throw std::runtime_error("text sequence is empty");
  for (int id : text)
    if (id < 0 || id >= vocab)
      throw std::runtime_error("text token " + std::to_string(id) + " outside vocabulary of " +
                               std::to_string(vocab));
}

// logits over the Ta+1 audio slots (BOS plus each code position): slot i
// scores p(code_{i+1} | text, codes_{<=i}), with the last class meaning EOS
template <typename Real, typename E>
typename E::H ar_forward_on(E& e, const ArModel<Real>& m, const std::vector<int>& text,
                            const std::vector<int>& codes) {
  using H = typename E::H;
  check_text_ids(text, m.cfg.text_vocab);
  std::vector<int> audio_ids{kArBosId};
  for (int cd : codes) {
    if (cd < 0 || cd >= kCodebookSize)
      throw std::runtime_error("audio code " + std::to_string(cd) + " out of range");
    audio_ids.push_back(cd);
  }
  const long long lt = static_cast<long long>(text.size());
  const long long la = static_cast<long long>(audio_ids.size());

  H tstream = e.add(e.gather_rows(e.param(m.text_emb), text), e.slice_rows(e.param(m.type_emb), 0, 1));
  H astream = e.add(e.gather_rows(e.param(m.audio_emb), audio_ids), e.slice_rows(e.param(m.type_emb), 1, 2));
  H x = e.concat_rows({tstream, astream});

  auto mask = build_prefix_mask(lt, la);
  std::vector<int> pos = [&] {
    std::vector<int> p(static_cast<std::size_t>(lt + la));
    for (long long i = 0; i < lt + la; ++i) p[static_cast<std::size_t>(i)] = static_cast<int>(i);
    return p;
  }();
  std::vector<int> apos(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(la));
  std::vector<int> tpos(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(lt));
  RopeConfig rope = m.cfg.rope();

  for (const auto& blk : m.blocks) {
    if (m.variant == ArVariant::NoGcaNoGpsa)
      x = mha_baseline_layer<Real>(e, blk.mha, x, mask, pos, rope);
    else
      x = gpsa_layer<Real>(e, blk.gpsa, x, mask, pos, rope, m.cfg.chunk);
    if (m.variant == ArVariant::Full) {
      H xa = gca_layer<Real>(e, blk.gca, e.slice_rows(x, lt, lt + la), tstream, apos, tpos, rope);
      x = e.concat_rows({e.slice_rows(x, 0, lt), xa});
    }
    x = ffn_block<Real>(e, blk.ffn, x);
  }
  x = e.layer_norm(x, e.param(m.final_ln_g), e.param(m.final_ln_b));
  H slots = e.slice_rows(x, lt, lt + la);
  return e.add(e.matmul(slots, e.param(m.head_w)), e.param(m.head_b));
}

// frame embedding for second-stage input: sum of the first (l-1) layer tables
// plus the embedding of the target layer index
template <typename Real, typename E>
typename E::H nar_frame_embedding(E& e, const NarModel<Real>& m, const CodeMatrix& codes, int target_layer) {
  using H = typename E::H;
  H f = e.gather_rows(e.param(m.audio_emb[0]), codes.layer(0));
  for (int k = 1; k < target_layer - 1; ++k)
    f = e.add(f, e.gather_rows(e.param(m.audio_emb[static_cast<std::size_t>(k)]), codes.layer(k)));
  f = e.add(f, e.slice_rows(e.param(m.qidx_emb), target_layer - 2, target_layer - 1));
  return e.add(f, e.slice_rows(e.param(m.type_emb), 1, 2));
}

// logits T x 1024 for the requested layer l in [2,8], attending the whole
// [text || frames] sequence bidirectionally
template <typename Real, typename E>
typename E::H nar_forward_on(E& e, const NarModel<Real>& m, const std::vector<int>& text, const CodeMatrix& codes,
                             int target_layer) {
  using H = typename E::H;
  check_text_ids(text, m.cfg.text_vocab);
  if (target_layer < 2 || target_layer > kQuantizers)
    throw std::runtime_error("target layer " + std::to_string(target_layer) + " outside [2,8]");
  if (codes.frames < 1) throw std::runtime_error("acoustic matrix has no frames");
  codes.validate();

  const long long lt = static_cast<long long>(text.size());
  const long long tf = codes.frames;
  H tstream = e.add(e.gather_rows(e.param(m.text_emb), text), e.slice_rows(e.param(m.type_emb), 0, 1));
  H fstream = nar_frame_embedding(e, m, codes, target_layer);
  H x = e.concat_rows({tstream, fstream});

  std::vector<int> pos(static_cast<std::size_t>(lt + tf));
  for (long long i = 0; i < lt + tf; ++i) pos[static_cast<std::size_t>(i)] = static_cast<int>(i);
  RopeConfig rope = m.cfg.rope();

  for (const auto& blk : m.blocks) {
    x = gpsa_layer<Real>(e, blk.gpsa, x, nullptr, pos, rope, m.cfg.chunk);
    x = ffn_block<Real>(e, blk.ffn, x);
  }
  x = e.layer_norm(x, e.param(m.final_ln_g), e.param(m.final_ln_b));
  H frames = e.slice_rows(x, lt, lt + tf);
  int hw = m.head_w[static_cast<std::size_t>(target_layer - 2)];
  int hb = m.head_b[static_cast<std::size_t>(target_layer - 2)];
  return e.add(e.matmul(frames, e.param(hw)), e.param(hb));
}

// no-grad convenience wrappers
template <typename Real>
DenseArray<Real> ar_forward(const ArModel<Real>& m, const std::vector<int>& text, const std::vector<int>& codes) {
  RawEngine<Real> e(m.store);
  return *ar_forward_on(e, m, text, codes);
}

template <typename Real>
DenseArray<Real> nar_forward(const NarModel<Real>& m, const std::vector<int>& text, const CodeMatrix& codes,
                             int target_layer) {
  RawEngine<Real> e(m.store);
  return *nar_forward_on(e, m, text, codes, target_layer);
}

// ------------------------------------------------------------- persistence

inline void save_ar_model(const std::string& path, const ArModel<float>& m) {
  nlohmann::json j = m.cfg;
  j["kind"] = "ar";
  j["variant"] = variant_name(m.variant);
  save_checkpoint(path, j, m.store);
}

inline ArModel<float> load_ar_model(const std::string& path) {
  LoadedCheckpoint ck = read_checkpoint(path);
  if (ck.config.value("kind", "") != "ar")
    throw std::runtime_error(path + " is not a first-stage model checkpoint");
  ArModel<float> m(ck.config.get<ModelConfig>(), parse_variant(ck.config.at("variant").get<std::string>()), 0);
  load_checkpoint_into(path, m.store);
  return m;
}

inline void save_nar_model(const std::string& path, const NarModel<float>& m) {
  nlohmann::json j = m.cfg;
  j["kind"] = "nar";
  save_checkpoint(path, j, m.store);
}

inline NarModel<float> load_nar_model(const std::string& path) {
  LoadedCheckpoint ck = read_checkpoint(path);
  if (ck.config.value("kind", "") != "nar")
    throw std::runtime_error(path + " is not a second-stage model checkpoint");
  NarModel<float> m(ck.config.get<ModelConfig>(), 0);
  load_checkpoint_into(path, m.store);
  return m;
}

}  // namespace tacolm
