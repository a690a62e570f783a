// Command-line front end: synthetic corpus generation, two-stage training,
// synthesis to WAV, perplexity evaluation, the attention benchmark, the
// three-variant ablation, and a finite-difference gradient audit.
//
// Conventions: machine-readable results go to stdout (or to --out FILE);
// progress and human-oriented tables go to stderr. Exit 0 on success,
// 1 on runtime failure, 2 on usage errors.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tacolm/array.hpp"
#include "tacolm/bench.hpp"
#include "tacolm/codec.hpp"
#include "tacolm/codes.hpp"
#include "tacolm/corpus.hpp"
#include "tacolm/decode.hpp"
#include "tacolm/gradcheck.hpp"
#include "tacolm/kernels.hpp"
#include "tacolm/layers.hpp"
#include "tacolm/mask.hpp"
#include "tacolm/model.hpp"
#include "tacolm/rng.hpp"
#include "tacolm/tape.hpp"
#include "tacolm/tokenizer.hpp"
#include "tacolm/trainer.hpp"
#include "tacolm/wav.hpp"

using namespace tacolm;
using nlohmann::json;

namespace {

void emit(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::fwrite(text.data(), 1, text.size(), stdout);
    std::fflush(stdout);
    return;
  }
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  std::size_t put = std::fwrite(text.data(), 1, text.size(), f);
  bool ok = std::fclose(f) == 0 && put == text.size();
  if (!ok) throw std::runtime_error("failed writing " + path);
}

std::string read_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string text;
  char buf[1 << 14];
  std::size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, got);
  std::fclose(f);
  return text;
}

void expect_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed) known = known || item.key() == k;
    if (!known) throw std::runtime_error("config: unknown key '" + item.key() + "' in " + where);
  }
}

template <typename T>
void get_if(const json& j, const char* key, T& v) {
  if (j.contains(key)) j.at(key).get_to(v);
}

// global flags shared by every subcommand
struct Global {
  std::string config_path;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  bool deterministic = false;
  mutable std::optional<json> loaded;

  std::uint64_t seed_or(std::uint64_t fallback) const {
    return seed_opt != nullptr && seed_opt->count() > 0 ? seed : fallback;
  }

  const json& config() const {
    if (!loaded) {
      if (config_path.empty()) {
        loaded = json::object();
      } else {
        loaded = json::parse(read_file(config_path));
        if (!loaded->is_object()) throw std::runtime_error("config: top level must be a JSON object");
        expect_keys(*loaded, {"model", "train", "decode"}, "the config file");
      }
    }
    return *loaded;
  }
};

void validate_config(const Global& g);

// the "model" section patches a base config; unknown keys are rejected
ModelConfig model_config_from(const json& root, ModelConfig base) {
  if (!root.contains("model")) return base;
  json merged = base;
  const json& patch = root.at("model");
  for (const auto& item : patch.items())
    if (!merged.contains(item.key()))
      throw std::runtime_error("config: unknown key '" + item.key() + "' in the model section");
  merged.update(patch);
  return merged.get<ModelConfig>();
}

struct TrainSection {
  TrainConfig tc;
  bool steps_given = false, warmup_given = false, total_given = false;
};

TrainSection train_config_from(const json& root) {
  TrainSection out;
  if (!root.contains("train")) return out;
  const json& j = root.at("train");
  expect_keys(j, {"steps", "token_budget", "seed", "stop_below_loss", "trace_csv", "optim", "schedule"}, "the train section");
  out.steps_given = j.contains("steps");
  get_if(j, "steps", out.tc.steps);
  get_if(j, "token_budget", out.tc.token_budget);
  get_if(j, "seed", out.tc.seed);
  get_if(j, "stop_below_loss", out.tc.stop_below_loss);
  get_if(j, "trace_csv", out.tc.trace_csv);
  if (j.contains("optim")) {
    const json& o = j.at("optim");
    expect_keys(o, {"beta1", "beta2", "eps", "weight_decay", "clip_norm"}, "the train.optim section");
    get_if(o, "beta1", out.tc.optim.beta1);
    get_if(o, "beta2", out.tc.optim.beta2);
    get_if(o, "eps", out.tc.optim.eps);
    get_if(o, "weight_decay", out.tc.optim.weight_decay);
    get_if(o, "clip_norm", out.tc.optim.clip_norm);
  }
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    expect_keys(s, {"peak_lr", "warmup_steps", "total_steps"}, "the train.schedule section");
    get_if(s, "peak_lr", out.tc.schedule.peak_lr);
    get_if(s, "warmup_steps", out.tc.schedule.warmup_steps);
    get_if(s, "total_steps", out.tc.schedule.total_steps);
    out.warmup_given = s.contains("warmup_steps");
    out.total_given = s.contains("total_steps");
  }
  return out;
}

// When the caller pins neither end of the schedule, fit it to the step budget:
// a tenth of the run warms up, the rest decays, instead of the long-run
// defaults parking a short run inside the warmup ramp.
void finish_schedule(TrainConfig& tc, bool warmup_given, bool total_given) {
  if (!warmup_given && !total_given) {
    tc.schedule.warmup_steps = std::max<long long>(1, tc.steps / 10);
    tc.schedule.total_steps = std::max(tc.steps, tc.schedule.warmup_steps) + 1;
  } else if (!total_given) {
    tc.schedule.total_steps = std::max(tc.steps + 1, tc.schedule.warmup_steps + 2);
  } else if (!warmup_given) {
    tc.schedule.warmup_steps = std::max<long long>(1, std::min(tc.steps / 10, tc.schedule.total_steps - 1));
  }
}

DecodeOptions decode_options_from(const json& root) {
  DecodeOptions opts;
  if (!root.contains("decode")) return opts;
  const json& j = root.at("decode");
  expect_keys(j, {"temperature", "top_k", "max_new_tokens"}, "the decode section");
  get_if(j, "temperature", opts.temperature);
  get_if(j, "top_k", opts.top_k);
  get_if(j, "max_new_tokens", opts.max_new_tokens);
  return opts;
}

// reject typos up front even for subcommands that ignore the offending section
void validate_config(const Global& g) {
  const json& root = g.config();
  model_config_from(root, ModelConfig{});
  train_config_from(root);
  decode_options_from(root);
}

std::string corpus_jsonl(const std::vector<CorpusRecord>& records) {
  std::string out;
  for (const CorpusRecord& rec : records) {
    out += record_to_json(rec).dump();
    out += '\n';
  }
  return out;
}

int max_text_id(const std::vector<CorpusRecord>& records) {
  int worst = 0;
  for (const CorpusRecord& rec : records)
    for (int id : rec.text_ids) worst = std::max(worst, id);
  return worst;
}

void check_corpus_fits(const std::vector<CorpusRecord>& records, const ModelConfig& cfg) {
  int top = max_text_id(records);
  if (top >= cfg.text_vocab)
    throw std::runtime_error("corpus token ids reach " + std::to_string(top) +
                             " but the model's text vocabulary is " + std::to_string(cfg.text_vocab) +
                             "; raise model.text_vocab");
}

// small matched-depth preset for bench/ablate: 12 attention layers per
// variant, sized so the 4096-token rows fit the timing budget of one core
ModelConfig bench_default() {
  ModelConfig c;
  c.d_model = 32;
  c.d_ffn = 64;
  c.ema_dim = 4;
  c.qk_v_dim = 16;
  c.ar_blocks = 6;
  c.text_vocab = 64;
  c.mha_heads = 1;
  c.dropout = 0.0;
  return c;
}

ModelConfig ablate_default() {
  ModelConfig c = ModelConfig::tiny();
  c.ar_blocks = 6;        // 12 attention layers in every variant
  c.text_vocab = 2005;    // covers the default generated corpus
  return c;
}

// ------------------------------------------------------------- subcommands

struct GenArgs {
  int n = 300;
  double min_dur = 0.7, max_dur = 1.3;
  int vocab_target = 2000;
  std::string out, tokenizer;
};

int run_gen(const GenArgs& a, const Global& g) {
  CorpusParams params;
  params.n_utts = a.n;
  params.min_dur = a.min_dur;
  params.max_dur = a.max_dur;
  params.vocab_target = a.vocab_target;
  params.seed = g.seed_or(params.seed);
  ToyCodec codec;
  Corpus corpus = generate_corpus(params, codec);
  long long frames = 0;
  for (const CorpusRecord& rec : corpus.records) frames += rec.codes.frames;
  if (!a.tokenizer.empty()) corpus.tokenizer.save(a.tokenizer);
  emit(corpus_jsonl(corpus.records), a.out);
  std::fprintf(stderr, "gen-corpus: %d utterances, %lld frames, tokenizer vocab %zu, seed %llu\n", a.n, frames,
               corpus.tokenizer.vocab.size(), static_cast<unsigned long long>(params.seed));
  return 0;
}

struct TrainArgs {
  std::string corpus, save, out, trace, variant = "full";
  long long steps = 0, token_budget = 0, warmup = 0, total = 0;
  double peak_lr = 0.0, stop_below = 0.0;
  CLI::Option *steps_opt = nullptr, *budget_opt = nullptr, *warmup_opt = nullptr, *total_opt = nullptr,
              *peak_opt = nullptr, *stop_opt = nullptr, *trace_opt = nullptr;
};

TrainConfig resolve_train(const TrainArgs& a, const Global& g, long long default_steps) {
  TrainSection sec = train_config_from(g.config());
  TrainConfig tc = sec.tc;
  if (!sec.steps_given) tc.steps = default_steps;
  if (a.steps_opt->count()) tc.steps = a.steps;
  if (a.budget_opt->count()) tc.token_budget = a.token_budget;
  if (a.peak_opt->count()) tc.schedule.peak_lr = a.peak_lr;
  if (a.warmup_opt->count()) tc.schedule.warmup_steps = a.warmup;
  if (a.total_opt->count()) tc.schedule.total_steps = a.total;
  if (a.stop_opt->count()) tc.stop_below_loss = a.stop_below;
  if (a.trace_opt->count()) tc.trace_csv = a.trace;
  tc.seed = g.seed_or(tc.seed);
  finish_schedule(tc, sec.warmup_given || a.warmup_opt->count() > 0, sec.total_given || a.total_opt->count() > 0);
  return tc;
}

int run_train(const TrainArgs& a, const Global& g, bool autoregressive) {
  std::vector<CorpusRecord> corpus = load_corpus_jsonl(a.corpus);
  if (corpus.empty()) throw std::runtime_error(a.corpus + " holds no records");
  ModelConfig cfg = model_config_from(g.config(), ModelConfig{});
  check_corpus_fits(corpus, cfg);
  TrainConfig tc = resolve_train(a, g, TrainConfig{}.steps);

  json summary;
  if (autoregressive) {
    ArModel<float> model(cfg, parse_variant(a.variant), tc.seed);
    std::fprintf(stderr, "train-ar: %s variant, %lld parameters, %zu records, %lld steps\n", a.variant.c_str(),
                 ar_param_count(cfg, model.variant), corpus.size(), tc.steps);
    TrainResult res = train_ar(model, corpus, tc);
    save_ar_model(a.save, model);
    summary = {{"kind", "ar"},
               {"variant", a.variant},
               {"params", ar_param_count(cfg, model.variant)},
               {"initial_loss", res.initial_loss},
               {"final_loss", res.final_loss},
               {"steps_run", res.steps_run},
               {"seed", tc.seed},
               {"checkpoint", a.save}};
  } else {
    NarModel<float> model(cfg, tc.seed);
    std::fprintf(stderr, "train-nar: %lld parameters, %zu records, %lld steps\n", nar_param_count(cfg),
                 corpus.size(), tc.steps);
    TrainResult res = train_nar(model, corpus, tc);
    save_nar_model(a.save, model);
    summary = {{"kind", "nar"},
               {"params", nar_param_count(cfg)},
               {"initial_loss", res.initial_loss},
               {"final_loss", res.final_loss},
               {"steps_run", res.steps_run},
               {"seed", tc.seed},
               {"checkpoint", a.save}};
  }
  std::fprintf(stderr, "%s: loss %.4f -> %.4f over %lld steps, saved %s\n", autoregressive ? "train-ar" : "train-nar",
               summary["initial_loss"].get<double>(), summary["final_loss"].get<double>(),
               summary["steps_run"].get<long long>(), a.save.c_str());
  emit(summary.dump(2) + "\n", a.out);
  return 0;
}

struct SynthArgs {
  std::string ar, nar, tokenizer, text, wav, codes, out;
  std::string prompt_corpus, prompt_id;
  long long prompt_frames = 0;
  double temperature = 0.0;
  int top_k = 0;
  long long max_new = 0;
  CLI::Option *temp_opt = nullptr, *topk_opt = nullptr, *max_opt = nullptr;
};

int run_synth(const SynthArgs& a, const Global& g) {
  SynthesisRequest req;
  req.text = a.text;
  req.opts = decode_options_from(g.config());
  if (a.temp_opt->count()) req.opts.temperature = a.temperature;
  if (a.topk_opt->count()) req.opts.top_k = a.top_k;
  if (a.max_opt->count()) req.opts.max_new_tokens = a.max_new;
  req.opts.seed = g.seed_or(req.opts.seed);

  if (!a.prompt_corpus.empty()) {
    std::vector<CorpusRecord> recs = load_corpus_jsonl(a.prompt_corpus);
    auto it = std::find_if(recs.begin(), recs.end(), [&](const CorpusRecord& r) { return r.id == a.prompt_id; });
    if (it == recs.end()) throw std::runtime_error(a.prompt_corpus + " has no record with id '" + a.prompt_id + "'");
    long long take = a.prompt_frames > 0 ? std::min(a.prompt_frames, it->codes.frames) : it->codes.frames;
    req.prompt = CodeMatrix(take);
    for (long long t = 0; t < take; ++t)
      for (int k = 0; k < kQuantizers; ++k) req.prompt.at(t, k) = it->codes.at(t, k);
  }

  ArModel<float> ar = load_ar_model(a.ar);
  NarModel<float> nar = load_nar_model(a.nar);
  ToyTextTokenizer tok = ToyTextTokenizer::load(a.tokenizer);
  ToyCodec codec;
  SynthesisResult res = synthesize(req, ar, nar, codec, tok);

  if (!a.wav.empty()) write_wav_pcm16(a.wav, res.waveform, kSampleRate);
  if (!a.codes.empty()) {
    json rows = json::array();
    for (long long t = 0; t < res.codes.frames; ++t) {
      json row = json::array();
      for (int k = 0; k < kQuantizers; ++k) row.push_back(res.codes.at(t, k));
      rows.push_back(std::move(row));
    }
    emit(json{{"frames", res.codes.frames}, {"codes", std::move(rows)}}.dump() + "\n", a.codes);
  }
  std::fprintf(stderr, "synthesize: %lld frames (%.2f s audio) in %.2f s wall, rtf %.2f%s%s\n", res.report.frames,
               static_cast<double>(res.report.frames) / kFrameRate, res.report.seconds, res.report.rtf,
               res.report.truncated ? ", truncated" : "", a.wav.empty() ? ", waveform discarded (no --wav)" : "");
  emit(json(res.report).dump(2) + "\n", a.out);
  return 0;
}

struct PplArgs {
  std::string model, corpus, out;
};

int run_ppl(const PplArgs& a) {
  ArModel<float> model = load_ar_model(a.model);
  std::vector<CorpusRecord> corpus = load_corpus_jsonl(a.corpus);
  if (corpus.empty()) throw std::runtime_error(a.corpus + " holds no records");
  check_corpus_fits(corpus, model.cfg);
  double ce = eval_ar_ce(model, corpus);
  json out = {{"ce", ce}, {"ppl", std::exp(ce)}, {"records", corpus.size()}};
  std::fprintf(stderr, "ppl: %zu records, ce %.4f, ppl %.3f\n", corpus.size(), ce, std::exp(ce));
  emit(out.dump(2) + "\n", a.out);
  return 0;
}

struct BenchArgs {
  std::vector<long long> seq_lens{512, 1024, 2048, 4096};
  std::vector<std::string> variants{"full", "no_gca", "no_gca_no_gpsa"};
  int repeats = 5;
  long long text_len = 16;
  bool no_rtf = false;
  std::string out, md;
};

int run_bench(const BenchArgs& a, const Global& g) {
  ModelConfig cfg = model_config_from(g.config(), bench_default());
  BenchOptions opt;
  opt.seq_lens = a.seq_lens;
  opt.variants.clear();
  for (const std::string& v : a.variants) opt.variants.push_back(parse_variant(v));
  opt.repeats = a.repeats;
  opt.text_len = a.text_len;
  opt.measure_rtf = !a.no_rtf;
  opt.seed = g.seed_or(opt.seed);
  std::fprintf(stderr, "bench: %zu variants x %zu lengths, repeats %d (the 4096-token rows run minutes)\n",
               opt.variants.size(), opt.seq_lens.size(), opt.repeats);
  std::vector<BenchReport> rows = bench_attention<float>(cfg, opt);
  std::string md = bench_markdown(rows);
  if (a.md.empty())
    std::fputs(md.c_str(), stderr);
  else
    emit(md, a.md);
  emit(bench_csv(rows), a.out);
  return 0;
}

struct AblateArgs {
  std::string corpus, out, md;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  long long rtf_frames = 150;
  TrainArgs train;  // reuses the training flag block; corpus/save unused
};

int run_ablate(const AblateArgs& a, const Global& g) {
  std::vector<CorpusRecord> corpus = load_corpus_jsonl(a.corpus);
  if (corpus.empty()) throw std::runtime_error(a.corpus + " holds no records");
  ModelConfig cfg = model_config_from(g.config(), ablate_default());
  check_corpus_fits(corpus, cfg);
  AblationOptions opt;
  opt.train = resolve_train(a.train, g, 60);  // modest default budget; raise with --steps or --config
  if (!opt.train.trace_csv.empty()) {
    std::fprintf(stderr, "ablate: ignoring trace_csv (one trace per variant would collide)\n");
    opt.train.trace_csv.clear();
  }
  opt.seeds = a.seeds;
  opt.rtf_frames = a.rtf_frames;
  std::fprintf(stderr, "ablate: 3 variants x %zu seeds, %lld steps each on %zu records\n", opt.seeds.size(),
               opt.train.steps, corpus.size());
  std::vector<AblationRow> rows = ablate<float>(cfg, corpus, opt);
  std::string md = ablation_markdown(rows);
  if (a.md.empty())
    std::fputs(md.c_str(), stderr);
  else
    emit(md, a.md);
  emit(ablation_csv(rows), a.out);
  return 0;
}

// ---------------------------------------------------------- gradient audit

struct GradArgs {
  int trials = 100;
  double tol = 1e-4;
  std::string out;
};

int run_gradcheck(const GradArgs& a, const Global& g) {
  std::uint64_t seed = g.seed_or(123);
  Rng rng(seed);
  std::vector<double> worst(audit::kFamilyCount, 0.0);
  std::vector<int> counts(audit::kFamilyCount, 0);
  for (int i = 0; i < a.trials; ++i) {
    int fam = i % audit::kFamilyCount;
    worst[static_cast<std::size_t>(fam)] =
        std::max(worst[static_cast<std::size_t>(fam)], audit::run_family(fam, rng));
    ++counts[static_cast<std::size_t>(fam)];
  }
  bool pass = true;
  json worst_json = json::object(), count_json = json::object();
  for (int f = 0; f < audit::kFamilyCount; ++f) {
    if (counts[static_cast<std::size_t>(f)] == 0) continue;
    bool ok = worst[static_cast<std::size_t>(f)] <= a.tol;
    pass = pass && ok;
    worst_json[audit::kFamilyNames[f]] = worst[static_cast<std::size_t>(f)];
    count_json[audit::kFamilyNames[f]] = counts[static_cast<std::size_t>(f)];
    std::fprintf(stderr, "gradcheck: %-14s %3d trials, worst rel err %.3g %s\n", audit::kFamilyNames[f],
                 counts[static_cast<std::size_t>(f)], worst[static_cast<std::size_t>(f)],
                 ok ? "ok" : "EXCEEDS TOLERANCE");
  }
  json out = {{"trials", a.trials}, {"tol", a.tol},   {"seed", seed},
              {"counts", count_json}, {"worst", worst_json}, {"pass", pass}};
  emit(out.dump(2) + "\n", a.out);
  if (!pass) throw std::runtime_error("gradient check exceeded the tolerance; see the worst-case table");
  return 0;
}

void add_train_flags(CLI::App* cmd, TrainArgs& a) {
  a.steps_opt = cmd->add_option("--steps", a.steps, "optimizer steps");
  a.budget_opt = cmd->add_option("--token-budget", a.token_budget, "rows per batch");
  a.peak_opt = cmd->add_option("--peak-lr", a.peak_lr, "peak learning rate");
  a.warmup_opt = cmd->add_option("--warmup-steps", a.warmup, "linear warmup length");
  a.total_opt = cmd->add_option("--total-steps", a.total, "decay horizon");
  a.stop_opt = cmd->add_option("--stop-below-loss", a.stop_below, "early-stop threshold");
  a.trace_opt = cmd->add_option("--trace", a.trace, "per-step CSV trace path");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stage codec language model: corpus, training, synthesis, and measurement tools"};
  app.require_subcommand(1);
  app.fallthrough();

  Global g;
  app.add_option("--config", g.config_path, "JSON config file with model/train/decode sections");
  g.seed_opt = app.add_option("--seed", g.seed, "seed overriding every subcommand default");
  app.add_flag("--deterministic", g.deterministic,
               "accepted for script compatibility; runs are always deterministic (single-threaded, explicit seeds)");

  auto gen = std::make_shared<GenArgs>();
  CLI::App* gen_cmd = app.add_subcommand("gen-corpus", "emit a synthetic paired text/code corpus as JSONL");
  gen_cmd->add_option("--n", gen->n, "utterance count")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--min-dur", gen->min_dur, "shortest utterance, seconds");
  gen_cmd->add_option("--max-dur", gen->max_dur, "longest utterance, seconds");
  gen_cmd->add_option("--vocab-target", gen->vocab_target, "tokenizer merge budget");
  gen_cmd->add_option("--out", gen->out, "JSONL path (default stdout)");
  gen_cmd->add_option("--tokenizer", gen->tokenizer, "also save the tokenizer table here");

  auto tar = std::make_shared<TrainArgs>();
  CLI::App* tar_cmd = app.add_subcommand("train-ar", "train the first-stage model on a JSONL corpus");
  tar_cmd->add_option("--corpus", tar->corpus, "training corpus (JSONL)")->required();
  tar_cmd->add_option("--save", tar->save, "checkpoint output path")->required();
  tar_cmd->add_option("--variant", tar->variant, "full | no_gca | no_gca_no_gpsa");
  add_train_flags(tar_cmd, *tar);
  tar_cmd->add_option("--out", tar->out, "JSON training summary (default stdout)");

  auto tnar = std::make_shared<TrainArgs>();
  CLI::App* tnar_cmd = app.add_subcommand("train-nar", "train the second-stage model on a JSONL corpus");
  tnar_cmd->add_option("--corpus", tnar->corpus, "training corpus (JSONL)")->required();
  tnar_cmd->add_option("--save", tnar->save, "checkpoint output path")->required();
  add_train_flags(tnar_cmd, *tnar);
  tnar_cmd->add_option("--out", tnar->out, "JSON training summary (default stdout)");

  auto syn = std::make_shared<SynthArgs>();
  CLI::App* syn_cmd = app.add_subcommand("synthesize", "run text through both stages and the codec");
  syn_cmd->add_option("--ar", syn->ar, "first-stage checkpoint")->required();
  syn_cmd->add_option("--nar", syn->nar, "second-stage checkpoint")->required();
  syn_cmd->add_option("--tokenizer", syn->tokenizer, "tokenizer table from gen-corpus")->required();
  syn_cmd->add_option("--text", syn->text, "sentence to synthesize")->required();
  syn_cmd->add_option("--wav", syn->wav, "write the waveform here (PCM16, 24 kHz)");
  syn_cmd->add_option("--codes", syn->codes, "write the generated code matrix here (JSON)");
  syn->temp_opt = syn_cmd->add_option("--temperature", syn->temperature, "sampling temperature");
  syn->topk_opt = syn_cmd->add_option("--top-k", syn->top_k, "sampling pool size");
  syn->max_opt = syn_cmd->add_option("--max-new-tokens", syn->max_new, "generation cap in frames");
  CLI::Option* pc = syn_cmd->add_option("--prompt-corpus", syn->prompt_corpus, "corpus holding the enrollment prompt");
  CLI::Option* pi = syn_cmd->add_option("--prompt-id", syn->prompt_id, "record id of the prompt");
  syn_cmd->add_option("--prompt-frames", syn->prompt_frames, "prompt frames to keep (default all)")->needs(pc);
  pc->needs(pi);
  pi->needs(pc);
  syn_cmd->add_option("--out", syn->out, "JSON synthesis report (default stdout)");

  auto ppl = std::make_shared<PplArgs>();
  CLI::App* ppl_cmd = app.add_subcommand("ppl", "first-stage perplexity over a corpus");
  ppl_cmd->add_option("--model", ppl->model, "first-stage checkpoint")->required();
  ppl_cmd->add_option("--corpus", ppl->corpus, "evaluation corpus (JSONL)")->required();
  ppl_cmd->add_option("--out", ppl->out, "JSON result (default stdout)");

  auto ben = std::make_shared<BenchArgs>();
  CLI::App* ben_cmd = app.add_subcommand("bench", "time the trunk variants across sequence lengths");
  ben_cmd->add_option("--seq-lens", ben->seq_lens, "sequence lengths")->delimiter(',');
  ben_cmd->add_option("--variants", ben->variants, "trunk variants to measure")->delimiter(',');
  ben_cmd->add_option("--repeats", ben->repeats, "medians over this many repeats")->check(CLI::PositiveNumber);
  ben_cmd->add_option("--text-len", ben->text_len, "text tokens inside each sequence");
  ben_cmd->add_flag("--no-rtf", ben->no_rtf, "skip the incremental-generation latency column");
  ben_cmd->add_option("--md", ben->md, "markdown table path (default stderr)");
  ben_cmd->add_option("--out", ben->out, "CSV path (default stdout)");

  auto abl = std::make_shared<AblateArgs>();
  CLI::App* abl_cmd = app.add_subcommand("ablate", "train all three variants on one budget and compare");
  abl_cmd->add_option("--corpus", abl->corpus, "training corpus (JSONL)")->required();
  add_train_flags(abl_cmd, abl->train);
  abl_cmd->add_option("--seeds", abl->seeds, "one training run per seed")->delimiter(',');
  abl_cmd->add_option("--rtf-frames", abl->rtf_frames, "generation budget for the latency column");
  abl_cmd->add_option("--md", abl->md, "markdown table path (default stderr)");
  abl_cmd->add_option("--out", abl->out, "CSV path (default stdout)");

  auto grd = std::make_shared<GradArgs>();
  CLI::App* grd_cmd = app.add_subcommand("gradcheck", "finite-difference audit of analytic gradients (64-bit)");
  grd_cmd->add_option("--trials", grd->trials, "randomized trials across layer and model families")
      ->check(CLI::PositiveNumber);
  grd_cmd->add_option("--tol", grd->tol, "max relative error accepted");
  grd_cmd->add_option("--out", grd->out, "JSON result (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    validate_config(g);
    if (gen_cmd->parsed()) return run_gen(*gen, g);
    if (tar_cmd->parsed()) return run_train(*tar, g, true);
    if (tnar_cmd->parsed()) return run_train(*tnar, g, false);
    if (syn_cmd->parsed()) return run_synth(*syn, g);
    if (ppl_cmd->parsed()) return run_ppl(*ppl);
    if (ben_cmd->parsed()) return run_bench(*ben, g);
    if (abl_cmd->parsed()) return run_ablate(*abl, g);
    if (grd_cmd->parsed()) return run_gradcheck(*grd, g);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
