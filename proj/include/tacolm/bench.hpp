#pragma once
// Efficiency and ablation harness. Times the batched forward and
// forward+backward passes per trunk variant and sequence length, tracks
// allocator peaks, measures generation speed through the incremental session,
// and trains the three variants head-to-head on one corpus. Every emitted row
// carries the seed and a hardware descriptor so numbers are never anonymous.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "tacolm/decode.hpp"
#include "tacolm/trainer.hpp"

namespace tacolm {

// ----------------------------------------------------------------- plumbing

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::runtime_error("median of an empty sample");
  std::sort(v.begin(), v.end());
  std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

// cpu model plus the fixed single-thread note; commas stripped so the string
// can sit in a CSV field
inline std::string hardware_descriptor() {
  std::string model = "unknown cpu";
  if (std::FILE* f = std::fopen("/proc/cpuinfo", "rb")) {
    char line[512];
    while (std::fgets(line, sizeof line, f)) {
      std::string s(line);
      if (s.rfind("model name", 0) == 0) {
        std::size_t colon = s.find(':');
        if (colon != std::string::npos) {
          model = s.substr(colon + 1);
          break;
        }
      }
    }
    std::fclose(f);
  }
  std::string out;
  for (char c : model)
    if (c != ',' && c != '\n' && c != '\r') out += c;
  while (!out.empty() && out.front() == ' ') out.erase(out.begin());
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out + " / 1 thread";
}

namespace bench_detail {

inline double now_ms() {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

// median wall time of `repeats` samples, one warm-up excluded; short bodies
// are looped until each sample spans a few milliseconds so the timer
// resolution cannot dominate
template <typename F>
double median_ms(F&& body, int repeats) {
  double t0 = now_ms();
  body();
  double warm = now_ms() - t0;
  int inner = warm >= 5.0 ? 1 : static_cast<int>(std::ceil(5.0 / std::max(warm, 5e-3)));
  inner = std::min(inner, 1000);
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(repeats));
  for (int r = 0; r < repeats; ++r) {
    double a = now_ms();
    for (int i = 0; i < inner; ++i) body();
    samples.push_back((now_ms() - a) / inner);
  }
  return median(std::move(samples));
}

}  // namespace bench_detail

// ------------------------------------------------------------- timing rows

struct BenchReport {
  std::string variant;
  long long seq_len = 0;
  long long params = 0;
  long long peak_bytes = 0;
  double fwd_ms = 0.0;
  double fwdbwd_ms = 0.0;
  double tokens_per_s = 0.0;  // batched forward+backward throughput
  double rtf = 0.0;           // incremental generation, seconds per audio second
  std::uint64_t seed = 0;
  std::string hw;
};

struct BenchOptions {
  std::vector<ArVariant> variants{ArVariant::Full, ArVariant::NoGca, ArVariant::NoGcaNoGpsa};
  std::vector<long long> seq_lens{512, 1024, 2048, 4096};
  int repeats = 5;
  long long text_len = 16;
  std::uint64_t seed = 1;
  bool measure_rtf = true;

  void validate() const {
    if (variants.empty() || seq_lens.empty()) throw std::runtime_error("bench: nothing to measure");
    if (repeats < 1) throw std::runtime_error("bench: repeats must be at least 1");
    if (text_len < 1) throw std::runtime_error("bench: text span must be at least 1 token");
    for (long long l : seq_lens)
      if (l < text_len + 2)
        throw std::runtime_error("bench: sequence length " + std::to_string(l) +
                                 " leaves no room for audio after " + std::to_string(text_len) + " text tokens");
  }
};

template <typename Real>
std::vector<BenchReport> bench_attention(const ModelConfig& cfg, const BenchOptions& opt) {
  opt.validate();
  cfg.validate();
  const std::string hw = hardware_descriptor();
  std::vector<BenchReport> rows;

  for (ArVariant v : opt.variants) {
    ArModel<Real> m(cfg, v, opt.seed);
    for (long long seq : opt.seq_lens) {
      Rng rng(opt.seed ^ static_cast<std::uint64_t>(seq));
      std::vector<int> text(static_cast<std::size_t>(opt.text_len));
      for (int& t : text) t = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.text_vocab)));
      // total rows = text + start marker + codes
      const long long n_codes = seq - opt.text_len - 1;
      std::vector<int> codes(static_cast<std::size_t>(n_codes));
      for (int& c : codes) c = static_cast<int>(rng.below(kCodebookSize));
      std::vector<int> targets = codes;
      targets.push_back(kArEosClass);

      BenchReport row;
      row.variant = variant_name(v);
      row.seq_len = seq;
      row.params = ar_param_count(cfg, v);
      row.seed = opt.seed;
      row.hw = hw;

      row.fwd_ms = bench_detail::median_ms([&] { ar_forward(m, text, codes); }, opt.repeats);

      memstat::reset_peak();
      row.fwdbwd_ms = bench_detail::median_ms(
          [&] {
            Tape<Real> tape;
            TapeEngine<Real> eng(tape, m.store, 0, nullptr);
            NodeId logits = ar_forward_on(eng, m, text, codes);
            tape.backward(tape.cross_entropy(logits, targets, {}));
          },
          opt.repeats);
      row.peak_bytes = memstat::peak();
      row.tokens_per_s = 1000.0 * static_cast<double>(seq) / row.fwdbwd_ms;

      if (opt.measure_rtf) {
        DecodeOptions d;
        d.max_new_tokens = n_codes;
        d.seed = opt.seed;
        double a = bench_detail::now_ms();
        ArGeneration g = ar_generate(m, text, {}, d);
        double wall = (bench_detail::now_ms() - a) / 1000.0;
        long long frames = static_cast<long long>(g.codes.size());
        row.rtf = frames > 0 ? wall / (static_cast<double>(frames) / kFrameRate) : 0.0;
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

// ------------------------------------------------------------- memory probe

// Peak allocator bytes of a single tape-retained attention block at fixed
// small width. Full attention holds T x T score matrices, the windowed mode
// holds T x chunk, so doubling T should scale the peak by ~4x or ~2x.
inline long long attention_memory_probe(long long seq_len, long long chunk, std::uint64_t seed) {
  if (seq_len < 2) throw std::runtime_error("memory probe needs at least two rows");
  const long long d = 32, z = 16, h = 4;
  ParamStore<float> store;
  Rng rng(seed);
  GpsaParams p = register_gpsa(store, "probe", d, z, h, rng);
  DenseArray<float> x(Shape{seq_len, d});
  for (float& v : x.data) v = static_cast<float>(0.5 * rng.gauss());
  std::vector<int> pos(static_cast<std::size_t>(seq_len));
  std::iota(pos.begin(), pos.end(), 0);

  memstat::reset_peak();
  const long long before = memstat::current();
  {
    Tape<float> tape;
    TapeEngine<float> eng(tape, store, 0, nullptr);
    gpsa_layer<float>(eng, p, eng.input(x), nullptr, pos, RopeConfig{10000.0, true}, chunk);
  }
  return memstat::peak() - before;
}

// -------------------------------------------------------------- ablation

struct AblationRow {
  std::string variant;
  long long params = 0;
  double ce_mean = 0.0;         // final training loss, averaged over seeds
  double ppl_mean = 0.0;
  double ppl_sigma = 0.0;       // sample deviation over seeds
  double steps_per_s = 0.0;
  long long peak_bytes = 0;
  double rtf = 0.0;
  std::vector<double> ppls;     // one per seed
};

struct AblationOptions {
  TrainConfig train;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  long long rtf_frames = 150;   // generation budget for the latency column
};

template <typename Real>
std::vector<AblationRow> ablate(const ModelConfig& cfg, const std::vector<CorpusRecord>& corpus,
                                const AblationOptions& opt) {
  if (opt.seeds.empty()) throw std::runtime_error("ablation needs at least one seed");
  std::vector<AblationRow> rows;
  for (ArVariant v : {ArVariant::Full, ArVariant::NoGca, ArVariant::NoGcaNoGpsa}) {
    AblationRow row;
    row.variant = variant_name(v);
    row.params = ar_param_count(cfg, v);

    double ce_sum = 0.0, wall_sum = 0.0;
    long long steps_sum = 0;
    memstat::reset_peak();
    for (std::uint64_t seed : opt.seeds) {
      ArModel<Real> m(cfg, v, seed);
      TrainConfig tc = opt.train;
      tc.seed = seed;
      double a = bench_detail::now_ms();
      TrainResult r = [&] {
        try {
          return train_ar(m, corpus, tc);
        } catch (const std::exception& e) {
          throw std::runtime_error("ablation aborted: variant " + row.variant + " failed: " + e.what());
        }
      }();
      wall_sum += (bench_detail::now_ms() - a) / 1000.0;
      steps_sum += r.steps_run;
      ce_sum += r.final_loss;
      row.ppls.push_back(eval_ppl(m, corpus));

      if (seed == opt.seeds.back() && opt.rtf_frames > 0) {
        DecodeOptions d;
        d.max_new_tokens = opt.rtf_frames;
        d.seed = seed;
        double g0 = bench_detail::now_ms();
        ArGeneration g = ar_generate(m, corpus.front().text_ids, {}, d);
        double wall = (bench_detail::now_ms() - g0) / 1000.0;
        if (!g.codes.empty()) row.rtf = wall / (static_cast<double>(g.codes.size()) / kFrameRate);
      }
    }
    row.peak_bytes = memstat::peak();
    const double n = static_cast<double>(opt.seeds.size());
    row.ce_mean = ce_sum / n;
    for (double p : row.ppls) row.ppl_mean += p / n;
    if (row.ppls.size() > 1) {
      double acc = 0.0;
      for (double p : row.ppls) acc += (p - row.ppl_mean) * (p - row.ppl_mean);
      row.ppl_sigma = std::sqrt(acc / (n - 1.0));
    }
    row.steps_per_s = wall_sum > 0 ? static_cast<double>(steps_sum) / wall_sum : 0.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------- emitters

inline constexpr const char* kBenchCsvHeader = "variant,seq_len,params,peak_bytes,fwd_ms,fwdbwd_ms,tokens_per_s,rtf,seed,hw";

inline std::string bench_csv(const std::vector<BenchReport>& rows) {
  std::string out = std::string(kBenchCsvHeader) + "\n";
  char buf[512];
  for (const BenchReport& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%lld,%lld,%lld,%.6g,%.6g,%.6g,%.6g,%llu,%s\n", r.variant.c_str(), r.seq_len,
                  r.params, r.peak_bytes, r.fwd_ms, r.fwdbwd_ms, r.tokens_per_s, r.rtf,
                  static_cast<unsigned long long>(r.seed), r.hw.c_str());
    out += buf;
  }
  return out;
}

// one table per sequence length; ratio columns compare against the vanilla
// multi-head baseline when that variant is present
inline std::string bench_markdown(const std::vector<BenchReport>& rows) {
  std::string out;
  std::vector<long long> lens;
  for (const BenchReport& r : rows)
    if (std::find(lens.begin(), lens.end(), r.seq_len) == lens.end()) lens.push_back(r.seq_len);
  char buf[512];
  for (long long seq : lens) {
    const BenchReport* base = nullptr;
    for (const BenchReport& r : rows)
      if (r.seq_len == seq && r.variant == "no_gca_no_gpsa") base = &r;
    std::snprintf(buf, sizeof buf, "### sequence length %lld\n\n", seq);
    out += buf;
    out += "| variant | params | peak MiB | fwd ms | fwd+bwd ms | tokens/s | speedup | rtf | latency ratio |\n";
    out += "|---|---|---|---|---|---|---|---|---|\n";
    for (const BenchReport& r : rows) {
      if (r.seq_len != seq) continue;
      std::string speedup = "-", lat = "-";
      if (base && base->tokens_per_s > 0 && r.tokens_per_s > 0) {
        std::snprintf(buf, sizeof buf, "%.2fx", r.tokens_per_s / base->tokens_per_s);
        speedup = buf;
      }
      if (base && base->rtf > 0 && r.rtf > 0) {
        std::snprintf(buf, sizeof buf, "%.2fx", base->rtf / r.rtf);
        lat = buf;
      }
      std::snprintf(buf, sizeof buf, "| %s | %lld | %.1f | %.2f | %.2f | %.0f | %s | %.3f | %s |\n",
                    r.variant.c_str(), r.params, static_cast<double>(r.peak_bytes) / (1024.0 * 1024.0), r.fwd_ms,
                    r.fwdbwd_ms, r.tokens_per_s, speedup.c_str(), r.rtf, lat.c_str());
      out += buf;
    }
    out += "\n";
    if (base) out += "speedup and latency ratio are relative to the no_gca_no_gpsa row above.\n\n";
  }
  return out;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "variant,params,ce_mean,ppl_mean,ppl_sigma,steps_per_s,peak_bytes,rtf\n";
  char buf[512];
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%lld,%.6g,%.6g,%.6g,%.6g,%lld,%.6g\n", r.variant.c_str(), r.params, r.ce_mean,
                  r.ppl_mean, r.ppl_sigma, r.steps_per_s, r.peak_bytes, r.rtf);
    out += buf;
  }
  return out;
}

inline std::string ablation_markdown(const std::vector<AblationRow>& rows) {
  std::string out = "| variant | params | ppl | ce | steps/s | peak MiB | rtf |\n|---|---|---|---|---|---|---|\n";
  char buf[512];
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof buf, "| %s | %lld | %.3f +/- %.3f | %.4f | %.2f | %.1f | %.3f |\n", r.variant.c_str(),
                  r.params, r.ppl_mean, r.ppl_sigma, r.ce_mean, r.steps_per_s,
                  static_cast<double>(r.peak_bytes) / (1024.0 * 1024.0), r.rtf);
    out += buf;
  }
  return out;
}

}  // namespace tacolm
