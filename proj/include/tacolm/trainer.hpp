#pragma once
// Optimization stack: linear warmup/decay schedule, global-norm clipping,
// decoupled-decay AdamW, token-budget batch packing, and the two training
// loops. Gradients are accumulated per batch as token-weighted means, so the
// step loss equals the mean over every scored position in the batch.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "tacolm/corpus.hpp"
#include "tacolm/model.hpp"
#include "tacolm/rng.hpp"
#include "tacolm/tape.hpp"

namespace tacolm {

struct ScheduleConfig {
  double peak_lr = 1e-3;
  long long warmup_steps = 12000;
  long long total_steps = 240000;

  void validate() const {
    if (peak_lr <= 0) throw std::runtime_error("schedule: peak lr must be positive");
    if (warmup_steps < 1 || warmup_steps >= total_steps)
      throw std::runtime_error("schedule: need 1 <= warmup < total");
  }
};

// linear 0 -> peak over [0, warmup], then linear peak -> 0 over [warmup, total]
inline double lr_at(long long step, const ScheduleConfig& cfg) {
  cfg.validate();
  if (step < 0) throw std::runtime_error("schedule: negative step");
  if (step <= cfg.warmup_steps)
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  if (step >= cfg.total_steps) return 0.0;
  return cfg.peak_lr * static_cast<double>(cfg.total_steps - step) /
         static_cast<double>(cfg.total_steps - cfg.warmup_steps);
}

struct OptimConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-9;
  double weight_decay = 0.05;
  double clip_norm = 1.0;
};

struct OptimState {
  std::vector<DenseArray<float>> m, v;
  long long step = 0;

  static OptimState init(const ParamStore<float>& store) {
    OptimState st;
    for (const auto& a : store.arrays) {
      st.m.emplace_back(a.shape);
      st.v.emplace_back(a.shape);
    }
    return st;
  }
};

using GradSet = std::vector<DenseArray<float>>;

inline GradSet zero_grads(const ParamStore<float>& store) {
  GradSet g;
  for (const auto& a : store.arrays) g.emplace_back(a.shape);
  return g;
}

// returns the pre-clip global L2 norm
inline double clip_grad_norm(GradSet& grads, const std::vector<std::string>& names, double max_norm) {
  double total = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    for (float g : grads[i].data) {
      if (!std::isfinite(g))
        throw std::runtime_error("non-finite gradient in " + (i < names.size() ? names[i] : "parameter " + std::to_string(i)));
      total += static_cast<double>(g) * g;
    }
  }
  double norm = std::sqrt(total);
  if (norm > max_norm && norm > 0.0) {
    double scale = max_norm / norm;
    for (auto& a : grads)
      for (float& g : a.data) g = static_cast<float>(g * scale);
  }
  return norm;
}

// decoupled weight decay, then the bias-corrected Adam update
inline void adamw_step(ParamStore<float>& store, const GradSet& grads, OptimState& st, double lr,
                       const OptimConfig& oc = OptimConfig{}) {
  if (grads.size() != store.arrays.size() || st.m.size() != store.arrays.size())
    throw std::runtime_error("adamw: gradient/state size does not match the parameter store");
  ++st.step;
  double bc1 = 1.0 - std::pow(oc.beta1, static_cast<double>(st.step));
  double bc2 = 1.0 - std::pow(oc.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < store.arrays.size(); ++i) {
    DenseArray<float>& p = store.arrays[i];
    if (grads[i].shape != p.shape)
      throw std::runtime_error("adamw: gradient shape mismatch for " + store.names[i]);
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      double g = grads[i].data[j];
      double m = oc.beta1 * st.m[i].data[j] + (1.0 - oc.beta1) * g;
      double v = oc.beta2 * st.v[i].data[j] + (1.0 - oc.beta2) * g * g;
      st.m[i].data[j] = static_cast<float>(m);
      st.v[i].data[j] = static_cast<float>(v);
      double theta = p.data[j];
      theta -= lr * oc.weight_decay * theta;
      theta -= lr * (m / bc1) / (std::sqrt(v / bc2) + oc.eps);
      p.data[j] = static_cast<float>(theta);
    }
  }
}

// ------------------------------------------------------------- batching

struct TrainBatch {
  std::vector<std::size_t> records;
  long long tokens = 0;  // total sequence rows across packed records
};

inline long long record_rows(const CorpusRecord& r, bool autoregressive) {
  return static_cast<long long>(r.text_ids.size()) + r.codes.frames + (autoregressive ? 1 : 0);
}

// length-sorted greedy packing; a record longer than the budget gets its own batch
inline std::vector<TrainBatch> pack_batches(const std::vector<CorpusRecord>& corpus, bool autoregressive,
                                            long long token_budget) {
  if (token_budget < 1) throw std::runtime_error("token budget must be positive");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return record_rows(corpus[a], autoregressive) > record_rows(corpus[b], autoregressive);
  });
  std::vector<TrainBatch> batches;
  for (std::size_t idx : order) {
    long long rows = record_rows(corpus[idx], autoregressive);
    if (batches.empty() || batches.back().tokens + rows > token_budget) batches.push_back({});
    batches.back().records.push_back(idx);
    batches.back().tokens += rows;
  }
  return batches;
}

// ---------------------------------------------------------- training loops

struct TraceRow {
  long long step = 0;
  double lr = 0.0, loss = 0.0, grad_norm = 0.0;
};

struct TrainConfig {
  long long steps = 1000;
  long long token_budget = 8192;
  std::uint64_t seed = 0;
  double stop_below_loss = -1.0;  // early-stop threshold; negative disables
  std::string trace_csv;          // streamed per step when non-empty
  OptimConfig optim;
  ScheduleConfig schedule;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  double initial_loss = 0.0, final_loss = 0.0;
  long long steps_run = 0;
};

namespace train_detail {

struct CsvSink {
  std::FILE* f = nullptr;
  explicit CsvSink(const std::string& path) {
    if (path.empty()) return;
    f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    std::fprintf(f, "step,lr,loss,grad_norm\n");
  }
  ~CsvSink() {
    if (f) std::fclose(f);
  }
  void row(const TraceRow& r) {
    if (!f) return;
    std::fprintf(f, "%lld,%.10g,%.10g,%.10g\n", r.step, r.lr, r.loss, r.grad_norm);
    std::fflush(f);
  }
};

// RecordLoss: (TapeEngine&, record, Rng&) -> {loss node, scored rows}
template <typename RecordLoss>
TrainResult run(ParamStore<float>& store, const std::vector<CorpusRecord>& corpus, const TrainConfig& tc,
                float dropout, RecordLoss&& record_loss, bool autoregressive) {
  if (corpus.empty()) throw std::runtime_error("training needs a non-empty corpus");
  tc.schedule.validate();
  std::vector<TrainBatch> batches = pack_batches(corpus, autoregressive, tc.token_budget);
  Rng rng(tc.seed);
  OptimState st = OptimState::init(store);
  CsvSink csv(tc.trace_csv);
  TrainResult result;
  std::vector<std::size_t> batch_order(batches.size());
  std::iota(batch_order.begin(), batch_order.end(), std::size_t{0});
  int high_loss_streak = 0;
  for (long long step = 0; step < tc.steps; ++step) {
    std::size_t cursor = static_cast<std::size_t>(step) % batches.size();
    if (cursor == 0) rng.shuffle(batch_order.begin(), batch_order.end());
    const TrainBatch& batch = batches[batch_order[cursor]];

    GradSet grads = zero_grads(store);
    double nll_sum = 0.0;
    long long rows_sum = 0;
    for (std::size_t idx : batch.records) {
      Tape<float> tape;
      TapeEngine<float> eng(tape, store, dropout, &rng);
      auto [loss, rows] = record_loss(eng, corpus[idx], rng);
      tape.backward(loss);
      nll_sum += static_cast<double>(tape.val(loss)[0]) * static_cast<double>(rows);
      rows_sum += rows;
      // scale by this record's row count now; divide by the batch total below
      for (std::size_t i = 0; i < store.arrays.size(); ++i) {
        const DenseArray<float>* src = eng.grad_of(static_cast<int>(i));
        if (!src) continue;
        for (std::size_t j = 0; j < grads[i].data.size(); ++j)
          grads[i].data[j] += static_cast<float>(static_cast<double>(rows) * src->data[j]);
      }
    }
    for (auto& a : grads)
      for (float& g : a.data) g = static_cast<float>(g / static_cast<double>(rows_sum));
    double loss = nll_sum / static_cast<double>(rows_sum);

    if (result.trace.empty()) result.initial_loss = loss;
    if (!std::isfinite(loss))
      throw std::runtime_error("training diverged: loss is not finite at step " + std::to_string(step));
    if (loss > 10.0 * result.initial_loss)
      ++high_loss_streak;
    else
      high_loss_streak = 0;
    if (high_loss_streak >= 100)
      throw std::runtime_error("training diverged: loss above 10x its initial value for 100 consecutive steps");

    double norm = clip_grad_norm(grads, store.names, tc.optim.clip_norm);
    double lr = lr_at(st.step + 1, tc.schedule);
    adamw_step(store, grads, st, lr, tc.optim);

    TraceRow row{step, lr, loss, norm};
    result.trace.push_back(row);
    csv.row(row);
    result.final_loss = loss;
    result.steps_run = step + 1;
    if (tc.stop_below_loss >= 0.0 && loss < tc.stop_below_loss) break;
  }
  return result;
}

}  // namespace train_detail

inline TrainResult train_ar(ArModel<float>& model, const std::vector<CorpusRecord>& corpus, const TrainConfig& tc) {
  return train_detail::run(
      model.store, corpus, tc, static_cast<float>(model.cfg.dropout),
      [&](TapeEngine<float>& eng, const CorpusRecord& rec, Rng&) -> std::pair<NodeId, long long> {
        NodeId logits = ar_forward_on<float>(eng, model, rec.text_ids, rec.codes.layer(0));
        std::vector<int> targets = rec.codes.layer(0);
        targets.push_back(kArEosClass);  // the code rows predict the next code; the last row predicts EOS
        NodeId ce = eng.tape().cross_entropy(logits, targets, {});
        return {ce, static_cast<long long>(targets.size())};
      },
      true);
}

inline TrainResult train_nar(NarModel<float>& model, const std::vector<CorpusRecord>& corpus, const TrainConfig& tc) {
  return train_detail::run(
      model.store, corpus, tc, static_cast<float>(model.cfg.dropout),
      [&](TapeEngine<float>& eng, const CorpusRecord& rec, Rng& rng) -> std::pair<NodeId, long long> {
        int layer = 2 + static_cast<int>(rng.below(kQuantizers - 1));
        NodeId logits = nar_forward_on<float>(eng, model, rec.text_ids, rec.codes, layer);
        NodeId ce = eng.tape().cross_entropy(logits, rec.codes.layer(layer - 1), {});
        return {ce, rec.codes.frames};
      },
      false);
}

// ------------------------------------------------------------- evaluation

// mean next-code negative log likelihood per scored position, no dropout
inline double eval_ar_ce(const ArModel<float>& model, const std::vector<CorpusRecord>& corpus) {
  if (corpus.empty()) throw std::runtime_error("evaluation needs a non-empty corpus");
  double nll = 0.0;
  long long rows = 0;
  for (const CorpusRecord& rec : corpus) {
    DenseArray<float> logits = ar_forward(model, rec.text_ids, rec.codes.layer(0));
    std::vector<int> targets = rec.codes.layer(0);
    targets.push_back(kArEosClass);
    nll += kernels::cross_entropy_rows<float>(logits, targets.data(), nullptr, logits.shape[0], nullptr, nullptr) *
           static_cast<double>(targets.size());
    rows += static_cast<long long>(targets.size());
  }
  return nll / static_cast<double>(rows);
}

inline double eval_ppl(const ArModel<float>& model, const std::vector<CorpusRecord>& corpus) {
  return std::exp(eval_ar_ce(model, corpus));
}

// mean CE for one target layer, or averaged over layers 2..8 when layer == 0
inline double eval_nar_ce(const NarModel<float>& model, const std::vector<CorpusRecord>& corpus, int layer = 0) {
  if (corpus.empty()) throw std::runtime_error("evaluation needs a non-empty corpus");
  double nll = 0.0;
  long long rows = 0;
  int lo = layer == 0 ? 2 : layer, hi = layer == 0 ? kQuantizers : layer;
  for (const CorpusRecord& rec : corpus) {
    for (int l = lo; l <= hi; ++l) {
      DenseArray<float> logits = nar_forward(model, rec.text_ids, rec.codes, l);
      std::vector<int> targets = rec.codes.layer(l - 1);
      nll += kernels::cross_entropy_rows<float>(logits, targets.data(), nullptr, logits.shape[0], nullptr, nullptr) *
             static_cast<double>(targets.size());
      rows += static_cast<long long>(targets.size());
    }
  }
  return nll / static_cast<double>(rows);
}

}  // namespace tacolm
