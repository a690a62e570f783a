#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "tacolm/trainer.hpp"

using namespace tacolm;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/tacolm_trainer_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

ModelConfig micro() {
  ModelConfig c;
  c.d_model = 8;
  c.d_ffn = 12;
  c.ema_dim = 2;
  c.qk_v_dim = 4;
  c.ar_blocks = 2;
  c.nar_layers = 2;
  c.text_vocab = 40;
  c.dropout = 0.0;
  c.mha_heads = 2;
  return c;
}

// tiny paired corpus without touching the codec: codes patterned from the seed
std::vector<CorpusRecord> fake_corpus(int n, long long frames, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CorpusRecord> recs;
  for (int i = 0; i < n; ++i) {
    CorpusRecord r;
    r.id = "r" + std::to_string(i);
    r.text = "t" + std::to_string(i);
    int lt = 2 + static_cast<int>(rng.below(3));
    for (int j = 0; j < lt; ++j) r.text_ids.push_back(static_cast<int>(rng.below(40)));
    long long t = frames + static_cast<long long>(rng.below(3));
    r.codes = CodeMatrix(t);
    // a small code support keeps these sequences learnable at micro scale
    for (long long f = 0; f < t; ++f)
      for (int k = 0; k < kQuantizers; ++k) r.codes.at(f, k) = static_cast<int>(rng.below(40));
    r.dur = static_cast<double>(t) / kFrameRate;
    recs.push_back(std::move(r));
  }
  return recs;
}

std::string slurp(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  REQUIRE(f != nullptr);
  std::string text;
  char buf[4096];
  std::size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, got);
  std::fclose(f);
  return text;
}

}  // namespace

TEST_CASE("learning rate schedule is a linear ramp and decay") {
  ScheduleConfig cfg;  // 1e-3 peak, 12k warmup, 240k total
  CHECK(lr_at(0, cfg) == 0.0);
  CHECK(lr_at(12000, cfg) == 1e-3);
  CHECK(lr_at(126000, cfg) == Catch::Approx(5e-4).margin(1e-15));
  CHECK(lr_at(240000, cfg) == 0.0);
  CHECK(lr_at(1000000, cfg) == 0.0);

  // continuity at the peak and piecewise linearity
  CHECK(lr_at(11999, cfg) == Catch::Approx(1e-3).epsilon(1e-3));
  CHECK(lr_at(12001, cfg) == Catch::Approx(1e-3).epsilon(1e-3));
  double mid = 0.5 * (lr_at(50000, cfg) + lr_at(70000, cfg));
  CHECK(lr_at(60000, cfg) == Catch::Approx(mid).margin(1e-18));
  for (long long s = 0; s < 240000; s += 7919) CHECK(lr_at(s, cfg) <= 1e-3);

  ScheduleConfig bad;
  bad.warmup_steps = bad.total_steps;
  CHECK_THROWS_WITH(lr_at(5, bad), Catch::Matchers::ContainsSubstring("warmup"));
  CHECK_THROWS_WITH(lr_at(-1, cfg), Catch::Matchers::ContainsSubstring("negative"));
}

TEST_CASE("gradient clipping rescales only above the threshold") {
  GradSet g;
  g.emplace_back(Shape{2});
  g[0][0] = 0.3f;
  g[0][1] = 0.4f;
  std::vector<std::string> names{"w"};
  double norm = clip_grad_norm(g, names, 1.0);
  CHECK(norm == Catch::Approx(0.5).margin(1e-9));
  CHECK(g[0][0] == 0.3f);  // untouched below the threshold
  CHECK(g[0][1] == 0.4f);

  g[0][0] = 3.0f;
  g[0][1] = 4.0f;
  norm = clip_grad_norm(g, names, 1.0);
  CHECK(norm == Catch::Approx(5.0).margin(1e-9));
  CHECK(g[0][0] == Catch::Approx(0.6).margin(1e-7));
  CHECK(g[0][1] == Catch::Approx(0.8).margin(1e-7));

  Rng rng(5);
  GradSet big;
  big.emplace_back(Shape{17, 3});
  for (float& x : big[0].data) x = static_cast<float>(rng.gauss() * 10.0);
  clip_grad_norm(big, {"m"}, 1.0);
  double post = 0.0;
  for (float x : big[0].data) post += static_cast<double>(x) * x;
  CHECK(std::sqrt(post) <= 1.0 + 1e-6);

  big[0][4] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH(clip_grad_norm(big, {"m"}, 1.0), Catch::Matchers::ContainsSubstring("non-finite gradient in m"));
}

TEST_CASE("adamw applies decoupled decay and bias-corrected updates") {
  ParamStore<float> store;
  int w = add_const<float>(store, "w", Shape{1}, 1.0f);

  SECTION("zero gradient leaves only the decay term") {
    OptimState st = OptimState::init(store);
    GradSet g = zero_grads(store);
    adamw_step(store, g, st, 1e-3);
    CHECK(store.arrays[static_cast<std::size_t>(w)][0] == Catch::Approx(0.99995).margin(1e-9));
    CHECK(st.step == 1);
  }

  SECTION("first-step closed form") {
    store.arrays[static_cast<std::size_t>(w)][0] = 0.0f;
    OptimState st = OptimState::init(store);
    GradSet g = zero_grads(store);
    g[static_cast<std::size_t>(w)][0] = 1.0f;
    adamw_step(store, g, st, 1e-3);
    // m̂ = 1, v̂ = 1 → update = −lr/(1+ε)
    CHECK(store.arrays[static_cast<std::size_t>(w)][0] == Catch::Approx(-9.99999999e-4).margin(1e-10));
  }

  SECTION("explicit state makes the step a pure function") {
    ParamStore<float> s1, s2;
    Rng init_rng(3);
    add_gauss(s1, "w", Shape{3, 2}, 0.5, init_rng);
    s2 = s1;
    OptimState st1 = OptimState::init(s1), st2 = OptimState::init(s2);
    GradSet g = zero_grads(s1);
    Rng rng(8);
    for (float& x : g[0].data) x = static_cast<float>(rng.gauss());
    GradSet g2 = g;
    adamw_step(s1, g, st1, 3e-4);
    adamw_step(s2, g2, st2, 3e-4);
    CHECK(s1.arrays[0].data == s2.arrays[0].data);
    CHECK(st1.m[0].data == st2.m[0].data);
    CHECK(st1.v[0].data == st2.v[0].data);
  }

  SECTION("two steps match the hand-rolled recurrence") {
    store.arrays[static_cast<std::size_t>(w)][0] = 0.5f;
    OptimState st = OptimState::init(store);
    GradSet g = zero_grads(store);
    double p = 0.5, m = 0.0, v = 0.0;
    double grads[2] = {0.7, -0.2};
    for (int s = 1; s <= 2; ++s) {
      g[static_cast<std::size_t>(w)][0] = static_cast<float>(grads[s - 1]);
      adamw_step(store, g, st, 1e-3);
      m = 0.9 * m + 0.1 * grads[s - 1];
      v = 0.999 * v + 0.001 * grads[s - 1] * grads[s - 1];
      p -= 1e-3 * 0.05 * p;
      p -= 1e-3 * (m / (1.0 - std::pow(0.9, s))) / (std::sqrt(v / (1.0 - std::pow(0.999, s))) + 1e-9);
    }
    CHECK(store.arrays[static_cast<std::size_t>(w)][0] == Catch::Approx(p).margin(1e-6));
  }

  SECTION("shape mismatch is rejected") {
    OptimState st = OptimState::init(store);
    GradSet g;
    g.emplace_back(Shape{2});
    CHECK_THROWS_WITH(adamw_step(store, g, st, 1e-3), Catch::Matchers::ContainsSubstring("mismatch"));
  }
}

TEST_CASE("cross entropy matches closed forms") {
  Tape<double> tape;
  SECTION("uniform logits score ln V") {
    NodeId logits = tape.leaf(DenseArray<double>(Shape{3, 7}, 0.25), false);
    NodeId ce = tape.cross_entropy(logits, {0, 3, 6}, {});
    CHECK(tape.val(ce)[0] == Catch::Approx(std::log(7.0)).margin(1e-12));
  }
  SECTION("a confidently correct class costs nothing") {
    DenseArray<double> l(Shape{1, 4});
    l.at(0, 2) = 50.0;
    NodeId ce = tape.cross_entropy(tape.leaf(std::move(l), false), {2}, {});
    CHECK(tape.val(ce)[0] < 1e-8);
  }
  SECTION("three-way closed form") {
    DenseArray<double> l(Shape{1, 3}, {0.0, std::log(2.0), std::log(3.0)});
    NodeId ce = tape.cross_entropy(tape.leaf(std::move(l), false), {2}, {});
    CHECK(tape.val(ce)[0] == Catch::Approx(std::log(2.0)).margin(1e-12));
  }
  SECTION("an all-masked-out batch is an error") {
    NodeId logits = tape.leaf(DenseArray<double>(Shape{2, 3}), false);
    CHECK_THROWS(tape.cross_entropy(logits, {0, 1}, {0, 0}));
  }
}

TEST_CASE("masked rows contribute exactly zero gradient") {
  Tape<double> tape;
  Rng rng(13);
  DenseArray<double> l(Shape{4, 5});
  for (double& x : l.data) x = rng.gauss();
  DenseArray<double> l_perturbed = l;
  l_perturbed.at(1, 2) += 3.0;  // masked-out row
  NodeId leaf = tape.leaf(l, true);
  NodeId ce = tape.cross_entropy(leaf, {0, 1, 2, 3}, {1, 0, 1, 0});
  tape.backward(ce);
  const DenseArray<double>& g = tape.grad(leaf);
  for (long long c = 0; c < 5; ++c) {
    CHECK(g.at(1, c) == 0.0);
    CHECK(g.at(3, c) == 0.0);
  }

  Tape<double> tape2;
  NodeId ce2 = tape2.cross_entropy(tape2.leaf(std::move(l_perturbed), false), {0, 1, 2, 3}, {1, 0, 1, 0});
  CHECK(tape2.val(ce2)[0] == tape.val(ce)[0]);  // bitwise: masked rows never enter
}

TEST_CASE("token-budget packing is length-sorted and respects the budget") {
  std::vector<CorpusRecord> recs = fake_corpus(7, 10, 3);
  recs[2].codes = CodeMatrix(40);  // oversized outlier
  recs[2].dur = 40.0 / kFrameRate;

  std::vector<TrainBatch> batches = pack_batches(recs, true, 30);
  long long seen = 0;
  for (const TrainBatch& b : batches) {
    REQUIRE_FALSE(b.records.empty());
    long long rows = 0;
    for (std::size_t idx : b.records) rows += record_rows(recs[idx], true);
    CHECK(rows == b.tokens);
    if (b.records.size() > 1) CHECK(b.tokens <= 30);
    seen += static_cast<long long>(b.records.size());
  }
  CHECK(seen == 7);
  // longest record first, alone in its batch (it alone exceeds the budget)
  CHECK(batches.front().records.front() == 2);
  CHECK(batches.front().records.size() == 1);
  CHECK_THROWS_WITH(pack_batches(recs, true, 0), Catch::Matchers::ContainsSubstring("budget"));
}

TEST_CASE("ar training starts at the uniform loss and descends deterministically") {
  std::vector<CorpusRecord> recs = fake_corpus(4, 8, 17);
  TrainConfig tc;
  tc.steps = 40;
  tc.seed = 5;
  tc.schedule = {2e-3, 10, 200};
  TempFile csv("trace.csv");
  tc.trace_csv = csv.path;

  ArModel<float> m1(micro(), ArVariant::Full, 11);
  TrainResult r1 = train_ar(m1, recs, tc);
  REQUIRE(r1.steps_run == 40);
  REQUIRE(r1.trace.size() == 40);
  CHECK(r1.initial_loss == Catch::Approx(std::log(1025.0)).margin(1e-4));
  CHECK(r1.final_loss < 0.9 * r1.initial_loss);

  std::string text = slurp(csv.path);
  CHECK(text.rfind("step,lr,loss,grad_norm\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 41);

  ArModel<float> m2(micro(), ArVariant::Full, 11);
  TrainResult r2 = train_ar(m2, recs, tc);
  bool same = true;
  for (std::size_t i = 0; i < r1.trace.size(); ++i)
    same = same && r1.trace[i].loss == r2.trace[i].loss && r1.trace[i].grad_norm == r2.trace[i].grad_norm;
  CHECK(same);
  CHECK(m1.store.arrays[0].data == m2.store.arrays[0].data);
}

TEST_CASE("dropout draws move with the seed") {
  std::vector<CorpusRecord> recs = fake_corpus(3, 6, 23);
  ModelConfig cfg = micro();
  cfg.dropout = 0.2;
  TrainConfig tc;
  tc.steps = 6;
  tc.schedule = {1e-3, 4, 100};

  tc.seed = 1;
  ArModel<float> m1(cfg, ArVariant::Full, 7);
  TrainResult r1 = train_ar(m1, recs, tc);
  tc.seed = 2;
  ArModel<float> m2(cfg, ArVariant::Full, 7);
  TrainResult r2 = train_ar(m2, recs, tc);
  bool differs = false;
  for (std::size_t i = 0; i < r1.trace.size(); ++i) differs = differs || r1.trace[i].loss != r2.trace[i].loss;
  CHECK(differs);
}

TEST_CASE("nar training descends from the uniform loss over sampled layers") {
  std::vector<CorpusRecord> recs = fake_corpus(4, 8, 29);
  NarModel<float> m(micro(), 3);
  TrainConfig tc;
  tc.steps = 120;  // the 1024-way heads need more steps than the AR case above
  tc.seed = 6;
  tc.schedule = {3e-3, 10, 400};
  TrainResult r = train_nar(m, recs, tc);
  CHECK(r.initial_loss == Catch::Approx(std::log(1024.0)).margin(1e-4));
  CHECK(r.final_loss < 0.9 * r.initial_loss);

  NarModel<float> m2(micro(), 3);
  TrainResult r2 = train_nar(m2, recs, tc);
  CHECK(r.final_loss == r2.final_loss);
}

TEST_CASE("batch loss is the token-weighted mean of record losses") {
  std::vector<CorpusRecord> recs = fake_corpus(2, 5, 31);
  recs[1].codes = CodeMatrix(14);
  for (long long t = 0; t < 14; ++t)
    for (int k = 0; k < kQuantizers; ++k) recs[1].codes.at(t, k) = static_cast<int>((t * 31 + k * 7) % kCodebookSize);
  recs[1].dur = 14.0 / kFrameRate;

  ArModel<float> m(micro(), ArVariant::Full, 19);
  // randomize the head so per-record losses differ
  Rng rng(40);
  for (float& x : m.store.arrays[static_cast<std::size_t>(m.head_w)].data) x = static_cast<float>(0.05 * rng.gauss());

  double nll = 0.0;
  long long rows = 0;
  for (const CorpusRecord& rec : recs) {
    double ce = eval_ar_ce(m, {rec});
    long long n = rec.codes.frames + 1;
    nll += ce * static_cast<double>(n);
    rows += n;
  }
  double expected = nll / static_cast<double>(rows);

  TrainConfig tc;
  tc.steps = 1;
  tc.schedule = {1e-3, 10, 100};
  TrainResult r = train_ar(m, recs, tc);
  CHECK(r.initial_loss == Catch::Approx(expected).margin(1e-6));
}

TEST_CASE("divergence guard trips after a sustained loss blow-up") {
  // the zero bias keeps the graph differentiable while the scripted offsets
  // dictate the loss; its AdamW drift (~1e-3/step) is negligible next to the
  // 80-nat spikes
  ParamStore<float> store;
  add_const<float>(store, "w", Shape{1, 2}, 0.0f);
  std::vector<CorpusRecord> recs = fake_corpus(1, 4, 37);
  TrainConfig tc;
  tc.steps = 300;
  tc.schedule = {1e-3, 10, 1000};

  long long calls = 0;
  auto spiking = [&](TapeEngine<float>& eng, const CorpusRecord&, Rng&) -> std::pair<NodeId, long long> {
    ++calls;
    DenseArray<float> offs(Shape{1, 2});
    offs.at(0, 1) = calls > 1 ? -80.0f : -1.0f;  // correct class collapses after the first step
    NodeId logits = eng.tape().add(eng.input(std::move(offs)), eng.param(0));
    return {eng.tape().cross_entropy(logits, {1}, {}), 1};
  };
  CHECK_THROWS_WITH(train_detail::run(store, recs, tc, 0.0f, spiking, true),
                    Catch::Matchers::ContainsSubstring("diverged"));
  CHECK(calls == 101);  // one sane step, then 100 consecutive blow-ups

  // a lone spike recovers without tripping the guard
  calls = 0;
  for (float& x : store.arrays[0].data) x = 0.0f;
  auto one_spike = [&](TapeEngine<float>& eng, const CorpusRecord&, Rng&) -> std::pair<NodeId, long long> {
    ++calls;
    DenseArray<float> offs(Shape{1, 2});
    offs.at(0, 1) = calls == 2 ? -80.0f : -1.0f;
    NodeId logits = eng.tape().add(eng.input(std::move(offs)), eng.param(0));
    return {eng.tape().cross_entropy(logits, {1}, {}), 1};
  };
  tc.steps = 150;
  CHECK_NOTHROW(train_detail::run(store, recs, tc, 0.0f, one_spike, true));
}

TEST_CASE("perplexity evaluation brackets the untrained model") {
  std::vector<CorpusRecord> recs = fake_corpus(3, 6, 41);
  ArModel<float> m(micro(), ArVariant::Full, 23);
  double ppl = eval_ppl(m, recs);
  CHECK(ppl == Catch::Approx(1025.0).margin(0.01));  // zero head → exactly uniform
  CHECK(ppl >= 700.0);
  CHECK(ppl <= 1100.0);
  CHECK_THROWS_WITH(eval_ppl(m, {}), Catch::Matchers::ContainsSubstring("non-empty"));

  NarModel<float> nm(micro(), 29);
  CHECK(eval_nar_ce(nm, recs) == Catch::Approx(std::log(1024.0)).margin(1e-5));
  CHECK(eval_nar_ce(nm, recs, 5) == Catch::Approx(std::log(1024.0)).margin(1e-5));
}

TEST_CASE("a tiny model memorizes a handful of utterances") {
  ToyCodec codec;
  CorpusParams p;
  p.n_utts = 8;
  p.seed = 77;
  p.min_dur = 0.5;
  p.max_dur = 0.7;
  p.vocab_target = 120;
  Corpus corpus = generate_corpus(p, codec);

  ModelConfig cfg = ModelConfig::tiny();
  cfg.dropout = 0.0;
  ArModel<float> m(cfg, ArVariant::Full, 1);
  TrainConfig tc;
  tc.steps = 150;
  tc.seed = 2;
  tc.stop_below_loss = 0.5;
  tc.schedule = {2e-3, 30, 1000};
  TrainResult r = train_ar(m, corpus.records, tc);
  INFO("final loss " << r.final_loss << " after " << r.steps_run << " steps");
  CHECK(r.final_loss < 0.5);
  CHECK(eval_ppl(m, corpus.records) < std::exp(0.6));
}
