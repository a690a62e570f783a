#pragma once
// Synthetic paired text/audio corpus. Sentences come from a small fixed
// grammar; each word maps through a hash of its letters to a sustained chord
// of canonical-bin tones, so the waveform is a deterministic function of the
// text alone and the text-audio coupling is learnable. Records carry token
// ids and codec codes; waveforms are regenerated on demand.

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacolm/checkpoint.hpp"
#include "tacolm/codec.hpp"
#include "tacolm/codes.hpp"
#include "tacolm/rng.hpp"
#include "tacolm/tokenizer.hpp"

namespace tacolm {

struct CorpusParams {
  int n_utts = 300;
  double min_dur = 0.7;  // seconds
  double max_dur = 1.3;
  std::uint64_t seed = 1;
  int vocab_target = 2000;
};

struct CorpusRecord {
  std::string id;
  std::string text;
  std::vector<int> text_ids;
  CodeMatrix codes;
  double dur = 0.0;  // seconds; codes.frames / 75
};

namespace grammar {

inline const std::vector<std::string>& subjects() {
  static const std::vector<std::string> v = {"drum", "flute", "tide",  "lark", "ember",
                                             "stone", "cello", "brook", "wind", "moth"};
  return v;
}

inline const std::vector<std::string>& verbs() {
  static const std::vector<std::string> v = {"hums",  "sings", "drifts", "glows", "rolls",
                                             "rings", "fades", "calls",  "leans", "turns"};
  return v;
}

inline const std::vector<std::string>& objects() {
  static const std::vector<std::string> v = {"reeds", "dunes", "pines",  "caves", "coves",
                                             "halls", "vales", "peaks", "shores", "meads"};
  return v;
}

inline const std::vector<std::string>& adverbs() {
  static const std::vector<std::string> v = {"low",   "high",   "softly", "slowly", "afar",
                                             "anew", "twice", "deep",   "bright", "alone"};
  return v;
}

}  // namespace grammar

inline std::uint64_t text_hash(const std::string& s, std::uint64_t salt = 0) {
  return fnv1a(reinterpret_cast<const unsigned char*>(s.data()), s.size(), 1469598103934665603ULL ^ salt);
}

// sentence words, trailing period stripped
inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (c == ' ') {
      if (!cur.empty()) words.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) words.push_back(cur);
  if (!words.empty() && words.back().back() == '.') {
    words.back().pop_back();
    if (words.back().empty()) words.pop_back();
  }
  return words;
}

struct WordSound {
  std::vector<ToneSpec> tones;
  long long frames = 0;
};

// the per-word voice: everything is derived from a hash of the letters
inline WordSound word_sound(const std::string& word) {
  Rng rng(text_hash(word, 0x5157));
  WordSound s;
  s.frames = 9 + static_cast<long long>(rng.below(8));
  int n_tones = 1 + static_cast<int>(rng.below(2));
  std::vector<int> bins(kToneBins.size());
  for (std::size_t i = 0; i < bins.size(); ++i) bins[i] = static_cast<int>(i);
  rng.shuffle(bins.begin(), bins.end());
  for (int t = 0; t < n_tones; ++t) {
    ToneSpec tone;
    tone.bin_index = bins[static_cast<std::size_t>(t)];
    tone.amp = 0.12 + 0.18 * rng.u01();
    tone.phase = rng.uniform(0.0, 2.0 * M_PI);
    s.tones.push_back(tone);
  }
  return s;
}

// deterministic in the text: word chords separated by short rests, scaled so
// the utterance lands inside the duration window
inline std::vector<float> waveform_for_text(const std::string& text, const CorpusParams& params) {
  std::vector<std::string> words = split_words(text);
  if (words.empty()) throw std::runtime_error("cannot synthesize empty text");
  std::vector<WordSound> sounds;
  long long natural = 0;
  for (const std::string& w : words) {
    sounds.push_back(word_sound(w));
    natural += sounds.back().frames;
  }
  const long long gap = 2, tail = 3;
  long long fixed = gap * static_cast<long long>(words.size() - 1) + tail;
  Rng dur_rng(text_hash(text, 0xD0));
  double target_dur = params.min_dur + (params.max_dur - params.min_dur) * dur_rng.u01();
  long long target = std::llround(target_dur * kFrameRate) - fixed;
  if (target < static_cast<long long>(words.size()) * 3) target = static_cast<long long>(words.size()) * 3;
  double scale = static_cast<double>(target) / static_cast<double>(natural);
  std::vector<float> wave;
  for (std::size_t i = 0; i < sounds.size(); ++i) {
    long long f = std::llround(static_cast<double>(sounds[i].frames) * scale);
    if (f < 3) f = 3;
    append_tone_frames(wave, sounds[i].tones, f);
    if (i + 1 < sounds.size()) append_silence_frames(wave, gap);
  }
  append_silence_frames(wave, tail);
  return wave;
}

inline std::vector<std::string> sample_texts(const CorpusParams& params) {
  Rng rng(params.seed);
  std::vector<std::string> texts;
  texts.reserve(static_cast<std::size_t>(params.n_utts));
  for (int i = 0; i < params.n_utts; ++i) {
    const auto& s = grammar::subjects()[rng.below(grammar::subjects().size())];
    const auto& v = grammar::verbs()[rng.below(grammar::verbs().size())];
    const auto& o = grammar::objects()[rng.below(grammar::objects().size())];
    std::string text = s + " " + v + " " + o;
    if (rng.below(2) == 0) text += " " + grammar::adverbs()[rng.below(grammar::adverbs().size())];
    text += ".";
    texts.push_back(text);
  }
  return texts;
}

struct Corpus {
  std::vector<CorpusRecord> records;
  ToyTextTokenizer tokenizer;
};

inline Corpus generate_corpus(const CorpusParams& params, const ToyCodec& codec) {
  if (params.n_utts < 1) throw std::runtime_error("corpus needs at least one utterance");
  if (!(params.min_dur > 0.0) || !(params.max_dur >= params.min_dur))
    throw std::runtime_error("bad duration range");
  Corpus out;
  std::vector<std::string> texts = sample_texts(params);
  out.tokenizer = ToyTextTokenizer::build(texts, params.vocab_target);
  for (int i = 0; i < params.n_utts; ++i) {
    CorpusRecord rec;
    char buf[16];
    std::snprintf(buf, sizeof buf, "utt%05d", i);
    rec.id = buf;
    rec.text = texts[static_cast<std::size_t>(i)];
    rec.text_ids = out.tokenizer.tokenize(rec.text);
    std::vector<float> wave = waveform_for_text(rec.text, params);
    rec.codes = codec.encode(wave);
    rec.dur = static_cast<double>(rec.codes.frames) / kFrameRate;
    out.records.push_back(std::move(rec));
  }
  return out;
}

inline nlohmann::json record_to_json(const CorpusRecord& rec) {
  nlohmann::json j;
  j["id"] = rec.id;
  j["text"] = rec.text;
  j["text_ids"] = rec.text_ids;
  nlohmann::json rows = nlohmann::json::array();
  for (long long t = 0; t < rec.codes.frames; ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (int k = 0; k < kQuantizers; ++k) row.push_back(rec.codes.at(t, k));
    rows.push_back(std::move(row));
  }
  j["codes"] = std::move(rows);
  j["dur"] = rec.dur;
  return j;
}

inline CorpusRecord record_from_json(const nlohmann::json& j) {
  CorpusRecord rec;
  rec.id = j.at("id").get<std::string>();
  rec.text = j.at("text").get<std::string>();
  rec.text_ids = j.at("text_ids").get<std::vector<int>>();
  const auto& rows = j.at("codes");
  rec.codes = CodeMatrix(static_cast<long long>(rows.size()));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    if (rows[t].size() != kQuantizers)
      throw std::runtime_error("record " + rec.id + ": frame " + std::to_string(t) + " does not hold 8 codes");
    for (int k = 0; k < kQuantizers; ++k) rec.codes.at(static_cast<long long>(t), k) = rows[t][static_cast<std::size_t>(k)].get<int>();
  }
  rec.codes.validate();
  rec.dur = j.at("dur").get<double>();
  if (std::llround(rec.dur * kFrameRate) != rec.codes.frames)
    throw std::runtime_error("record " + rec.id + ": duration disagrees with frame count");
  return rec;
}

inline void save_corpus_jsonl(const std::string& path, const std::vector<CorpusRecord>& records) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  bool ok = true;
  for (const CorpusRecord& rec : records) {
    std::string line = record_to_json(rec).dump();
    line += '\n';
    ok = ok && std::fwrite(line.data(), 1, line.size(), f) == line.size();
  }
  ok = std::fclose(f) == 0 && ok;
  if (!ok) throw std::runtime_error("failed writing " + path);
}

inline std::vector<CorpusRecord> load_corpus_jsonl(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string text;
  char buf[1 << 16];
  std::size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, got);
  std::fclose(f);
  std::vector<CorpusRecord> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    if (nl > pos) out.push_back(record_from_json(nlohmann::json::parse(text.substr(pos, nl - pos))));
    pos = nl + 1;
  }
  return out;
}

}  // namespace tacolm
