#pragma once
// Character-seeded byte-pair tokenizer. Vocabulary id 0 is reserved for
// unknown characters; everything else is the sorted alphabet of the training
// texts followed by merge products in the order they were learned. Merges are
// picked by highest pair frequency (ties broken by lexicographically smaller
// pair) and applied to input greedily left to right, so tokenization is a
// pure function of the saved table.

#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace tacolm {

inline constexpr int kUnkId = 0;
inline constexpr const char* kUnkPiece = "\x1a";

struct ToyTextTokenizer {
  struct Merge {
    int left = 0, right = 0, out = 0;
  };

  std::vector<std::string> vocab;  // id -> piece
  std::vector<Merge> merges;

  ToyTextTokenizer() { vocab.push_back(kUnkPiece); }

  long long unk_count() const { return unk_count_; }
  void reset_unk_count() { unk_count_ = 0; }

  static ToyTextTokenizer build(const std::vector<std::string>& texts, int target_vocab) {
    ToyTextTokenizer tk;
    std::set<char> alphabet;
    for (const std::string& t : texts)
      for (char c : t) alphabet.insert(c);
    std::unordered_map<char, int> char_id;
    for (char c : alphabet) {
      char_id[c] = static_cast<int>(tk.vocab.size());
      tk.vocab.push_back(std::string(1, c));
    }
    std::vector<std::vector<int>> streams;
    streams.reserve(texts.size());
    for (const std::string& t : texts) {
      std::vector<int> s;
      s.reserve(t.size());
      for (char c : t) s.push_back(char_id.at(c));
      streams.push_back(std::move(s));
    }
    while (static_cast<int>(tk.vocab.size()) < target_vocab) {
      std::map<std::pair<int, int>, long long> counts;
      for (const auto& s : streams)
        for (std::size_t i = 0; i + 1 < s.size(); ++i) ++counts[{s[i], s[i + 1]}];
      std::pair<int, int> best{-1, -1};
      long long best_count = 2;  // a pair must repeat to be worth a merge
      for (const auto& [pair, count] : counts) {
        if (count < best_count) continue;
        if (count > best_count || best.first < 0) {
          best = pair;
          best_count = count;
          continue;
        }
        auto key = std::make_pair(tk.vocab[static_cast<std::size_t>(pair.first)],
                                  tk.vocab[static_cast<std::size_t>(pair.second)]);
        auto cur = std::make_pair(tk.vocab[static_cast<std::size_t>(best.first)],
                                  tk.vocab[static_cast<std::size_t>(best.second)]);
        if (key < cur) best = pair;
      }
      if (best.first < 0) break;
      Merge m{best.first, best.second, static_cast<int>(tk.vocab.size())};
      tk.vocab.push_back(tk.vocab[static_cast<std::size_t>(m.left)] + tk.vocab[static_cast<std::size_t>(m.right)]);
      tk.merges.push_back(m);
      for (auto& s : streams) apply_merge(s, m);
    }
    return tk;
  }

  std::vector<int> tokenize(const std::string& text) const {
    std::unordered_map<char, int> char_id;
    for (std::size_t i = 1; i < vocab.size(); ++i)
      if (vocab[i].size() == 1) char_id.emplace(vocab[i][0], static_cast<int>(i));
    std::vector<int> ids;
    ids.reserve(text.size());
    for (char c : text) {
      auto it = char_id.find(c);
      if (it == char_id.end()) {
        ids.push_back(kUnkId);
        ++unk_count_;
      } else {
        ids.push_back(it->second);
      }
    }
    for (const Merge& m : merges) apply_merge(ids, m);
    return ids;
  }

  std::string detokenize(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
      if (id < 0 || id >= static_cast<int>(vocab.size()))
        throw std::runtime_error("token id " + std::to_string(id) + " out of range");
      out += vocab[static_cast<std::size_t>(id)];
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["vocab"] = vocab;
    j["merges"] = nlohmann::json::array();
    for (const Merge& m : merges) j["merges"].push_back({m.left, m.right, m.out});
    return j;
  }

  static ToyTextTokenizer from_json(const nlohmann::json& j) {
    ToyTextTokenizer tk;
    tk.vocab = j.at("vocab").get<std::vector<std::string>>();
    if (tk.vocab.empty() || tk.vocab[0] != kUnkPiece)
      throw std::runtime_error("tokenizer table is missing the reserved unknown entry");
    for (const auto& row : j.at("merges")) {
      Merge m{row.at(0).get<int>(), row.at(1).get<int>(), row.at(2).get<int>()};
      int n = static_cast<int>(tk.vocab.size());
      if (m.left < 0 || m.left >= n || m.right < 0 || m.right >= n || m.out >= n || m.out < 0)
        throw std::runtime_error("tokenizer merge references an id outside the vocabulary");
      if (tk.vocab[static_cast<std::size_t>(m.out)] !=
          tk.vocab[static_cast<std::size_t>(m.left)] + tk.vocab[static_cast<std::size_t>(m.right)])
        throw std::runtime_error("tokenizer merge output does not match its parts");
      tk.merges.push_back(m);
    }
    return tk;
  }

  void save(const std::string& path) const {
    std::string text = to_json().dump(2);
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    std::size_t put = std::fwrite(text.data(), 1, text.size(), f);
    bool ok = std::fclose(f) == 0 && put == text.size();
    if (!ok) throw std::runtime_error("failed writing " + path);
  }

  static ToyTextTokenizer load(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string text;
    char buf[4096];
    std::size_t got;
    while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, got);
    std::fclose(f);
    return from_json(nlohmann::json::parse(text));
  }

 private:
  mutable long long unk_count_ = 0;

  static void apply_merge(std::vector<int>& seq, const Merge& m) {
    std::size_t w = 0;
    for (std::size_t r = 0; r < seq.size();) {
      if (r + 1 < seq.size() && seq[r] == m.left && seq[r + 1] == m.right) {
        seq[w++] = m.out;
        r += 2;
      } else {
        seq[w++] = seq[r++];
      }
    }
    seq.resize(w);
  }
};

}  // namespace tacolm
