#pragma once
// Prefix visibility: bidirectional attention across the text span, causal
// attention from there on. Kept as a predicate (plus a dense materializer for
// tests) so a 4k-token benchmark does not pay for a T*T byte matrix per layer.

#include <memory>
#include <stdexcept>
#include <vector>

namespace tacolm {

struct PrefixMask {
  long long text_len = 0;
  long long audio_len = 0;  // includes the audio start slot

  long long total() const { return text_len + audio_len; }

  bool visible(long long query, long long key) const {
    return key < text_len || key <= query;
  }

  std::vector<unsigned char> dense() const {
    long long n = total();
    std::vector<unsigned char> m(static_cast<std::size_t>(n * n));
    for (long long i = 0; i < n; ++i)
      for (long long j = 0; j < n; ++j) m[static_cast<std::size_t>(i * n + j)] = visible(i, j) ? 1 : 0;
    return m;
  }
};

inline std::shared_ptr<const PrefixMask> build_prefix_mask(long long text_len, long long audio_len) {
  if (text_len < 0 || audio_len < 0 || text_len + audio_len == 0)
    throw std::runtime_error("build_prefix_mask: lengths must be non-negative and not both zero");
  auto m = std::make_shared<PrefixMask>();
  m->text_len = text_len;
  m->audio_len = audio_len;
  return m;
}

}  // namespace tacolm
