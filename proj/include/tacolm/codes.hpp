#pragma once
// Shared vocabulary constants and the frames x 8 acoustic code matrix that the
// codec emits and both models consume.

#include <stdexcept>
#include <string>
#include <vector>

namespace tacolm {

inline constexpr int kQuantizers = 8;
inline constexpr int kCodebookSize = 1024;
inline constexpr int kFrameRate = 75;      // 24000 / 320
inline constexpr int kSampleRate = 24000;
inline constexpr int kFrameSamples = 320;

// first-stage sequence specials: BOS is embedded, EOS exists only as an
// extra class on the output head
inline constexpr int kArBosId = kCodebookSize;
inline constexpr int kArEosClass = kCodebookSize;
inline constexpr int kArHeadClasses = kCodebookSize + 1;

struct CodeMatrix {
  long long frames = 0;
  std::vector<int> codes;  // row-major, frames x kQuantizers

  CodeMatrix() = default;
  explicit CodeMatrix(long long t) : frames(t), codes(static_cast<std::size_t>(t) * kQuantizers, 0) {}

  int at(long long t, int k) const { return codes[static_cast<std::size_t>(t * kQuantizers + k)]; }
  int& at(long long t, int k) { return codes[static_cast<std::size_t>(t * kQuantizers + k)]; }

  std::vector<int> layer(int k) const {
    std::vector<int> out(static_cast<std::size_t>(frames));
    for (long long t = 0; t < frames; ++t) out[static_cast<std::size_t>(t)] = at(t, k);
    return out;
  }

  void validate() const {
    if (codes.size() != static_cast<std::size_t>(frames) * kQuantizers)
      throw std::runtime_error("code matrix storage does not match frame count");
    for (std::size_t i = 0; i < codes.size(); ++i)
      if (codes[i] < 0 || codes[i] >= kCodebookSize)
        throw std::runtime_error("audio code " + std::to_string(codes[i]) + " out of range at flat index " +
                                 std::to_string(i));
  }
};

}  // namespace tacolm
