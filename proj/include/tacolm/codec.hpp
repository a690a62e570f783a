#pragma once
// Deterministic stand-in for a neural audio codec: 24 kHz mono, 320-sample
// frames (75 Hz), a 16-dim analysis space spanned by cosine/sine pairs at
// eight integer frequency bins, and an 8-level residual vector quantizer with
// 1024 entries per level. Codebooks are fixed at construction: each level's
// entries are seeded samples from the residual distribution of a built-in
// calibration set, so no training is involved and every instance with the
// same seed is bit-identical.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tacolm/array.hpp"
#include "tacolm/codes.hpp"
#include "tacolm/rng.hpp"

namespace tacolm {

inline constexpr std::uint64_t kCodecSeed = 0xC0DEC;
inline constexpr int kFrameDim = 16;
// integer bins of the 320-sample frame; bin m is m*75 Hz
inline constexpr std::array<int, 8> kToneBins = {4, 6, 8, 10, 13, 16, 20, 24};

// a single sustained sinusoid at one of the canonical bins
struct ToneSpec {
  int bin_index = 0;  // into kToneBins
  double amp = 0.2;
  double phase = 0.0;
};

// append whole frames of summed tones; the envelope is constant within each
// frame (half amplitude on the first and last frame) so segments stay exactly
// inside the analysis space
inline void append_tone_frames(std::vector<float>& w, const std::vector<ToneSpec>& tones, long long n_frames) {
  std::size_t start = w.size();
  w.resize(start + static_cast<std::size_t>(n_frames) * kFrameSamples, 0.0f);
  for (const ToneSpec& t : tones) {
    double omega = 2.0 * M_PI * kToneBins[static_cast<std::size_t>(t.bin_index)] / kFrameSamples;
    for (long long f = 0; f < n_frames; ++f) {
      double env = 1.0;
      if (n_frames == 1)
        env = 0.75;
      else if (f == 0 || f == n_frames - 1)
        env = 0.5;
      float* out = w.data() + start + static_cast<std::size_t>(f) * kFrameSamples;
      for (int n = 0; n < kFrameSamples; ++n)
        out[n] += static_cast<float>(t.amp * env * std::cos(omega * static_cast<double>(n) + t.phase));
    }
  }
}

inline void append_silence_frames(std::vector<float>& w, long long n_frames) {
  w.resize(w.size() + static_cast<std::size_t>(n_frames) * kFrameSamples, 0.0f);
}

inline double snr_db(const std::vector<float>& ref, const std::vector<float>& test) {
  std::size_t n = std::min(ref.size(), test.size());
  double sig = 0.0, err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sig += static_cast<double>(ref[i]) * ref[i];
    double d = static_cast<double>(ref[i]) - (i < test.size() ? test[i] : 0.0f);
    err += d * d;
  }
  for (std::size_t i = n; i < ref.size(); ++i) sig += static_cast<double>(ref[i]) * ref[i];
  for (std::size_t i = n; i < test.size(); ++i) {
    double d = test[i];
    err += d * d;
  }
  if (err == 0.0) return 300.0;  // exact reconstruction; report a finite ceiling
  if (sig == 0.0) return -300.0;
  return 10.0 * std::log10(sig / err);
}

class ToyCodec {
 public:
  explicit ToyCodec(std::uint64_t seed = kCodecSeed) {
    build_basis();
    build_codebooks(seed);
  }

  // project one 320-sample frame onto the analysis space
  void analyze(const float* frame, float out[kFrameDim]) const {
    for (int i = 0; i < kFrameDim; ++i) {
      double acc = 0.0;
      const float* b = basis_.row_ptr(i);
      for (int n = 0; n < kFrameSamples; ++n) acc += static_cast<double>(b[n]) * frame[n];
      out[i] = static_cast<float>(acc);
    }
  }

  CodeMatrix encode(const std::vector<float>& wave) const {
    if (wave.size() < kFrameSamples)
      throw std::runtime_error("waveform shorter than one frame (" + std::to_string(wave.size()) + " samples)");
    long long t_frames = static_cast<long long>(wave.size()) / kFrameSamples;
    CodeMatrix out(t_frames);
    std::array<float, kFrameDim> r{};
    for (long long t = 0; t < t_frames; ++t) {
      analyze(wave.data() + t * kFrameSamples, r.data());
      for (int k = 0; k < kQuantizers; ++k) {
        int best = nearest(k, r.data());
        out.at(t, k) = best;
        const float* e = books_[static_cast<std::size_t>(k)].row_ptr(best);
        for (int i = 0; i < kFrameDim; ++i) r[static_cast<std::size_t>(i)] -= e[i];
      }
    }
    return out;
  }

  // sum the chosen entries of the first `levels` books, then map back through
  // the transposed (orthonormal) analysis basis
  std::vector<float> decode(const CodeMatrix& codes, int levels = kQuantizers) const {
    if (levels < 1 || levels > kQuantizers) throw std::runtime_error("decode: levels must lie in [1,8]");
    codes.validate();
    std::vector<float> wave(static_cast<std::size_t>(codes.frames) * kFrameSamples, 0.0f);
    for (long long t = 0; t < codes.frames; ++t) {
      std::array<double, kFrameDim> y{};
      for (int k = 0; k < levels; ++k) {
        const float* e = books_[static_cast<std::size_t>(k)].row_ptr(codes.at(t, k));
        for (int i = 0; i < kFrameDim; ++i) y[static_cast<std::size_t>(i)] += e[i];
      }
      float* out = wave.data() + t * kFrameSamples;
      for (int i = 0; i < kFrameDim; ++i) {
        const float* b = basis_.row_ptr(i);
        for (int n = 0; n < kFrameSamples; ++n)
          out[n] += static_cast<float>(y[static_cast<std::size_t>(i)] * static_cast<double>(b[n]));
      }
    }
    return wave;
  }

  // residual remaining after quantizing one frame vector with the first
  // `levels` books (exposed so tests can check the refinement property)
  double residual_norm(const float* frame_vec, int levels) const {
    std::array<float, kFrameDim> r;
    std::copy(frame_vec, frame_vec + kFrameDim, r.begin());
    for (int k = 0; k < levels; ++k) {
      const float* e = books_[static_cast<std::size_t>(k)].row_ptr(nearest(k, r.data()));
      for (int i = 0; i < kFrameDim; ++i) r[static_cast<std::size_t>(i)] -= e[i];
    }
    double s = 0.0;
    for (float v : r) s += static_cast<double>(v) * v;
    return std::sqrt(s);
  }

  const DenseArray<float>& book(int k) const { return books_[static_cast<std::size_t>(k)]; }

 private:
  DenseArray<float> basis_;               // [16, 320], orthonormal rows
  std::vector<DenseArray<float>> books_;  // 8 x [1024, 16]
  std::vector<DenseArray<float>> book_half_norms_;  // per entry, |e|^2 / 2

  void build_basis() {
    basis_ = DenseArray<float>(Shape{kFrameDim, kFrameSamples});
    // cos/sin at distinct integer bins over a full frame are exactly
    // orthogonal; each has energy 160
    double norm = 1.0 / std::sqrt(kFrameSamples / 2.0);
    for (std::size_t p = 0; p < kToneBins.size(); ++p) {
      double omega = 2.0 * M_PI * kToneBins[p] / kFrameSamples;
      for (int n = 0; n < kFrameSamples; ++n) {
        basis_.at(static_cast<long long>(2 * p), n) = static_cast<float>(norm * std::cos(omega * n));
        basis_.at(static_cast<long long>(2 * p + 1), n) = static_cast<float>(norm * std::sin(omega * n));
      }
    }
  }

  // Each book is a polar lattice per frequency bin: 8 bins x 8 log-spaced
  // magnitudes x 16 phases (entry 0 overwritten with the zero vector). The
  // first two books span the full chord magnitude range so both tones of a
  // chord get captured; later books shrink geometrically and mop up grid
  // error. Phase grids are rotated per (book, bin) from the seed.
  void build_codebooks(std::uint64_t seed) {
    Rng rng(seed);
    constexpr int kAmps = 8, kPhases = 16;
    const double m_hi0 = 4.6, m_lo0 = 0.6, shrink = 0.32;
    books_.clear();
    book_half_norms_.clear();
    for (int k = 0; k < kQuantizers; ++k) {
      double scale = std::pow(shrink, std::max(0, k - 1));
      DenseArray<float> book(Shape{kCodebookSize, kFrameDim});
      for (std::size_t b = 0; b < kToneBins.size(); ++b) {
        double phase_off = rng.u01();
        for (int a = 0; a < kAmps; ++a) {
          double m = scale * m_lo0 * std::pow(m_hi0 / m_lo0, static_cast<double>(a) / (kAmps - 1));
          for (int p = 0; p < kPhases; ++p) {
            double psi = 2.0 * M_PI * (static_cast<double>(p) + phase_off) / kPhases;
            long long j = static_cast<long long>(b) * (kAmps * kPhases) + a * kPhases + p;
            book.at(j, static_cast<long long>(2 * b)) = static_cast<float>(m * std::cos(psi));
            book.at(j, static_cast<long long>(2 * b + 1)) = static_cast<float>(m * std::sin(psi));
          }
        }
      }
      for (int i = 0; i < kFrameDim; ++i) book.at(0, i) = 0.0f;  // silence and dead residuals
      books_.push_back(std::move(book));
      cache_norms(k);
    }
  }

  void cache_norms(int k) {
    DenseArray<float> hn(Shape{kCodebookSize});
    for (int j = 0; j < kCodebookSize; ++j) {
      double s = 0.0;
      const float* e = books_[static_cast<std::size_t>(k)].row_ptr(j);
      for (int i = 0; i < kFrameDim; ++i) s += static_cast<double>(e[i]) * e[i];
      hn[j] = static_cast<float>(0.5 * s);
    }
    book_half_norms_.push_back(std::move(hn));
  }

  // argmin_j |r - e_j|^2 == argmin_j (|e_j|^2/2 - r.e_j); ties go to the
  // lowest index so encoding is deterministic
  int nearest(int k, const float* r) const {
    const DenseArray<float>& book = books_[static_cast<std::size_t>(k)];
    const DenseArray<float>& hn = book_half_norms_[static_cast<std::size_t>(k)];
    int best = 0;
    double best_score = hn[0];  // entry 0 is zero: score = 0 - r.0
    for (int j = 1; j < kCodebookSize; ++j) {
      const float* e = book.row_ptr(j);
      double dot = 0.0;
      for (int i = 0; i < kFrameDim; ++i) dot += static_cast<double>(e[i]) * r[i];
      double score = static_cast<double>(hn[j]) - dot;
      if (score < best_score) {
        best_score = score;
        best = j;
      }
    }
    return best;
  }
};

}  // namespace tacolm
