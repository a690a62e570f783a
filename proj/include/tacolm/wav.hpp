#pragma once
// Minimal mono WAV (PCM16) and raw float32 file I/O. Little-endian hosts
// only, which the checkpoint header already asserts.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace tacolm {

namespace wav_detail {

inline void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  b.push_back(static_cast<unsigned char>(v & 0xff));
  b.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  b.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  b.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

inline void put_u16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(static_cast<unsigned char>(v & 0xff));
  b.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
}

inline void put_tag(std::vector<unsigned char>& b, const char* tag) {
  b.insert(b.end(), tag, tag + 4);
}

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open " + path);
  std::fseek(f, 0, SEEK_END);
  long n = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(n < 0 ? 0 : n));
  std::size_t got = bytes.empty() ? 0 : std::fread(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (got != bytes.size()) throw std::runtime_error("short read from " + path);
  return bytes;
}

inline void write_file(const std::string& path, const unsigned char* data, std::size_t n) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  std::size_t put = n == 0 ? 0 : std::fwrite(data, 1, n, f);
  bool ok = std::fclose(f) == 0 && put == n;
  if (!ok) throw std::runtime_error("failed writing " + path);
}

}  // namespace wav_detail

inline void write_wav_pcm16(const std::string& path, const std::vector<float>& samples, int sample_rate) {
  using namespace wav_detail;
  std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::vector<unsigned char> b;
  b.reserve(44 + data_bytes);
  put_tag(b, "RIFF");
  put_u32(b, 36 + data_bytes);
  put_tag(b, "WAVE");
  put_tag(b, "fmt ");
  put_u32(b, 16);
  put_u16(b, 1);  // PCM
  put_u16(b, 1);  // mono
  put_u32(b, static_cast<std::uint32_t>(sample_rate));
  put_u32(b, static_cast<std::uint32_t>(sample_rate) * 2);
  put_u16(b, 2);
  put_u16(b, 16);
  put_tag(b, "data");
  put_u32(b, data_bytes);
  for (float s : samples) {
    float c = s < -1.0f ? -1.0f : (s > 1.0f ? 1.0f : s);
    auto v = static_cast<std::int16_t>(std::lrintf(c * 32767.0f));
    put_u16(b, static_cast<std::uint16_t>(v));
  }
  write_file(path, b.data(), b.size());
}

// accepts only what write_wav_pcm16 produces: PCM16 mono
inline std::vector<float> read_wav_pcm16(const std::string& path, int* sample_rate_out = nullptr) {
  using namespace wav_detail;
  std::vector<unsigned char> b = read_file(path);
  auto u16 = [&](std::size_t o) { return static_cast<std::uint32_t>(b[o]) | (static_cast<std::uint32_t>(b[o + 1]) << 8); };
  auto u32 = [&](std::size_t o) { return u16(o) | (u16(o + 2) << 16); };
  if (b.size() < 44 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error(path + " is not a RIFF/WAVE file");
  std::size_t pos = 12;
  int rate = 0;
  bool have_fmt = false;
  std::vector<float> samples;
  while (pos + 8 <= b.size()) {
    std::uint32_t chunk_len = u32(pos + 4);
    if (pos + 8 + chunk_len > b.size()) throw std::runtime_error(path + ": truncated chunk");
    if (std::memcmp(b.data() + pos, "fmt ", 4) == 0) {
      if (chunk_len < 16 || u16(pos + 8) != 1 || u16(pos + 10) != 1 || u16(pos + 22) != 16)
        throw std::runtime_error(path + ": expected mono 16-bit PCM");
      rate = static_cast<int>(u32(pos + 12));
      have_fmt = true;
    } else if (std::memcmp(b.data() + pos, "data", 4) == 0) {
      if (!have_fmt) throw std::runtime_error(path + ": data chunk before fmt");
      samples.resize(chunk_len / 2);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        auto v = static_cast<std::int16_t>(u16(pos + 8 + 2 * i));
        samples[i] = static_cast<float>(v) / 32767.0f;
      }
      if (sample_rate_out) *sample_rate_out = rate;
      return samples;
    }
    pos += 8 + chunk_len + (chunk_len & 1);
  }
  throw std::runtime_error(path + ": no data chunk");
}

inline void write_raw_f32(const std::string& path, const std::vector<float>& samples) {
  wav_detail::write_file(path, reinterpret_cast<const unsigned char*>(samples.data()), samples.size() * sizeof(float));
}

inline std::vector<float> read_raw_f32(const std::string& path) {
  std::vector<unsigned char> b = wav_detail::read_file(path);
  if (b.size() % sizeof(float) != 0) throw std::runtime_error(path + ": size is not a multiple of 4");
  std::vector<float> out(b.size() / sizeof(float));
  std::memcpy(out.data(), b.data(), b.size());
  return out;
}

}  // namespace tacolm
