#pragma once
// Checkpoint container: magic, format version, config as a canonical JSON
// text block, ordered named f32 blobs with explicit shapes, and a trailing
// whole-file digest. Stored little-endian; loading is all-or-nothing.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacolm/layers.hpp"

namespace tacolm {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'T', 'A', 'C', 'O', 'L', 'M', '1', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a(const unsigned char* p, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

namespace detail {

template <typename T>
void put(std::vector<unsigned char>& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

inline void put_bytes(std::vector<unsigned char>& out, const void* p, std::size_t n) {
  const unsigned char* b = static_cast<const unsigned char*>(p);
  out.insert(out.end(), b, b + n);
}

struct Reader {
  const unsigned char* p;
  std::size_t n, off = 0;

  template <typename T>
  T get() {
    if (off + sizeof(T) > n) throw std::runtime_error("truncated checkpoint");
    T v;
    std::memcpy(&v, p + off, sizeof(T));
    off += sizeof(T);
    return v;
  }
  const unsigned char* get_bytes(std::size_t k) {
    if (off + k > n) throw std::runtime_error("truncated checkpoint");
    const unsigned char* out = p + off;
    off += k;
    return out;
  }
};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const nlohmann::json& config, const ParamStore<float>& store) {
  std::vector<unsigned char> out;
  detail::put_bytes(out, kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put(out, kCheckpointVersion);
  std::string cfg = config.dump();  // object keys serialize sorted: canonical
  detail::put(out, static_cast<std::uint64_t>(cfg.size()));
  detail::put_bytes(out, cfg.data(), cfg.size());
  detail::put(out, static_cast<std::uint64_t>(store.arrays.size()));
  for (std::size_t i = 0; i < store.arrays.size(); ++i) {
    const std::string& name = store.names[i];
    const DenseArray<float>& a = store.arrays[i];
    detail::put(out, static_cast<std::uint64_t>(name.size()));
    detail::put_bytes(out, name.data(), name.size());
    detail::put(out, static_cast<std::uint32_t>(a.shape.size()));
    for (long long d : a.shape) detail::put(out, static_cast<std::int64_t>(d));
    detail::put_bytes(out, a.data.data(), a.data.size() * sizeof(float));
  }
  detail::put(out, fnv1a(out.data(), out.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("short write to " + path);
}

struct LoadedCheckpoint {
  nlohmann::json config;
  std::vector<std::string> names;
  std::vector<DenseArray<float>> blobs;
};

inline LoadedCheckpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::streamsize size = f.tellg();
  f.seekg(0);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(size));
  if (!f.read(reinterpret_cast<char*>(bytes.data()), size)) throw std::runtime_error("cannot read " + path);

  if (bytes.size() < sizeof(kCheckpointMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t))
    throw std::runtime_error("truncated checkpoint: " + path);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - sizeof(stored), sizeof(stored));
  if (fnv1a(bytes.data(), bytes.size() - sizeof(stored)) != stored)
    throw std::runtime_error("checkpoint digest mismatch (corrupt or truncated): " + path);

  detail::Reader r{bytes.data(), bytes.size() - sizeof(stored)};
  if (std::memcmp(r.get_bytes(sizeof(kCheckpointMagic)), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  std::uint32_t version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

  LoadedCheckpoint out;
  std::uint64_t cfg_len = r.get<std::uint64_t>();
  const unsigned char* cfg = r.get_bytes(cfg_len);
  out.config = nlohmann::json::parse(cfg, cfg + cfg_len);

  std::uint64_t count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t name_len = r.get<std::uint64_t>();
    const unsigned char* nm = r.get_bytes(name_len);
    out.names.emplace_back(reinterpret_cast<const char*>(nm), name_len);
    std::uint32_t rank = r.get<std::uint32_t>();
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.get<std::int64_t>());
    DenseArray<float> a(shape);
    const unsigned char* data = r.get_bytes(a.data.size() * sizeof(float));
    std::memcpy(a.data.data(), data, a.data.size() * sizeof(float));
    out.blobs.push_back(std::move(a));
  }
  if (r.off != r.n) throw std::runtime_error("trailing bytes in checkpoint: " + path);
  return out;
}

// fills an already-registered store; every blob must match a registered
// parameter by name and shape, and cover the store completely
inline nlohmann::json load_checkpoint_into(const std::string& path, ParamStore<float>& store) {
  LoadedCheckpoint ck = read_checkpoint(path);
  if (ck.blobs.size() != store.arrays.size())
    throw std::runtime_error("checkpoint has " + std::to_string(ck.blobs.size()) + " blobs, model expects " +
                             std::to_string(store.arrays.size()));
  for (std::size_t i = 0; i < ck.blobs.size(); ++i) {
    int idx = store.find(ck.names[i]);
    DenseArray<float>& dst = store.arrays[static_cast<std::size_t>(idx)];
    if (dst.shape != ck.blobs[i].shape)
      throw std::runtime_error("parameter " + ck.names[i] + " expects shape " + shape_str(dst.shape) +
                               " but checkpoint holds " + shape_str(ck.blobs[i].shape));
    dst = std::move(ck.blobs[i]);
  }
  return ck.config;
}

}  // namespace tacolm
