#pragma once
// Dense row-major arrays on an accounting allocator. Every tensor in the
// library lives in one of these, so memstat::peak() reflects real model
// footprint (weights, activations, optimizer state, caches).

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace tacolm {

namespace memstat {

inline std::atomic<long long>& current_() {
  static std::atomic<long long> v{0};
  return v;
}
inline std::atomic<long long>& peak_() {
  static std::atomic<long long> v{0};
  return v;
}

inline void on_alloc(long long bytes) {
  long long cur = current_().fetch_add(bytes) + bytes;
  long long pk = peak_().load();
  while (cur > pk && !peak_().compare_exchange_weak(pk, cur)) {
  }
}
inline void on_free(long long bytes) { current_().fetch_sub(bytes); }
inline long long current() { return current_().load(); }
inline long long peak() { return peak_().load(); }
inline void reset_peak() { peak_().store(current()); }

}  // namespace memstat

template <typename T>
struct CountingAllocator {
  using value_type = T;
  CountingAllocator() = default;
  template <typename U>
  CountingAllocator(const CountingAllocator<U>&) {}

  T* allocate(std::size_t n) {
    memstat::on_alloc(static_cast<long long>(n * sizeof(T)));
    return static_cast<T*>(::operator new(n * sizeof(T)));
  }
  void deallocate(T* p, std::size_t n) {
    memstat::on_free(static_cast<long long>(n * sizeof(T)));
    ::operator delete(p);
  }
  bool operator==(const CountingAllocator&) const { return true; }
  bool operator!=(const CountingAllocator&) const { return false; }
};

using Shape = std::vector<long long>;

inline long long shape_numel(const Shape& s) {
  long long n = 1;
  for (long long d : s) {
    if (d < 0) throw std::runtime_error("negative shape extent");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += ",";
  }
  return out + "]";
}

template <typename Real>
struct DenseArray {
  Shape shape;
  std::vector<Real, CountingAllocator<Real>> data;

  DenseArray() = default;
  explicit DenseArray(Shape s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(shape_numel(shape)), Real(0));
  }
  DenseArray(Shape s, Real fill) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
  }
  DenseArray(Shape s, std::initializer_list<Real> vals) : shape(std::move(s)) {
    if (static_cast<long long>(vals.size()) != shape_numel(shape))
      throw std::runtime_error("initializer size does not match shape " + shape_str(shape));
    data.assign(vals.begin(), vals.end());
  }
  static DenseArray scalar(Real v) { return DenseArray(Shape{}, {v}); }

  long long numel() const { return static_cast<long long>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  bool empty() const { return data.empty(); }

  long long rows() const { return rank() >= 1 ? shape[0] : 1; }
  long long cols() const { return rank() >= 2 ? shape[rank() - 1] : (rank() == 1 ? shape[0] : 1); }

  Real& operator[](long long i) { return data[static_cast<std::size_t>(i)]; }
  Real operator[](long long i) const { return data[static_cast<std::size_t>(i)]; }
  Real& at(long long r, long long c) { return data[static_cast<std::size_t>(r * cols() + c)]; }
  Real at(long long r, long long c) const { return data[static_cast<std::size_t>(r * cols() + c)]; }
  Real* row_ptr(long long r) { return data.data() + r * cols(); }
  const Real* row_ptr(long long r) const { return data.data() + r * cols(); }

  void release() {
    shape.clear();
    data.clear();
    data.shrink_to_fit();
  }
};

template <typename Real>
inline bool all_finite(const DenseArray<Real>& a) {
  for (Real v : a.data)
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename Real>
inline void require_finite(const DenseArray<Real>& a, const char* who) {
  for (std::size_t i = 0; i < a.data.size(); ++i)
    if (!std::isfinite(a.data[i]))
      throw std::runtime_error(std::string(who) + " produced a non-finite value at flat index " +
                               std::to_string(i) + " of " + shape_str(a.shape));
}

}  // namespace tacolm
