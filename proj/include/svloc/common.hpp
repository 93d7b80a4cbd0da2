#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace svloc {

//=============================================================================
// Error handling
//=============================================================================

enum class Status {
  kOk = 0,
  kInvalidArgument,
  kEmptyInput,
  kInfeasible,
  kIo,
  kFormat,
  kNumeric,
  kConfigMismatch,
  kDegenerate,
  kInternal,
};

const char* status_name(Status s);

class Error : public std::runtime_error {
 public:
  Error(Status status, const std::string& what)
      : std::runtime_error(what), status_(status) {}
  Status status() const { return status_; }

 private:
  Status status_;
};

[[noreturn]] inline void raise(Status s, const std::string& msg) {
  throw Error(s, msg);
}

//=============================================================================
// Deterministic RNG
//
// std distributions are implementation-defined, so all draws go through this
// wrapper to keep artifacts byte-reproducible across toolchains.
//=============================================================================

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derive an independent child seed for a named pipeline stage.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    // splitmix64 expansion of the seed into xoshiro256** state
    std::uint64_t x = seed;
    for (auto& w : s_) {
      x = splitmix64(x);
      w = x;
    }
  }

  std::uint64_t next_u64() {
    auto rotl = [](std::uint64_t v, int k) {
      return (v << k) | (v >> (64 - k));
    };
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, n). Rejection-free is not needed; modulo bias is
  // negligible for our n and determinism is what matters.
  std::uint64_t uniform_u64(std::uint64_t n) { return next_u64() % n; }

  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform_u64(n));
  }

  // Uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; deterministic unlike std::normal_distribution.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_u64(i)]);
    }
  }

 private:
  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

//=============================================================================
// Little-endian binary IO
//=============================================================================

class ByteWriter {
 public:
  explicit ByteWriter(const std::string& path)
      : out_(path, std::ios::binary), path_(path) {
    if (!out_) raise(Status::kIo, "cannot open for write: " + path);
  }

  void magic(const char tag[4]) { out_.write(tag, 4); }
  void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put_le(v); }
  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void i32(std::int32_t v) { put_le(static_cast<std::uint32_t>(v)); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_le(bits);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_le(bits);
  }
  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }

  void finish() {
    out_.flush();
    if (!out_) raise(Status::kIo, "write failed: " + path_);
  }

 private:
  template <typename T>
  void put_le(T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      buf[i] = static_cast<unsigned char>(v >> (8 * i));
    }
    out_.write(reinterpret_cast<const char*>(buf), sizeof(T));
  }

  std::ofstream out_;
  std::string path_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& path)
      : in_(path, std::ios::binary), path_(path) {
    if (!in_) raise(Status::kIo, "cannot open for read: " + path);
  }

  void expect_magic(const char tag[4]) {
    char buf[4];
    in_.read(buf, 4);
    check();
    if (std::memcmp(buf, tag, 4) != 0) {
      raise(Status::kFormat,
            path_ + ": bad magic, expected " + std::string(tag, 4));
    }
  }
  std::uint8_t u8() {
    int c = in_.get();
    if (c == EOF) fail();
    return static_cast<std::uint8_t>(c);
  }
  std::uint16_t u16() { return get_le<std::uint16_t>(); }
  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  std::uint64_t u64() { return get_le<std::uint64_t>(); }
  std::int32_t i32() { return static_cast<std::int32_t>(get_le<std::uint32_t>()); }
  float f32() {
    std::uint32_t bits = get_le<std::uint32_t>();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    std::uint64_t bits = get_le<std::uint64_t>();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    check();
  }

 private:
  template <typename T>
  T get_le() {
    unsigned char buf[sizeof(T)];
    in_.read(reinterpret_cast<char*>(buf), sizeof(T));
    check();
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(buf[i]) << (8 * i);
    }
    return v;
  }
  void check() {
    if (!in_) fail();
  }
  [[noreturn]] void fail() {
    raise(Status::kFormat, path_ + ": truncated or unreadable");
  }

  std::ifstream in_;
  std::string path_;
};

//=============================================================================
// FNV-1a 64 checksum (artifact manifests)
//=============================================================================

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t checksum_file(const std::string& path);

//=============================================================================
// Deterministic parallel-for
//
// Output must go to preallocated per-index slots; chunk assignment is a
// function of (n, threads) only, so runs with a fixed thread count are
// bit-reproducible.
//=============================================================================

inline int effective_threads(int requested) {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const int t = effective_threads(threads);
  if (t <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(t));
  std::exception_ptr first_error;
  std::mutex err_mutex;
  for (int w = 0; w < t; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (std::size_t i = static_cast<std::size_t>(w); i < n;
             i += static_cast<std::size_t>(t)) {
          fn(i);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace svloc
