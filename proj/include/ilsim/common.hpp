#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ilsim {

class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// splitmix64, used for seeding and index hashing.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// xoshiro256** — self-contained so streams are reproducible across
// standard libraries (std distributions are not portable).
class Rng {
public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) w = x = splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, n), unbiased via rejection.
  uint64_t next_below(uint64_t n) {
    if (n == 0) throw Error("Rng::next_below: n must be > 0");
    const uint64_t threshold = (0 - n) % n;
    for (;;) {
      const uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform float in [-a, a].
  float next_symmetric(float a) { return static_cast<float>((2.0 * next_double() - 1.0) * a); }

  bool next_bool(double p_true) { return next_double() < p_true; }

private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

// Little-endian binary IO. Values are written byte-by-byte so the format
// does not depend on host endianness.
class BinaryWriter {
public:
  explicit BinaryWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot open file for writing: " + path);
    path_ = path;
  }

  template <typename T>
  void write(T v) {
    static_assert(std::is_integral_v<T>);
    unsigned char buf[sizeof(T)];
    auto u = static_cast<std::make_unsigned_t<T>>(v);
    for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(u >> (8 * i));
    out_.write(reinterpret_cast<const char*>(buf), sizeof(T));
  }

  void write_f32(float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    write<uint32_t>(u);
  }

  void write_f64(double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    write<uint64_t>(u);
  }

  void write_bytes(const void* data, size_t len) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  }

  void close() {
    out_.close();
    if (!out_) throw Error("write failed: " + path_);
  }

private:
  std::ofstream out_;
  std::string path_;
};

class BinaryReader {
public:
  explicit BinaryReader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw Error("cannot open file for reading: " + path);
    path_ = path;
  }

  template <typename T>
  T read() {
    static_assert(std::is_integral_v<T>);
    unsigned char buf[sizeof(T)];
    in_.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (in_.gcount() != static_cast<std::streamsize>(sizeof(T)))
      throw Error("truncated file: " + path_);
    std::make_unsigned_t<T> u = 0;
    for (size_t i = 0; i < sizeof(T); ++i)
      u |= static_cast<std::make_unsigned_t<T>>(buf[i]) << (8 * i);
    return static_cast<T>(u);
  }

  float read_f32() {
    uint32_t u = read<uint32_t>();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }

  double read_f64() {
    uint64_t u = read<uint64_t>();
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }

  void read_bytes(void* data, size_t len) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
    if (in_.gcount() != static_cast<std::streamsize>(len))
      throw Error("truncated file: " + path_);
  }

  bool try_read_bytes(void* data, size_t len) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
    return in_.gcount() == static_cast<std::streamsize>(len);
  }

  bool at_eof() {
    return in_.peek() == std::char_traits<char>::eof();
  }

  const std::string& path() const { return path_; }

private:
  std::ifstream in_;
  std::string path_;
};

}  // namespace ilsim
