#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace glta {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline uint64_t fnv1a64_bytes(const void* data, size_t n, uint64_t h = 1469598103934665603ULL) {
  const unsigned char* b = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ULL;
  }
  return h;
}

// All randomness in a run funnels through one master seed; independent streams
// are derived by mixing a tag and an index into it.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  static Rng derive(uint64_t master, std::string_view tag, uint64_t index = 0) {
    return Rng(splitmix64(master ^ fnv1a64(tag) ^ splitmix64(index + 0x51ed2701)));
  }

  std::mt19937_64& gen() { return gen_; }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }

  // Inclusive bounds.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    return std::uniform_int_distribution<int64_t>(lo, hi)(gen_);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(gen_);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    std::shuffle(v.begin(), v.end(), gen_);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace glta
