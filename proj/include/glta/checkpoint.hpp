#pragma once

// Versioned binary checkpoint: magic "GLTA", a stage tag, the full config
// snapshot as text, and a table of named float32 arrays. Integers and floats
// are little-endian; save/load round-trips bitwise.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "glta/errors.hpp"
#include "glta/tensor.hpp"

namespace glta::io {

inline constexpr char kMagic[4] = {'G', 'L', 'T', 'A'};
inline constexpr uint32_t kVersion = 1;

struct Checkpoint {
  std::string stage;
  std::string config_text;
  std::vector<std::pair<std::string, nd::Tensor<float>>> arrays;  // insertion-ordered

  void put(const std::string& name, const nd::Tensor<float>& t) {
    for (auto& [n, existing] : arrays)
      if (n == name) {
        existing = t;
        return;
      }
    arrays.emplace_back(name, t);
  }

  bool has(const std::string& name) const {
    for (const auto& [n, t] : arrays)
      if (n == name) return true;
    return false;
  }

  const nd::Tensor<float>& get(const std::string& name) const {
    for (const auto& [n, t] : arrays)
      if (n == name) return t;
    throw StageError("checkpoint: missing array '" + name + "' in stage '" + stage + "'");
  }

  void put_scalar(const std::string& name, float v) {
    put(name, nd::Tensor<float>::from({1}, {v}));
  }
  float get_scalar(const std::string& name) const { return get(name).values()[0]; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("checkpoint: cannot open " + path.string() + " for writing");
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_string(out, stage);
    write_string(out, config_text);
    write_u64(out, arrays.size());
    for (const auto& [name, t] : arrays) {
      write_string(out, name);
      write_u32(out, static_cast<uint32_t>(t.shape().size()));
      for (int64_t d : t.shape()) write_u64(out, static_cast<uint64_t>(d));
      out.write(reinterpret_cast<const char*>(t.values().data()),
                static_cast<std::streamsize>(t.values().size() * sizeof(float)));
    }
    if (!out) throw Error("checkpoint: short write to " + path.string());
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StageError("checkpoint: cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
      throw ParseError("checkpoint: bad magic in " + path.string());
    const uint32_t version = read_u32(in, path);
    if (version != kVersion)
      throw ParseError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    ck.stage = read_string(in, path);
    ck.config_text = read_string(in, path);
    const uint64_t count = read_u64(in, path);
    for (uint64_t a = 0; a < count; ++a) {
      const std::string name = read_string(in, path);
      const uint32_t ndim = read_u32(in, path);
      nd::Shape shape;
      int64_t numel = 1;
      for (uint32_t d = 0; d < ndim; ++d) {
        shape.push_back(static_cast<int64_t>(read_u64(in, path)));
        numel *= shape.back();
      }
      std::vector<float> values(static_cast<size_t>(numel));
      in.read(reinterpret_cast<char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
      if (!in) throw ParseError("checkpoint: truncated array '" + name + "' in " + path.string());
      ck.arrays.emplace_back(name, nd::Tensor<float>::from(std::move(shape), std::move(values)));
    }
    return ck;
  }

  static Checkpoint load_expect(const std::filesystem::path& path,
                                std::initializer_list<const char*> allowed_stages) {
    if (!std::filesystem::exists(path)) {
      std::string want;
      for (const char* s : allowed_stages) want += std::string(want.empty() ? "" : "/") + s;
      throw StageError("checkpoint: " + path.string() + " not found (expected a " + want +
                       " checkpoint; run earlier pipeline stages first)");
    }
    Checkpoint ck = load(path);
    for (const char* s : allowed_stages)
      if (ck.stage == s) return ck;
    std::string want;
    for (const char* s : allowed_stages) want += std::string(want.empty() ? "" : "/") + s;
    throw StageError("checkpoint: " + path.string() + " holds stage '" + ck.stage +
                     "', expected " + want);
  }

 private:
  static void write_u32(std::ofstream& out, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  static void write_u64(std::ofstream& out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
  }
  static void write_string(std::ofstream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static uint32_t read_u32(std::ifstream& in, const std::filesystem::path& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ParseError("checkpoint: truncated file " + path.string());
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
  }
  static uint64_t read_u64(std::ifstream& in, const std::filesystem::path& path) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw ParseError("checkpoint: truncated file " + path.string());
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  }
  static std::string read_string(std::ifstream& in, const std::filesystem::path& path) {
    const uint64_t n = read_u64(in, path);
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw ParseError("checkpoint: truncated file " + path.string());
    return s;
  }
};

}  // namespace glta::io
