#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace semroom {

// One binary container family for all persisted arrays (tri-planes, norm
// stats, network weights, schedules). Layout, all little-endian:
//   magic "SRBC" | u32 version | 8-byte kind tag | u32 dtype (0=f32, 1=f64)
//   u32 meta count | u64 meta[] | u64 value count | values
// Kind-specific meaning of meta[] is documented at each save_* site.

enum class Dtype : std::uint32_t { F32 = 0, F64 = 1 };

namespace detail {

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}

template <typename T>
inline void put_le(std::string& out, T v) {
  unsigned char b[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  put_bytes(out, b, sizeof(T));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_le(out, bits);
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_le(out, bits);
}

struct Reader {
  const unsigned char* p;
  const unsigned char* end;

  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end - p) < n) throw std::runtime_error("container: truncated file");
  }
  template <typename T>
  T get_le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    p += sizeof(T);
    return static_cast<T>(v);
  }
  float get_f32() {
    std::uint32_t bits = get_le<std::uint32_t>();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double get_f64() {
    std::uint64_t bits = get_le<std::uint64_t>();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};

}  // namespace detail

struct Container {
  std::string kind;          // up to 8 chars
  Dtype dtype = Dtype::F64;
  std::vector<std::uint64_t> meta;
  std::vector<double> values;
};

inline std::string container_serialize(const Container& c) {
  using namespace detail;
  std::string out;
  out.append("SRBC");
  put_le<std::uint32_t>(out, 1u);
  char tag[8] = {0};
  std::memcpy(tag, c.kind.data(), std::min<std::size_t>(8, c.kind.size()));
  put_bytes(out, tag, 8);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.dtype));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.meta.size()));
  for (auto m : c.meta) put_le<std::uint64_t>(out, m);
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(c.values.size()));
  if (c.dtype == Dtype::F32) {
    for (double v : c.values) put_f32(out, static_cast<float>(v));
  } else {
    for (double v : c.values) put_f64(out, v);
  }
  return out;
}

inline Container container_parse(const std::string& bytes, const std::string& expect_kind = "") {
  using namespace detail;
  Reader r{reinterpret_cast<const unsigned char*>(bytes.data()),
           reinterpret_cast<const unsigned char*>(bytes.data()) + bytes.size()};
  r.need(4);
  if (std::memcmp(r.p, "SRBC", 4) != 0) throw std::runtime_error("container: bad magic");
  r.p += 4;
  std::uint32_t version = r.get_le<std::uint32_t>();
  if (version != 1) throw std::runtime_error("container: unsupported version " + std::to_string(version));
  r.need(8);
  char tag[9] = {0};
  std::memcpy(tag, r.p, 8);
  r.p += 8;
  Container c;
  c.kind = tag;
  if (!expect_kind.empty() && c.kind != expect_kind)
    throw std::runtime_error("container: expected kind '" + expect_kind + "', found '" + c.kind + "'");
  c.dtype = static_cast<Dtype>(r.get_le<std::uint32_t>());
  std::uint32_t nmeta = r.get_le<std::uint32_t>();
  c.meta.resize(nmeta);
  for (auto& m : c.meta) m = r.get_le<std::uint64_t>();
  std::uint64_t nval = r.get_le<std::uint64_t>();
  c.values.resize(nval);
  if (c.dtype == Dtype::F32) {
    for (auto& v : c.values) v = static_cast<double>(r.get_f32());
  } else {
    for (auto& v : c.values) v = r.get_f64();
  }
  return c;
}

inline void container_save(const Container& c, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  std::string bytes = container_serialize(c);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline Container container_load(const std::string& path, const std::string& expect_kind = "") {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return container_parse(bytes, expect_kind);
}

// FNV-1a over file bytes; used by the artifact manifest.
inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace semroom
