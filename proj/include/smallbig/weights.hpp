#pragma once

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "smallbig/param.hpp"

namespace smallbig {

/// Weight container errors, one type per failure mode so callers (and exit
/// codes) can tell them apart.
struct BadMagicError : DataError {
  using DataError::DataError;
};
struct TruncatedError : DataError {
  using DataError::DataError;
};
struct UnknownDtypeError : DataError {
  using DataError::DataError;
};
struct ShapeMismatchError : DataError {
  using DataError::DataError;
};

/// Binary tensor container:
///   magic "SBW1" | u32 version=1 | u32 tensor_count |
///   per tensor: u16 name_len | name | u8 ndim | u32 dims[ndim] |
///               u8 dtype (0 = f32) | raw little-endian payload.
/// Shared tensors are stored once under their canonical name; the network
/// config re-establishes share groups on load.
namespace wire {

inline void put_u16(std::string& out, uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char(v >> 8));
}
inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

struct Reader {
  const unsigned char* p;
  size_t len, pos = 0;
  Reader(const void* data, size_t n)
      : p(static_cast<const unsigned char*>(data)), len(n) {}
  void need(size_t n) const {
    if (pos + n > len) throw TruncatedError("weight file truncated");
  }
  uint16_t u16() {
    need(2);
    uint16_t v = uint16_t(p[pos] | (p[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(p[pos + size_t(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  uint8_t u8() {
    need(1);
    return p[pos++];
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p + pos), n);
    pos += n;
    return s;
  }
  void raw(void* dst, size_t n) {
    need(n);
    std::memcpy(dst, p + pos, n);
    pos += n;
  }
};

}  // namespace wire

/// Serialize canonical tensors (each share group once) as f32.
template <class T>
std::string save_weights(const ParamStore<T>& store) {
  std::string out;
  out += "SBW1";
  wire::put_u32(out, 1);
  wire::put_u32(out, uint32_t(store.canonical().size()));
  for (const auto& p : store.canonical()) {
    wire::put_u16(out, uint16_t(p->name.size()));
    out += p->name;
    out.push_back(char(5));  // ndim
    const Shape5& s = p->value.shape();
    for (int64_t d : {s.n, s.c, s.t, s.h, s.w}) wire::put_u32(out, uint32_t(d));
    out.push_back(char(0));  // dtype f32
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      float v = float(p->value[i]);
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      wire::put_u32(out, bits);
    }
  }
  return out;
}

/// Payload bytes (sum of raw tensor data), optionally restricted to
/// trainable tensors — i.e. excluding BN running statistics.
template <class T>
int64_t payload_bytes(const ParamStore<T>& store, bool trainable_only) {
  int64_t n = 0;
  for (const auto& p : store.canonical())
    if (!trainable_only || p->trainable) n += 4 * p->value.numel();
  return n;
}

/// Load serialized tensors into an already-built store (the network config
/// defines names, shapes and share groups). With strict=true every canonical
/// tensor must be present in the file.
template <class T>
void load_weights(const std::string& bytes, ParamStore<T>& store,
                  bool strict = true) {
  wire::Reader r(bytes.data(), bytes.size());
  if (r.str(4) != "SBW1") throw BadMagicError("bad magic: not a weight file");
  const uint32_t version = r.u32();
  if (version != 1)
    throw DataError("unsupported weight file version " + std::to_string(version));
  const uint32_t count = r.u32();
  std::vector<bool> seen(store.canonical().size(), false);
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u16());
    const uint8_t ndim = r.u8();
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) d = r.u32();
    const uint8_t dtype = r.u8();
    if (dtype != 0)
      throw UnknownDtypeError("unknown dtype " + std::to_string(dtype) +
                              " for tensor " + name);
    int64_t numel = 1;
    for (int64_t d : dims) numel *= d;
    if (!store.has(name)) {
      if (strict) throw ShapeMismatchError("unexpected tensor " + name);
      r.need(size_t(4 * numel));
      r.pos += size_t(4 * numel);
      continue;
    }
    auto p = store.get(name);
    const Shape5& s = p->value.shape();
    if (ndim != 5 || dims[0] != s.n || dims[1] != s.c || dims[2] != s.t ||
        dims[3] != s.h || dims[4] != s.w)
      throw ShapeMismatchError("tensor " + name + " has wrong shape in file");
    for (int64_t k = 0; k < numel; ++k) {
      uint32_t bits = r.u32();
      float v;
      std::memcpy(&v, &bits, 4);
      p->value[k] = T(v);
    }
    // mark canonical slot as loaded
    const auto& canon = store.canonical();
    for (size_t c = 0; c < canon.size(); ++c)
      if (canon[c]->name == p->name) seen[c] = true;
  }
  if (strict) {
    const auto& canon = store.canonical();
    for (size_t c = 0; c < canon.size(); ++c)
      if (!seen[c])
        throw ShapeMismatchError("weight file is missing tensor " +
                                 canon[c]->name);
  }
}

inline void write_file_atomic(const std::string& path,
                              const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw DataError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw DataError("cannot rename " + tmp + " to " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace smallbig
