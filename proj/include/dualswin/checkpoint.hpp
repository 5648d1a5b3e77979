#pragma once

// Binary checkpoint container.
//
//   "DSWCKPT1"                  8-byte magic
//   u32 version
//   u64 n, n bytes              resolved config text
//   u64 n, n bytes              metadata, "key = value" lines
//   u32 array count
//   per array: u32 n, name bytes, u32 rank, rank × u64 dims, f32 data
//
// Every integer and float is little-endian. Arrays are stored as 32-bit
// reals regardless of the in-memory type.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dualswin/autograd.hpp"
#include "dualswin/errors.hpp"
#include "dualswin/tensor.hpp"

namespace dualswin {

inline constexpr char kCheckpointMagic[8] = {'D', 'S', 'W', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::string config_text;
  std::map<std::string, std::string> meta;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
  std::string meta_or(const std::string& key, const std::string& fallback) const {
    auto it = meta.find(key);
    return it == meta.end() ? fallback : it->second;
  }
};

namespace ckpt_detail {

template <class U>
void put(std::ostream& os, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <class U>
U get(std::istream& is, const std::string& path) {
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw CheckpointError(path + ": truncated checkpoint");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U v;
  std::memcpy(&v, bytes, sizeof(U));
  return v;
}

inline void put_string(std::ostream& os, const std::string& s, bool wide) {
  if (wide) put<std::uint64_t>(os, s.size());
  else put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, const std::string& path, bool wide) {
  const std::uint64_t n = wide ? get<std::uint64_t>(is, path) : get<std::uint32_t>(is, path);
  if (n > (std::uint64_t{1} << 32)) throw CheckpointError(path + ": corrupt string length");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw CheckpointError(path + ": truncated checkpoint");
  return s;
}

}  // namespace ckpt_detail

/// Writes to `path` via a temporary file and rename, so a crash never leaves
/// a half-written checkpoint in place.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  using namespace ckpt_detail;
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    put<std::uint32_t>(os, kCheckpointVersion);
    put_string(os, ck.config_text, true);
    std::string meta;
    for (const auto& [k, v] : ck.meta) meta += k + " = " + v + "\n";
    put_string(os, meta, true);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.arrays.size()));
    for (const auto& a : ck.arrays) {
      if (shape_size(a.shape) != a.data.size()) throw CheckpointError("array " + a.name + ": shape/data mismatch");
      put_string(os, a.name, false);
      put<std::uint32_t>(os, static_cast<std::uint32_t>(a.shape.size()));
      for (auto d : a.shape) put<std::uint64_t>(os, d);
      for (float v : a.data) put<float>(os, v);
    }
    if (!os.flush()) throw CheckpointError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  using namespace ckpt_detail;
  const std::string p = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + p);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw CheckpointError(p + ": not a checkpoint file (bad magic)");
  }
  const auto version = get<std::uint32_t>(is, p);
  if (version != kCheckpointVersion) {
    throw CheckpointError(p + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.config_text = get_string(is, p, true);
  std::istringstream meta(get_string(is, p, true));
  for (std::string line; std::getline(meta, line);) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) ck.meta[line.substr(0, eq)] = line.substr(eq + 3);
  }
  const auto count = get<std::uint32_t>(is, p);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = get_string(is, p, false);
    const auto rank = get<std::uint32_t>(is, p);
    if (rank > 8) throw CheckpointError(p + ": array " + a.name + " has implausible rank");
    for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(get<std::uint64_t>(is, p));
    a.data.resize(shape_size(a.shape));
    for (auto& v : a.data) v = get<float>(is, p);
    ck.arrays.push_back(std::move(a));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw CheckpointError(p + ": trailing bytes after last array");
  return ck;
}

/// Appends one array per tensor, named `prefix + name`.
template <class Real>
void append_arrays(Checkpoint& ck, const std::string& prefix, const std::string& name, const Tensor<Real>& t) {
  NamedArray a{prefix + name, t.shape(), std::vector<float>(t.size())};
  for (std::size_t i = 0; i < t.size(); ++i) a.data[i] = static_cast<float>(t[i]);
  ck.arrays.push_back(std::move(a));
}

template <class Real>
void store_parameters(Checkpoint& ck, const ParameterStore<Real>& store, const std::string& prefix = "param/") {
  for (const auto& p : store) append_arrays(ck, prefix, p->name, p->value);
}

/// Copies `prefix + name` arrays into `target` tensors. Fails on any missing,
/// extra or reshaped array.
template <class Real>
void restore_arrays(const Checkpoint& ck, const std::string& prefix,
                    const std::vector<std::pair<std::string, Tensor<Real>*>>& targets) {
  std::size_t with_prefix = 0;
  for (const auto& a : ck.arrays) with_prefix += a.name.compare(0, prefix.size(), prefix) == 0;
  for (const auto& [name, t] : targets) {
    const NamedArray* a = ck.find(prefix + name);
    if (!a) throw CheckpointError("checkpoint is missing array " + prefix + name);
    if (a->shape != t->shape()) {
      throw CheckpointError("checkpoint array " + prefix + name + " has shape " + to_string(a->shape) +
                            ", model expects " + to_string(t->shape()));
    }
    for (std::size_t i = 0; i < a->data.size(); ++i) (*t)[i] = static_cast<Real>(a->data[i]);
  }
  if (with_prefix != targets.size()) {
    for (const auto& a : ck.arrays) {
      if (a.name.compare(0, prefix.size(), prefix) != 0) continue;
      bool known = false;
      for (const auto& [name, t] : targets) known |= prefix + name == a.name;
      if (!known) throw CheckpointError("checkpoint has unexpected array " + a.name);
    }
  }
}

template <class Real>
void load_parameters(const Checkpoint& ck, ParameterStore<Real>& store, const std::string& prefix = "param/") {
  std::vector<std::pair<std::string, Tensor<Real>*>> targets;
  for (auto& p : store) targets.emplace_back(p->name, &p->value);
  restore_arrays(ck, prefix, targets);
}

}  // namespace dualswin
