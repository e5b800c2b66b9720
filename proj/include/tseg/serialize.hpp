#pragma once

// Binary file formats: parameter checkpoints and per-video feature files.
// Both are versioned little-endian formats; exact layouts are documented in
// the README. Values are stored as 32-bit floats on disk regardless of the
// in-memory scalar type.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tseg/nn.hpp"

namespace tseg {

namespace io {

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, uint64_t v) {
  put_u32(os, static_cast<uint32_t>(v));
  put_u32(os, static_cast<uint32_t>(v >> 32));
}

inline void put_f32(std::ostream& os, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(os, v);
}

inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline uint64_t get_u64(std::istream& is) {
  uint64_t lo = get_u32(is);
  uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

inline float get_f32(std::istream& is) {
  uint32_t v = get_u32(is);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

[[noreturn]] inline void fail(const std::string& what, const std::string& path) {
  throw std::runtime_error(what + ": " + path);
}

}  // namespace io

// ---------------------------------------------------------------------------
// Feature files: magic "TSEGFEA1", u32 T, u32 D, then T*D row-major f32.
// ---------------------------------------------------------------------------

inline constexpr char kFeatureMagic[9] = "TSEGFEA1";

template <class Real>
void write_features(const std::string& path, long t, long d, const std::vector<Real>& rowmajor) {
  if (static_cast<long>(rowmajor.size()) != t * d)
    contract_fail("write_features: size mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) io::fail("cannot write feature file", path);
  os.write(kFeatureMagic, 8);
  io::put_u32(os, static_cast<uint32_t>(t));
  io::put_u32(os, static_cast<uint32_t>(d));
  for (Real v : rowmajor) io::put_f32(os, static_cast<float>(v));
  if (!os) io::fail("short write on feature file", path);
}

template <class Real>
void read_features(const std::string& path, long& t, long& d, std::vector<Real>& rowmajor) {
  std::ifstream is(path, std::ios::binary);
  if (!is) io::fail("cannot open feature file", path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kFeatureMagic, 8) != 0)
    io::fail("bad magic in feature file", path);
  t = static_cast<long>(io::get_u32(is));
  d = static_cast<long>(io::get_u32(is));
  rowmajor.resize(static_cast<size_t>(t * d));
  for (auto& v : rowmajor) v = static_cast<Real>(io::get_f32(is));
  if (!is) io::fail("truncated feature file", path);
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "TSEGCKP1", u32 version, u64 seed, u64 config hash,
// u32 entry count, then (name, shape, f32 data) triples. Optimizer moments
// are stored as additional entries so training can resume exactly.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[9] = "TSEGCKP1";
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  std::vector<long> shape;
  std::vector<float> data;
};

struct Checkpoint {
  uint64_t seed = 0;
  uint64_t config_hash = 0;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const {
    for (auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) io::fail("cannot write checkpoint", path);
  os.write(kCheckpointMagic, 8);
  io::put_u32(os, kCheckpointVersion);
  io::put_u64(os, ck.seed);
  io::put_u64(os, ck.config_hash);
  io::put_u32(os, static_cast<uint32_t>(ck.entries.size()));
  for (auto& e : ck.entries) {
    io::put_u32(os, static_cast<uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    io::put_u32(os, static_cast<uint32_t>(e.shape.size()));
    long n = 1;
    for (long d : e.shape) {
      io::put_u32(os, static_cast<uint32_t>(d));
      n *= d;
    }
    if (static_cast<long>(e.data.size()) != n) io::fail("entry size mismatch", e.name);
    for (float f : e.data) io::put_f32(os, f);
  }
  if (!os) io::fail("short write on checkpoint", path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) io::fail("cannot open checkpoint", path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) io::fail("bad checkpoint magic", path);
  const uint32_t version = io::get_u32(is);
  if (version != kCheckpointVersion)
    io::fail("unsupported checkpoint version " + std::to_string(version), path);
  Checkpoint ck;
  ck.seed = io::get_u64(is);
  ck.config_hash = io::get_u64(is);
  const uint32_t count = io::get_u32(is);
  ck.entries.resize(count);
  for (auto& e : ck.entries) {
    const uint32_t nl = io::get_u32(is);
    e.name.resize(nl);
    is.read(e.name.data(), nl);
    const uint32_t nd = io::get_u32(is);
    e.shape.resize(nd);
    long n = 1;
    for (auto& d : e.shape) {
      d = static_cast<long>(io::get_u32(is));
      n *= d;
    }
    e.data.resize(static_cast<size_t>(n));
    for (auto& f : e.data) f = io::get_f32(is);
  }
  if (!is) io::fail("truncated checkpoint", path);
  return ck;
}

// Snapshot of a parameter store (plus optimizer moments when given), with
// every entry name prefixed so several models can share one file.
template <class Real>
void append_model_entries(Checkpoint& ck, const std::string& prefix, const ParamStore<Real>& store,
                          const AdamW<Real>* opt = nullptr) {
  auto to_f32 = [](const Tensor<Real>& t) {
    std::vector<float> out(static_cast<size_t>(t.numel()));
    for (long i = 0; i < t.numel(); ++i) out[static_cast<size_t>(i)] = static_cast<float>(t.data()[i]);
    return out;
  };
  for (auto& p : store.params())
    ck.entries.push_back({prefix + p.name, p.value.shape(), to_f32(p.value)});
  if (opt) {
    auto* mut = const_cast<AdamW<Real>*>(opt);
    const auto& params = store.params();
    for (size_t i = 0; i < params.size(); ++i) {
      auto conv = [](const std::vector<Real>& v) {
        std::vector<float> out(v.size());
        for (size_t j = 0; j < v.size(); ++j) out[j] = static_cast<float>(v[j]);
        return out;
      };
      ck.entries.push_back(
          {prefix + params[i].name + ".opt_m", params[i].value.shape(), conv(mut->first_moments()[i])});
      ck.entries.push_back(
          {prefix + params[i].name + ".opt_v", params[i].value.shape(), conv(mut->second_moments()[i])});
    }
    ck.entries.push_back({prefix + "optimizer.step",
                          {1},
                          {static_cast<float>(opt ? mut->step_count() : 0)}});
  }
}

template <class Real>
void restore_model_entries(const Checkpoint& ck, const std::string& prefix, ParamStore<Real>& store,
                           AdamW<Real>* opt = nullptr) {
  for (auto& p : store.params()) {
    const CheckpointEntry* e = ck.find(prefix + p.name);
    if (!e) io::fail("checkpoint missing parameter", prefix + p.name);
    if (e->shape != p.value.shape())
      io::fail("checkpoint shape mismatch for " + prefix + p.name + ": expected " +
                   shape_str(p.value.shape()) + " got " + shape_str(e->shape),
               prefix + p.name);
    for (long i = 0; i < p.value.numel(); ++i)
      p.value.data()[i] = static_cast<Real>(e->data[static_cast<size_t>(i)]);
  }
  if (opt) {
    const auto& params = store.params();
    for (size_t i = 0; i < params.size(); ++i) {
      const CheckpointEntry* em = ck.find(prefix + params[i].name + ".opt_m");
      const CheckpointEntry* ev = ck.find(prefix + params[i].name + ".opt_v");
      if (!em || !ev) io::fail("checkpoint missing optimizer state for", prefix + params[i].name);
      for (size_t j = 0; j < em->data.size(); ++j) {
        opt->first_moments()[i][j] = static_cast<Real>(em->data[j]);
        opt->second_moments()[i][j] = static_cast<Real>(ev->data[j]);
      }
    }
    const CheckpointEntry* es = ck.find(prefix + "optimizer.step");
    if (!es) io::fail("checkpoint missing optimizer step", prefix);
    opt->set_step_count(static_cast<long>(es->data.at(0)));
  }
}

}  // namespace tseg
