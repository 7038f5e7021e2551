#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "g2s/tensor.hpp"

namespace g2s {

// Versioned binary tensor container (little-endian host assumed):
//   magic "G2STNSR1" | u32 version | u8 dtype (4=fp32, 8=fp64) | u64 count
//   then per tensor: u32 name_len | name | u32 rank | i64 dims... | payload
// The name registry is the ParamStore order plus "adam/m/...", "adam/v/..."
// and "meta/..." entries written by the trainer.
inline constexpr char kCkptMagic[8] = {'G', '2', 'S', 'T', 'N', 'S', 'R', '1'};
inline constexpr uint32_t kCkptVersion = 1;

template <typename T>
void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor<T>>>& items) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path);
  out.write(kCkptMagic, 8);
  uint32_t version = kCkptVersion;
  out.write(reinterpret_cast<const char*>(&version), 4);
  uint8_t dtype = sizeof(T);
  out.write(reinterpret_cast<const char*>(&dtype), 1);
  uint64_t count = items.size();
  out.write(reinterpret_cast<const char*>(&count), 8);
  for (const auto& [name, t] : items) {
    uint32_t nlen = uint32_t(name.size());
    out.write(reinterpret_cast<const char*>(&nlen), 4);
    out.write(name.data(), nlen);
    uint32_t rank = uint32_t(t.rank());
    out.write(reinterpret_cast<const char*>(&rank), 4);
    for (size_t d = 0; d < t.rank(); ++d) {
      int64_t dim = t.shape()[d];
      out.write(reinterpret_cast<const char*>(&dim), 8);
    }
    out.write(reinterpret_cast<const char*>(t.data()),
              std::streamsize(size_t(t.numel()) * sizeof(T)));
  }
  if (!out) throw CheckpointError("short write to " + path);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw CheckpointError(path + ": not a checkpoint file");
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  if (version != kCkptVersion)
    throw CheckpointError(path + ": checkpoint version " + std::to_string(version) +
                          " does not match tool version " + std::to_string(kCkptVersion));
  uint8_t dtype = 0;
  in.read(reinterpret_cast<char*>(&dtype), 1);
  if (dtype != 4 && dtype != 8) throw CheckpointError(path + ": unknown dtype");
  uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 8);
  std::vector<std::pair<std::string, Tensor<T>>> items;
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t nlen = 0;
    in.read(reinterpret_cast<char*>(&nlen), 4);
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    uint32_t rank = 0;
    in.read(reinterpret_cast<char*>(&rank), 4);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) in.read(reinterpret_cast<char*>(&shape[d]), 8);
    if (!in) throw CheckpointError(path + ": truncated header for item " + std::to_string(i));
    int64_t numel = numel_of(shape);
    Tensor<T> t(shape);
    if (dtype == sizeof(T)) {
      in.read(reinterpret_cast<char*>(t.data()), std::streamsize(size_t(numel) * sizeof(T)));
    } else if (dtype == 4) {
      std::vector<float> buf(static_cast<size_t>(numel));
      in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * 4));
      for (int64_t k = 0; k < numel; ++k) t[k] = T(buf[size_t(k)]);
    } else {
      std::vector<double> buf(static_cast<size_t>(numel));
      in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * 8));
      for (int64_t k = 0; k < numel; ++k) t[k] = T(buf[size_t(k)]);
    }
    if (!in) throw CheckpointError(path + ": truncated payload for " + name);
    items.emplace_back(std::move(name), std::move(t));
  }
  return items;
}

}  // namespace g2s
