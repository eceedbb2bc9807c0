#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "keep/nn/adam.hpp"
#include "keep/nn/param.hpp"

namespace keep::nn {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct TensorEntry {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;
};

// Binary layout (little-endian):
//   "KEEPCKPT" | u32 format | str kind | str config | str version_tag |
//   i64 cursor_day | u32 knowledge_version | u64 adam_step |
//   u32 n | n x (str name, u64 rows, u64 cols) | tensors in manifest order
// where str = u32 length + bytes and tensors are raw float32.
struct Checkpoint {
  std::uint32_t format_version = kCheckpointFormatVersion;
  std::string kind;
  std::string config;
  std::string version_tag;
  std::int64_t cursor_day = -1;
  std::uint32_t knowledge_version = 0;
  std::uint64_t adam_step = 0;
  std::vector<TensorEntry> tensors;

  const TensorEntry* find(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Parameters (and, when given, Adam moments as "adam.m:<name>" /
// "adam.v:<name>") appended in param order.
void store_params(Checkpoint& ckpt, const std::vector<Param<float>*>& params,
                  const Adam* adam);

// Restores every param from the checkpoint. Params whose names start with a
// prefix in `may_be_fresh` are allowed to be absent (left untouched). Any
// other missing tensor, or a checkpoint tensor nobody claims, raises a
// ManifestError that lists all of them.
void restore_params(const Checkpoint& ckpt,
                    const std::vector<Param<float>*>& params, Adam* adam,
                    const std::vector<std::string>& may_be_fresh = {});

}  // namespace keep::nn
