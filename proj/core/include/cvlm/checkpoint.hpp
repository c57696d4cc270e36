// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvlm/nn.hpp"
#include "cvlm/optim.hpp"

namespace cvlm {

// Metadata block carried in the file header. config_json holds the resolved
// run configuration as a serialized JSON document ("null" when absent).
struct CheckpointMeta {
  std::string stage;
  std::int64_t step = 0;
  bool lora_merged = false;
  std::int64_t adam_t = 0;  // optimizer step count; 0 = no optimizer state
  std::string config_json = "null";
};

// Container layout (little-endian): magic "CVLM", u32 version, u64 metadata
// length + JSON bytes, u32 tensor count, then per tensor: u32 name length +
// name, u8 dtype (0=f64, 1=f32), u8 rank, u32 dims, u64 payload bytes,
// payload, u64 FNV-1a of the payload. Parameters appear in registration
// order, then optimizer slots as opt.m.<name> / opt.v.<name> sorted by name.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const CheckpointMeta& meta, const AdamW* opt = nullptr);

// Strict load: every store parameter must be present in the file and every
// non-optimizer tensor in the file must name a store parameter. Optimizer
// slots load only when opt is given, and are otherwise skipped.
CheckpointMeta load_checkpoint(const std::string& path, ParamStore& store,
                               AdamW* opt = nullptr);

// Partial load for transfer between differently-shaped bundles: only
// tensors whose name matches a store parameter in one of `groups` are
// copied; everything else in the file is skipped. Matched shapes must agree.
CheckpointMeta load_checkpoint_groups(const std::string& path,
                                      ParamStore& store,
                                      const std::vector<Group>& groups);

struct TensorInfo {
  std::string name;
  int dtype = 0;  // 0=f64, 1=f32
  std::vector<int> shape;
};

struct CheckpointInfo {
  std::uint32_t version = 0;
  CheckpointMeta meta;
  std::vector<TensorInfo> tensors;
};

// Header + tensor directory without touching any model.
CheckpointInfo inspect_checkpoint(const std::string& path);

}  // namespace cvlm
