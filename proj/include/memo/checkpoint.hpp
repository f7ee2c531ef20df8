#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memo/network.hpp"
#include "memo/params.hpp"
#include "memo/tensor.hpp"

namespace memo {

inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Tensor tensor;
};

struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  std::vector<CheckpointEntry> entries;

  const Tensor* find(const std::string& name) const;
};

// Binary layout: "MEMO" magic, u32 version, u64 manifest byte length, one
// manifest line per tensor ("name dtype dims..."), then the raw little-endian
// float payloads in manifest order, then a u64 FNV-1a checksum of the payload
// bytes. Saving the same registry twice produces byte-identical files.
void save_checkpoint(const ParameterRegistry& params, const std::string& path);

Checkpoint load_checkpoint(const std::string& path);

// Copies every checkpoint tensor into the registry entry of the same name.
// Unknown names, missing names, and shape mismatches are errors.
void load_parameters(ParameterRegistry& params, const Checkpoint& ckpt);

// Loads a full network checkpoint. If the checkpoint carries low-rank
// adapter weights (a "lora.meta" entry), the adapters are injected into the
// network first so the parameter sets line up.
void load_network(MEMONetwork& net, const std::string& path);

}  // namespace memo
