#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memo/network.hpp"

namespace memo {

enum class LoraTarget { EdgeEncoder, Decoder };

inline std::vector<LoraTarget> default_lora_targets() {
  return {LoraTarget::EdgeEncoder, LoraTarget::Decoder};
}

// Wraps every conv and ratio-injection linear in the targeted submodules
// with a rank-limited adapter (the 1-channel output head is left alone, a
// rank-r factorization of a 1-output layer being pointless). Base weights
// and the untargeted image encoder are frozen; only adapter weights remain
// trainable. A "lora.meta" pseudo-parameter records (rank, alpha) so
// checkpoints are self-describing.
void lora_inject(MEMONetwork& net, int rank, float alpha,
                 const std::vector<LoraTarget>& targets = default_lora_targets());

bool has_lora(const MEMONetwork& net);

// Total adapter weight count: sum over wrapped layers of rank*(in+out).
int64_t lora_parameter_count(const MEMONetwork& net);

bool is_lora_parameter(const std::string& name);

}  // namespace memo
