#include "memo/lora.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "memo/rng.hpp"

namespace memo {
namespace {

void check_rank(const std::string& name, int rank, int in, int out) {
  if (rank > std::min(in, out))
    throw std::invalid_argument("lora rank " + std::to_string(rank) +
                                " exceeds min(in=" + std::to_string(in) +
                                ", out=" + std::to_string(out) + ") of layer " + name);
}

void wrap_conv(ConvLayer& layer, int rank, float alpha, ParameterRegistry& params,
               Rng& rng) {
  const int in = layer.in_channels(), out = layer.out_channels();
  check_rank(layer.name, rank, in, out);
  auto pair = std::make_shared<LoraPair>();
  pair->rank = rank;
  pair->alpha = alpha;
  Tensor down({rank, in, 1, 1});
  const float std = 1.f / std::sqrt(static_cast<float>(in));
  for (auto& v : down.values()) v = static_cast<float>(rng.gaussian()) * std;
  pair->down = params.add(layer.name + ".lora_down", down);
  pair->up = params.add(layer.name + ".lora_up", Tensor({out, rank, 1, 1}));
  layer.lora = pair;
}

void wrap_linear(InjectLinear& layer, int rank, float alpha,
                 ParameterRegistry& params, Rng& rng) {
  const int in = layer.in_features(), out = layer.out_features();
  check_rank(layer.name, rank, in, out);
  auto pair = std::make_shared<LoraPair>();
  pair->rank = rank;
  pair->alpha = alpha;
  Tensor down({in, rank});
  const float std = 1.f / std::sqrt(static_cast<float>(in));
  for (auto& v : down.values()) v = static_cast<float>(rng.gaussian()) * std;
  pair->down = params.add(layer.name + ".lora_down", down);
  pair->up = params.add(layer.name + ".lora_up", Tensor({rank, out}));
  layer.lora = pair;
}

void wrap_blocks(std::vector<ResBlock>& blocks, int rank, float alpha,
                 ParameterRegistry& params, Rng& rng) {
  for (ResBlock& b : blocks) {
    wrap_conv(b.conv1, rank, alpha, params, rng);
    wrap_conv(b.conv2, rank, alpha, params, rng);
    if (b.inject) wrap_linear(*b.inject, rank, alpha, params, rng);
  }
}

}  // namespace

bool is_lora_parameter(const std::string& name) {
  return name.find(".lora_") != std::string::npos || name == "lora.meta";
}

void lora_inject(MEMONetwork& net, int rank, float alpha,
                 const std::vector<LoraTarget>& targets) {
  if (rank < 1) throw std::invalid_argument("lora rank must be >= 1");
  if (has_lora(net)) throw std::invalid_argument("adapters already injected");
  if (targets.empty()) throw std::invalid_argument("no lora targets given");

  ParameterRegistry& params = net.params();
  params.set_all_trainable(false);

  Rng rng(mix_seed(0x6c6f7261, static_cast<uint64_t>(rank)));
  for (const LoraTarget t : targets) {
    if (t == LoraTarget::EdgeEncoder) {
      Encoder& enc = net.edge_encoder();
      wrap_conv(enc.stem, rank, alpha, params, rng);
      for (ConvLayer& c : enc.downs) wrap_conv(c, rank, alpha, params, rng);
      wrap_blocks(enc.blocks, rank, alpha, params, rng);
    } else {
      Decoder& dec = net.decoder();
      for (ConvLayer& c : dec.fuses) wrap_conv(c, rank, alpha, params, rng);
      for (ConvLayer& c : dec.ups) wrap_conv(c, rank, alpha, params, rng);
      wrap_blocks(dec.blocks, rank, alpha, params, rng);
    }
  }

  Tensor meta({2}, {static_cast<float>(rank), alpha});
  params.add("lora.meta", meta, /*trainable=*/false);
}

bool has_lora(const MEMONetwork& net) {
  return net.params().find("lora.meta") != nullptr;
}

int64_t lora_parameter_count(const MEMONetwork& net) {
  int64_t n = 0;
  for (const auto& e : net.params().entries())
    if (e.name.find(".lora_") != std::string::npos) n += e.tensor.numel();
  return n;
}

}  // namespace memo
