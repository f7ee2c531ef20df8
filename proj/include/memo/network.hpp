#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "memo/edge_map.hpp"
#include "memo/maps.hpp"
#include "memo/params.hpp"
#include "memo/tensor.hpp"

namespace memo {

struct ModelConfig {
  std::vector<int> channels{32, 64, 128, 192};
  int norm_groups = 8;
  int pe_dim = 64;
};

// Low-rank adapter attached to a conv or linear layer; the up projection is
// zero-initialized so injection is a no-op until fine-tuned.
struct LoraPair {
  Tensor down, up;
  int rank = 0;
  float alpha = 1.f;
};

struct ConvLayer {
  std::string name;
  Tensor weight, bias;
  int stride = 1, padding = 1;
  std::shared_ptr<LoraPair> lora;
  Tensor operator()(const Tensor& x) const;
  int in_channels() const { return weight.dim(1); }
  int out_channels() const { return weight.dim(0); }
};

struct NormLayer {
  Tensor gamma, beta;
  int groups = 8;
  Tensor operator()(const Tensor& x) const;
};

struct InjectLinear {
  std::string name;
  Tensor weight, bias;
  std::shared_ptr<LoraPair> lora;
  Tensor operator()(const Tensor& embed) const;
  int in_features() const { return weight.dim(0); }
  int out_features() const { return weight.dim(1); }
};

// f + broadcast of a per-channel offset computed from the ratio embedding.
Tensor inject_ratio(const Tensor& f, const Tensor& embed, const InjectLinear& block_linear);

// Two GroupNorm -> SiLU -> 3x3 conv sub-blocks around an identity skip.
// Blocks in the edge encoder and decoder own a ratio-injection linear that
// shifts the block input per channel.
struct ResBlock {
  NormLayer norm1;
  ConvLayer conv1;
  NormLayer norm2;
  ConvLayer conv2;
  std::optional<InjectLinear> inject;
  Tensor forward(const Tensor& x, const Tensor* embed) const;
};

struct Encoder {
  ConvLayer stem;
  std::vector<ResBlock> blocks;
  std::vector<ConvLayer> downs;  // stride-2 convs between stages
  // Feature pyramid, one tensor per stage, shallowest first.
  std::vector<Tensor> forward(const Tensor& x, const Tensor* embed) const;
};

struct Decoder {
  std::vector<ConvLayer> fuses;  // 1x1 convs merging concatenated features
  std::vector<ResBlock> blocks;
  std::vector<ConvLayer> ups;  // convs applied after nearest-2x upsampling
  NormLayer head_norm;
  ConvLayer head;  // zero-initialized 1-channel output conv
  Tensor forward(const std::vector<Tensor>& image_feats,
                 const std::vector<Tensor>& edge_feats, const Tensor& embed) const;
};

// Encoder-decoder edge predictor conditioned on a partially revealed edge
// map and the mask ratio r: Sigmoid(D(F_I(I), F_E(I, E_r, r), r)).
class MEMONetwork {
 public:
  explicit MEMONetwork(ModelConfig cfg = {}, uint64_t init_seed = 0x3ede5);

  const ModelConfig& config() const { return cfg_; }
  int stages() const { return static_cast<int>(cfg_.channels.size()); }
  int downsample_factor() const { return 1 << (stages() - 1); }

  ParameterRegistry& params() { return params_; }
  const ParameterRegistry& params() const { return params_; }

  Encoder& image_encoder() { return image_encoder_; }
  Encoder& edge_encoder() { return edge_encoder_; }
  Decoder& decoder() { return decoder_; }

  // Raw logits [1,H,W]; records on the active tape. Pass condition=false to
  // replace the image with zeros in both encoders (the unconditioned branch).
  Tensor forward_logits(const Tensor& image, const TriStateEdgeMap& edges,
                        float ratio, bool condition = true) const;

  ProbabilityMap predict(const Tensor& image, const TriStateEdgeMap& edges,
                         float ratio) const;

  // Sigmoid(s * cond_logits + (1-s) * uncond_logits); scale must be > 0.
  ProbabilityMap predict_guided(const Tensor& image, const TriStateEdgeMap& edges,
                                float ratio, float scale) const;

 private:
  void validate_inputs(const Tensor& image, const TriStateEdgeMap& edges,
                       float ratio) const;

  ModelConfig cfg_;
  ParameterRegistry params_;
  Encoder image_encoder_;
  Encoder edge_encoder_;
  Decoder decoder_;
};

}  // namespace memo
