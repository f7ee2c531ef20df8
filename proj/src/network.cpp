#include "memo/network.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "memo/ops.hpp"
#include "memo/rng.hpp"

namespace memo {

Tensor ConvLayer::operator()(const Tensor& x) const {
  Tensor y = conv2d(x, weight, bias, stride, padding);
  if (lora) {
    Tensor a = conv2d(x, lora->down, Tensor(), stride, 0);
    Tensor b = conv2d(a, lora->up, Tensor(), 1, 0);
    y = add(y, scale(b, lora->alpha / static_cast<float>(lora->rank)));
  }
  return y;
}

Tensor NormLayer::operator()(const Tensor& x) const {
  return group_norm(x, groups, gamma, beta);
}

Tensor InjectLinear::operator()(const Tensor& embed) const {
  Tensor y = linear(embed, weight, bias);
  if (lora) {
    Tensor a = linear(embed, lora->down, Tensor());
    Tensor b = linear(a, lora->up, Tensor());
    y = add(y, scale(b, lora->alpha / static_cast<float>(lora->rank)));
  }
  return y;
}

Tensor inject_ratio(const Tensor& f, const Tensor& embed,
                    const InjectLinear& block_linear) {
  return add_channel_bias(f, block_linear(embed));
}

Tensor ResBlock::forward(const Tensor& x, const Tensor* embed) const {
  Tensor h = x;
  if (inject) {
    if (!embed)
      throw std::invalid_argument("ratio embedding required by an injecting block");
    h = inject_ratio(h, *embed, *inject);
  }
  Tensor y = conv1(silu(norm1(h)));
  y = conv2(silu(norm2(y)));
  return add(h, y);
}

std::vector<Tensor> Encoder::forward(const Tensor& x, const Tensor* embed) const {
  std::vector<Tensor> feats;
  feats.reserve(blocks.size());
  Tensor h = stem(x);
  for (size_t s = 0; s < blocks.size(); ++s) {
    if (s > 0) h = downs[s - 1](h);
    h = blocks[s].forward(h, embed);
    feats.push_back(h);
  }
  return feats;
}

Tensor Decoder::forward(const std::vector<Tensor>& image_feats,
                        const std::vector<Tensor>& edge_feats,
                        const Tensor& embed) const {
  const int S = static_cast<int>(blocks.size());
  Tensor h;
  for (int s = S - 1; s >= 0; --s) {
    Tensor merged;
    if (s == S - 1) {
      merged = concat_channels(image_feats[s], edge_feats[s]);
    } else {
      h = upsample_nearest_2x(h);
      h = ups[s](h);
      merged = concat_channels(concat_channels(h, image_feats[s]), edge_feats[s]);
    }
    h = blocks[s].forward(fuses[s](merged), &embed);
  }
  return head(silu(head_norm(h)));
}

namespace {

class LayerBuilder {
 public:
  LayerBuilder(ParameterRegistry& params, int groups, uint64_t seed)
      : params_(params), groups_(groups), rng_(seed) {}

  ConvLayer conv(const std::string& name, int in, int out, int k, int stride,
                 int padding, bool zero_init = false) {
    Tensor w({out, in, k, k});
    if (!zero_init) {
      const float std = std::sqrt(2.f / static_cast<float>(in * k * k));
      for (auto& v : w.values()) v = static_cast<float>(rng_.gaussian()) * std;
    }
    ConvLayer layer;
    layer.name = name;
    layer.weight = params_.add(name + ".weight", w);
    layer.bias = params_.add(name + ".bias", Tensor({out}));
    layer.stride = stride;
    layer.padding = padding;
    return layer;
  }

  NormLayer norm(const std::string& name, int channels) {
    NormLayer layer;
    layer.gamma = params_.add(name + ".gamma", Tensor({channels}, 1.f));
    layer.beta = params_.add(name + ".beta", Tensor({channels}));
    layer.groups = groups_;
    return layer;
  }

  InjectLinear inject(const std::string& name, int pe_dim, int channels) {
    Tensor w({pe_dim, channels});
    for (auto& v : w.values()) v = static_cast<float>(rng_.gaussian()) * 0.02f;
    InjectLinear layer;
    layer.name = name;
    layer.weight = params_.add(name + ".weight", w);
    layer.bias = params_.add(name + ".bias", Tensor({channels}));
    return layer;
  }

  ResBlock res_block(const std::string& name, int channels, bool with_inject,
                     int pe_dim) {
    ResBlock b;
    b.norm1 = norm(name + ".norm1", channels);
    b.conv1 = conv(name + ".conv1", channels, channels, 3, 1, 1);
    b.norm2 = norm(name + ".norm2", channels);
    b.conv2 = conv(name + ".conv2", channels, channels, 3, 1, 1);
    if (with_inject) b.inject = inject(name + ".inject", pe_dim, channels);
    return b;
  }

 private:
  ParameterRegistry& params_;
  int groups_;
  Rng rng_;
};

}  // namespace

MEMONetwork::MEMONetwork(ModelConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
  if (cfg_.channels.empty())
    throw std::invalid_argument("channel plan must name at least one stage");
  for (const int c : cfg_.channels)
    if (c <= 0 || c % cfg_.norm_groups != 0)
      throw std::invalid_argument("every stage width must be a positive multiple of " +
                                  std::to_string(cfg_.norm_groups));
  if (cfg_.pe_dim < 2 || cfg_.pe_dim % 2 != 0)
    throw std::invalid_argument("pe_dim must be even and >= 2");

  LayerBuilder b(params_, cfg_.norm_groups, init_seed);
  const auto& ch = cfg_.channels;
  const int S = stages();

  auto build_encoder = [&](const std::string& prefix, int in_channels,
                           bool with_inject) {
    Encoder enc;
    enc.stem = b.conv(prefix + ".stem", in_channels, ch[0], 3, 1, 1);
    for (int s = 0; s < S; ++s) {
      if (s > 0)
        enc.downs.push_back(
            b.conv(prefix + ".down" + std::to_string(s), ch[s - 1], ch[s], 3, 2, 1));
      enc.blocks.push_back(b.res_block(prefix + ".block" + std::to_string(s + 1),
                                       ch[s], with_inject, cfg_.pe_dim));
    }
    return enc;
  };

  image_encoder_ = build_encoder("image_encoder", 3, false);
  edge_encoder_ = build_encoder("edge_encoder", 3 + 2, true);

  decoder_.fuses.resize(static_cast<size_t>(S));
  decoder_.blocks.resize(static_cast<size_t>(S));
  decoder_.ups.resize(static_cast<size_t>(S - 1));
  for (int s = S - 1; s >= 0; --s) {
    const std::string tag = std::to_string(s + 1);
    const int merged = s == S - 1 ? 2 * ch[s] : 3 * ch[s];
    if (s < S - 1)
      decoder_.ups[s] = b.conv("decoder.up" + tag, ch[s + 1], ch[s], 3, 1, 1);
    decoder_.fuses[s] = b.conv("decoder.fuse" + tag, merged, ch[s], 1, 1, 0);
    decoder_.blocks[s] = b.res_block("decoder.block" + tag, ch[s], true, cfg_.pe_dim);
  }
  decoder_.head_norm = b.norm("decoder.head_norm", ch[0]);
  decoder_.head = b.conv("decoder.head", ch[0], 1, 3, 1, 1, /*zero_init=*/true);
}

void MEMONetwork::validate_inputs(const Tensor& image, const TriStateEdgeMap& edges,
                                  float ratio) const {
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("image must be [3,H,W], got " +
                                shape_string(image.shape()));
  if (image.dim(1) != edges.height() || image.dim(2) != edges.width())
    throw std::invalid_argument("image and edge map extents differ");
  const int f = downsample_factor();
  if (image.dim(1) % f != 0 || image.dim(2) % f != 0)
    throw std::invalid_argument("H and W must be multiples of " + std::to_string(f));
  if (!(ratio > 0.f && ratio <= 1.f))
    throw std::invalid_argument("mask ratio must lie in (0,1]");
}

Tensor MEMONetwork::forward_logits(const Tensor& image, const TriStateEdgeMap& edges,
                                   float ratio, bool condition) const {
  validate_inputs(image, edges, ratio);
  const Tensor img = condition ? image : Tensor(image.shape());
  const Tensor embed = sinusoidal_embed(ratio, cfg_.pe_dim);
  const std::vector<Tensor> fi = image_encoder_.forward(img, nullptr);
  const Tensor edge_in = concat_channels(img, encode_tristate(edges));
  const std::vector<Tensor> fe = edge_encoder_.forward(edge_in, &embed);
  return decoder_.forward(fi, fe, embed);
}

ProbabilityMap MEMONetwork::predict(const Tensor& image, const TriStateEdgeMap& edges,
                                    float ratio) const {
  const Tensor probs = sigmoid(forward_logits(image, edges, ratio));
  ProbabilityMap out(edges.height(), edges.width());
  std::copy(probs.data(), probs.data() + probs.numel(), out.values.begin());
  return out;
}

ProbabilityMap MEMONetwork::predict_guided(const Tensor& image,
                                           const TriStateEdgeMap& edges, float ratio,
                                           float scale) const {
  if (!(scale > 0.f))
    throw std::invalid_argument("granularity scale must be > 0");
  if (scale == 1.f) return predict(image, edges, ratio);
  const Tensor cond = forward_logits(image, edges, ratio, true);
  const Tensor uncond = forward_logits(image, edges, ratio, false);
  ProbabilityMap out(edges.height(), edges.width());
  for (size_t i = 0; i < out.values.size(); ++i) {
    const float z = scale * cond.data()[i] + (1.f - scale) * uncond.data()[i];
    out.values[i] = z >= 0 ? 1.f / (1.f + std::exp(-z))
                           : std::exp(z) / (1.f + std::exp(z));
  }
  return out;
}

}  // namespace memo
