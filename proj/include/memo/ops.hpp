#pragma once

#include <cstdint>
#include <vector>

#include "memo/tape.hpp"
#include "memo/tensor.hpp"

namespace memo {

// Differentiable tensor ops. Every op records a backward closure on the
// thread's active tape when some input requires a gradient. Inputs are
// never mutated. Spatial tensors are [C,H,W] or [N,C,H,W]; the output rank
// matches the input rank.

// weight [O,C,KH,KW], optional bias [O] (default-constructed = none).
// Zero padding; output extent (H + 2*padding - KH) / stride + 1.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight,
                  const TensorT<T>& bias, int stride = 1, int padding = 1);

// Normalizes over (channels/groups, H, W) per group; gamma/beta are [C].
template <typename T>
TensorT<T> group_norm(const TensorT<T>& input, int groups,
                      const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps = T(1e-5));

template <typename T>
TensorT<T> silu(const TensorT<T>& x);

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x);

// x [D] or [N,D]; weight [D,E]; bias [E]. y = x.W + b.
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& weight,
                  const TensorT<T>& bias);

// Sin/cos pairs at dim/2 geometrically spaced frequencies from 1 down to
// 1e-4: out[2k] = sin(w_k v), out[2k+1] = cos(w_k v). Not differentiable.
template <typename T>
TensorT<T> sinusoidal_embed(T value, int dim);

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);

template <typename T>
TensorT<T> scale(const TensorT<T>& x, T factor);

// x [*,C,H,W] plus per-channel bias [C] broadcast over the spatial extent.
template <typename T>
TensorT<T> add_channel_bias(const TensorT<T>& x, const TensorT<T>& bias);

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b);

template <typename T>
TensorT<T> upsample_nearest_2x(const TensorT<T>& x);

// Scalar sum of all elements.
template <typename T>
TensorT<T> sum(const TensorT<T>& x);

// Numerically stable binary cross-entropy on logits, restricted to pixels
// with mask != 0 and multiplied by inv_norm. targets/mask are per-element
// 0/1 flags aligned with the logits' flat layout.
template <typename T>
TensorT<T> masked_bce_with_logits(const TensorT<T>& logits,
                                  std::vector<uint8_t> targets,
                                  std::vector<uint8_t> mask, T inv_norm);

template <typename T>
void backward(const TensorT<T>& loss, GradTapeT<T>& tape);

}  // namespace memo
