#include "memo/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "memo/detail/gemm.hpp"

namespace memo {
namespace {

template <typename T>
void check_finite(const TensorT<T>& t, const char* op) {
#ifdef MEMO_CHECK_FINITE
  for (const T v : t.values())
    if (!std::isfinite(v))
      throw std::runtime_error(std::string(op) + " produced a non-finite value");
#else
  (void)t;
  (void)op;
#endif
}

template <typename T>
bool should_record(std::initializer_list<const TensorT<T>*> inputs) {
  if (!active_tape<T>()) return false;
  for (const auto* t : inputs)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

template <typename T>
std::vector<T>& scratch(int slot) {
  thread_local std::vector<T> buffers[4];
  return buffers[slot];
}

struct SpatialDims {
  int n, c, h, w;
  bool batched;
};

template <typename T>
SpatialDims spatial_dims(const TensorT<T>& x, const char* op) {
  if (x.ndim() == 3) return {1, x.dim(0), x.dim(1), x.dim(2), false};
  if (x.ndim() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), true};
  throw std::invalid_argument(std::string(op) + " expects a [C,H,W] or [N,C,H,W] tensor, got " +
                              shape_string(x.shape()));
}

template <typename T>
void im2col(const T* x, int C, int H, int W, int KH, int KW, int stride,
            int pad, int OH, int OW, T* col) {
  const size_t plane = static_cast<size_t>(OH) * OW;
  if (stride == 1) {
    for (int c = 0; c < C; ++c) {
      for (int ky = 0; ky < KH; ++ky) {
        for (int kx = 0; kx < KW; ++kx) {
          T* dst = col + (static_cast<size_t>(c * KH + ky) * KW + kx) * plane;
          const int oy0 = std::min(OH, std::max(0, pad - ky));
          const int oy1 = std::max(oy0, std::min(OH, H + pad - ky));
          const int ox0 = std::min(OW, std::max(0, pad - kx));
          const int ox1 = std::max(ox0, std::min(OW, W + pad - kx));
          std::fill(dst, dst + static_cast<size_t>(oy0) * OW, T(0));
          for (int oy = oy0; oy < oy1; ++oy) {
            T* drow = dst + static_cast<size_t>(oy) * OW;
            const T* srow = x + (static_cast<size_t>(c) * H + (oy + ky - pad)) * W;
            std::fill(drow, drow + ox0, T(0));
            std::copy(srow + (ox0 + kx - pad), srow + (ox1 + kx - pad), drow + ox0);
            std::fill(drow + ox1, drow + OW, T(0));
          }
          std::fill(dst + static_cast<size_t>(oy1) * OW, dst + plane, T(0));
        }
      }
    }
    return;
  }
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < KH; ++ky) {
      for (int kx = 0; kx < KW; ++kx) {
        T* dst = col + (static_cast<size_t>(c * KH + ky) * KW + kx) * plane;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride + ky - pad;
          T* drow = dst + static_cast<size_t>(oy) * OW;
          if (iy < 0 || iy >= H) {
            std::fill(drow, drow + OW, T(0));
            continue;
          }
          const T* srow = x + (static_cast<size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride + kx - pad;
            drow[ox] = (ix >= 0 && ix < W) ? srow[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int KH, int KW, int stride,
                int pad, int OH, int OW, T* x) {
  const size_t plane = static_cast<size_t>(OH) * OW;
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < KH; ++ky) {
      for (int kx = 0; kx < KW; ++kx) {
        const T* src = col + (static_cast<size_t>(c * KH + ky) * KW + kx) * plane;
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          T* xrow = x + (static_cast<size_t>(c) * H + iy) * W;
          const T* srow = src + static_cast<size_t>(oy) * OW;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < W) xrow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weight,
                  const TensorT<T>& bias, int stride, int padding) {
  const SpatialDims in = spatial_dims(input, "conv2d");
  if (weight.ndim() != 4)
    throw std::invalid_argument("conv2d kernel must be [O,C,KH,KW], got " +
                                shape_string(weight.shape()));
  const int O = weight.dim(0), KC = weight.dim(1);
  const int KH = weight.dim(2), KW = weight.dim(3);
  if (KC != in.c)
    throw std::invalid_argument("conv2d channel mismatch: kernel expects " +
                                std::to_string(KC) + " input channels, got " +
                                std::to_string(in.c));
  if (stride < 1 || padding < 0)
    throw std::invalid_argument("conv2d requires stride >= 1 and padding >= 0");
  const int OH = (in.h + 2 * padding - KH) / stride + 1;
  const int OW = (in.w + 2 * padding - KW) / stride + 1;
  if (in.h + 2 * padding < KH || in.w + 2 * padding < KW)
    throw std::invalid_argument("conv2d input smaller than kernel");
  if (bias.defined() && bias.numel() != O)
    throw std::invalid_argument("conv2d bias must have one value per output channel");

  const int CKK = in.c * KH * KW;
  const size_t in_plane = static_cast<size_t>(in.c) * in.h * in.w;
  const size_t out_plane = static_cast<size_t>(O) * OH * OW;

  TensorT<T> out(in.batched ? std::vector<int>{in.n, O, OH, OW}
                            : std::vector<int>{O, OH, OW});
  std::vector<T>& col = scratch<T>(0);
  col.resize(static_cast<size_t>(CKK) * OH * OW);
  for (int n = 0; n < in.n; ++n) {
    im2col(input.data() + n * in_plane, in.c, in.h, in.w, KH, KW, stride,
           padding, OH, OW, col.data());
    T* dst = out.data() + n * out_plane;
    detail::gemm(O, OH * OW, CKK, weight.data(), col.data(), dst, false);
    if (bias.defined()) {
      for (int o = 0; o < O; ++o) {
        const T b = bias.data()[o];
        T* row = dst + static_cast<size_t>(o) * OH * OW;
        for (int i = 0; i < OH * OW; ++i) row[i] += b;
      }
    }
  }
  check_finite(out, "conv2d");

  if (should_record<T>({&input, &weight, &bias})) {
    out.set_requires_grad(true);
    const SpatialDims geom = in;
    active_tape<T>()->record([=](GradTapeT<T>& tape) {
      const std::vector<T>* go = tape.find_grad(out);
      if (!go) return;
      const bool need_x = input.requires_grad();
      const bool need_w = weight.requires_grad();
      const bool need_b = bias.defined() && bias.requires_grad();
      if (need_b) {
        std::vector<T>& gb = tape.grad(bias);
        for (int n = 0; n < geom.n; ++n)
          for (int o = 0; o < O; ++o) {
            const T* row = go->data() + n * out_plane + static_cast<size_t>(o) * OH * OW;
            T s = 0;
            for (int i = 0; i < OH * OW; ++i) s += row[i];
            gb[static_cast<size_t>(o)] += s;
          }
      }
      if (!need_x && !need_w) return;
      std::vector<T>& col2 = scratch<T>(0);
      std::vector<T>& colT = scratch<T>(1);
      std::vector<T>& gcol = scratch<T>(2);
      std::vector<T>& wT = scratch<T>(3);
      if (need_w) colT.resize(static_cast<size_t>(CKK) * OH * OW);
      if (need_x) {
        wT.resize(static_cast<size_t>(CKK) * O);
        detail::transpose(O, CKK, weight.data(), wT.data());
        gcol.resize(static_cast<size_t>(CKK) * OH * OW);
      }
      std::vector<T>* gw = need_w ? &tape.grad(weight) : nullptr;
      std::vector<T>* gx = need_x ? &tape.grad(input) : nullptr;
      for (int n = 0; n < geom.n; ++n) {
        const T* gn = go->data() + n * out_plane;
        if (need_w) {
          col2.resize(static_cast<size_t>(CKK) * OH * OW);
          im2col(input.data() + n * in_plane, geom.c, geom.h, geom.w, KH, KW,
                 stride, padding, OH, OW, col2.data());
          detail::transpose(CKK, OH * OW, col2.data(), colT.data());
          detail::gemm(O, CKK, OH * OW, gn, colT.data(), gw->data(), true);
        }
        if (need_x) {
          detail::gemm(CKK, OH * OW, O, wT.data(), gn, gcol.data(), false);
          col2im_add(gcol.data(), geom.c, geom.h, geom.w, KH, KW, stride,
                     padding, OH, OW, gx->data() + n * in_plane);
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> group_norm(const TensorT<T>& input, int groups,
                      const TensorT<T>& gamma, const TensorT<T>& beta, T eps) {
  const SpatialDims in = spatial_dims(input, "group_norm");
  if (groups < 1 || in.c % groups != 0)
    throw std::invalid_argument("group_norm: " + std::to_string(in.c) +
                                " channels are not divisible into " +
                                std::to_string(groups) + " groups");
  if (gamma.numel() != in.c || beta.numel() != in.c)
    throw std::invalid_argument("group_norm gamma/beta must have one value per channel");

  const int cg = in.c / groups;
  const size_t hw = static_cast<size_t>(in.h) * in.w;
  const size_t gsize = cg * hw;
  TensorT<T> out(input.shape());
  std::vector<T> mean(static_cast<size_t>(in.n) * groups);
  std::vector<T> inv_std(static_cast<size_t>(in.n) * groups);
  for (int n = 0; n < in.n; ++n) {
    for (int g = 0; g < groups; ++g) {
      const T* src = input.data() + (static_cast<size_t>(n) * in.c + g * cg) * hw;
      T mu = 0;
      for (size_t i = 0; i < gsize; ++i) mu += src[i];
      mu /= static_cast<T>(gsize);
      T var = 0;
      for (size_t i = 0; i < gsize; ++i) {
        const T d = src[i] - mu;
        var += d * d;
      }
      var /= static_cast<T>(gsize);
      const T inv = T(1) / std::sqrt(var + eps);
      mean[static_cast<size_t>(n) * groups + g] = mu;
      inv_std[static_cast<size_t>(n) * groups + g] = inv;
      T* dst = out.data() + (static_cast<size_t>(n) * in.c + g * cg) * hw;
      for (int c = 0; c < cg; ++c) {
        const T ga = gamma.data()[g * cg + c];
        const T be = beta.data()[g * cg + c];
        for (size_t i = 0; i < hw; ++i)
          dst[c * hw + i] = (src[c * hw + i] - mu) * inv * ga + be;
      }
    }
  }
  check_finite(out, "group_norm");

  if (should_record<T>({&input, &gamma, &beta})) {
    out.set_requires_grad(true);
    const SpatialDims geom = in;
    auto mu_keep = std::make_shared<std::vector<T>>(std::move(mean));
    auto inv_keep = std::make_shared<std::vector<T>>(std::move(inv_std));
    active_tape<T>()->record([=](GradTapeT<T>& tape) {
      const std::vector<T>* go = tape.find_grad(out);
      if (!go) return;
      const bool need_x = input.requires_grad();
      const bool need_g = gamma.requires_grad();
      const bool need_b = beta.requires_grad();
      std::vector<T>* gx = need_x ? &tape.grad(input) : nullptr;
      std::vector<T>* gg = need_g ? &tape.grad(gamma) : nullptr;
      std::vector<T>* gb = need_b ? &tape.grad(beta) : nullptr;
      for (int n = 0; n < geom.n; ++n) {
        for (int g = 0; g < groups; ++g) {
          const size_t base = (static_cast<size_t>(n) * geom.c + g * cg) * hw;
          const T* x = input.data() + base;
          const T* gout = go->data() + base;
          const T mu = (*mu_keep)[static_cast<size_t>(n) * groups + g];
          const T inv = (*inv_keep)[static_cast<size_t>(n) * groups + g];
          if (need_g || need_b) {
            for (int c = 0; c < cg; ++c) {
              T sg = 0, sb = 0;
              for (size_t i = 0; i < hw; ++i) {
                const T xhat = (x[c * hw + i] - mu) * inv;
                sg += gout[c * hw + i] * xhat;
                sb += gout[c * hw + i];
              }
              if (need_g) (*gg)[static_cast<size_t>(g * cg + c)] += sg;
              if (need_b) (*gb)[static_cast<size_t>(g * cg + c)] += sb;
            }
          }
          if (need_x) {
            T m1 = 0, m2 = 0;
            for (int c = 0; c < cg; ++c) {
              const T ga = gamma.data()[g * cg + c];
              for (size_t i = 0; i < hw; ++i) {
                const T h = gout[c * hw + i] * ga;
                m1 += h;
                m2 += h * (x[c * hw + i] - mu) * inv;
              }
            }
            m1 /= static_cast<T>(gsize);
            m2 /= static_cast<T>(gsize);
            T* dst = gx->data() + base;
            for (int c = 0; c < cg; ++c) {
              const T ga = gamma.data()[g * cg + c];
              for (size_t i = 0; i < hw; ++i) {
                const T xhat = (x[c * hw + i] - mu) * inv;
                dst[c * hw + i] += inv * (gout[c * hw + i] * ga - m1 - xhat * m2);
              }
            }
          }
        }
      }
    });
  }
  return out;
}

namespace {

template <typename T>
T stable_sigmoid(T z) {
  if (z >= 0) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
TensorT<T> silu(const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  const int64_t n = x.numel();
  const bool rec = should_record<T>({&x});
  std::vector<T> sig;
  if (rec) sig.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const T s = stable_sigmoid(x.data()[i]);
    out.data()[i] = x.data()[i] * s;
    if (rec) sig[static_cast<size_t>(i)] = s;
  }
  check_finite(out, "silu");
  if (rec) {
    out.set_requires_grad(true);
    auto sig_keep = std::make_shared<std::vector<T>>(std::move(sig));
    active_tape<T>()->record([=](GradTapeT<T>& tape) {
      const std::vector<T>* go = tape.find_grad(out);
      if (!go || !x.requires_grad()) return;
      std::vector<T>& gx = tape.grad(x);
      for (int64_t i = 0; i < n; ++i) {
        const T s = (*sig_keep)[static_cast<size_t>(i)];
        gx[static_cast<size_t>(i)] +=
            (*go)[static_cast<size_t>(i)] * s * (T(1) + x.data()[i] * (T(1) - s));
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  TensorT<T> out(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = stable_sigmoid(x.data()[i]);
  check_finite(out, "sigmoid");
  if (should_record<T>({&x})) {
    out.set_requires_grad(true);
    active_tape<T>()->record([=](GradTapeT<T>& tape) {
      const std::vector<T>* go = tape.find_grad(out);
      if (!go || !x.requires_grad()) return;
      std::vector<T>& gx = tape.grad(x);
      for (int64_t i = 0; i < n; ++i) {
        const T y = out.data()[i];
        gx[static_cast<size_t>(i)] += (*go)[static_cast<size_t>(i)] * y * (T(1) - y);
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& weight,
                  const TensorT<T>& bias) {
  if (weight.ndim() != 2)
    throw std::invalid_argument("linear weight must be [D,E], got " +
                                shape_string(weight.shape()));
  const int D = weight.dim(0), E = weight.dim(1);
  int rows = 1;
  if (x.ndim() == 1) {
    if (x.dim(0) != D)
      throw std::invalid_argument("linear dimension mismatch: weight expects " +
                                  std::to_string(D) + " features, got " +
                                  std::to_string(x.dim(0)));
  } else if (x.ndim() == 2) {
    rows = x.dim(0);
    if (x.dim(1) != D)
      throw std::invalid_argument("linear dimension mismatch: weight expects " +
                                  std::to_string(D) + " features, got " +
                                  std::to_string(x.dim(1)));
  } else {
    throw std::invalid_argument("linear expects a [D] or [N,D] input");
  }
  if (bias.defined() && bias.numel() != E)
    throw std::invalid_argument("linear bias must have one value per output feature");

  TensorT<T> out(x.ndim() == 1 ? std::vector<int>{E} : std::vector<int>{rows, E});
  for (int r = 0; r < rows; ++r) {
    T* dst = out.data() + static_cast<size_t>(r) * E;
    if (bias.defined())
      std::copy(bias.data(), bias.data() + E, dst);
    else
      std::fill(dst, dst + E, T(0));
    const T* src = x.data() + static_cast<size_t>(r) * D;
    for (int d = 0; d < D; ++d) {
      const T xv = src[d];
      const T* wrow = weight.data() + static_cast<size_t>(d) * E;
      for (int e = 0; e < E; ++e) dst[e] += xv * wrow[e];
    }
  }
  check_finite(out, "linear");

  if (should_record<T>({&x, &weight, &bias})) {
    out.set_requires_grad(true);
    active_tape<T>()->record([=](GradTapeT<T>& tape) {
      const std::vector<T>* go = tape.find_grad(out);
      if (!go) return;
      if (bias.defined() && bias.requires_grad()) {
        std::vector<T>& gb = tape.grad(bias);
        for (int r = 0; r < rows; ++r)
          for (int e = 0; e < E; ++e)
            gb[static_cast<size_t>(e)] += (*go)[static_cast<size_t>(r) * E + e];
      }
      if (weight.requires_grad()) {
        std::vector<T>& gw = tape.grad(weight);
        for (int r = 0; r < rows; ++r) {
          const T* src = x.data() + static_cast<size_t>(r) * D;
          const T* grow = go->data() + static_cast<size_t>(r) * E;
          for (int d = 0; d < D; ++d)
            for (int e = 0; e < E; ++e)
              gw[static_cast<size_t>(d) * E + e] += src[d] * grow[e];
        }
      }
      if (x.requires_grad()) {
        std::vector<T>& gx = tape.grad(x);
        for (int r = 0; r < rows; ++r) {
          const T* grow = go->data() + static_cast<size_t>(r) * E;
          for (int d = 0; d < D; ++d) {
            const T* wrow = weight.data() + static_cast<size_t>(d) * E;
            T s = 0;
            for (int e = 0; e < E; ++e) s += wrow[e] * grow[e];
            gx[static_cast<size_t>(r) * D + d] += s;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> sinusoidal_embed(T value, int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw std::invalid_argument("sinusoidal_embed dimension must be even and >= 2");
  const int half = dim / 2;
  TensorT<T> out({dim});
  for (int k = 0; k < half; ++k) {
    const double w =
        half == 1 ? 1.0 : std::pow(10000.0, -static_cast<double>(k) / (half - 1));
    const double a = w * static_cast<double>(value);
    out.data()[2 * k] = static_cast<T>(std::sin(a));
    out.data()[2 * k + 1] = static_cast<T>(std::cos(a));
  }
  return out;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  if (!same_shape(a, b))
    throw std::invalid_argument("add shape mismatch: " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
  TensorT<T> out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  check_finite(out, "add");
  if (should_record<T>({&a, &b})) {
    out.set_requires_grad(true);
    active_tape<T>()->record([=](GradTapeT<T>& tape) {
      const std::vector<T>* go = tape.find_grad(out);
      if (!go) return;
      for (const TensorT<T>* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        std::vector<T>& g = tape.grad(*t);
        for (int64_t i = 0; i < n; ++i) g[static_cast<size_t>(i)] += (*go)[static_cast<size_t>(i)];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& x, T factor) {
  TensorT<T> out(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * factor;
  check_finite(out, "scale");
  if (should_record<T>({&x})) {
    out.set_requires_grad(true);
    active_tape<T>()->record([=](GradTapeT<T>& tape) {
      const std::vector<T>* go = tape.find_grad(out);
      if (!go || !x.requires_grad()) return;
      std::vector<T>& gx = tape.grad(x);
      for (int64_t i = 0; i < n; ++i)
        gx[static_cast<size_t>(i)] += (*go)[static_cast<size_t>(i)] * factor;
    });
  }
  return out;
}

template <typename T>
TensorT<T> add_channel_bias(const TensorT<T>& x, const TensorT<T>& bias) {
  const SpatialDims in = spatial_dims(x, "add_channel_bias");
  if (bias.ndim() != 1 || bias.dim(0) != in.c)
    throw std::invalid_argument("add_channel_bias expects a [C] bias matching " +
                                std::to_string(in.c) + " channels, got " +
                                shape_string(bias.shape()));
  const size_t hw = static_cast<size_t>(in.h) * in.w;
  TensorT<T> out(x.shape());
  for (int n = 0; n < in.n; ++n)
    for (int c = 0; c < in.c; ++c) {
      const size_t base = (static_cast<size_t>(n) * in.c + c) * hw;
      const T b = bias.data()[c];
      for (size_t i = 0; i < hw; ++i) out.data()[base + i] = x.data()[base + i] + b;
    }
  check_finite(out, "add_channel_bias");
  if (should_record<T>({&x, &bias})) {
    out.set_requires_grad(true);
    const SpatialDims geom = in;
    active_tape<T>()->record([=](GradTapeT<T>& tape) {
      const std::vector<T>* go = tape.find_grad(out);
      if (!go) return;
      if (x.requires_grad()) {
        std::vector<T>& gx = tape.grad(x);
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += (*go)[i];
      }
      if (bias.requires_grad()) {
        std::vector<T>& gb = tape.grad(bias);
        for (int n = 0; n < geom.n; ++n)
          for (int c = 0; c < geom.c; ++c) {
            const size_t base = (static_cast<size_t>(n) * geom.c + c) * hw;
            T s = 0;
            for (size_t i = 0; i < hw; ++i) s += (*go)[base + i];
            gb[static_cast<size_t>(c)] += s;
          }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
  const SpatialDims da = spatial_dims(a, "concat_channels");
  const SpatialDims db = spatial_dims(b, "concat_channels");
  if (da.n != db.n || da.h != db.h || da.w != db.w || da.batched != db.batched)
    throw std::invalid_argument("concat_channels spatial mismatch: " +
                                shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  const size_t hw = static_cast<size_t>(da.h) * da.w;
  const int C = da.c + db.c;
  TensorT<T> out(da.batched ? std::vector<int>{da.n, C, da.h, da.w}
                            : std::vector<int>{C, da.h, da.w});
  for (int n = 0; n < da.n; ++n) {
    T* dst = out.data() + static_cast<size_t>(n) * C * hw;
    std::copy(a.data() + static_cast<size_t>(n) * da.c * hw,
              a.data() + static_cast<size_t>(n + 1) * da.c * hw, dst);
    std::copy(b.data() + static_cast<size_t>(n) * db.c * hw,
              b.data() + static_cast<size_t>(n + 1) * db.c * hw,
              dst + static_cast<size_t>(da.c) * hw);
  }
  check_finite(out, "concat_channels");
  if (should_record<T>({&a, &b})) {
    out.set_requires_grad(true);
    const SpatialDims ga = da, gb = db;
    active_tape<T>()->record([=](GradTapeT<T>& tape) {
      const std::vector<T>* go = tape.find_grad(out);
      if (!go) return;
      for (int n = 0; n < ga.n; ++n) {
        const T* src = go->data() + static_cast<size_t>(n) * C * hw;
        if (a.requires_grad()) {
          std::vector<T>& g = tape.grad(a);
          T* dst = g.data() + static_cast<size_t>(n) * ga.c * hw;
          for (size_t i = 0; i < static_cast<size_t>(ga.c) * hw; ++i) dst[i] += src[i];
        }
        if (b.requires_grad()) {
          std::vector<T>& g = tape.grad(b);
          T* dst = g.data() + static_cast<size_t>(n) * gb.c * hw;
          const T* s2 = src + static_cast<size_t>(ga.c) * hw;
          for (size_t i = 0; i < static_cast<size_t>(gb.c) * hw; ++i) dst[i] += s2[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> upsample_nearest_2x(const TensorT<T>& x) {
  const SpatialDims in = spatial_dims(x, "upsample_nearest_2x");
  const int OH = in.h * 2, OW = in.w * 2;
  TensorT<T> out(in.batched ? std::vector<int>{in.n, in.c, OH, OW}
                            : std::vector<int>{in.c, OH, OW});
  for (int nc = 0; nc < in.n * in.c; ++nc) {
    const T* src = x.data() + static_cast<size_t>(nc) * in.h * in.w;
    T* dst = out.data() + static_cast<size_t>(nc) * OH * OW;
    for (int y = 0; y < in.h; ++y) {
      T* row0 = dst + static_cast<size_t>(2 * y) * OW;
      for (int xx = 0; xx < in.w; ++xx) {
        const T v = src[static_cast<size_t>(y) * in.w + xx];
        row0[2 * xx] = v;
        row0[2 * xx + 1] = v;
      }
      std::copy(row0, row0 + OW, row0 + OW);
    }
  }
  check_finite(out, "upsample_nearest_2x");
  if (should_record<T>({&x})) {
    out.set_requires_grad(true);
    const SpatialDims geom = in;
    active_tape<T>()->record([=](GradTapeT<T>& tape) {
      const std::vector<T>* go = tape.find_grad(out);
      if (!go || !x.requires_grad()) return;
      std::vector<T>& gx = tape.grad(x);
      for (int nc = 0; nc < geom.n * geom.c; ++nc) {
        const T* src = go->data() + static_cast<size_t>(nc) * OH * OW;
        T* dst = gx.data() + static_cast<size_t>(nc) * geom.h * geom.w;
        for (int y = 0; y < geom.h; ++y)
          for (int xx = 0; xx < geom.w; ++xx) {
            const T* r0 = src + static_cast<size_t>(2 * y) * OW + 2 * xx;
            const T* r1 = r0 + OW;
            dst[static_cast<size_t>(y) * geom.w + xx] += r0[0] + r0[1] + r1[0] + r1[1];
          }
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
  T s = 0;
  for (const T v : x.values()) s += v;
  TensorT<T> out = TensorT<T>::scalar(s);
  check_finite(out, "sum");
  if (should_record<T>({&x})) {
    out.set_requires_grad(true);
    active_tape<T>()->record([=](GradTapeT<T>& tape) {
      const std::vector<T>* go = tape.find_grad(out);
      if (!go || !x.requires_grad()) return;
      std::vector<T>& gx = tape.grad(x);
      for (auto& g : gx) g += (*go)[0];
    });
  }
  return out;
}

template <typename T>
TensorT<T> masked_bce_with_logits(const TensorT<T>& logits,
                                  std::vector<uint8_t> targets,
                                  std::vector<uint8_t> mask, T inv_norm) {
  const size_t n = static_cast<size_t>(logits.numel());
  if (targets.size() != n || mask.size() != n)
    throw std::invalid_argument(
        "masked_bce_with_logits: targets and mask must match the logits size");
  T loss = 0;
  for (size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const T z = logits.data()[i];
    const T y = targets[i] ? T(1) : T(0);
    loss += std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  loss *= inv_norm;
  TensorT<T> out = TensorT<T>::scalar(loss);
  check_finite(out, "masked_bce_with_logits");
  if (should_record<T>({&logits})) {
    out.set_requires_grad(true);
    auto t_keep = std::make_shared<std::vector<uint8_t>>(std::move(targets));
    auto m_keep = std::make_shared<std::vector<uint8_t>>(std::move(mask));
    active_tape<T>()->record([=](GradTapeT<T>& tape) {
      const std::vector<T>* go = tape.find_grad(out);
      if (!go || !logits.requires_grad()) return;
      std::vector<T>& gz = tape.grad(logits);
      const T g = (*go)[0] * inv_norm;
      for (size_t i = 0; i < n; ++i) {
        if (!(*m_keep)[i]) continue;
        const T y = (*t_keep)[i] ? T(1) : T(0);
        gz[i] += g * (stable_sigmoid(logits.data()[i]) - y);
      }
    });
  }
  return out;
}

template <typename T>
void backward(const TensorT<T>& loss, GradTapeT<T>& tape) {
  tape.backward(loss);
}

#define MEMO_INSTANTIATE_OPS(T)                                                   \
  template TensorT<T> conv2d<T>(const TensorT<T>&, const TensorT<T>&,             \
                                const TensorT<T>&, int, int);                     \
  template TensorT<T> group_norm<T>(const TensorT<T>&, int, const TensorT<T>&,    \
                                    const TensorT<T>&, T);                        \
  template TensorT<T> silu<T>(const TensorT<T>&);                                 \
  template TensorT<T> sigmoid<T>(const TensorT<T>&);                              \
  template TensorT<T> linear<T>(const TensorT<T>&, const TensorT<T>&,             \
                                const TensorT<T>&);                               \
  template TensorT<T> sinusoidal_embed<T>(T, int);                                \
  template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);               \
  template TensorT<T> scale<T>(const TensorT<T>&, T);                             \
  template TensorT<T> add_channel_bias<T>(const TensorT<T>&, const TensorT<T>&);  \
  template TensorT<T> concat_channels<T>(const TensorT<T>&, const TensorT<T>&);   \
  template TensorT<T> upsample_nearest_2x<T>(const TensorT<T>&);                  \
  template TensorT<T> sum<T>(const TensorT<T>&);                                  \
  template TensorT<T> masked_bce_with_logits<T>(const TensorT<T>&,                \
                                                std::vector<uint8_t>,             \
                                                std::vector<uint8_t>, T);         \
  template void backward<T>(const TensorT<T>&, GradTapeT<T>&);

MEMO_INSTANTIATE_OPS(float)
MEMO_INSTANTIATE_OPS(double)

#undef MEMO_INSTANTIATE_OPS

}  // namespace memo
