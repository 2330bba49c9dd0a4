#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ember/error.hpp"
#include "ember/tensor.hpp"

// Layer kernels on real-valued tensors. Weight layout is out_ch x in_ch/groups
// x k x k; per-channel vectors (bias, BN parameters, PReLU slopes) are 1 x C x 1 x 1.
namespace ember {

struct Conv2dSpec {
  std::size_t in_ch = 1;
  std::size_t out_ch = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t groups = 1;
  bool has_bias = false;

  /// "Same" padding for odd kernels at stride 1.
  std::size_t padding() const { return dilation * (kernel - 1) / 2; }
  Shape weight_shape() const { return {out_ch, in_ch / groups, kernel, kernel}; }

  void validate() const {
    if (in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0 || dilation == 0 || groups == 0)
      throw Error(Errc::invalid_argument, "conv2d dimensions must be positive");
    if (in_ch % groups != 0 || out_ch % groups != 0)
      throw Error(Errc::invalid_groups, "channels " + std::to_string(in_ch) + "->" + std::to_string(out_ch) + " not divisible by groups " + std::to_string(groups));
  }

  std::size_t out_size(std::size_t in) const {
    const std::size_t span = dilation * (kernel - 1) + 1;
    if (in + 2 * padding() < span) throw Error(Errc::shape_mismatch, "input extent smaller than kernel span");
    return (in + 2 * padding() - span) / stride + 1;
  }

  friend bool operator==(const Conv2dSpec&, const Conv2dSpec&) = default;
};

inline Shape channel_vector_shape(std::size_t c) { return {1, c, 1, 1}; }

namespace detail {

inline void require_real(const Tensor& t, const char* what) {
  if (t.dtype() == DType::I8) throw Error(Errc::invalid_argument, std::string(what) + " must be dequantized before compute");
}

// Rows: (ci, kh, kw) for one group; columns: output pixels.
inline void im2col(const Tensor& x, std::size_t n, std::size_t c0, const Conv2dSpec& s, std::size_t ho, std::size_t wo, std::vector<float>& col) {
  const std::size_t cin_g = s.in_ch / s.groups;
  const std::size_t k = s.kernel, pad = s.padding();
  const std::size_t H = x.shape().h, W = x.shape().w, P = ho * wo;
  col.assign(cin_g * k * k * P, 0.0f);
  for (std::size_t ci = 0; ci < cin_g; ++ci) {
    const float* src = x.ptr() + x.index(n, c0 + ci, 0, 0);
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw) {
        float* row = col.data() + ((ci * k + kh) * k + kw) * P;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          const std::ptrdiff_t ih = std::ptrdiff_t(oh * s.stride + kh * s.dilation) - std::ptrdiff_t(pad);
          if (ih < 0 || ih >= std::ptrdiff_t(H)) continue;
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const std::ptrdiff_t iw = std::ptrdiff_t(ow * s.stride + kw * s.dilation) - std::ptrdiff_t(pad);
            if (iw >= 0 && iw < std::ptrdiff_t(W)) row[oh * wo + ow] = src[ih * W + iw];
          }
        }
      }
    }
  }
}

inline void col2im_add(const std::vector<float>& col, std::size_t n, std::size_t c0, const Conv2dSpec& s, std::size_t ho, std::size_t wo, Tensor& gx) {
  const std::size_t cin_g = s.in_ch / s.groups;
  const std::size_t k = s.kernel, pad = s.padding();
  const std::size_t H = gx.shape().h, W = gx.shape().w, P = ho * wo;
  for (std::size_t ci = 0; ci < cin_g; ++ci) {
    float* dst = gx.ptr() + gx.index(n, c0 + ci, 0, 0);
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw) {
        const float* row = col.data() + ((ci * k + kh) * k + kw) * P;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          const std::ptrdiff_t ih = std::ptrdiff_t(oh * s.stride + kh * s.dilation) - std::ptrdiff_t(pad);
          if (ih < 0 || ih >= std::ptrdiff_t(H)) continue;
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const std::ptrdiff_t iw = std::ptrdiff_t(ow * s.stride + kw * s.dilation) - std::ptrdiff_t(pad);
            if (iw >= 0 && iw < std::ptrdiff_t(W)) dst[ih * W + iw] += row[oh * wo + ow];
          }
        }
      }
    }
  }
}

inline void check_conv_operands(const Tensor& x, const Conv2dSpec& s, const Tensor& w) {
  s.validate();
  require_real(x, "conv input");
  require_real(w, "conv weight");
  if (x.shape().c != s.in_ch)
    throw Error(Errc::shape_mismatch, "conv expects " + std::to_string(s.in_ch) + " input channels, got " + x.shape().str());
  if (!(w.shape() == s.weight_shape()))
    throw Error(Errc::shape_mismatch, "conv weight " + w.shape().str() + " != " + s.weight_shape().str());
}

}  // namespace detail

/// Cross-correlation with zero padding `dilation*(k-1)/2` on each side.
inline Tensor conv2d_forward(const Tensor& x, const Conv2dSpec& s, const Tensor& w, const Tensor* bias = nullptr) {
  detail::check_conv_operands(x, s, w);
  if (s.has_bias && (!bias || !(bias->shape() == channel_vector_shape(s.out_ch))))
    throw Error(Errc::shape_mismatch, "conv bias must be 1x" + std::to_string(s.out_ch) + "x1x1");
  const std::size_t ho = s.out_size(x.shape().h), wo = s.out_size(x.shape().w), P = ho * wo;
  const std::size_t cin_g = s.in_ch / s.groups, cout_g = s.out_ch / s.groups;
  const std::size_t R = cin_g * s.kernel * s.kernel;
  Tensor out({x.shape().n, s.out_ch, ho, wo});
  std::vector<float> col;
  for (std::size_t n = 0; n < x.shape().n; ++n) {
    for (std::size_t g = 0; g < s.groups; ++g) {
      detail::im2col(x, n, g * cin_g, s, ho, wo, col);
      for (std::size_t co = 0; co < cout_g; ++co) {
        const std::size_t oc = g * cout_g + co;
        float* o = out.ptr() + out.index(n, oc, 0, 0);
        const float b = s.has_bias ? (*bias)[oc] : 0.0f;
        std::fill(o, o + P, b);
        const float* wr = w.ptr() + oc * R;
        for (std::size_t r = 0; r < R; ++r) {
          const float wv = wr[r];
          const float* cr = col.data() + r * P;
          for (std::size_t j = 0; j < P; ++j) o[j] += wv * cr[j];
        }
      }
    }
  }
  return out;
}

struct ConvGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;  // empty when the conv has no bias
};

inline ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& x, const Conv2dSpec& s, const Tensor& w) {
  detail::check_conv_operands(x, s, w);
  const std::size_t ho = s.out_size(x.shape().h), wo = s.out_size(x.shape().w), P = ho * wo;
  if (!(grad_out.shape() == Shape{x.shape().n, s.out_ch, ho, wo}))
    throw Error(Errc::shape_mismatch, "conv grad_out " + grad_out.shape().str() + " does not match forward output");
  const std::size_t cin_g = s.in_ch / s.groups, cout_g = s.out_ch / s.groups;
  const std::size_t R = cin_g * s.kernel * s.kernel;

  ConvGrads g{Tensor(x.shape()), Tensor(w.shape()), {}};
  if (s.has_bias) g.bias = Tensor(channel_vector_shape(s.out_ch));
  std::vector<float> col, gcol;
  for (std::size_t n = 0; n < x.shape().n; ++n) {
    for (std::size_t grp = 0; grp < s.groups; ++grp) {
      detail::im2col(x, n, grp * cin_g, s, ho, wo, col);
      gcol.assign(R * P, 0.0f);
      for (std::size_t co = 0; co < cout_g; ++co) {
        const std::size_t oc = grp * cout_g + co;
        const float* go = grad_out.ptr() + grad_out.index(n, oc, 0, 0);
        float* gw = g.weight.ptr() + oc * R;
        const float* wr = w.ptr() + oc * R;
        for (std::size_t r = 0; r < R; ++r) {
          const float* cr = col.data() + r * P;
          float* gr = gcol.data() + r * P;
          const float wv = wr[r];
          float acc = 0.0f;
          for (std::size_t j = 0; j < P; ++j) {
            acc += go[j] * cr[j];
            gr[j] += wv * go[j];
          }
          gw[r] += acc;
        }
        if (s.has_bias) {
          float acc = 0.0f;
          for (std::size_t j = 0; j < P; ++j) acc += go[j];
          g.bias[oc] += acc;
        }
      }
      detail::col2im_add(gcol, n, grp * cin_g, s, ho, wo, g.input);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization

struct BatchNormSpec {
  std::size_t ch = 1;
  float eps = 1e-5f;
  float momentum = 0.1f;

  friend bool operator==(const BatchNormSpec&, const BatchNormSpec&) = default;
};

struct BatchNormCache {
  Tensor xhat;
  std::vector<float> inv_std;
};

namespace detail {
inline void check_bn(const Tensor& x, const BatchNormSpec& s, const Tensor& gamma, const Tensor& beta) {
  require_real(x, "batchnorm input");
  if (x.shape().c != s.ch) throw Error(Errc::shape_mismatch, "batchnorm expects " + std::to_string(s.ch) + " channels, got " + x.shape().str());
  if (!(gamma.shape() == channel_vector_shape(s.ch)) || !(beta.shape() == channel_vector_shape(s.ch)))
    throw Error(Errc::shape_mismatch, "batchnorm affine parameters must be 1xCx1x1");
}
}  // namespace detail

/// Normalizes with batch statistics and updates the running estimates
/// (running variance uses the unbiased batch variance).
inline Tensor batchnorm_forward_train(const Tensor& x, const BatchNormSpec& s, const Tensor& gamma, const Tensor& beta,
                                      Tensor& running_mean, Tensor& running_var, BatchNormCache* cache = nullptr) {
  detail::check_bn(x, s, gamma, beta);
  const Shape& sh = x.shape();
  const std::size_t P = sh.plane(), M = sh.n * P;
  Tensor y(sh);
  BatchNormCache local;
  BatchNormCache& c = cache ? *cache : local;
  c.xhat = Tensor(sh);
  c.inv_std.assign(s.ch, 0.0f);
  for (std::size_t ch = 0; ch < s.ch; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t n = 0; n < sh.n; ++n) {
      const float* p = x.ptr() + x.index(n, ch, 0, 0);
      for (std::size_t j = 0; j < P; ++j) sum += p[j];
    }
    const double mean = sum / double(M);
    for (std::size_t n = 0; n < sh.n; ++n) {
      const float* p = x.ptr() + x.index(n, ch, 0, 0);
      for (std::size_t j = 0; j < P; ++j) sq += (p[j] - mean) * (p[j] - mean);
    }
    const double var = sq / double(M);
    const float inv = static_cast<float>(1.0 / std::sqrt(var + s.eps));
    c.inv_std[ch] = inv;
    const float fm = static_cast<float>(mean);
    for (std::size_t n = 0; n < sh.n; ++n) {
      const float* p = x.ptr() + x.index(n, ch, 0, 0);
      float* xh = c.xhat.ptr() + x.index(n, ch, 0, 0);
      float* o = y.ptr() + x.index(n, ch, 0, 0);
      for (std::size_t j = 0; j < P; ++j) {
        xh[j] = (p[j] - fm) * inv;
        o[j] = gamma[ch] * xh[j] + beta[ch];
      }
    }
    const double unbiased = M > 1 ? sq / double(M - 1) : var;
    running_mean[ch] = static_cast<float>((1.0 - s.momentum) * running_mean[ch] + s.momentum * mean);
    running_var[ch] = static_cast<float>((1.0 - s.momentum) * running_var[ch] + s.momentum * unbiased);
  }
  return y;
}

/// Per-channel affine form of inference-mode batch norm: y = a*x + b.
inline std::pair<std::vector<float>, std::vector<float>> batchnorm_affine(const BatchNormSpec& s, const Tensor& gamma, const Tensor& beta,
                                                                          const Tensor& running_mean, const Tensor& running_var) {
  std::vector<float> a(s.ch), b(s.ch);
  for (std::size_t ch = 0; ch < s.ch; ++ch) {
    a[ch] = gamma[ch] / std::sqrt(running_var[ch] + s.eps);
    b[ch] = beta[ch] - a[ch] * running_mean[ch];
  }
  return {a, b};
}

inline Tensor batchnorm_forward_eval(const Tensor& x, const BatchNormSpec& s, const Tensor& gamma, const Tensor& beta,
                                     const Tensor& running_mean, const Tensor& running_var) {
  detail::check_bn(x, s, gamma, beta);
  const auto [a, b] = batchnorm_affine(s, gamma, beta, running_mean, running_var);
  Tensor y(x.shape());
  const std::size_t P = x.shape().plane();
  for (std::size_t n = 0; n < x.shape().n; ++n)
    for (std::size_t ch = 0; ch < s.ch; ++ch) {
      const float* p = x.ptr() + x.index(n, ch, 0, 0);
      float* o = y.ptr() + y.index(n, ch, 0, 0);
      for (std::size_t j = 0; j < P; ++j) o[j] = a[ch] * p[j] + b[ch];
    }
  return y;
}

struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};

inline BatchNormGrads batchnorm_backward(const Tensor& grad_out, const BatchNormCache& c, const Tensor& gamma) {
  const Shape& sh = c.xhat.shape();
  if (!(grad_out.shape() == sh)) throw Error(Errc::shape_mismatch, "batchnorm grad_out shape");
  const std::size_t P = sh.plane(), M = sh.n * P;
  BatchNormGrads g{Tensor(sh), Tensor(channel_vector_shape(sh.c)), Tensor(channel_vector_shape(sh.c))};
  for (std::size_t ch = 0; ch < sh.c; ++ch) {
    float sum_dy = 0.0f, sum_dy_xhat = 0.0f;
    for (std::size_t n = 0; n < sh.n; ++n) {
      const float* dy = grad_out.ptr() + grad_out.index(n, ch, 0, 0);
      const float* xh = c.xhat.ptr() + c.xhat.index(n, ch, 0, 0);
      for (std::size_t j = 0; j < P; ++j) {
        sum_dy += dy[j];
        sum_dy_xhat += dy[j] * xh[j];
      }
    }
    g.gamma[ch] = sum_dy_xhat;
    g.beta[ch] = sum_dy;
    const float k = gamma[ch] * c.inv_std[ch];
    const float inv_m = 1.0f / float(M);
    for (std::size_t n = 0; n < sh.n; ++n) {
      const float* dy = grad_out.ptr() + grad_out.index(n, ch, 0, 0);
      const float* xh = c.xhat.ptr() + c.xhat.index(n, ch, 0, 0);
      float* dx = g.input.ptr() + g.input.index(n, ch, 0, 0);
      for (std::size_t j = 0; j < P; ++j) dx[j] = k * (dy[j] - sum_dy * inv_m - xh[j] * sum_dy_xhat * inv_m);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Activations

enum class ActKind : std::uint8_t { ReLU = 0, ELU = 1, PReLU = 2, HardSwish = 3 };

inline const char* act_name(ActKind k) {
  switch (k) {
    case ActKind::ReLU: return "relu";
    case ActKind::ELU: return "elu";
    case ActKind::PReLU: return "prelu";
    case ActKind::HardSwish: return "hardswish";
  }
  return "?";
}

inline std::optional<ActKind> parse_act(const std::string& s) {
  for (ActKind k : {ActKind::ReLU, ActKind::ELU, ActKind::PReLU, ActKind::HardSwish})
    if (s == act_name(k)) return k;
  return std::nullopt;
}

struct ActivationSpec {
  ActKind kind = ActKind::ReLU;
  float alpha = 1.0f;        // ELU
  std::size_t channels = 0;  // PReLU slope count

  friend bool operator==(const ActivationSpec&, const ActivationSpec&) = default;
};

namespace detail {
inline void check_slope(const Tensor& x, const ActivationSpec& s, const Tensor* slope) {
  require_real(x, "activation input");
  if (s.kind != ActKind::PReLU) return;
  if (!slope || slope->numel() != x.shape().c || s.channels != x.shape().c)
    throw Error(Errc::slope_length_mismatch, "PReLU needs one slope per channel (" + std::to_string(x.shape().c) + ")");
}
}  // namespace detail

// Derivatives at the kink use the right-hand value.
inline Tensor activation_forward(const Tensor& x, const ActivationSpec& s, const Tensor* slope = nullptr) {
  detail::check_slope(x, s, slope);
  Tensor y(x.shape());
  const std::size_t P = x.shape().plane();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float v = x[i];
    switch (s.kind) {
      case ActKind::ReLU: y[i] = v > 0.0f ? v : 0.0f; break;
      case ActKind::ELU: y[i] = v > 0.0f ? v : s.alpha * std::expm1(v); break;
      case ActKind::PReLU: y[i] = v > 0.0f ? v : (*slope)[(i / P) % x.shape().c] * v; break;
      case ActKind::HardSwish: y[i] = v * std::clamp(v + 3.0f, 0.0f, 6.0f) / 6.0f; break;
    }
  }
  return y;
}

struct ActivationGrads {
  Tensor input;
  Tensor slope;  // PReLU only
};

inline ActivationGrads activation_backward(const Tensor& grad_out, const Tensor& x, const ActivationSpec& s, const Tensor* slope = nullptr) {
  detail::check_slope(x, s, slope);
  if (!(grad_out.shape() == x.shape())) throw Error(Errc::shape_mismatch, "activation grad_out shape");
  ActivationGrads g{Tensor(x.shape()), {}};
  if (s.kind == ActKind::PReLU) g.slope = Tensor(channel_vector_shape(x.shape().c));
  const std::size_t P = x.shape().plane();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float v = x[i], go = grad_out[i];
    switch (s.kind) {
      case ActKind::ReLU: g.input[i] = v >= 0.0f ? go : 0.0f; break;
      case ActKind::ELU: g.input[i] = v >= 0.0f ? go : go * s.alpha * std::exp(v); break;
      case ActKind::PReLU: {
        const std::size_t c = (i / P) % x.shape().c;
        if (v >= 0.0f) {
          g.input[i] = go;
        } else {
          g.input[i] = go * (*slope)[c];
          g.slope[c] += v * go;
        }
        break;
      }
      case ActKind::HardSwish:
        g.input[i] = v < -3.0f ? 0.0f : (v >= 3.0f ? go : go * (2.0f * v + 3.0f) / 6.0f);
        break;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Resampling, pooling, joins

namespace detail {
// Source taps for one axis under the align-corners=false convention.
struct Taps {
  std::vector<std::size_t> lo, hi;
  std::vector<float> frac;
};

inline Taps bilinear_taps(std::size_t in, std::size_t out) {
  Taps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double scale = double(in) / double(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (double(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    t.lo[o] = i0;
    t.hi[o] = std::min(i0 + 1, in - 1);
    t.frac[o] = static_cast<float>(src - double(i0));
  }
  return t;
}
}  // namespace detail

inline Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  detail::require_real(x, "resize input");
  if (out_h == 0 || out_w == 0 || x.shape().h == 0 || x.shape().w == 0) throw Error(Errc::invalid_argument, "resize to or from an empty plane");
  const Shape& s = x.shape();
  if (s.h == out_h && s.w == out_w) return x;
  const auto ty = detail::bilinear_taps(s.h, out_h);
  const auto tx = detail::bilinear_taps(s.w, out_w);
  Tensor y({s.n, s.c, out_h, out_w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const float* src = x.ptr() + x.index(n, c, 0, 0);
      float* dst = y.ptr() + y.index(n, c, 0, 0);
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const float fy = ty.frac[oy];
        const float* r0 = src + ty.lo[oy] * s.w;
        const float* r1 = src + ty.hi[oy] * s.w;
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const float fx = tx.frac[ox];
          const float top = r0[tx.lo[ox]] + fx * (r0[tx.hi[ox]] - r0[tx.lo[ox]]);
          const float bot = r1[tx.lo[ox]] + fx * (r1[tx.hi[ox]] - r1[tx.lo[ox]]);
          dst[oy * out_w + ox] = top + fy * (bot - top);
        }
      }
    }
  return y;
}

inline Tensor bilinear_resize_backward(const Tensor& grad_out, std::size_t in_h, std::size_t in_w) {
  const Shape& s = grad_out.shape();
  if (s.h == in_h && s.w == in_w) return grad_out;
  const auto ty = detail::bilinear_taps(in_h, s.h);
  const auto tx = detail::bilinear_taps(in_w, s.w);
  Tensor g({s.n, s.c, in_h, in_w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const float* go = grad_out.ptr() + grad_out.index(n, c, 0, 0);
      float* dst = g.ptr() + g.index(n, c, 0, 0);
      for (std::size_t oy = 0; oy < s.h; ++oy) {
        const float fy = ty.frac[oy];
        float* r0 = dst + ty.lo[oy] * in_w;
        float* r1 = dst + ty.hi[oy] * in_w;
        for (std::size_t ox = 0; ox < s.w; ++ox) {
          const float fx = tx.frac[ox];
          const float v = go[oy * s.w + ox];
          r0[tx.lo[ox]] += v * (1 - fy) * (1 - fx);
          r0[tx.hi[ox]] += v * (1 - fy) * fx;
          r1[tx.lo[ox]] += v * fy * (1 - fx);
          r1[tx.hi[ox]] += v * fy * fx;
        }
      }
    }
  return g;
}

inline Tensor global_avg_pool(const Tensor& x) {
  detail::require_real(x, "pool input");
  const Shape& s = x.shape();
  Tensor y({s.n, s.c, 1, 1});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const float* p = x.ptr() + x.index(n, c, 0, 0);
      double acc = 0.0;
      for (std::size_t j = 0; j < s.plane(); ++j) acc += p[j];
      y.at(n, c, 0, 0) = static_cast<float>(acc / double(s.plane()));
    }
  return y;
}

inline Tensor global_avg_pool_backward(const Tensor& grad_out, const Shape& in) {
  Tensor g(in);
  const float inv = 1.0f / float(in.plane());
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t c = 0; c < in.c; ++c) {
      float* p = g.ptr() + g.index(n, c, 0, 0);
      std::fill(p, p + in.plane(), grad_out.at(n, c, 0, 0) * inv);
    }
  return g;
}

inline Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw Error(Errc::invalid_argument, "concat of nothing");
  Shape s = parts.front()->shape();
  s.c = 0;
  for (const Tensor* p : parts) {
    detail::require_real(*p, "concat input");
    if (p->shape().n != s.n || p->shape().h != s.h || p->shape().w != s.w)
      throw Error(Errc::shape_mismatch, "concat inputs differ in batch or spatial size: " + p->shape().str());
    s.c += p->shape().c;
  }
  Tensor y(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    std::size_t c0 = 0;
    for (const Tensor* p : parts) {
      const std::size_t len = p->shape().c * s.plane();
      std::copy_n(p->ptr() + p->index(n, 0, 0, 0), len, y.ptr() + y.index(n, c0, 0, 0));
      c0 += p->shape().c;
    }
  }
  return y;
}

inline std::vector<Tensor> split_channels(const Tensor& grad, const std::vector<std::size_t>& channels) {
  std::vector<Tensor> out;
  const Shape& s = grad.shape();
  std::size_t c0 = 0;
  for (std::size_t c : channels) {
    Tensor part({s.n, c, s.h, s.w});
    for (std::size_t n = 0; n < s.n; ++n) std::copy_n(grad.ptr() + grad.index(n, c0, 0, 0), c * s.plane(), part.ptr() + part.index(n, 0, 0, 0));
    out.push_back(std::move(part));
    c0 += c;
  }
  if (c0 != s.c) throw Error(Errc::shape_mismatch, "split channel counts do not sum to " + std::to_string(s.c));
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) throw Error(Errc::residual_shape_mismatch, a.shape().str() + " + " + b.shape().str());
  Tensor y(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) y[i] = a[i] + b[i];
  return y;
}

}  // namespace ember
