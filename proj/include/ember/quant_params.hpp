#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ember/error.hpp"

namespace ember {

enum class Granularity : std::uint8_t { PerTensor = 0, PerChannel = 1 };

inline const char* granularity_name(Granularity g) {
  return g == Granularity::PerTensor ? "per_tensor" : "per_channel";
}

/// Affine INT8 mapping real ~= scale * (q - zero_point).
///
/// Per-channel parameters carry one scale per slice along `axis` of the owning
/// tensor (axis 0 for weights laid out out_ch x in_ch x k x k, axis 1 for
/// activations in NCHW).
struct QuantParams {
  std::vector<float> scale{1.0f};
  std::int32_t zero_point = 0;
  std::int32_t qmin = -128;
  std::int32_t qmax = 127;
  Granularity granularity = Granularity::PerTensor;
  bool symmetric = false;
  std::uint8_t axis = 0;

  static QuantParams per_tensor(float s, std::int32_t z = 0, bool symmetric = false) {
    QuantParams p;
    p.scale = {s};
    p.symmetric = symmetric;
    p.zero_point = symmetric ? 0 : z;
    p.qmin = symmetric ? -127 : -128;
    p.qmax = 127;
    return p;
  }

  static QuantParams per_channel(std::vector<float> scales, std::uint8_t axis = 0) {
    QuantParams p;
    p.scale = std::move(scales);
    p.granularity = Granularity::PerChannel;
    p.symmetric = true;
    p.qmin = -127;
    p.axis = axis;
    return p;
  }

  float scale_for(std::size_t channel) const {
    return granularity == Granularity::PerTensor ? scale.front() : scale.at(channel);
  }

  void validate() const {
    if (scale.empty()) throw Error(Errc::invalid_argument, "quant params without scale");
    for (float s : scale) {
      if (!(s > 0.0f) || !std::isfinite(s)) throw Error(Errc::invalid_argument, "scale must be positive and finite");
    }
    if (granularity == Granularity::PerTensor && scale.size() != 1)
      throw Error(Errc::invalid_argument, "per-tensor params need exactly one scale");
    if (qmin >= qmax) throw Error(Errc::invalid_argument, "qmin must be below qmax");
    if (zero_point < qmin || zero_point > qmax) throw Error(Errc::invalid_argument, "zero point outside [qmin, qmax]");
    if (symmetric && zero_point != 0) throw Error(Errc::invalid_argument, "symmetric params need zero point 0");
  }

  /// Real interval that quantizes without clamping.
  double range_lo(std::size_t channel = 0) const { return double(scale_for(channel)) * (qmin - zero_point); }
  double range_hi(std::size_t channel = 0) const { return double(scale_for(channel)) * (qmax - zero_point); }

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

/// Side channel for conditions the total quantize function absorbs.
struct QuantCounters {
  std::size_t nan = 0;
  std::size_t clamped = 0;
};

/// q = clamp(round_half_even(x / s) + z, qmin, qmax). NaN maps to the zero point.
///
/// The division runs in double: for float x and s it is always correctly
/// rounded relative to the half-integer boundaries, so ties are real ties.
inline std::int8_t quantize(float x, const QuantParams& p, std::size_t channel = 0, QuantCounters* counters = nullptr) {
  if (std::isnan(x)) {
    if (counters) ++counters->nan;
    return static_cast<std::int8_t>(p.zero_point);
  }
  const double s = p.scale_for(channel);
  const double r = std::nearbyint(double(x) / s) + p.zero_point;
  if (r < p.qmin || r > p.qmax) {
    if (counters) ++counters->clamped;
    return static_cast<std::int8_t>(r < p.qmin ? p.qmin : p.qmax);
  }
  return static_cast<std::int8_t>(r);
}

/// (q - z) * s, exact in double.
inline double dequantize(std::int8_t q, const QuantParams& p, std::size_t channel = 0) {
  return double(std::int32_t(q) - p.zero_point) * double(p.scale_for(channel));
}

inline float fake_quant(float x, const QuantParams& p, std::size_t channel = 0) {
  return static_cast<float>(dequantize(quantize(x, p, channel), p, channel));
}

/// Per-tensor parameters covering [lo, hi]; the range is widened to contain 0
/// so the zero point is representable. A zero-width range yields s=1, z=0 and
/// sets `*degenerate`.
inline QuantParams range_params(double lo, double hi, bool symmetric, bool* degenerate = nullptr) {
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  if (degenerate) *degenerate = false;
  if (symmetric) {
    const double a = std::max(-lo, hi);
    if (!(a > 0.0) || !std::isfinite(a)) {
      if (degenerate) *degenerate = true;
      return QuantParams::per_tensor(1.0f, 0, true);
    }
    return QuantParams::per_tensor(static_cast<float>(a / 127.0), 0, true);
  }
  if (!(hi - lo > 0.0) || !std::isfinite(hi - lo)) {
    if (degenerate) *degenerate = true;
    return QuantParams::per_tensor(1.0f, 0, false);
  }
  const float s = static_cast<float>((hi - lo) / 255.0);
  const double z = std::nearbyint(-128.0 - lo / double(s));
  return QuantParams::per_tensor(s, static_cast<std::int32_t>(std::clamp(z, -128.0, 127.0)), false);
}

/// True where the straight-through estimator passes gradient.
inline bool in_clip_range(float x, const QuantParams& p, std::size_t channel = 0) {
  const double v = x;
  return v >= p.range_lo(channel) && v <= p.range_hi(channel);
}

}  // namespace ember
