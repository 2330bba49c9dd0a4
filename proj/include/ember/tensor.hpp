#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ember/alloc_tracker.hpp"
#include "ember/error.hpp"
#include "ember/half.hpp"
#include "ember/quant_params.hpp"

namespace ember {

enum class DType : std::uint8_t { F32 = 0, F16 = 1, I8 = 2 };

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::F32: return 4;
    case DType::F16: return 2;
    case DType::I8: return 1;
  }
  return 4;
}

inline const char* dtype_name(DType d) {
  switch (d) {
    case DType::F32: return "f32";
    case DType::F16: return "f16";
    case DType::I8: return "i8";
  }
  return "?";
}

struct Shape {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
  }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

/// NCHW tensor with a precision tag.
///
/// Elements are held as floats whatever the tag: F16 tensors hold widened
/// binary16 values (re-rounding is the identity) and I8 tensors hold the
/// integer codes, with the QuantParams needed to read them. `nbytes()`
/// reports the storage size of the tagged precision, which is what the file
/// format writes.
class Tensor {
 public:
  using Buffer = std::vector<float, TrackingAllocator<float>>;

  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f) : shape_(shape), data_(shape.numel(), fill) {}

  Tensor(Shape shape, std::span<const float> values) : shape_(shape), data_(values.begin(), values.end()) {
    if (values.size() != shape.numel())
      throw Error(Errc::shape_mismatch, "value count " + std::to_string(values.size()) + " does not fill " + shape.str());
  }

  Tensor(Shape shape, std::initializer_list<float> values) : Tensor(shape, std::span<const float>(values.begin(), values.size())) {}

  static Tensor f16(Shape shape, std::span<const float> values) {
    Tensor t(shape, values);
    for (float& v : t.data_) v = round_to_half(v);
    t.dtype_ = DType::F16;
    return t;
  }

  static Tensor i8(Shape shape, std::span<const std::int8_t> codes, QuantParams params) {
    if (codes.size() != shape.numel()) throw Error(Errc::shape_mismatch, "code count does not fill " + shape.str());
    Tensor t(shape);
    for (std::size_t i = 0; i < codes.size(); ++i) t.data_[i] = codes[i];
    t.dtype_ = DType::I8;
    t.check_params(params);
    t.quant_ = std::move(params);
    return t;
  }

  const Shape& shape() const { return shape_; }
  DType dtype() const { return dtype_; }
  std::size_t numel() const { return data_.size(); }
  std::size_t nbytes() const { return data_.size() * dtype_size(dtype_); }
  bool empty() const { return data_.empty(); }
  const std::optional<QuantParams>& quant() const { return quant_; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float* ptr() { return data_.data(); }
  const float* ptr() const { return data_.data(); }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  float& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[index(n, c, h, w)]; }
  float at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const { return data_[index(n, c, h, w)]; }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  Tensor& fill(float v) {
    std::fill(data_.begin(), data_.end(), v);
    return *this;
  }

  /// Channel coordinate of flat element i along the params' axis.
  std::size_t channel_of(std::size_t i, std::uint8_t axis) const {
    return axis == 0 ? i / (shape_.c * shape_.h * shape_.w) : (i / shape_.plane()) % shape_.c;
  }

  void check_params(const QuantParams& p) const {
    p.validate();
    if (p.granularity == Granularity::PerChannel) {
      const std::size_t channels = p.axis == 0 ? shape_.n : shape_.c;
      if (p.scale.size() != channels)
        throw Error(Errc::shape_mismatch, "per-channel scale count " + std::to_string(p.scale.size()) + " != " + std::to_string(channels));
    }
  }

 private:
  friend Tensor cast_tensor(const Tensor&, DType, const std::optional<QuantParams>&);

  Shape shape_{};
  DType dtype_ = DType::F32;
  Buffer data_;
  std::optional<QuantParams> quant_;
};

/// Elementwise precision conversion; shape is always preserved.
inline Tensor cast_tensor(const Tensor& t, DType target, const std::optional<QuantParams>& params = std::nullopt) {
  if (target == DType::I8 && !params) throw Error(Errc::missing_params, "cast to i8 requires quantization params");

  // Everything routes through real values.
  Tensor real(t.shape());
  real.data_ = t.data_;
  if (t.dtype_ == DType::I8) {
    const QuantParams& p = *t.quant_;
    for (std::size_t i = 0; i < real.data_.size(); ++i)
      real.data_[i] = static_cast<float>(dequantize(static_cast<std::int8_t>(t.data_[i]), p, t.channel_of(i, p.axis)));
  }

  switch (target) {
    case DType::F32:
      return real;
    case DType::F16:
      for (float& v : real.data_) v = round_to_half(v);
      real.dtype_ = DType::F16;
      return real;
    case DType::I8: {
      real.check_params(*params);
      for (std::size_t i = 0; i < real.data_.size(); ++i)
        real.data_[i] = quantize(real.data_[i], *params, real.channel_of(i, params->axis));
      real.dtype_ = DType::I8;
      real.quant_ = params;
      return real;
    }
  }
  return real;
}

/// Real-valued F32 view of any tensor.
inline Tensor to_f32(const Tensor& t) { return t.dtype() == DType::F32 ? t : cast_tensor(t, DType::F32); }

}  // namespace ember
