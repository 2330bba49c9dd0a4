#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>

#include "ember/error.hpp"
#include "ember/tensor.hpp"

namespace ember {

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d logits
};

/// Mean pixelwise cross-entropy of N x K x H x W logits against N*H*W labels.
/// Gradient is (softmax - onehot) / pixels, multiplied by `grad_scale`.
inline LossResult cross_entropy_loss(const Tensor& logits, std::span<const std::uint8_t> labels, float grad_scale = 1.0f) {
  const Shape& s = logits.shape();
  const std::size_t plane = s.plane(), pixels = s.n * plane, k = s.c;
  if (labels.size() != pixels) throw Error(Errc::shape_mismatch, "labels hold " + std::to_string(labels.size()) + " pixels, logits " + std::to_string(pixels));
  if (k < 2) throw Error(Errc::shape_mismatch, "cross-entropy needs at least two classes");
  LossResult r{0.0, Tensor(s)};
  const float inv = grad_scale / static_cast<float>(pixels);
  std::vector<double> e(k);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t p = 0; p < plane; ++p) {
      const std::uint8_t y = labels[n * plane + p];
      if (y >= k) throw Error(Errc::label_out_of_range, "label " + std::to_string(y) + " with " + std::to_string(k) + " classes");
      const std::size_t base = n * k * plane + p;
      double m = logits[base];
      for (std::size_t c = 1; c < k; ++c) m = std::max(m, double(logits[base + c * plane]));
      double z = 0.0;
      for (std::size_t c = 0; c < k; ++c) z += e[c] = std::exp(double(logits[base + c * plane]) - m);
      r.loss += std::log(z) + m - double(logits[base + y * plane]);
      for (std::size_t c = 0; c < k; ++c) {
        const float prob = static_cast<float>(e[c] / z);
        r.grad[base + c * plane] = (prob - (c == y ? 1.0f : 0.0f)) * inv;
      }
    }
  r.loss /= double(pixels);
  return r;
}

}  // namespace ember
