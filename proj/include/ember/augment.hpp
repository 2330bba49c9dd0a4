#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "ember/dataset.hpp"
#include "ember/error.hpp"

namespace ember {

struct AugmentConfig {
  float flip_prob = 0.5f;
  float warp_prob = 0.5f;
  /// Corner displacement bound as a fraction of the side.
  float jitter = 0.1f;
};

/// 3x3 projective map, row-major, h[8] == 1.
using Homography = std::array<double, 9>;

inline std::pair<double, double> apply_homography(const Homography& h, double x, double y) {
  const double w = h[6] * x + h[7] * y + h[8];
  return {(h[0] * x + h[1] * y + h[2]) / w, (h[3] * x + h[4] * y + h[5]) / w};
}

/// Homography taking each `from[i]` to `to[i]`.
inline Homography homography_from_corners(const std::array<std::pair<double, double>, 4>& from, const std::array<std::pair<double, double>, 4>& to) {
  double a[8][9] = {};
  for (int i = 0; i < 4; ++i) {
    const auto [x, y] = from[i];
    const auto [u, v] = to[i];
    double* r0 = a[2 * i];
    double* r1 = a[2 * i + 1];
    r0[0] = x, r0[1] = y, r0[2] = 1, r0[6] = -u * x, r0[7] = -u * y, r0[8] = u;
    r1[3] = x, r1[4] = y, r1[5] = 1, r1[6] = -v * x, r1[7] = -v * y, r1[8] = v;
  }
  for (int col = 0; col < 8; ++col) {
    int piv = col;
    for (int r = col + 1; r < 8; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) < 1e-12) throw Error(Errc::invalid_argument, "degenerate corner configuration");
    std::swap(a[col], a[piv]);
    for (int r = 0; r < 8; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < 9; ++c) a[r][c] -= f * a[col][c];
    }
  }
  Homography h{};
  for (int i = 0; i < 8; ++i) h[i] = a[i][8] / a[i][i];
  h[8] = 1.0;
  return h;
}

inline Sample flip_horizontal(const Sample& s) {
  Sample out = s;
  const std::size_t h = s.height(), w = s.width();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.image.at(0, c, y, x) = s.image.at(0, c, y, w - 1 - x);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) out.mask[y * w + x] = s.mask[y * w + w - 1 - x];
  return out;
}

/// Resamples `s` through `h`, which maps output pixel coordinates to source
/// coordinates. Image bilinear, mask nearest, both clamped at the border.
inline Sample warp_perspective(const Sample& s, const Homography& h) {
  Sample out = s;
  const std::size_t H = s.height(), W = s.width(), plane = H * W;
  const auto clampi = [](double v, std::size_t hi) { return static_cast<std::size_t>(std::clamp(v, 0.0, double(hi - 1))); };
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const auto [u, v] = apply_homography(h, double(x) + 0.5, double(y) + 0.5);
      const double sx = std::clamp(u - 0.5, 0.0, double(W - 1)), sy = std::clamp(v - 0.5, 0.0, double(H - 1));
      const std::size_t x0 = static_cast<std::size_t>(sx), y0 = static_cast<std::size_t>(sy);
      const std::size_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
      const float fx = static_cast<float>(sx - double(x0)), fy = static_cast<float>(sy - double(y0));
      for (std::size_t c = 0; c < 3; ++c) {
        const float* p = s.image.ptr() + c * plane;
        const float top = p[y0 * W + x0] + fx * (p[y0 * W + x1] - p[y0 * W + x0]);
        const float bot = p[y1 * W + x0] + fx * (p[y1 * W + x1] - p[y1 * W + x0]);
        out.image[c * plane + y * W + x] = top + fy * (bot - top);
      }
      out.mask[y * W + x] = s.mask[clampi(std::floor(v), H) * W + clampi(std::floor(u), W)];
    }
  return out;
}

/// Random flip and four-corner perspective warp. A zero jitter skips the warp.
inline Sample augment(const Sample& s, std::mt19937_64& rng, const AugmentConfig& cfg = {}) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Sample out = u01(rng) < cfg.flip_prob ? flip_horizontal(s) : s;
  if (u01(rng) < cfg.warp_prob && cfg.jitter > 0.0f) {
    const double W = double(s.width()), H = double(s.height());
    const std::array<std::pair<double, double>, 4> dst{{{0, 0}, {W, 0}, {W, H}, {0, H}}};
    std::array<std::pair<double, double>, 4> src = dst;
    std::uniform_real_distribution<double> j(-cfg.jitter, cfg.jitter);
    for (auto& [x, y] : src) {
      x += j(rng) * W;
      y += j(rng) * H;
    }
    out = warp_perspective(out, homography_from_corners(dst, src));
  }
  return out;
}

/// Appends one augmented copy of every sample (ids suffixed "_aug").
inline void append_augmented_copies(std::vector<Sample>& samples, std::uint64_t seed, const AugmentConfig& cfg = {}) {
  std::mt19937_64 rng(seed);
  const std::size_t n = samples.size();
  samples.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample a = augment(samples[i], rng, cfg);
    a.id += "_aug";
    samples.push_back(std::move(a));
  }
}

}  // namespace ember
