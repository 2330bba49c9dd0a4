#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ember/error.hpp"
#include "ember/ops.hpp"
#include "ember/tensor.hpp"

namespace ember {

/// One image with its binary fire mask. The image is a 1x3xHxW tensor in
/// [0, 1]; the mask is HxW row-major with 1 = fire.
struct Sample {
  Tensor image;
  std::vector<std::uint8_t> mask;
  std::string id;

  std::size_t height() const { return image.shape().h; }
  std::size_t width() const { return image.shape().w; }

  friend bool operator==(const Sample& a, const Sample& b) {
    return a.id == b.id && a.mask == b.mask && a.image.shape() == b.image.shape() &&
           std::equal(a.image.data().begin(), a.image.data().end(), b.image.data().begin());
  }
};

// ---------------------------------------------------------------------------
// Synthetic generator

struct SynthConfig {
  std::size_t count = 64;
  std::size_t size = 64;
  std::size_t min_blobs = 0;
  std::size_t max_blobs = 4;
  /// Blob radii as a fraction of the side.
  float min_radius = 0.2f;
  float max_radius = 0.5f;
  float noise = 0.03f;
  std::uint64_t seed = 0;

  void validate() const {
    if (size < 16) throw Error(Errc::invalid_config, "synthetic images need size >= 16");
    if (min_blobs > max_blobs) throw Error(Errc::invalid_config, "min_blobs > max_blobs");
    if (!(min_radius > 0.0f && min_radius <= max_radius)) throw Error(Errc::invalid_config, "blob radii must satisfy 0 < min <= max");
    if (!(noise >= 0.0f)) throw Error(Errc::invalid_config, "noise amplitude must be >= 0");
  }
};

struct Blob {
  double cx, cy, rx, ry, theta;

  // Radial falloff in [0, 1]: 1 at the centre, 0 on and beyond the ellipse.
  double falloff(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry;
    return std::max(0.0, 1.0 - std::sqrt(u * u + v * v));
  }
};

inline constexpr double kMaskFalloff = 0.5;

namespace detail {

// Smooth random field in [0, 1]: a coarse uniform grid upsampled bilinearly.
inline Tensor low_frequency_field(std::size_t size, std::size_t grid, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor coarse({1, 1, grid, grid});
  for (float& v : coarse.data()) v = u(rng);
  return bilinear_resize(coarse, size, size);
}

}  // namespace detail

/// Draws one sample; blobs are returned through `blobs_out` for tests that
/// check the mask against the analytic support.
inline Sample generate_one(const SynthConfig& cfg, std::mt19937_64& rng, std::string id, std::vector<Blob>* blobs_out = nullptr) {
  const std::size_t n = cfg.size;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<float> gauss(0.0f, 1.0f);

  const Tensor mix = detail::low_frequency_field(n, 4, rng);
  const Tensor shade = detail::low_frequency_field(n, 8, rng);
  Sample s{Tensor({1, 3, n, n}), std::vector<std::uint8_t>(n * n, 0), std::move(id)};

  std::uniform_int_distribution<std::size_t> nblobs(cfg.min_blobs, cfg.max_blobs);
  std::vector<Blob> blobs(nblobs(rng));
  for (Blob& b : blobs) {
    b.cx = u01(rng) * double(n);
    b.cy = u01(rng) * double(n);
    b.rx = (cfg.min_radius + u01(rng) * (cfg.max_radius - cfg.min_radius)) * double(n);
    b.ry = (cfg.min_radius + u01(rng) * (cfg.max_radius - cfg.min_radius)) * double(n);
    b.theta = u01(rng) * 3.141592653589793;
  }

  const std::size_t plane = n * n;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const std::size_t i = y * n + x;
      // green grass to brown soil
      const float m = mix[i], sh = 0.75f + 0.5f * shade[i];
      float r = sh * (0.18f + 0.22f * m);
      float g = sh * (0.42f - 0.12f * m);
      float bl = sh * (0.12f + 0.06f * m);

      double f = 0.0;
      for (const Blob& b : blobs) f = std::max(f, b.falloff(double(x) + 0.5, double(y) + 0.5));
      if (f > kMaskFalloff) s.mask[i] = 1;
      const float alpha = static_cast<float>(std::clamp((f - 0.35) / 0.3, 0.0, 1.0));
      if (alpha > 0.0f) {
        const float flicker = 0.85f + 0.15f * static_cast<float>(u01(rng));
        const float fr = 0.95f * flicker, fg = (0.25f + 0.45f * static_cast<float>(f)) * flicker, fb = 0.05f;
        r += alpha * (fr - r);
        g += alpha * (fg - g);
        bl += alpha * (fb - bl);
      }
      const float noise[3] = {cfg.noise * gauss(rng), cfg.noise * gauss(rng), cfg.noise * gauss(rng)};
      s.image[i] = std::clamp(r + noise[0], 0.0f, 1.0f);
      s.image[plane + i] = std::clamp(g + noise[1], 0.0f, 1.0f);
      s.image[2 * plane + i] = std::clamp(bl + noise[2], 0.0f, 1.0f);
    }
  if (blobs_out) *blobs_out = std::move(blobs);
  return s;
}

inline std::vector<Sample> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::vector<Sample> out;
  out.reserve(cfg.count);
  for (std::size_t k = 0; k < cfg.count; ++k) out.push_back(generate_one(cfg, rng, "synth_" + std::to_string(k)));
  return out;
}

inline double mask_fraction(const Sample& s) {
  if (s.mask.empty()) return 0.0;
  return double(std::count(s.mask.begin(), s.mask.end(), std::uint8_t{1})) / double(s.mask.size());
}

// ---------------------------------------------------------------------------
// PPM / PGM ingestion

struct NetpbmImage {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;
};

namespace detail {

inline std::string netpbm_token(std::istream& is, const std::string& what) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw Error(Errc::malformed_header, what + ": truncated header");
  return tok;
}

inline std::size_t netpbm_number(std::istream& is, const std::string& what) {
  const std::string tok = netpbm_token(is, what);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char ch) { return ch >= '0' && ch <= '9'; }) || tok.size() > 9)
    throw Error(Errc::malformed_header, what + ": expected a number, got '" + tok + "'");
  return std::stoul(tok);
}

}  // namespace detail

/// Binary PPM (P6) or PGM (P5), 8-bit only.
inline NetpbmImage read_netpbm(std::istream& is, const std::string& magic, const std::string& what) {
  std::string m(2, '\0');
  if (!is.read(m.data(), 2) || m != magic) throw Error(Errc::malformed_header, what + ": expected " + magic + " magic");
  NetpbmImage img;
  img.channels = magic == "P6" ? 3 : 1;
  img.width = detail::netpbm_number(is, what);
  img.height = detail::netpbm_number(is, what);
  const std::size_t maxval = detail::netpbm_number(is, what);
  if (img.width == 0 || img.height == 0) throw Error(Errc::malformed_header, what + ": zero dimension");
  if (maxval != 255) throw Error(Errc::malformed_header, what + ": only 8-bit (maxval 255) files are supported");
  img.pixels.resize(img.width * img.height * img.channels);
  if (!is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size())))
    throw Error(Errc::malformed_header, what + ": pixel data shorter than the header promises");
  return img;
}

inline NetpbmImage read_netpbm_file(const std::string& path, const std::string& magic) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::io_failure, "cannot open " + path);
  return read_netpbm(f, magic, path);
}

inline void write_netpbm(std::ostream& os, const NetpbmImage& img) {
  os << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

inline void write_netpbm_file(const std::string& path, const NetpbmImage& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::io_failure, "cannot write " + path);
  write_netpbm(f, img);
  if (!f) throw Error(Errc::io_failure, "write failed for " + path);
}

struct LoadOptions {
  /// Reject mask values outside {0, 255}; otherwise count them as warnings.
  bool strict = false;
};

struct LoadReport {
  std::size_t nonbinary_mask_pixels = 0;
};

inline Sample sample_from_netpbm(const NetpbmImage& img, const NetpbmImage& mask, std::string id, const LoadOptions& opt = {},
                                 LoadReport* report = nullptr) {
  if (img.width != mask.width || img.height != mask.height)
    throw Error(Errc::dimension_mismatch, id + ": image is " + std::to_string(img.width) + "x" + std::to_string(img.height) + ", mask is " +
                                              std::to_string(mask.width) + "x" + std::to_string(mask.height));
  const std::size_t h = img.height, w = img.width, plane = h * w;
  Sample s{Tensor({1, 3, h, w}), std::vector<std::uint8_t>(plane), std::move(id)};
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) s.image[c * plane + i] = float(img.pixels[i * 3 + c]) / 255.0f;
  std::size_t odd = 0;
  for (std::size_t i = 0; i < plane; ++i) {
    const std::uint8_t v = mask.pixels[i];
    odd += v != 0 && v != 255;
    s.mask[i] = v >= 128;
  }
  if (odd && opt.strict) throw Error(Errc::invalid_argument, s.id + ": mask holds " + std::to_string(odd) + " values other than 0/255");
  if (report) report->nonbinary_mask_pixels += odd;
  return s;
}

inline Sample load_image_mask(const std::string& image_path, const std::string& mask_path, const LoadOptions& opt = {}, LoadReport* report = nullptr) {
  return sample_from_netpbm(read_netpbm_file(image_path, "P6"), read_netpbm_file(mask_path, "P5"),
                            std::filesystem::path(image_path).stem().string(), opt, report);
}

inline void save_image_mask(const Sample& s, const std::string& image_path, const std::string& mask_path) {
  const std::size_t h = s.height(), w = s.width(), plane = h * w;
  NetpbmImage img{w, h, 3, std::vector<std::uint8_t>(plane * 3)};
  NetpbmImage mask{w, h, 1, std::vector<std::uint8_t>(plane)};
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) img.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(s.image[c * plane + i], 0.0f, 1.0f) * 255.0f));
    mask.pixels[i] = s.mask[i] ? 255 : 0;
  }
  write_netpbm_file(image_path, img);
  write_netpbm_file(mask_path, mask);
}

/// Manifest lines are `image_path<TAB>mask_path`; relative paths resolve
/// against the manifest's directory. Blank lines and `#` comments are skipped.
inline std::vector<std::pair<std::string, std::string>> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(Errc::io_failure, "cannot open manifest " + path);
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(f, line)) {
    ++no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(Errc::invalid_config, path + ":" + std::to_string(no) + ": expected image<TAB>mask");
    auto resolve = [&](std::string p) { return std::filesystem::path(p).is_absolute() ? p : (base / p).string(); };
    out.emplace_back(resolve(line.substr(0, tab)), resolve(line.substr(tab + 1)));
  }
  return out;
}

inline std::vector<Sample> load_manifest(const std::string& path, const LoadOptions& opt = {}, LoadReport* report = nullptr) {
  std::vector<Sample> out;
  for (const auto& [img, mask] : read_manifest(path)) out.push_back(load_image_mask(img, mask, opt, report));
  return out;
}

// ---------------------------------------------------------------------------
// Splitting and resizing

struct SplitFractions {
  double train = 0.70, val = 0.15, test = 0.15;

  void validate() const {
    if (train < 0.0 || val < 0.0 || test < 0.0 || std::abs(train + val + test - 1.0) > 1e-6)
      throw Error(Errc::fraction_sum, "split fractions must be non-negative and sum to 1");
  }
};

struct Split {
  std::vector<Sample> train, val, test;
};

/// Seeded shuffle, then contiguous slices. Train and val take floor(f*n);
/// test absorbs the rounding remainder.
inline std::vector<std::size_t> split_sizes(std::size_t n, const SplitFractions& f) {
  f.validate();
  const auto take = [n](double frac) { return static_cast<std::size_t>(std::floor(frac * double(n) + 1e-9)); };
  const std::size_t a = std::min(take(f.train), n);
  const std::size_t b = std::min(take(f.val), n - a);
  return {a, b, n - a - b};
}

inline Split split(std::vector<Sample> samples, const SplitFractions& f, std::uint64_t seed) {
  const auto sizes = split_sizes(samples.size(), f);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the permutation is stable across standard libraries.
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  Split out;
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& dst = k < sizes[0] ? out.train : k < sizes[0] + sizes[1] ? out.val : out.test;
    dst.push_back(std::move(samples[order[k]]));
  }
  return out;
}

/// Bilinear for the image, nearest neighbour for the mask.
inline Sample resize_bilinear(const Sample& s, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw Error(Errc::invalid_argument, "resize target must be at least 1x1");
  if (h == s.height() && w == s.width()) return s;
  Sample out{bilinear_resize(s.image, h, w), std::vector<std::uint8_t>(h * w), s.id};
  const std::size_t ih = s.height(), iw = s.width();
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t sy = std::min(ih - 1, static_cast<std::size_t>((double(y) + 0.5) * double(ih) / double(h)));
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t sx = std::min(iw - 1, static_cast<std::size_t>((double(x) + 0.5) * double(iw) / double(w)));
      out.mask[y * w + x] = s.mask[sy * iw + sx];
    }
  }
  return out;
}

/// Stacks samples [begin, end) into an N x 3 x H x W batch and an N*H*W mask.
inline std::pair<Tensor, std::vector<std::uint8_t>> make_batch(std::span<const Sample> samples) {
  if (samples.empty()) throw Error(Errc::invalid_argument, "empty batch");
  const std::size_t h = samples[0].height(), w = samples[0].width(), per = 3 * h * w;
  Tensor x({samples.size(), 3, h, w});
  std::vector<std::uint8_t> m;
  m.reserve(samples.size() * h * w);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    if (samples[k].height() != h || samples[k].width() != w) throw Error(Errc::dimension_mismatch, "batch mixes image sizes");
    std::copy(samples[k].image.data().begin(), samples[k].image.data().end(), x.ptr() + k * per);
    m.insert(m.end(), samples[k].mask.begin(), samples[k].mask.end());
  }
  return {std::move(x), std::move(m)};
}

}  // namespace ember
