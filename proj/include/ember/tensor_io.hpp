#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ember/error.hpp"
#include "ember/half.hpp"
#include "ember/tensor.hpp"

namespace ember {

// Little-endian primitives shared by the tensor, model and checkpoint files.
namespace binio {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw Error(Errc::io_failure, "write failed");
}

template <class U>
void put_le(std::ostream& os, U v) {
  std::array<unsigned char, sizeof(U)> b{};
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFFu);
  put_bytes(os, b.data(), b.size());
}

inline void put_u8(std::ostream& os, std::uint8_t v) { put_le(os, v); }
inline void put_u16(std::ostream& os, std::uint16_t v) { put_le(os, v); }
inline void put_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
inline void put_u64(std::ostream& os, std::uint64_t v) { put_le(os, v); }
inline void put_i32(std::ostream& os, std::int32_t v) { put_le(os, static_cast<std::uint32_t>(v)); }
inline void put_f32(std::ostream& os, float v) { put_le(os, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }

inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  put_bytes(os, s.data(), s.size());
}

inline void get_bytes(std::istream& is, void* p, std::size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw Error(Errc::corrupt_file, "unexpected end of data");
}

template <class U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> b{};
  get_bytes(is, b.data(), b.size());
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<U>(v);
}

inline std::uint8_t get_u8(std::istream& is) { return get_le<std::uint8_t>(is); }
inline std::uint16_t get_u16(std::istream& is) { return get_le<std::uint16_t>(is); }
inline std::uint32_t get_u32(std::istream& is) { return get_le<std::uint32_t>(is); }
inline std::uint64_t get_u64(std::istream& is) { return get_le<std::uint64_t>(is); }
inline std::int32_t get_i32(std::istream& is) { return static_cast<std::int32_t>(get_u32(is)); }
inline float get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

inline std::string get_str(std::istream& is, std::size_t max_len = 1u << 20) {
  const std::uint32_t n = get_u32(is);
  if (n > max_len) throw Error(Errc::corrupt_file, "string length out of bounds");
  std::string s(n, '\0');
  get_bytes(is, s.data(), n);
  return s;
}

inline void expect_magic(std::istream& is, const char (&magic)[5], const char* what) {
  char m[4];
  get_bytes(is, m, 4);
  if (std::memcmp(m, magic, 4) != 0) throw Error(Errc::corrupt_file, std::string("bad magic, not a ") + what);
}

}  // namespace binio

inline constexpr std::uint8_t kTensorFormatVersion = 1;
inline constexpr std::size_t kTensorHeaderBytes = 24;
inline constexpr std::size_t kMaxTensorElements = std::size_t(1) << 31;

/// Serialized size of a QuantParams block, excluding its length prefix.
inline std::size_t quant_block_bytes(const QuantParams& p) { return 20 + 4 * p.scale.size(); }

/// Layout (little-endian):
///   "EMBT" | u8 dtype | u8 version | u16 reserved | u32 n,c,h,w
///   elements: f32, binary16 bit patterns, or int8 codes
///   i8 only: u32 block length | u8 granularity | u8 symmetric | u8 axis |
///            u8 reserved | i32 zero_point | i32 qmin | i32 qmax |
///            u32 scale count | f32 scales
inline void write_tensor(std::ostream& os, const Tensor& t) {
  using namespace binio;
  put_bytes(os, "EMBT", 4);
  put_u8(os, static_cast<std::uint8_t>(t.dtype()));
  put_u8(os, kTensorFormatVersion);
  put_u16(os, 0);
  const Shape& s = t.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w}) put_u32(os, static_cast<std::uint32_t>(d));

  std::vector<unsigned char> payload;
  payload.reserve(t.nbytes());
  for (float v : t.data()) {
    switch (t.dtype()) {
      case DType::F32: {
        const auto u = std::bit_cast<std::uint32_t>(v);
        for (int i = 0; i < 4; ++i) payload.push_back(static_cast<unsigned char>(u >> (8 * i)));
        break;
      }
      case DType::F16: {
        const auto u = to_half(v).bits;
        payload.push_back(static_cast<unsigned char>(u & 0xFF));
        payload.push_back(static_cast<unsigned char>(u >> 8));
        break;
      }
      case DType::I8:
        payload.push_back(static_cast<unsigned char>(static_cast<std::int8_t>(v)));
        break;
    }
  }
  put_bytes(os, payload.data(), payload.size());

  if (t.dtype() == DType::I8) {
    const QuantParams& p = *t.quant();
    put_u32(os, static_cast<std::uint32_t>(quant_block_bytes(p)));
    put_u8(os, static_cast<std::uint8_t>(p.granularity));
    put_u8(os, p.symmetric ? 1 : 0);
    put_u8(os, p.axis);
    put_u8(os, 0);
    put_i32(os, p.zero_point);
    put_i32(os, p.qmin);
    put_i32(os, p.qmax);
    put_u32(os, static_cast<std::uint32_t>(p.scale.size()));
    for (float sc : p.scale) put_f32(os, sc);
  }
}

inline Tensor read_tensor(std::istream& is) {
  using namespace binio;
  expect_magic(is, "EMBT", "tensor");
  const std::uint8_t code = get_u8(is);
  const std::uint8_t version = get_u8(is);
  get_u16(is);
  if (version != kTensorFormatVersion) throw Error(Errc::version_mismatch, "tensor format version " + std::to_string(version));
  if (code > 2) throw Error(Errc::corrupt_file, "unknown dtype code " + std::to_string(code));
  const auto dtype = static_cast<DType>(code);
  Shape s;
  s.n = get_u32(is);
  s.c = get_u32(is);
  s.h = get_u32(is);
  s.w = get_u32(is);
  // Guard the product against overflow before trusting it.
  std::size_t numel = 1;
  for (std::size_t d : {s.n, s.c, s.h, s.w}) {
    if (d != 0 && numel > kMaxTensorElements / d) throw Error(Errc::corrupt_file, "tensor dims too large");
    numel *= d;
  }

  std::vector<unsigned char> payload(numel * dtype_size(dtype));
  get_bytes(is, payload.data(), payload.size());
  std::vector<float> values(numel);
  for (std::size_t i = 0; i < numel; ++i) {
    switch (dtype) {
      case DType::F32: {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= std::uint32_t(payload[4 * i + b]) << (8 * b);
        values[i] = std::bit_cast<float>(u);
        break;
      }
      case DType::F16: {
        const auto u = static_cast<std::uint16_t>(payload[2 * i] | (payload[2 * i + 1] << 8));
        values[i] = from_half(Half{u});
        break;
      }
      case DType::I8:
        values[i] = static_cast<std::int8_t>(payload[i]);
        break;
    }
  }

  if (dtype == DType::F32) return Tensor(s, values);
  if (dtype == DType::F16) return Tensor::f16(s, values);

  const std::uint32_t block = get_u32(is);
  QuantParams p;
  const std::uint8_t gran = get_u8(is);
  if (gran > 1) throw Error(Errc::corrupt_file, "unknown granularity");
  p.granularity = static_cast<Granularity>(gran);
  p.symmetric = get_u8(is) != 0;
  p.axis = get_u8(is);
  get_u8(is);
  p.zero_point = get_i32(is);
  p.qmin = get_i32(is);
  p.qmax = get_i32(is);
  const std::uint32_t count = get_u32(is);
  if (count > (1u << 24) || block != 20 + 4 * count) throw Error(Errc::corrupt_file, "quant params block length mismatch");
  p.scale.resize(count);
  for (auto& sc : p.scale) sc = get_f32(is);
  if (p.axis > 1) throw Error(Errc::corrupt_file, "quant axis out of range");
  std::vector<std::int8_t> codes(numel);
  for (std::size_t i = 0; i < numel; ++i) codes[i] = static_cast<std::int8_t>(values[i]);
  try {
    return Tensor::i8(s, codes, std::move(p));
  } catch (const Error& e) {
    throw Error(Errc::corrupt_file, e.what());
  }
}

inline void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(Errc::io_failure, "cannot open " + path);
  write_tensor(os, t);
}

inline Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::io_failure, "cannot open " + path);
  return read_tensor(is);
}

}  // namespace ember
