#include "pwlm/quantize.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "pwlm/error.hpp"

namespace pwlm {

std::string_view precision_name(Precision p) {
  switch (p) {
    case Precision::kFp32: return "fp32";
    case Precision::kFp16: return "fp16";
    case Precision::kInt8: return "int8";
  }
  return "?";
}

Precision precision_from_name(std::string_view name) {
  if (name == "fp32") return Precision::kFp32;
  if (name == "fp16") return Precision::kFp16;
  if (name == "int8") return Precision::kInt8;
  throw ConfigError("unknown precision '" + std::string(name) + "' (expected fp32, fp16 or int8)");
}

std::uint16_t float_to_half(float f) {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
  const std::uint16_t sign = static_cast<std::uint16_t>((x >> 16) & 0x8000u);
  const std::uint32_t exp = (x >> 23) & 0xFFu;
  std::uint32_t mant = x & 0x7FFFFFu;

  if (exp == 0xFF) {  // inf / nan
    return static_cast<std::uint16_t>(sign | 0x7C00u | (mant ? 0x200u : 0u));
  }
  const int e = static_cast<int>(exp) - 127 + 15;
  if (e >= 31) return static_cast<std::uint16_t>(sign | 0x7C00u);

  if (e <= 0) {
    // Subnormal half (or zero). Shift the full significand into place.
    if (e < -10) return sign;
    mant |= 0x800000u;
    const int shift = 14 - e;  // 13 + (1 - e)
    std::uint32_t h = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1);
    const std::uint32_t half = 1u << (shift - 1);
    if (rem > half || (rem == half && (h & 1u))) ++h;
    return static_cast<std::uint16_t>(sign | h);
  }

  std::uint32_t h = (static_cast<std::uint32_t>(e) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;  // may carry into inf
  return static_cast<std::uint16_t>(sign | h);
}

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = (h & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1Fu;
  const std::uint32_t mant = h & 0x3FFu;
  if (exp == 0) {
    const float v = std::ldexp(static_cast<float>(mant), -24);
    return sign ? -v : v;
  }
  if (exp == 31) return std::bit_cast<float>(sign | 0x7F800000u | (mant << 13));
  return std::bit_cast<float>(sign | ((exp + 112) << 23) | (mant << 13));
}

Int8Tensor quantize_int8(std::span<const float> w) {
  Int8Tensor t;
  t.codes.assign(w.size(), 0);
  double max_abs = 0;
  for (float v : w) {
    if (!std::isfinite(v)) throw Error("cannot quantize a non-finite weight");
    max_abs = std::max(max_abs, std::abs(static_cast<double>(v)));
  }
  if (max_abs == 0) return t;
  // A float-valued scale makes code * scale and w - code * scale exact in
  // double, so the nearest code can be chosen exactly. It stays above
  // max/127.5, so clamping to +-127 never costs more than half a step.
  t.scale = static_cast<double>(static_cast<float>(max_abs / 127.0));
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double x = w[i];
    double best = std::clamp(std::round(x / t.scale), -127.0, 127.0);
    for (double c : {best - 1.0, best + 1.0}) {
      if (std::abs(c) <= 127.0 && std::abs(x - c * t.scale) < std::abs(x - best * t.scale)) best = c;
    }
    t.codes[i] = static_cast<std::int8_t>(best);
  }
  return t;
}

std::vector<double> dequantize_int8(const Int8Tensor& t) {
  std::vector<double> out(t.codes.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(t.codes[i]) * t.scale;
  return out;
}

}  // namespace pwlm
