#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pwlm {

enum class Precision { kFp32, kFp16, kInt8 };

std::string_view precision_name(Precision p);
// "fp32", "fp16" or "int8"; ConfigError otherwise.
Precision precision_from_name(std::string_view name);

struct QuantizationMode {
  Precision kind = Precision::kFp32;
  bool zip = false;  // gzip the serialized bundle
};

// IEEE binary16 conversion, round to nearest even, with subnormals.
// Values beyond the half range become infinities.
std::uint16_t float_to_half(float f);
float half_to_float(std::uint16_t h);

// Symmetric per-tensor int8: scale = max|w| / 127 rounded to float, code =
// the integer in [-127, 127] nearest to w / scale, so |w - code * scale| <=
// scale / 2 holds exactly. Exact halves round away from zero. An all-zero
// tensor has scale 0 and dequantizes to zeros.
struct Int8Tensor {
  double scale = 0.0;
  std::vector<std::int8_t> codes;
};

Int8Tensor quantize_int8(std::span<const float> w);
// code * scale, exact in double.
std::vector<double> dequantize_int8(const Int8Tensor& t);

}  // namespace pwlm
