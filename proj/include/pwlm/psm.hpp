#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pwlm/corpus.hpp"
#include "pwlm/mc_estimator.hpp"
#include "pwlm/model.hpp"
#include "pwlm/quantize.hpp"

namespace pwlm {

inline constexpr std::uint32_t kBundleVersion = 1;

// One stored tensor. Exactly one of the payload vectors is filled, matching
// `dtype`: f32 (fp32 mode and all layer-norm parameters), f16 or i8.
struct BundleTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::string dtype;
  double scale = 0.0;  // i8 only
  std::vector<float> f32;
  std::vector<std::uint16_t> f16;
  std::vector<std::int8_t> i8;

  std::size_t size() const noexcept;
  std::size_t byte_size() const noexcept;
  bool operator==(const BundleTensor&) const = default;
};

// Self-contained strength meter: quantized weights, the Monte Carlo table
// and the scaling factor.
//
// File layout: "PSMB" | u32 version | u32 manifest length | manifest JSON
// (sorted keys, no whitespace, space-padded so the payload starts on a
// 4-byte boundary) | tensors in manifest order, each 4-byte aligned |
// estimator log-probs, log10 sums, log10 square sums (float32). Offsets in
// the manifest are relative to the payload start. With zip set the whole
// file is additionally gzip-compressed.
class PsmBundle {
 public:
  // The model's parameters are first rounded to float32 (checkpoint values).
  static PsmBundle create(const Decoder& model, const MonteCarloEstimator& est,
                          QuantizationMode mode, double scaling_factor = 1.0);

  const ModelConfig& config() const noexcept { return model_.config(); }
  QuantizationMode mode() const noexcept { return mode_; }
  double scaling_factor() const noexcept { return scaling_factor_; }
  // Throws ConfigError unless f >= 1 and finite.
  void set_scaling_factor(double f);
  const std::string& model_id() const noexcept { return model_id_; }

  const std::vector<BundleTensor>& tensors() const noexcept { return tensors_; }
  const MonteCarloEstimator& estimator() const noexcept { return estimator_; }
  // Decoder holding the dequantized weights.
  const Decoder& model() const noexcept { return model_; }
  void set_threads(std::size_t threads) { model_.set_threads(threads); }

  // Bytes of quantized tensor data, excluding padding and the estimator.
  std::size_t weight_bytes() const noexcept;

  nlohmann::json manifest() const;
  // Uncompressed PSMB bytes, independent of the zip flag.
  std::vector<std::uint8_t> serialize_raw() const;
  // What gets written to disk: serialize_raw(), gzipped when zip is set.
  std::vector<std::uint8_t> serialize() const;
  // Accepts raw or gzipped bundles.
  static PsmBundle parse(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static PsmBundle load(const std::filesystem::path& path);

 private:
  PsmBundle(std::vector<BundleTensor> tensors, const ModelConfig& cfg);

  std::vector<BundleTensor> tensors_;
  MonteCarloEstimator estimator_;
  QuantizationMode mode_;
  double scaling_factor_ = 1.0;
  std::string model_id_;
  Decoder model_;
};

inline constexpr int kMaxDecade = 20;

// floor(log10 g) clamped to [0, 20]; g < 1 maps to 0.
int decade_bin(double guesses);

struct StrengthReport {
  double log_prob = 0.0;
  double raw_guesses = 0.0;     // estimator output before scaling
  double guesses = 1.0;         // max(1, raw / f)
  double log10_guesses = 0.0;   // log10(guesses), finite even when guesses overflows
  int bin = 0;
  double standard_error = 0.0;  // of `guesses`, scaled by 1/f
};

// Throws EncodingError (with the byte position) for characters outside the
// alphabet and BoundsError for passwords longer than the context allows.
StrengthReport psm_strength(const PsmBundle& bundle, std::string_view pw);

// Scaled guess numbers max(1, raw / f), with the same arithmetic as
// psm_strength.
double scale_guesses(double raw, double f);

// Minimum guess number across models; Error on an empty list.
double min_guess(std::span<const std::pair<std::string, double>> estimates);
// Element-wise MinGuess over several models' per-password estimates;
// unscorable entries are skipped, nullopt if no model can score.
std::vector<std::optional<double>> min_guess(
    std::span<const std::vector<std::optional<double>>> per_model);

struct ErrorMatrix {
  // counts[oracle_bin][psm_bin]
  std::array<std::array<std::size_t, kMaxDecade + 1>, kMaxDecade + 1> counts{};
  std::size_t safe = 0;      // psm bin below the oracle's
  std::size_t unsafe = 0;    // psm bin above the oracle's
  std::size_t accurate = 0;
  std::size_t total = 0;

  double safe_rate() const noexcept;
  double unsafe_rate() const noexcept;
  double accurate_rate() const noexcept;
  nlohmann::json to_json() const;
};

// `psm` holds scaled PSM guess numbers. Error naming the first index whose
// oracle entry is missing.
ErrorMatrix error_matrix(std::span<const double> psm, std::span<const std::optional<double>> oracle);

// Raw (unscaled) bundle estimates for every password.
std::vector<double> psm_raw_guesses(const PsmBundle& bundle, const Corpus& test,
                                    std::size_t threads = 1);

// Safe-error count of the PSM at factor f.
std::size_t safe_errors(std::span<const double> raw, std::span<const std::optional<double>> oracle,
                        double f);

struct Calibration {
  double factor = 1.0;
  std::size_t safe_count = 0;
};

// Smallest f >= 1 whose safe-error count reaches `reference_safe`. Each
// password turns into a safe error at its own threshold factor, so the count
// rises one password at a time except where thresholds tie. Error, quoting
// the best achievable count, when the target is out of reach.
Calibration calibrate_scaling(std::span<const double> raw,
                              std::span<const std::optional<double>> oracle,
                              std::size_t reference_safe);

}  // namespace pwlm
