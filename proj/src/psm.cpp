#include "pwlm/psm.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "binary_io.hpp"
#include "parallel.hpp"
#include "pwlm/checkpoint.hpp"
#include "pwlm/error.hpp"
#include "pwlm/tokenizer.hpp"

namespace pwlm {

namespace {

constexpr char kMagic[4] = {'P', 'S', 'M', 'B'};

std::size_t align4(std::size_t n) { return (n + 3) & ~std::size_t{3}; }

bool is_gzip(std::span<const std::uint8_t> b) {
  return b.size() >= 2 && b[0] == 0x1f && b[1] == 0x8b;
}

std::vector<std::uint8_t> gzip(std::span<const std::uint8_t> in) {
  z_stream zs{};
  if (deflateInit2(&zs, 9, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    throw Error("zlib: deflateInit2 failed");
  }
  std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(in.size())) + 32);
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw Error("zlib: compression failed");
  out.resize(zs.total_out);
  return out;
}

std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> in) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw Error("zlib: inflateInit2 failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::vector<std::uint8_t> out;
  std::uint8_t chunk[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = chunk;
    zs.avail_out = sizeof chunk;
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw FormatError("bundle: corrupt compressed stream");
    }
    out.insert(out.end(), chunk, chunk + (sizeof chunk - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw FormatError("bundle: truncated compressed stream");
    }
  }
  inflateEnd(&zs);
  return out;
}

std::vector<double> dequantize(const BundleTensor& t) {
  std::vector<double> out(t.size());
  if (t.dtype == "f32") {
    std::copy(t.f32.begin(), t.f32.end(), out.begin());
  } else if (t.dtype == "f16") {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = half_to_float(t.f16[i]);
  } else {
    out = dequantize_int8({t.scale, t.i8});
  }
  return out;
}

std::string_view stored_dtype(Precision p, bool layer_norm) {
  if (layer_norm || p == Precision::kFp32) return "f32";
  return p == Precision::kFp16 ? "f16" : "i8";
}

}  // namespace

std::size_t BundleTensor::size() const noexcept {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::size_t BundleTensor::byte_size() const noexcept {
  return f32.size() * 4 + f16.size() * 2 + i8.size();
}

PsmBundle::PsmBundle(std::vector<BundleTensor> tensors, const ModelConfig& cfg)
    : tensors_(std::move(tensors)), model_(cfg) {
  const auto& layout = model_.layout().tensors();
  if (layout.size() != tensors_.size()) throw FormatError("bundle tensor directory does not match the config");
  auto params = model_.parameters();
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& t = tensors_[i];
    if (t.name != layout[i].name || t.shape != layout[i].shape) {
      throw FormatError("bundle tensor '" + layout[i].name + "' has an unexpected layout");
    }
    auto values = dequantize(t);
    std::copy(values.begin(), values.end(), params.begin() + static_cast<std::ptrdiff_t>(layout[i].offset));
  }
}

PsmBundle PsmBundle::create(const Decoder& model, const MonteCarloEstimator& est,
                            QuantizationMode mode, double scaling_factor) {
  std::vector<BundleTensor> tensors;
  const auto params = model.parameters();
  for (const auto& info : model.layout().tensors()) {
    BundleTensor t;
    t.name = info.name;
    t.shape = info.shape;
    t.dtype = stored_dtype(mode.kind, info.is_layer_norm);
    std::vector<float> w(info.size);
    for (std::size_t j = 0; j < info.size; ++j) w[j] = static_cast<float>(params[info.offset + j]);
    if (t.dtype == "f32") {
      t.f32 = std::move(w);
    } else if (t.dtype == "f16") {
      t.f16.resize(w.size());
      for (std::size_t j = 0; j < w.size(); ++j) {
        t.f16[j] = float_to_half(w[j]);
        if ((t.f16[j] & 0x7C00u) == 0x7C00u) throw Error("weight in '" + t.name + "' exceeds the fp16 range");
      }
    } else {
      auto q = quantize_int8(w);
      t.scale = q.scale;
      t.i8 = std::move(q.codes);
    }
    tensors.push_back(std::move(t));
  }
  PsmBundle b(std::move(tensors), model.config());
  b.estimator_ = est;
  b.mode_ = mode;
  b.model_id_ = model.model_id();
  b.model_.set_model_id(model.model_id());
  b.set_scaling_factor(scaling_factor);
  return b;
}

void PsmBundle::set_scaling_factor(double f) {
  if (!std::isfinite(f) || f < 1.0) throw ConfigError("scaling factor must be a finite number >= 1");
  scaling_factor_ = f;
}

std::size_t PsmBundle::weight_bytes() const noexcept {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.byte_size();
  return n;
}

nlohmann::json PsmBundle::manifest() const {
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : tensors_) {
    nlohmann::json e{{"name", t.name},
                     {"shape", t.shape},
                     {"dtype", t.dtype},
                     {"offset", offset},
                     {"bytes", t.byte_size()}};
    if (t.dtype == "i8") e["scale"] = t.scale;
    tensors.push_back(std::move(e));
    offset = align4(offset + t.byte_size());
  }
  const std::size_t k = estimator_.contributing();
  nlohmann::json est{{"model_id", estimator_.model_id()},
                     {"n", estimator_.n()},
                     {"seed", estimator_.seed()},
                     {"contributing", k},
                     {"log_probs_offset", offset},
                     {"log10_cumulative_offset", offset + 4 * k},
                     {"log10_cumulative_sq_offset", offset + 8 * k}};
  return {{"format_version", kBundleVersion},
          {"config", config_to_json(config())},
          {"vocabulary", vocabulary()},
          {"model_id", model_id_},
          {"quantization", {{"kind", precision_name(mode_.kind)}, {"zip", mode_.zip}}},
          {"scaling_factor", scaling_factor_},
          {"tensors", tensors},
          {"estimator", est},
          {"payload_bytes", offset + 12 * k}};
}

std::vector<std::uint8_t> PsmBundle::serialize_raw() const {
  std::string text = manifest().dump();
  // magic + version + length = 12 bytes, so pad the text to a multiple of 4.
  text.resize(align4(text.size()), ' ');
  detail::ByteWriter w;
  w.bytes(kMagic, 4);
  w.pod(kBundleVersion);
  w.prefixed(text);
  const std::size_t payload_start = w.size();
  for (const auto& t : tensors_) {
    w.array<float>(t.f32);
    w.array<std::uint16_t>(t.f16);
    w.array<std::int8_t>(t.i8);
    while ((w.size() - payload_start) % 4 != 0) w.pod<std::uint8_t>(0);
  }
  w.array<float>(estimator_.log_probs());
  w.array<float>(estimator_.log10_cumulative());
  w.array<float>(estimator_.log10_cumulative_sq());
  return w.take();
}

std::vector<std::uint8_t> PsmBundle::serialize() const {
  auto raw = serialize_raw();
  return mode_.zip ? gzip(raw) : raw;
}

PsmBundle PsmBundle::parse(std::span<const std::uint8_t> input) {
  std::vector<std::uint8_t> inflated;
  bool zipped = false;
  if (is_gzip(input)) {
    inflated = gunzip(input);
    input = inflated;
    zipped = true;
  }
  detail::ByteReader r(input, "bundle");
  auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("not a PSM bundle (bad magic)");
  const auto version = r.pod<std::uint32_t>();
  if (version != kBundleVersion) throw FormatError("unsupported bundle version " + std::to_string(version));

  try {
    const auto m = nlohmann::json::parse(r.prefixed());
    if (m.at("vocabulary").get<std::vector<std::string>>() != vocabulary()) {
      throw FormatError("bundle vocabulary does not match this build");
    }
    const ModelConfig cfg = config_from_json(m.at("config"));
    QuantizationMode mode;
    mode.kind = precision_from_name(m.at("quantization").at("kind").get<std::string>());
    mode.zip = m.at("quantization").at("zip").get<bool>();
    if (mode.zip != zipped) throw FormatError("bundle zip flag does not match its encoding");

    const ParameterLayout layout(cfg);
    const auto& dir = m.at("tensors");
    if (dir.size() != layout.tensors().size()) throw FormatError("bundle tensor directory does not match the config");
    const std::size_t payload_start = r.position();
    std::vector<BundleTensor> tensors;
    for (std::size_t i = 0; i < dir.size(); ++i) {
      const auto& e = dir[i];
      const auto& info = layout.tensors()[i];
      BundleTensor t;
      t.name = e.at("name").get<std::string>();
      t.shape = e.at("shape").get<std::vector<std::size_t>>();
      t.dtype = e.at("dtype").get<std::string>();
      if (t.name != info.name || t.shape != info.shape) {
        throw FormatError("bundle tensor '" + info.name + "' has an unexpected layout");
      }
      if (t.dtype != stored_dtype(mode.kind, info.is_layer_norm)) {
        throw FormatError("bundle tensor '" + t.name + "' has dtype " + t.dtype + " for mode " +
                          std::string(precision_name(mode.kind)));
      }
      if (e.at("offset").get<std::size_t>() != r.position() - payload_start) {
        throw FormatError("bundle tensor '" + t.name + "' is not at its recorded offset");
      }
      if (t.dtype == "f32") t.f32 = r.array<float>(info.size);
      else if (t.dtype == "f16") t.f16 = r.array<std::uint16_t>(info.size);
      else {
        t.scale = e.at("scale").get<double>();
        if (!std::isfinite(t.scale) || t.scale < 0) throw FormatError("bundle tensor '" + t.name + "' has a bad scale");
        t.i8 = r.array<std::int8_t>(info.size);
      }
      if (e.at("bytes").get<std::size_t>() != t.byte_size()) {
        throw FormatError("bundle tensor '" + t.name + "' has a wrong byte count");
      }
      r.bytes(align4(r.position() - payload_start) - (r.position() - payload_start));
      tensors.push_back(std::move(t));
    }

    const auto& em = m.at("estimator");
    const auto k = em.at("contributing").get<std::size_t>();
    if (em.at("log_probs_offset").get<std::size_t>() != r.position() - payload_start ||
        m.at("payload_bytes").get<std::size_t>() != r.position() - payload_start + 12 * k) {
      throw FormatError("bundle estimator table is not at its recorded offset");
    }
    auto lp = r.array<float>(k);
    auto cum = r.array<float>(k);
    auto cum_sq = r.array<float>(k);
    if (r.remaining() != 0) throw FormatError("bundle: trailing bytes");

    PsmBundle b(std::move(tensors), cfg);
    b.estimator_ = MonteCarloEstimator::from_tables(
        em.at("n").get<std::size_t>(), em.at("seed").get<std::uint64_t>(),
        em.at("model_id").get<std::string>(), std::move(lp), std::move(cum), std::move(cum_sq));
    b.mode_ = mode;
    b.model_id_ = m.at("model_id").get<std::string>();
    b.model_.set_model_id(b.model_id_);
    b.set_scaling_factor(m.at("scaling_factor").get<double>());
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bundle manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bundle manifest: ") + e.what());
  }
}

void PsmBundle::save(const std::filesystem::path& path) const {
  detail::write_file(path.string(), serialize());
}

PsmBundle PsmBundle::load(const std::filesystem::path& path) {
  return parse(detail::read_file(path.string()));
}

// ---------------------------------------------------------------------------

int decade_bin(double guesses) {
  if (!(guesses >= 1.0)) return 0;
  if (std::isinf(guesses)) return kMaxDecade;
  return std::clamp(static_cast<int>(std::floor(std::log10(guesses))), 0, kMaxDecade);
}

double scale_guesses(double raw, double f) { return std::max(1.0, raw / f); }

StrengthReport psm_strength(const PsmBundle& bundle, std::string_view pw) {
  encode(pw);
  const auto& model = bundle.model();
  if (pw.size() > model.max_password_length()) {
    throw BoundsError("password of length " + std::to_string(pw.size()) + " exceeds the meter's limit of " +
                      std::to_string(model.max_password_length()));
  }
  const auto& est = bundle.estimator();
  const double f = bundle.scaling_factor();
  StrengthReport rep;
  rep.log_prob = model.log_prob(pw);
  rep.raw_guesses = est.guess_number(rep.log_prob);
  rep.guesses = scale_guesses(rep.raw_guesses, f);
  rep.log10_guesses = std::isinf(rep.guesses)
                          ? std::max(0.0, est.log10_guess_number(rep.log_prob) - std::log10(f))
                          : std::log10(rep.guesses);
  rep.bin = std::isinf(rep.guesses) ? std::clamp(static_cast<int>(std::floor(rep.log10_guesses)), 0, kMaxDecade)
                                    : decade_bin(rep.guesses);
  rep.standard_error = est.standard_error(rep.log_prob) / f;
  return rep;
}

double min_guess(std::span<const std::pair<std::string, double>> estimates) {
  if (estimates.empty()) throw Error("MinGuess needs at least one model estimate");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [id, g] : estimates) best = std::min(best, g);
  return best;
}

std::vector<std::optional<double>> min_guess(
    std::span<const std::vector<std::optional<double>>> per_model) {
  if (per_model.empty()) throw Error("MinGuess needs at least one model");
  const std::size_t n = per_model.front().size();
  std::vector<std::optional<double>> out(n);
  for (const auto& m : per_model) {
    if (m.size() != n) throw Error("MinGuess inputs cover different password counts");
    for (std::size_t i = 0; i < n; ++i) {
      if (m[i] && (!out[i] || *m[i] < *out[i])) out[i] = m[i];
    }
  }
  return out;
}

double ErrorMatrix::safe_rate() const noexcept { return total ? double(safe) / double(total) : 0.0; }
double ErrorMatrix::unsafe_rate() const noexcept { return total ? double(unsafe) / double(total) : 0.0; }
double ErrorMatrix::accurate_rate() const noexcept { return total ? double(accurate) / double(total) : 0.0; }

nlohmann::json ErrorMatrix::to_json() const {
  return {{"counts", counts},          {"safe", safe},
          {"unsafe", unsafe},          {"accurate", accurate},
          {"total", total},            {"safe_rate", safe_rate()},
          {"unsafe_rate", unsafe_rate()}, {"accurate_rate", accurate_rate()}};
}

ErrorMatrix error_matrix(std::span<const double> psm, std::span<const std::optional<double>> oracle) {
  if (psm.size() != oracle.size()) throw Error("PSM and oracle estimates cover different password counts");
  ErrorMatrix m;
  for (std::size_t i = 0; i < psm.size(); ++i) {
    if (!oracle[i]) throw Error("oracle has no estimate for password #" + std::to_string(i));
    const int o = decade_bin(*oracle[i]);
    const int p = decade_bin(psm[i]);
    ++m.counts[o][p];
    if (p < o) ++m.safe;
    else if (p > o) ++m.unsafe;
    else ++m.accurate;
  }
  m.total = psm.size();
  return m;
}

std::vector<double> psm_raw_guesses(const PsmBundle& bundle, const Corpus& test, std::size_t threads) {
  std::vector<double> out(test.size());
  detail::parallel_chunks(test.size(), threads, [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) out[i] = psm_strength(bundle, test[i]).raw_guesses;
  });
  return out;
}

std::size_t safe_errors(std::span<const double> raw, std::span<const std::optional<double>> oracle, double f) {
  if (raw.size() != oracle.size()) throw Error("PSM and oracle estimates cover different password counts");
  std::size_t safe = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!oracle[i]) throw Error("oracle has no estimate for password #" + std::to_string(i));
    if (decade_bin(scale_guesses(raw[i], f)) < decade_bin(*oracle[i])) ++safe;
  }
  return safe;
}

namespace {

std::uint64_t bits_of(double x) { return std::bit_cast<std::uint64_t>(x); }
double from_bits(std::uint64_t b) { return std::bit_cast<double>(b); }

// Smallest double f >= 1 at which password i is a safe error, or +inf. The
// predicate is monotone in f, and positive doubles order like their bit
// patterns, so bisection over the bits finds the exact boundary.
double safe_threshold(double raw, double oracle) {
  const int ob = decade_bin(oracle);
  auto safe_at = [&](double f) { return decade_bin(scale_guesses(raw, f)) < ob; };
  if (safe_at(1.0)) return 1.0;
  if (ob == 0 || std::isinf(raw)) return std::numeric_limits<double>::infinity();
  double hi = std::max(2.0, 2.0 * raw / std::pow(10.0, ob));
  while (!safe_at(hi)) {
    if (std::isinf(hi)) return hi;
    hi *= 2.0;
  }
  std::uint64_t lo_bits = bits_of(1.0), hi_bits = bits_of(hi);  // !safe(lo), safe(hi)
  while (hi_bits - lo_bits > 1) {
    const std::uint64_t mid = lo_bits + (hi_bits - lo_bits) / 2;
    if (safe_at(from_bits(mid))) hi_bits = mid;
    else lo_bits = mid;
  }
  return from_bits(hi_bits);
}

}  // namespace

Calibration calibrate_scaling(std::span<const double> raw, std::span<const std::optional<double>> oracle,
                              std::size_t reference_safe) {
  if (reference_safe > raw.size()) throw ConfigError("reference safe-error count exceeds the corpus size");
  if (raw.size() != oracle.size()) throw Error("PSM and oracle estimates cover different password counts");
  std::vector<double> thresholds(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!oracle[i]) throw Error("oracle has no estimate for password #" + std::to_string(i));
    thresholds[i] = safe_threshold(raw[i], *oracle[i]);
  }
  std::sort(thresholds.begin(), thresholds.end());
  const double f = reference_safe == 0 ? 1.0 : thresholds[reference_safe - 1];
  if (std::isinf(f)) {
    const auto reachable = std::lower_bound(thresholds.begin(), thresholds.end(), f) - thresholds.begin();
    throw Error("safe-error target " + std::to_string(reference_safe) + " is unreachable; best achievable is " +
                std::to_string(reachable));
  }
  return {f, safe_errors(raw, oracle, f)};
}

}  // namespace pwlm
