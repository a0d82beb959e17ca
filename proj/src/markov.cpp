#include "pwlm/markov.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "binary_io.hpp"
#include "parallel.hpp"
#include "pwlm/error.hpp"

namespace pwlm {

namespace {

constexpr char kMagic[4] = {'N', 'G', 'R', 'M'};
constexpr std::uint32_t kVersion = 1;

int symbol_of(char c) { return static_cast<unsigned char>(c) - 0x20; }

void put_varint(detail::ByteWriter& w, std::uint64_t v) {
  while (v >= 0x80) {
    w.pod(static_cast<std::uint8_t>(v | 0x80));
    v >>= 7;
  }
  w.pod(static_cast<std::uint8_t>(v));
}

std::uint64_t get_varint(detail::ByteReader& r) {
  std::uint64_t v = 0;
  for (int shift = 0; shift < 64; shift += 7) {
    auto b = r.pod<std::uint8_t>();
    v |= static_cast<std::uint64_t>(b & 0x7F) << shift;
    if (!(b & 0x80)) return v;
  }
  throw FormatError("n-gram file: varint overflow");
}

}  // namespace

void NgramModel::Counts::add(std::uint8_t sym, std::uint64_t n) {
  total += n;
  auto it = std::lower_bound(next.begin(), next.end(), sym,
                             [](const auto& e, std::uint8_t s) { return e.first < s; });
  if (it != next.end() && it->first == sym) {
    it->second += n;
  } else {
    next.insert(it, {sym, n});
  }
}

std::uint64_t NgramModel::Counts::get(std::uint8_t sym) const {
  auto it = std::lower_bound(next.begin(), next.end(), sym,
                             [](const auto& e, std::uint8_t s) { return e.first < s; });
  return it != next.end() && it->first == sym ? it->second : 0;
}

NgramModel train_ngram(const Corpus& data, const NgramOptions& opts) {
  if (opts.order < 2) throw ConfigError("n-gram order must be >= 2");
  if (!(opts.delta > 0.0)) throw ConfigError("Laplace delta must be > 0");
  if (data.empty()) throw Error("cannot train an n-gram model on an empty corpus");
  NgramModel m;
  m.opts_ = opts;
  const std::size_t h = opts.order - 1;
  for (const auto& pw : data) {
    const std::string padded = std::string(h, NgramModel::kStartMarker) + pw;
    for (std::size_t i = 0; i <= pw.size(); ++i) {
      const auto sym = static_cast<std::uint8_t>(i < pw.size() ? symbol_of(pw[i]) : NgramModel::kEnd);
      std::string_view history(padded.data() + i, h);  // the h symbols before position i
      for (std::size_t k = 0; k <= h; ++k) {
        m.table_[std::string(history.substr(h - k))].add(sym, 1);
      }
    }
  }
  return m;
}

std::uint64_t NgramModel::context_total(std::string_view context) const {
  auto it = table_.find(std::string(context));
  return it == table_.end() ? 0 : it->second.total;
}

std::uint64_t NgramModel::transition_count(std::string_view context, int symbol) const {
  auto it = table_.find(std::string(context));
  return it == table_.end() ? 0 : it->second.get(static_cast<std::uint8_t>(symbol));
}

std::string NgramModel::padded(std::string_view prefix) const {
  std::string s(opts_.order - 1, kStartMarker);
  s += prefix;
  return s;
}

std::string_view NgramModel::backoff_context(std::string_view padded_history) const {
  const std::size_t h = std::min(opts_.order - 1, padded_history.size());
  for (std::size_t k = h; k > 0; --k) {
    auto ctx = padded_history.substr(padded_history.size() - k);
    if (context_total(ctx) >= opts_.backoff_threshold) return ctx;
  }
  return padded_history.substr(padded_history.size());
}

double NgramModel::prob_from(std::string_view context, int symbol) const {
  auto it = table_.find(std::string(context));
  const double total = it == table_.end() ? 0.0 : static_cast<double>(it->second.total);
  const double count =
      it == table_.end() ? 0.0 : static_cast<double>(it->second.get(static_cast<std::uint8_t>(symbol)));
  return (count + opts_.delta) / (total + kSymbols * opts_.delta);
}

std::array<double, NgramModel::kSymbols> NgramModel::distribution(std::string_view prefix) const {
  const std::string hist = padded(prefix);
  const auto ctx = backoff_context(hist);
  std::array<double, kSymbols> out{};
  for (int s = 0; s < kSymbols; ++s) out[static_cast<std::size_t>(s)] = prob_from(ctx, s);
  return out;
}

bool NgramModel::can_score(std::string_view pw) const {
  return std::all_of(pw.begin(), pw.end(),
                     [](char c) { return is_printable_ascii(static_cast<unsigned char>(c)); });
}

double NgramModel::prefix_log_prob(std::string_view prefix) const {
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (!is_printable_ascii(static_cast<unsigned char>(prefix[i]))) {
      throw EncodingError("invalid character at position " + std::to_string(i), i);
    }
  }
  const std::string hist = padded(prefix);
  const std::size_t h = opts_.order - 1;
  double lp = 0.0;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    auto ctx = backoff_context(std::string_view(hist).substr(0, h + i));
    lp += std::log(prob_from(ctx, symbol_of(prefix[i])));
  }
  return lp;
}

double NgramModel::log_prob(std::string_view pw) const {
  const double lp = prefix_log_prob(pw);
  const std::string hist = padded(pw);
  return lp + std::log(prob_from(backoff_context(hist), kEnd));
}

std::vector<Sample> NgramModel::sample(std::size_t n, std::uint64_t seed) const {
  std::vector<Sample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 rng(detail::mix_seed(seed, i));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Sample s;
    std::string hist = padded("");
    while (true) {
      const auto ctx = backoff_context(hist);
      const double u = unif(rng);
      double acc = 0.0;
      int sym = kEnd;
      for (int k = 0; k < kSymbols; ++k) {
        acc += prob_from(ctx, k);
        if (u < acc) {
          sym = k;
          break;
        }
      }
      if (sym == kEnd) break;
      if (s.text.size() == opts_.max_sample_length) {
        s.status = SampleStatus::kTruncated;
        break;
      }
      s.text.push_back(static_cast<char>(sym + 0x20));
      hist.push_back(static_cast<char>(sym + 0x20));
    }
    s.log_prob = s.status == SampleStatus::kOk ? log_prob(s.text) : prefix_log_prob(s.text);
    out[i] = std::move(s);
  }
  return out;
}

std::vector<std::uint8_t> NgramModel::serialize() const {
  nlohmann::json manifest{{"format_version", kVersion},
                          {"order", opts_.order},
                          {"delta", opts_.delta},
                          {"backoff_threshold", opts_.backoff_threshold},
                          {"max_sample_length", opts_.max_sample_length},
                          {"charset", "printable-ascii-95"},
                          {"model_id", model_id_},
                          {"contexts", table_.size()}};
  std::vector<const std::pair<const std::string, Counts>*> entries;
  entries.reserve(table_.size());
  for (const auto& e : table_) entries.push_back(&e);
  std::sort(entries.begin(), entries.end(), [](auto* a, auto* b) { return a->first < b->first; });

  detail::ByteWriter w;
  w.bytes(kMagic, 4);
  w.pod(kVersion);
  w.prefixed(manifest.dump());
  for (const auto* e : entries) {
    w.pod(static_cast<std::uint8_t>(e->first.size()));
    w.text(e->first);
    put_varint(w, e->second.next.size());
    for (auto [sym, count] : e->second.next) {
      w.pod(sym);
      put_varint(w, count);
    }
  }
  return w.take();
}

NgramModel NgramModel::parse(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, "n-gram file");
  auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("not an n-gram model file");
  if (r.pod<std::uint32_t>() != kVersion) throw FormatError("unsupported n-gram file version");
  NgramModel m;
  std::size_t contexts = 0;
  try {
    auto manifest = nlohmann::json::parse(r.prefixed());
    m.opts_.order = manifest.at("order");
    m.opts_.delta = manifest.at("delta");
    m.opts_.backoff_threshold = manifest.at("backoff_threshold");
    m.opts_.max_sample_length = manifest.value("max_sample_length", std::size_t{64});
    m.model_id_ = manifest.value("model_id", std::string("ngram"));
    contexts = manifest.at("contexts");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("n-gram manifest: ") + e.what());
  }
  for (std::size_t i = 0; i < contexts; ++i) {
    auto len = r.pod<std::uint8_t>();
    auto key = r.bytes(len);
    Counts c;
    const auto entries = get_varint(r);
    for (std::uint64_t j = 0; j < entries; ++j) {
      auto sym = r.pod<std::uint8_t>();
      if (sym >= kSymbols) throw FormatError("n-gram file: symbol out of range");
      c.add(sym, get_varint(r));
    }
    m.table_.emplace(std::string(key.begin(), key.end()), std::move(c));
  }
  if (r.remaining() != 0) throw FormatError("n-gram file: trailing bytes");
  return m;
}

void NgramModel::save(const std::filesystem::path& path) const {
  detail::write_file(path.string(), serialize());
}

NgramModel NgramModel::load(const std::filesystem::path& path) {
  return parse(detail::read_file(path.string()));
}

}  // namespace pwlm
