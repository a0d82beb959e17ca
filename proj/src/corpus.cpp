#include "pwlm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "pwlm/error.hpp"

namespace pwlm {

void FilterPolicy::validate() const {
  if (min_length == 0 || min_length > max_length) {
    throw ConfigError("filter policy requires 0 < min_length <= max_length");
  }
}

Rejection check_password(std::string_view pw, const FilterPolicy& policy) noexcept {
  // Charset is checked first so a short line with a bad byte is reported as
  // a charset rejection.
  for (char ch : pw) {
    if (!is_printable_ascii(static_cast<unsigned char>(ch))) return Rejection::kCharset;
  }
  if (pw.size() < policy.min_length) return Rejection::kTooShort;
  if (pw.size() > policy.max_length) return Rejection::kTooLong;
  return Rejection::kNone;
}

std::string LoadReport::to_json() const {
  nlohmann::json j{{"lines_read", lines_read},
                   {"kept", kept},
                   {"rejected_short", rejected_short},
                   {"rejected_long", rejected_long},
                   {"rejected_charset", rejected_charset}};
  return j.dump();
}

Corpus::Corpus(std::vector<std::string> passwords, std::string source_label,
               FilterPolicy policy)
    : passwords_(std::move(passwords)),
      source_label_(std::move(source_label)),
      policy_(policy) {
  policy_.validate();
  for (std::size_t i = 0; i < passwords_.size(); ++i) {
    if (check_password(passwords_[i], policy_) != Rejection::kNone) {
      throw EncodingError("password #" + std::to_string(i) + " violates the filter policy", i);
    }
  }
}

Corpus Corpus::deduplicated() const {
  std::set<std::string_view> seen;
  std::vector<std::string> out;
  for (const auto& pw : passwords_) {
    if (seen.insert(pw).second) out.push_back(pw);
  }
  return Corpus(std::move(out), source_label_ + " [dedup]", policy_);
}

LoadResult parse_corpus(std::string_view text, std::string source_label,
                        const FilterPolicy& policy) {
  policy.validate();
  LoadReport report;
  std::vector<std::string> kept;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    std::size_t end = nl == std::string_view::npos ? text.size() : nl;
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++report.lines_read;
    switch (check_password(line, policy)) {
      case Rejection::kNone:
        kept.emplace_back(line);
        break;
      case Rejection::kTooShort:
        ++report.rejected_short;
        break;
      case Rejection::kTooLong:
        ++report.rejected_long;
        break;
      case Rejection::kCharset:
        ++report.rejected_charset;
        break;
    }
    pos = end + 1;
  }
  report.kept = kept.size();
  if (kept.empty()) throw Error("empty corpus: no line of '" + source_label + "' passed the filter");
  return {Corpus(std::move(kept), std::move(source_label), policy), report};
}

LoadResult load_corpus(const std::filesystem::path& path, const FilterPolicy& policy) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("error while reading " + path.string());
  return parse_corpus(buf.str(), path.filename().string(), policy);
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus file " + path.string());
  for (const auto& pw : corpus) out << pw << '\n';
  if (!out) throw IoError("error while writing " + path.string());
}

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace

Corpus sample_corpus(const Corpus& c, std::size_t n, std::uint64_t seed) {
  if (n > c.size()) {
    throw BoundsError("cannot sample " + std::to_string(n) + " passwords from a corpus of " +
                      std::to_string(c.size()));
  }
  auto idx = shuffled_indices(c.size(), seed);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(c[idx[i]]);
  return Corpus(std::move(out),
                c.source_label() + " [sample n=" + std::to_string(n) + " seed=" +
                    std::to_string(seed) + "]",
                c.policy());
}

std::pair<Corpus, Corpus> split_corpus(const Corpus& c, double train_fraction,
                                       std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie strictly between 0 and 1");
  }
  auto idx = shuffled_indices(c.size(), seed);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(c.size())));
  std::vector<std::string> train, rest;
  train.reserve(n_train);
  rest.reserve(c.size() - n_train);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    (i < n_train ? train : rest).push_back(c[idx[i]]);
  }
  return {Corpus(std::move(train), c.source_label() + " [train]", c.policy()),
          Corpus(std::move(rest), c.source_label() + " [heldout]", c.policy())};
}

TrigramDistribution::TrigramDistribution(std::map<std::string, std::uint64_t> counts)
    : counts_(std::move(counts)) {
  for (auto it = counts_.begin(); it != counts_.end();) {
    if (it->second == 0) {
      it = counts_.erase(it);
    } else {
      total_ += it->second;
      ++it;
    }
  }
}

double TrigramDistribution::probability(const std::string& gram) const {
  auto it = counts_.find(gram);
  if (it == counts_.end() || total_ == 0) return 0.0;
  return static_cast<double>(it->second) / static_cast<double>(total_);
}

TrigramDistribution trigram_distribution(const Corpus& c) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& pw : c) {
    for (std::size_t i = 0; i + 3 <= pw.size(); ++i) ++counts[pw.substr(i, 3)];
  }
  return TrigramDistribution(std::move(counts));
}

double js_divergence(const TrigramDistribution& p, const TrigramDistribution& q) {
  if (p.empty() || q.empty()) throw Error("js_divergence needs two non-empty distributions");
  const double np = static_cast<double>(p.total());
  const double nq = static_cast<double>(q.total());
  auto term = [](double a, double m) { return a > 0.0 ? a * std::log2(a / m) : 0.0; };

  // Merge-walk both sorted maps. Each key contributes a symmetric expression
  // in (pa, qa), so the result is exactly symmetric in p and q.
  double sum = 0.0;
  auto ip = p.counts().begin();
  auto iq = q.counts().begin();
  while (ip != p.counts().end() || iq != q.counts().end()) {
    double pa = 0.0, qa = 0.0;
    if (iq == q.counts().end() || (ip != p.counts().end() && ip->first < iq->first)) {
      pa = static_cast<double>(ip->second) / np;
      ++ip;
    } else if (ip == p.counts().end() || iq->first < ip->first) {
      qa = static_cast<double>(iq->second) / nq;
      ++iq;
    } else {
      pa = static_cast<double>(ip->second) / np;
      qa = static_cast<double>(iq->second) / nq;
      ++ip;
      ++iq;
    }
    // Ordering the pair keeps the term symmetric even under FMA contraction.
    const double lo = std::min(pa, qa), hi = std::max(pa, qa);
    const double m = 0.5 * (lo + hi);
    sum += 0.5 * (term(lo, m) + term(hi, m));
  }
  return std::clamp(sum, 0.0, 1.0);
}

}  // namespace pwlm
