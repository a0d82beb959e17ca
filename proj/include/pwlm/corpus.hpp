#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pwlm {

struct FilterPolicy {
  std::size_t min_length = 6;
  std::size_t max_length = 30;

  // Throws ConfigError unless 0 < min_length <= max_length.
  void validate() const;
};

// Printable ASCII, 0x20..0x7E.
constexpr bool is_printable_ascii(unsigned char c) noexcept {
  return c >= 0x20 && c <= 0x7E;
}

enum class Rejection { kNone, kTooShort, kTooLong, kCharset };

Rejection check_password(std::string_view pw, const FilterPolicy& policy) noexcept;

struct LoadReport {
  std::uint64_t lines_read = 0;
  std::uint64_t kept = 0;
  std::uint64_t rejected_short = 0;
  std::uint64_t rejected_long = 0;
  std::uint64_t rejected_charset = 0;

  std::string to_json() const;
};

// An ordered multiset of passwords that all satisfy `policy`. Immutable once
// built; duplicates are kept.
class Corpus {
 public:
  Corpus() = default;
  // Validates every entry against `policy` (throws EncodingError otherwise).
  Corpus(std::vector<std::string> passwords, std::string source_label,
         FilterPolicy policy = {});

  const std::vector<std::string>& passwords() const noexcept { return passwords_; }
  const std::string& source_label() const noexcept { return source_label_; }
  const FilterPolicy& policy() const noexcept { return policy_; }
  std::size_t size() const noexcept { return passwords_.size(); }
  bool empty() const noexcept { return passwords_.empty(); }
  const std::string& operator[](std::size_t i) const { return passwords_[i]; }
  auto begin() const noexcept { return passwords_.begin(); }
  auto end() const noexcept { return passwords_.end(); }

  Corpus deduplicated() const;

 private:
  std::vector<std::string> passwords_;
  std::string source_label_;
  FilterPolicy policy_;
};

struct LoadResult {
  Corpus corpus;
  LoadReport report;
};

// One password per line (LF, a trailing CR is stripped). Lines failing the
// policy are dropped and counted. Throws IoError if unreadable and Error
// ("empty corpus") if nothing survives.
LoadResult load_corpus(const std::filesystem::path& path, const FilterPolicy& policy = {});
LoadResult parse_corpus(std::string_view text, std::string source_label,
                        const FilterPolicy& policy = {});

void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

// Uniform sample of `n` passwords without replacement. Throws BoundsError
// when n > |c|.
Corpus sample_corpus(const Corpus& c, std::size_t n, std::uint64_t seed);

// Seeded shuffle, then the first round(train_fraction * |c|) entries form the
// training part.
std::pair<Corpus, Corpus> split_corpus(const Corpus& c, double train_fraction,
                                       std::uint64_t seed);

class TrigramDistribution {
 public:
  TrigramDistribution() = default;
  explicit TrigramDistribution(std::map<std::string, std::uint64_t> counts);

  const std::map<std::string, std::uint64_t>& counts() const noexcept { return counts_; }
  std::uint64_t total() const noexcept { return total_; }
  double probability(const std::string& gram) const;
  bool empty() const noexcept { return total_ == 0; }

 private:
  std::map<std::string, std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

// Counts every overlapping interior 3-character window.
TrigramDistribution trigram_distribution(const Corpus& c);

// Jensen-Shannon divergence in bits over the union of keys; in [0, 1].
double js_divergence(const TrigramDistribution& p, const TrigramDistribution& q);

}  // namespace pwlm
