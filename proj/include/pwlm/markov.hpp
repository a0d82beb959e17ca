#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pwlm/corpus.hpp"
#include "pwlm/guessing_model.hpp"

namespace pwlm {

struct NgramOptions {
  std::size_t order = 6;
  double delta = 0.01;                 // Laplace add-delta
  std::uint64_t backoff_threshold = 10;
  std::size_t max_sample_length = 64;  // samples longer than this are truncated
};

// Character n-gram model over 95 printable characters plus an end symbol.
// Histories are left-padded with order-1 start markers. A query uses the
// longest context (at most order-1 symbols) seen at least backoff_threshold
// times; the empty context always qualifies.
class NgramModel final : public GuessingModel {
 public:
  static constexpr int kSymbols = 96;
  static constexpr int kEnd = 95;
  static constexpr char kStartMarker = '\x02';

  NgramModel() = default;

  const NgramOptions& options() const noexcept { return opts_; }
  std::size_t context_count() const noexcept { return table_.size(); }

  // Count of `context` as a history (sum over its next symbols).
  std::uint64_t context_total(std::string_view context) const;
  std::uint64_t transition_count(std::string_view context, int symbol) const;

  // Context actually used for the given padded history.
  std::string_view backoff_context(std::string_view padded_history) const;
  // P(symbol | prefix) for symbol in [0, 96); prefix is the password so far.
  std::array<double, kSymbols> distribution(std::string_view prefix) const;

  double log_prob(std::string_view pw) const override;
  // Log-probability of emitting `prefix` without the end step.
  double prefix_log_prob(std::string_view prefix) const;
  bool can_score(std::string_view pw) const override;
  std::vector<Sample> sample(std::size_t n, std::uint64_t seed) const override;
  std::string model_id() const override { return model_id_; }
  void set_model_id(std::string id) { model_id_ = std::move(id); }

  std::vector<std::uint8_t> serialize() const;
  static NgramModel parse(std::span<const std::uint8_t> bytes);
  void save(const std::filesystem::path& path) const;
  static NgramModel load(const std::filesystem::path& path);

  friend NgramModel train_ngram(const Corpus& data, const NgramOptions& opts);

 private:
  struct Counts {
    std::uint64_t total = 0;
    std::vector<std::pair<std::uint8_t, std::uint64_t>> next;  // sorted by symbol

    void add(std::uint8_t sym, std::uint64_t n);
    std::uint64_t get(std::uint8_t sym) const;
  };

  std::string padded(std::string_view prefix) const;
  double prob_from(std::string_view context, int symbol) const;

  NgramOptions opts_;
  std::unordered_map<std::string, Counts> table_;
  std::string model_id_ = "ngram";
};

// Throws Error on an empty corpus and ConfigError on order < 2 or delta <= 0.
NgramModel train_ngram(const Corpus& data, const NgramOptions& opts = {});

}  // namespace pwlm
