#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pwlm {

// Small generative grammars standing in for real leaked corpora in tests,
// fixtures and the transfer experiment.
enum class Grammar {
  kWordDigits,    // "monkey123", "Dragon!77": dictionary word, digits, symbols
  kSyllableDate,  // "1988zhangwei", "woai5201314": syllables mixed with dates
};

// `n` passwords of length 6..30, deterministic per seed.
std::vector<std::string> synthetic_passwords(Grammar g, std::size_t n, std::uint64_t seed);

// Mixture: each password is drawn from B with probability `fraction_b`.
std::vector<std::string> synthetic_mixture(double fraction_b, std::size_t n, std::uint64_t seed);

}  // namespace pwlm
