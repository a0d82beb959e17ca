#include "pwlm/synthetic.hpp"

#include <array>
#include <random>
#include <string_view>

namespace pwlm {

namespace {

constexpr std::array<std::string_view, 24> kWords = {
    "monkey", "dragon", "shadow", "master", "sunshine", "princess", "football", "baseball",
    "welcome", "flower",  "hunter", "summer", "charlie", "soccer",   "purple",   "orange",
    "tigger", "silver",  "ginger", "pepper", "maggie",  "cookie",   "buster",   "killer"};

constexpr std::array<std::string_view, 20> kSyllables = {
    "zhang", "wang", "li",  "liu", "chen", "yang", "huang", "zhao", "wu",  "zhou",
    "wo",    "ai",   "ni",  "xiao", "ming", "hua", "long",  "jie",  "qiang", "mei"};

constexpr std::array<std::string_view, 6> kLucky = {"520", "1314", "5201314", "888", "666", "168"};

template <typename Rng, typename Container>
std::string_view pick(Rng& rng, const Container& c) {
  return c[std::uniform_int_distribution<std::size_t>(0, c.size() - 1)(rng)];
}

std::string digits(std::mt19937_64& rng, int lo, int hi) {
  const int n = std::uniform_int_distribution<int>(lo, hi)(rng);
  std::string s;
  // Sequential runs are far more common than random digits in real data.
  if (std::bernoulli_distribution(0.5)(rng)) {
    int start = std::uniform_int_distribution<int>(0, 2)(rng);
    for (int i = 0; i < n; ++i) s.push_back(static_cast<char>('0' + (start + 1 + i) % 10));
  } else {
    for (int i = 0; i < n; ++i) s.push_back(static_cast<char>('0' + rng() % 10));
  }
  return s;
}

std::string year(std::mt19937_64& rng) {
  return std::to_string(std::uniform_int_distribution<int>(1970, 2005)(rng));
}

std::string word_digits(std::mt19937_64& rng) {
  std::string s(pick(rng, kWords));
  if (std::bernoulli_distribution(0.2)(rng)) s[0] = static_cast<char>(s[0] - 'a' + 'A');
  const double r = std::uniform_real_distribution<double>(0, 1)(rng);
  if (r < 0.55) {
    s += digits(rng, 1, 4);
  } else if (r < 0.75) {
    s += "!";
    s += digits(rng, 1, 2);
  } else if (r < 0.9) {
    s += pick(rng, kWords);
  } else {
    s += year(rng).substr(2);
  }
  return s;
}

std::string syllable_date(std::mt19937_64& rng) {
  std::string s;
  const double r = std::uniform_real_distribution<double>(0, 1)(rng);
  const int n_syll = std::uniform_int_distribution<int>(1, 3)(rng);
  std::string name;
  for (int i = 0; i < n_syll; ++i) name += pick(rng, kSyllables);
  if (r < 0.4) {
    s = year(rng) + name;
  } else if (r < 0.7) {
    s = name + std::string(pick(rng, kLucky));
  } else if (r < 0.85) {
    s = name + year(rng);
  } else {
    s = digits(rng, 6, 9);
  }
  return s;
}

std::string fit_length(std::string s, std::mt19937_64& rng) {
  while (s.size() < 6) s.push_back(static_cast<char>('0' + rng() % 10));
  if (s.size() > 30) s.resize(30);
  return s;
}

}  // namespace

std::vector<std::string> synthetic_passwords(Grammar g, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(fit_length(g == Grammar::kWordDigits ? word_digits(rng) : syllable_date(rng), rng));
  }
  return out;
}

std::vector<std::string> synthetic_mixture(double fraction_b, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution is_b(fraction_b);
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(fit_length(is_b(rng) ? syllable_date(rng) : word_digits(rng), rng));
  }
  return out;
}

}  // namespace pwlm
