// Writes the toy fixtures under data/ from the synthetic grammars:
//   site_raw.txt   mixture (90% word+digits, 10% syllable+date) with junk lines
//   target_b.txt   syllable+date passwords, a small finetuning/target corpus
//   other_a.txt    word+digits passwords, a mismatched candidate corpus

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "pwlm/synthetic.hpp"

namespace {

void write_lines(const std::filesystem::path& p, const std::vector<std::string>& lines) {
  std::ofstream f(p, std::ios::binary);
  for (const auto& l : lines) f << l << '\n';
  if (!f) throw std::runtime_error("cannot write " + p.string());
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: pwlm-fixtures <output-dir>\n";
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  std::filesystem::create_directories(dir);

  auto site = pwlm::synthetic_mixture(0.1, 5000, 2024);
  // Lines the ingest filter must drop: too short, too long, outside printable ASCII.
  const std::vector<std::string> junk{"abc", "12345", std::string(31, 'x'), "p\xc3\xa4sswort1",
                                      "tab\there1", "caf\xc3\xa9" "2019", "", "aaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaa"};
  std::mt19937_64 rng(7);
  for (std::size_t i = 0; i < 60; ++i) {
    const std::size_t at = std::uniform_int_distribution<std::size_t>(0, site.size())(rng);
    site.insert(site.begin() + static_cast<std::ptrdiff_t>(at), junk[i % junk.size()]);
  }
  write_lines(dir / "site_raw.txt", site);
  write_lines(dir / "target_b.txt", pwlm::synthetic_passwords(pwlm::Grammar::kSyllableDate, 400, 5));
  write_lines(dir / "other_a.txt", pwlm::synthetic_passwords(pwlm::Grammar::kWordDigits, 400, 6));
  return 0;
}
