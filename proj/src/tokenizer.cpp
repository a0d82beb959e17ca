#include "pwlm/tokenizer.hpp"

#include <cstdio>

#include "pwlm/corpus.hpp"
#include "pwlm/error.hpp"

namespace pwlm {

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> vocab = [] {
    std::vector<std::string> v;
    v.reserve(tok::kVocabSize);
    for (TokenId id = 0; id < tok::kNumChars; ++id) v.emplace_back(1, id_to_char(id));
    for (const char* s : {"[PAD]", "[SOS]", "[EOS]", "[UNK]", "[MASK]"}) v.emplace_back(s);
    return v;
  }();
  return vocab;
}

TokenSequence encode(std::string_view pw) {
  TokenSequence ts;
  ts.reserve(pw.size() + 2);
  ts.push_back(tok::kSos);
  for (std::size_t i = 0; i < pw.size(); ++i) {
    auto c = static_cast<unsigned char>(pw[i]);
    if (!is_printable_ascii(c)) {
      char hex[8];
      std::snprintf(hex, sizeof hex, "0x%02X", c);
      throw EncodingError(std::string("byte ") + hex + " at position " + std::to_string(i) +
                              " is not a printable ASCII character",
                          i);
    }
    ts.push_back(char_to_id(pw[i]));
  }
  ts.push_back(tok::kEos);
  return ts;
}

std::string decode(std::span<const TokenId> ts) {
  std::string out;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    TokenId id = ts[i];
    if (is_char_token(id)) {
      out.push_back(id_to_char(id));
    } else if (id == tok::kSos || id == tok::kEos || id == tok::kPad) {
      continue;
    } else {
      throw EncodingError("token id " + std::to_string(id) + " at position " + std::to_string(i) +
                              " cannot be decoded",
                          i);
    }
  }
  return out;
}

}  // namespace pwlm
