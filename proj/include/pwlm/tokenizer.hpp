#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pwlm {

using TokenId = std::int32_t;

// 95 printable ASCII characters in code-point order (ids 0..94) followed by
// five specials. [UNK] and [MASK] are reserved and never produced.
namespace tok {
inline constexpr TokenId kNumChars = 95;
inline constexpr TokenId kPad = 95;
inline constexpr TokenId kSos = 96;
inline constexpr TokenId kEos = 97;
inline constexpr TokenId kUnk = 98;
inline constexpr TokenId kMask = 99;
inline constexpr TokenId kVocabSize = 100;
}  // namespace tok

constexpr TokenId char_to_id(char c) noexcept { return static_cast<unsigned char>(c) - 0x20; }
constexpr char id_to_char(TokenId id) noexcept { return static_cast<char>(id + 0x20); }
constexpr bool is_char_token(TokenId id) noexcept { return id >= 0 && id < tok::kNumChars; }

// Token strings in id order, as written into checkpoint manifests.
const std::vector<std::string>& vocabulary();

using TokenSequence = std::vector<TokenId>;

// [SOS] c1 .. cm [EOS]. Throws EncodingError naming the first bad byte.
TokenSequence encode(std::string_view pw);

// Strips [SOS]/[EOS]/[PAD]; throws EncodingError on [UNK], [MASK] or ids
// outside the vocabulary.
std::string decode(std::span<const TokenId> ts);

}  // namespace pwlm
