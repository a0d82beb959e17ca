#include <doctest.h>

#include <random>

#include "pwlm/error.hpp"
#include "pwlm/tokenizer.hpp"

using namespace pwlm;

TEST_CASE("vocabulary layout") {
  const auto& v = vocabulary();
  REQUIRE(v.size() == 100);
  CHECK(v[0] == " ");
  CHECK(v[94] == "~");
  CHECK(v[tok::kPad] == "[PAD]");
  CHECK(v[tok::kSos] == "[SOS]");
  CHECK(v[tok::kEos] == "[EOS]");
  CHECK(v[tok::kUnk] == "[UNK]");
  CHECK(v[tok::kMask] == "[MASK]");
  for (int c = 0x20; c <= 0x7E; ++c) CHECK(char_to_id(static_cast<char>(c)) == c - 32);
}

TEST_CASE("encode wraps characters in SOS/EOS") {
  auto ts = encode("q1w2e3");
  std::vector<TokenId> want{tok::kSos, 'q' - 32, '1' - 32, 'w' - 32, '2' - 32,
                            'e' - 32,  '3' - 32, tok::kEos};
  CHECK(ts == want);
  CHECK(encode("") == std::vector<TokenId>{tok::kSos, tok::kEos});
}

TEST_CASE("encode rejects bytes outside printable ASCII") {
  try {
    encode("ab\tc");
    FAIL("expected an encoding error");
  } catch (const EncodingError& e) {
    CHECK(e.position() == 2);
  }
  CHECK_THROWS_AS(encode("p\xC3\xA4ss"), EncodingError);
}

TEST_CASE("decode strips specials and padding") {
  std::vector<TokenId> ab{tok::kSos, 'a' - 32, 'b' - 32, tok::kEos};
  CHECK(decode(ab) == "ab");
  std::vector<TokenId> padded{tok::kSos, 'a' - 32, tok::kEos, tok::kPad, tok::kPad};
  CHECK(decode(padded) == "a");
  std::vector<TokenId> unk{tok::kSos, tok::kUnk, tok::kEos};
  CHECK_THROWS_AS(decode(unk), EncodingError);
  std::vector<TokenId> mask{tok::kSos, tok::kMask};
  CHECK_THROWS_AS(decode(mask), EncodingError);
}

TEST_CASE("decode inverts encode on random printable strings") {
  std::mt19937 rng(3);
  for (int i = 0; i < 500; ++i) {
    std::string s(rng() % 31, ' ');
    for (auto& c : s) c = static_cast<char>(0x20 + rng() % 95);
    auto ts = encode(s);
    CHECK(ts.size() == s.size() + 2);
    CHECK(decode(ts) == s);
  }
}
