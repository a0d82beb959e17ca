#include <doctest.h>

#include <cmath>
#include <random>

#include "pwlm/error.hpp"
#include "pwlm/model.hpp"
#include "support/reference_forward.hpp"

using namespace pwlm;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.layers = 2;
  c.embed_dim = 8;
  c.intermediate_dim = 12;
  c.heads = 2;
  c.max_positions = 10;
  return c;
}

// Random weights with a larger spread than the training init so that every
// path through the network contributes visibly.
Decoder spread_model(const ModelConfig& cfg, std::uint64_t seed, double sd = 0.4) {
  Decoder m(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  for (auto& v : m.parameters()) v = n(rng);
  return m;
}

double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

}  // namespace

TEST_CASE("parameter_count reproduces the preset sizes") {
  CHECK(parameter_count(ModelConfig::small()) == 4'781'056);
  CHECK(parameter_count(ModelConfig::base()) == 85'919'232);
}

TEST_CASE("parameter_count matches a hand enumeration of tensors") {
  ModelConfig c;
  c.layers = 1;
  c.embed_dim = 8;
  c.intermediate_dim = 16;
  c.heads = 2;
  c.vocab_size = 5;
  c.max_positions = 4;
  // tok 5x8, pos 4x8, ln1 8+8, q/k/v/o 4x(64+8), ln2 8+8, w1 8x16+16,
  // w2 16x8+8, ln_f 8+8
  const std::uint64_t expected = 40 + 32 + 16 + 4 * 72 + 16 + 144 + 136 + 16;
  CHECK(expected == 688);
  CHECK(parameter_count(c) == expected);
}

TEST_CASE("materialized layout sums to parameter_count") {
  for (auto cfg : {ModelConfig::toy(), ModelConfig::small(), tiny_config()}) {
    ParameterLayout layout(cfg);
    std::size_t sum = 0;
    for (const auto& t : layout.tensors()) sum += t.size;
    CHECK(sum == parameter_count(cfg));
    CHECK(layout.total() == sum);
  }
}

TEST_CASE("config validation") {
  auto c = tiny_config();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(ModelConfig::preset("huge"), ConfigError);
  CHECK(ModelConfig::preset("small") == ModelConfig::small());
}

TEST_CASE("causal mask is zero on and below the diagonal") {
  Matrix m = causal_mask(4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      if (i >= j) CHECK(m(i, j) == 0.0);
      else CHECK(std::isinf(m(i, j)));
    }
}

TEST_CASE("forward agrees with the plain-loop reference") {
  const auto cfg = tiny_config();
  auto m = spread_model(cfg, 11);
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<TokenId> ids{tok::kSos};
    for (int i = 0; i < 6; ++i) ids.push_back(static_cast<TokenId>(rng() % 95));
    Matrix got = m.forward(ids);
    auto want = testing::reference_logits(m, ids);
    for (std::size_t t = 0; t < ids.size(); ++t)
      for (std::size_t v = 0; v < cfg.vocab_size; ++v)
        CHECK(got(Eigen::Index(t), Eigen::Index(v)) == doctest::Approx(want[t][v]).epsilon(1e-10));
  }
}

TEST_CASE("hand-evaluated attention on a two-token sequence") {
  // One block, E=2, one head, identity Q/K/V/O projections, zero FFN, zero
  // position embeddings, unit layer norms. Token 'a' embeds to (1,-1) and
  // 'b' to (-1,1); every other token embeds to zero.
  ModelConfig c;
  c.layers = 1;
  c.embed_dim = 2;
  c.intermediate_dim = 1;
  c.heads = 1;
  c.max_positions = 4;
  Decoder m(c);
  auto p = m.parameters();
  const auto& L = m.layout();
  const auto a = char_to_id('a'), b = char_to_id('b');
  p[L.token_embedding() + a * 2] = 1;
  p[L.token_embedding() + a * 2 + 1] = -1;
  p[L.token_embedding() + b * 2] = -1;
  p[L.token_embedding() + b * 2 + 1] = 1;
  const auto& o = L.block(0);
  for (auto w : {o.wq, o.wk, o.wv, o.wo}) {
    p[w] = 1;
    p[w + 3] = 1;
  }
  for (auto g : {o.ln1_g, o.ln2_g, L.final_ln_g()}) p[g] = p[g + 1] = 1;

  const double eps = 1e-5;
  const double s = 1.0 / std::sqrt(1.0 + eps);  // LN of (+-1, -+1)
  // Position 0 attends to itself only: residual becomes (1+s)(1,-1).
  const double c0 = 1.0 + s;
  // Position 1: scores -+ sqrt(2) s^2 against keys 0 and 1.
  const double z = std::sqrt(2.0) * s * s;
  const double w0 = std::exp(-z) / (std::exp(-z) + std::exp(z));
  const double w1 = 1.0 - w0;
  const double c1 = -1.0 + s * (w0 - w1);
  auto logit_a = [&](double cc) { return 2.0 * cc / std::sqrt(cc * cc + eps); };

  Matrix got = m.forward(std::vector<TokenId>{a, b});
  CHECK(got(0, a) == doctest::Approx(logit_a(c0)).epsilon(1e-12));
  CHECK(got(0, b) == doctest::Approx(-logit_a(c0)).epsilon(1e-12));
  CHECK(got(1, a) == doctest::Approx(logit_a(c1)).epsilon(1e-12));
  CHECK(got(1, b) == doctest::Approx(-logit_a(c1)).epsilon(1e-12));
  CHECK(got(1, char_to_id('z')) == 0.0);
}

TEST_CASE("forward rejects sequences longer than max_positions") {
  const auto cfg = tiny_config();
  Decoder m = Decoder::initialized(cfg, 1);
  std::vector<TokenId> ids(cfg.max_positions + 1, 10);
  CHECK_THROWS_AS(m.forward(ids), BoundsError);
  ids.pop_back();
  CHECK_NOTHROW(m.forward(ids));
  CHECK_FALSE(m.can_score("123456789"));  // 9 + 2 > 10
  CHECK(m.can_score("12345678"));
  CHECK_THROWS_AS(m.log_prob("123456789"), BoundsError);
}

TEST_CASE("perturbing a later token leaves earlier logits unchanged") {
  const auto cfg = tiny_config();
  auto m = spread_model(cfg, 3);
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t len = 2 + rng() % (cfg.max_positions - 1);
    const std::size_t shared = 1 + rng() % (len - 1);
    std::vector<TokenId> x(len), y(len);
    for (std::size_t i = 0; i < len; ++i) {
      x[i] = static_cast<TokenId>(rng() % 100);
      y[i] = i < shared ? x[i] : static_cast<TokenId>(rng() % 100);
    }
    Matrix lx = m.forward(x), ly = m.forward(y);
    for (std::size_t t = 0; t < shared; ++t)
      for (Eigen::Index v = 0; v < lx.cols(); ++v)
        CHECK(rel_diff(lx(Eigen::Index(t), v), ly(Eigen::Index(t), v)) <= 1e-6);
  }
}

TEST_CASE("next-token distribution is normalized") {
  auto m = Decoder::initialized(ModelConfig::toy(), 4);
  for (std::string_view prefix : {"", "a", "pass", "q1w2e3"}) {
    auto ids = encode(prefix);
    ids.pop_back();
    auto probs = m.next_token_probs(ids);
    double sum = 0;
    for (double x : probs) sum += x;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("log_prob is the chain-rule sum of next-token probabilities") {
  auto m = spread_model(tiny_config(), 21, 0.2);
  const std::string pw = "hunter2";
  auto ids = encode(pw);
  double manual = 0;
  for (std::size_t t = 1; t < ids.size(); ++t) {
    auto probs = m.next_token_probs(std::span(ids).first(t));
    manual += std::log(probs[static_cast<std::size_t>(ids[t])]);
  }
  CHECK(m.log_prob(pw) == doctest::Approx(manual).epsilon(1e-10));
  CHECK(m.log_prob(pw) < 0.0);
}

TEST_CASE("analytic gradient matches central finite differences") {
  const auto cfg = tiny_config();
  auto m = spread_model(cfg, 8, 0.3);
  const std::vector<std::string> batch{"abc123", "qwerty", "zz"};
  auto total_loss = [&](const Decoder& d) {
    double s = 0;
    for (const auto& pw : batch) s += sequence_loss(d, encode(pw)).nll;
    return s;
  };
  std::vector<double> grad(m.parameters().size(), 0.0);
  for (const auto& pw : batch) sequence_loss(m, encode(pw), grad);

  std::mt19937_64 rng(17);
  const double h = 1e-5;
  int checked = 0;
  double worst = 0;
  for (int i = 0; i < 60; ++i) {
    const std::size_t k = rng() % grad.size();
    const double orig = m.parameters()[k];
    m.parameters()[k] = orig + h;
    const double up = total_loss(m);
    m.parameters()[k] = orig - h;
    const double down = total_loss(m);
    m.parameters()[k] = orig;
    const double numeric = (up - down) / (2 * h);
    if (std::abs(numeric) < 1e-7 && std::abs(grad[k]) < 1e-7) continue;
    worst = std::max(worst, rel_diff(grad[k], numeric));
    ++checked;
  }
  CHECK(checked > 20);
  CHECK(worst < 1e-4);
}

TEST_CASE("sampling is deterministic per seed") {
  auto m = Decoder::initialized(tiny_config(), 2);
  auto a = m.sample(20, 99), b = m.sample(20, 99), c = m.sample(20, 100);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].text == b[i].text);
    CHECK(a[i].log_prob == b[i].log_prob);
    differs |= a[i].text != c[i].text;
  }
  CHECK(differs);
  m.set_threads(3);
  auto d = m.sample(20, 99);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].text == d[i].text);
}

TEST_CASE("sampling across many concurrent draws keeps the model's distribution") {
  auto m = spread_model(tiny_config(), 8, 0.15);
  const std::size_t n = 3000;
  auto a = m.sample(n, 7);
  m.set_threads(3);
  auto b = m.sample(n, 7);
  for (std::size_t i = 0; i < n; ++i) CHECK(a[i].text == b[i].text);

  // First tokens of draws that reuse a decoding slot follow p(. | [SOS]).
  const std::vector<TokenId> sos{tok::kSos};
  const auto p = m.next_token_probs(sos);
  std::vector<double> freq(p.size(), 0.0);
  double draws = 0;
  for (std::size_t i = 100; i < n; ++i) {
    ++draws;
    if (!a[i].text.empty()) freq[std::size_t(char_to_id(a[i].text[0]))] += 1;
  }
  for (std::size_t v = 0; v < p.size(); ++v) {
    if (!is_char_token(TokenId(v))) continue;
    const double se = std::sqrt(p[v] * (1 - p[v]) / draws);
    CHECK(std::abs(freq[v] / draws - p[v]) <= 4.5 * se + 1e-9);
  }
}

TEST_CASE("a model forced to end immediately samples empty strings") {
  ModelConfig c = tiny_config();
  Decoder m(c);
  auto p = m.parameters();
  const auto& L = m.layout();
  // Final LN outputs the constant vector 100 * e0; only [EOS] has a nonzero
  // first embedding coordinate.
  p[L.final_ln_b()] = 100.0;
  p[L.token_embedding() + std::size_t(tok::kEos) * c.embed_dim] = 1.0;
  auto samples = m.sample(25, 1);
  for (const auto& s : samples) {
    CHECK(s.text.empty());
    CHECK(s.status == SampleStatus::kOk);
    CHECK(s.log_prob == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("sampled log-probabilities equal log_prob of the sampled text") {
  auto m = spread_model(tiny_config(), 31, 0.15);
  for (const auto& s : m.sample(30, 4)) {
    if (s.status != SampleStatus::kOk) continue;
    CHECK(s.log_prob == m.log_prob(s.text));
  }
}
