#include <doctest.h>

#include <cmath>
#include <random>

#include "pwlm/error.hpp"
#include "pwlm/mc_estimator.hpp"
#include "support/toy_language.hpp"

using namespace pwlm;

namespace {

// Wraps a model and marks every third sample as truncated.
class Lossy final : public GuessingModel {
 public:
  explicit Lossy(const GuessingModel& inner) : inner_(inner) {}
  double log_prob(std::string_view s) const override { return inner_.log_prob(s); }
  bool can_score(std::string_view s) const override { return inner_.can_score(s); }
  std::vector<Sample> sample(std::size_t n, std::uint64_t seed) const override {
    auto out = inner_.sample(n, seed);
    for (std::size_t i = 0; i < out.size(); i += 3) out[i].status = SampleStatus::kTruncated;
    return out;
  }
  std::string model_id() const override { return "lossy"; }

 private:
  const GuessingModel& inner_;
};

}  // namespace

TEST_CASE("hand-computed estimates") {
  auto est = MonteCarloEstimator::from_log_probs(
      {std::log(0.25), std::log(0.5), std::log(0.25)}, 4);
  CHECK(est.n() == 4);
  CHECK(est.contributing() == 3);
  // (1/0.5 + 1/0.25 + 1/0.25) / 4
  CHECK(est.guess_number(std::log(0.1)) == doctest::Approx(2.5).epsilon(1e-6));
  CHECK(est.guess_number(std::log(0.3)) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(est.guess_number(std::log(0.5)) == 0.0);
  CHECK(est.guess_number(std::log(0.25)) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(std::isinf(est.log10_guess_number(0.0)));
  CHECK(est.total() == doctest::Approx(2.5).epsilon(1e-6));
}

TEST_CASE("single sample") {
  auto est = MonteCarloEstimator::from_log_probs({-1.0}, 1);
  CHECK(est.guess_number(-2.0) == doctest::Approx(std::exp(1.0)).epsilon(1e-6));
  CHECK(est.guess_number(-1.0) == 0.0);
  CHECK(est.guess_number(0.0) == 0.0);
  CHECK(est.standard_error(-2.0) == 0.0);
}

TEST_CASE("standard error against the sample variance") {
  // Weights over n=2 draws: one sample with 1/p = 2, one non-contributing.
  // Mean weight 1, mean squared weight 2, so Var = (2 - 1) / 2.
  auto est = MonteCarloEstimator::from_log_probs({std::log(0.5)}, 2);
  CHECK(est.guess_number(-5.0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(est.standard_error(-5.0) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-6));
}

TEST_CASE("no overflow for tiny probabilities") {
  auto est = MonteCarloEstimator::from_log_probs({-800.0, -900.0}, 2);
  const double lg = est.log10_guess_number(-1000.0);
  // log10((e^800 + e^900) / 2)
  const double expect = 900.0 / std::log(10.0) + std::log10(1.0 + std::exp(-100.0)) - std::log10(2.0);
  CHECK(lg == doctest::Approx(expect).epsilon(1e-6));
  CHECK(std::isinf(est.guess_number(-1000.0)));
}

TEST_CASE("estimates are non-increasing in probability") {
  testing::ToyLanguage lang;
  auto est = MonteCarloEstimator::build(lang, 5000, 3);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-20.0, 0.0);
  std::vector<double> qs(2000);
  for (auto& q : qs) q = u(rng);
  std::sort(qs.begin(), qs.end());
  for (std::size_t i = 1; i < qs.size(); ++i) {
    CHECK(est.guess_number(qs[i]) <= est.guess_number(qs[i - 1]));
  }
}

TEST_CASE("a sampled password does not precede itself") {
  testing::ToyLanguage lang;
  auto samples = lang.sample(1, 8);
  auto est = MonteCarloEstimator::from_log_probs({samples[0].log_prob}, 1);
  CHECK(est.guess_number(lang.log_prob(samples[0].text)) == 0.0);
}

TEST_CASE("estimates track exact ranks on an enumerable language") {
  testing::ToyLanguage lang;
  auto ranked = lang.ranked();
  auto est = MonteCarloEstimator::build(lang, 50000, 2024);

  // Exactness of the oracle: the language is normalized.
  double mass = 0;
  for (const auto& s : lang.support()) mass += lang.prob(s);
  REQUIRE(mass == doctest::Approx(1.0).epsilon(1e-12));

  std::size_t checked = 0, worst_rank = 0;
  double worst = 0;
  for (const auto& s : lang.support()) {
    const double lp = lang.log_prob(s);
    const std::size_t rank = ranked.rank(lp);
    if (rank < 10 || rank > 10000) continue;
    const double rel = std::abs(est.guess_number(lp) - static_cast<double>(rank)) / static_cast<double>(rank);
    if (rel > worst) {
      worst = rel;
      worst_rank = rank;
    }
    ++checked;
  }
  INFO("worst relative error " << worst << " at rank " << worst_rank);
  CHECK(checked > 5000);
  CHECK(worst <= 0.10);
}

TEST_CASE("curve matches the enumerated curve") {
  testing::ToyLanguage lang;
  auto ranked = lang.ranked();
  auto est = MonteCarloEstimator::build(lang, 50000, 2024);
  std::vector<std::string> test;
  for (const auto& s : lang.sample(5000, 99)) test.push_back(s.text);
  Corpus corpus(test, "toy", FilterPolicy{1, 5});

  auto grid = default_grid(1e5, 41);
  auto mc = guessing_curve(est, lang, corpus, grid, 2);
  std::vector<std::optional<double>> exact;
  for (const auto& s : test) exact.push_back(static_cast<double>(ranked.rank(lang.log_prob(s))));
  auto truth = curve_from_guess_numbers(exact, grid);

  double worst = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    worst = std::max(worst, std::abs(mc.points[i].coverage - truth.points[i].coverage));
  }
  INFO("worst coverage gap " << worst);
  CHECK(worst <= 0.02);
  CHECK(mc.manifest["model_id"] == "toy-language");
  CHECK(mc.test_size == 5000);
}

TEST_CASE("non-contributing samples still count towards n") {
  testing::ToyLanguage lang;
  Lossy lossy(lang);
  auto est = MonteCarloEstimator::build(lossy, 300, 4);
  CHECK(est.n() == 300);
  CHECK(est.contributing() == 200);
  std::vector<double> kept;
  auto samples = lang.sample(300, 4);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (i % 3 != 0) kept.push_back(samples[i].log_prob);
  }
  CHECK(est == MonteCarloEstimator::from_log_probs(kept, 300, "lossy", 4));
}

TEST_CASE("serialization round trip") {
  testing::ToyLanguage lang;
  auto est = MonteCarloEstimator::build(lang, 2000, 6);
  auto bytes = est.serialize();
  auto back = MonteCarloEstimator::parse(bytes);
  CHECK(back == est);
  CHECK(back.serialize() == bytes);
  CHECK(back.model_id() == "toy-language");
  CHECK(back.seed() == 6);

  auto cut = bytes;
  cut.resize(cut.size() - 3);
  CHECK_THROWS_AS(MonteCarloEstimator::parse(cut), FormatError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(MonteCarloEstimator::parse(bad), FormatError);
}

TEST_CASE("estimator preconditions") {
  CHECK_THROWS_AS(MonteCarloEstimator::from_log_probs({}, 0), ConfigError);
  CHECK_THROWS_AS(MonteCarloEstimator::from_log_probs({-1.0, -2.0}, 1), ConfigError);
  CHECK_THROWS_AS(MonteCarloEstimator::from_log_probs({-INFINITY}, 1), Error);
}

TEST_CASE("curves from guess numbers") {
  std::vector<std::optional<double>> g{1.0, 5.0, 100.0, std::nullopt};
  std::vector<double> grid{1, 10, 1000};
  auto c = curve_from_guess_numbers(g, grid);
  CHECK(c.unscorable == 1);
  REQUIRE(c.points.size() == 3);
  CHECK(c.points[0].coverage == 0.25);
  CHECK(c.points[1].coverage == 0.5);
  CHECK(c.points[2].coverage == 0.75);

  auto grid81 = default_grid();
  CHECK(grid81.size() == 81);
  CHECK(grid81.front() == 1.0);
  CHECK(grid81.back() == doctest::Approx(1e20));
  CHECK(grid81[4] == doctest::Approx(10.0));
}

TEST_CASE("curve text round trip") {
  GuessingCurve c;
  c.points = {{1, 0.0}, {10, 0.25}, {1e6, 0.5}};
  c.test_size = 4;
  c.unscorable = 1;
  c.manifest = {{"model_id", "m"}, {"test_size", 4}, {"unscorable", 1}};
  auto back = GuessingCurve::from_text(c.to_text());
  REQUIRE(back.points.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.points[i].guesses == doctest::Approx(c.points[i].guesses));
    CHECK(back.points[i].coverage == c.points[i].coverage);
  }
  CHECK(back.test_size == 4);
  CHECK(back.unscorable == 1);
  CHECK_THROWS_AS(GuessingCurve::from_text("log10_g,coverage\n"), FormatError);
  CHECK_THROWS_AS(GuessingCurve::from_text("1;2\n"), FormatError);
}

TEST_CASE("curve comparison") {
  GuessingCurve a, b;
  a.points = {{1, 0.2}, {100, 0.6}};
  b.points = {{1, 0.1}, {100, 0.5}, {1e4, 0.9}};
  auto cmp = compare_curves(a, b, 1001);
  // Shared range is [1, 100], where the gap is constant.
  CHECK(cmp.mean_difference == doctest::Approx(0.1));
  CHECK(cmp.max_difference == doctest::Approx(0.1));

  CHECK(interpolate_coverage(a, 10) == doctest::Approx(0.4));
  CHECK(interpolate_coverage(a, 0.01) == 0.2);
  CHECK(interpolate_coverage(a, 1e9) == 0.6);

  GuessingCurve c;
  c.points = {{1, 0.0}, {1e4, 1.0}};
  GuessingCurve d;
  d.points = {{1, 0.0}, {1e4, 0.5}};
  auto cd = compare_curves(c, d, 5);
  CHECK(cd.max_difference == doctest::Approx(0.5));
  CHECK(cd.argmax_guesses == doctest::Approx(1e4));
  CHECK(cd.mean_difference == doctest::Approx(0.25));

  GuessingCurve far;
  far.points = {{1e6, 0.1}, {1e8, 0.2}};
  CHECK_THROWS_AS(compare_curves(a, far), Error);
}
