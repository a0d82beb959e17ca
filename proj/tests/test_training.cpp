#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "pwlm/checkpoint.hpp"
#include "pwlm/error.hpp"
#include "pwlm/synthetic.hpp"
#include "pwlm/training.hpp"

using namespace pwlm;

namespace {

Corpus repeated(const std::string& pw, std::size_t copies) {
  return Corpus(std::vector<std::string>(copies, pw), "repeated");
}

Corpus grammar_corpus(std::size_t n, std::uint64_t seed) {
  return Corpus(synthetic_passwords(Grammar::kWordDigits, n, seed), "synthetic");
}

TrainingConfig small_run(std::size_t epochs, std::size_t batch, double lr, std::uint64_t seed) {
  TrainingConfig tc;
  tc.epochs = epochs;
  tc.batch_size = batch;
  tc.learning_rate = lr;
  tc.seed = seed;
  return tc;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("pwlm_test_training_" + name);
}

}  // namespace

TEST_CASE("config validation and defaults") {
  TrainingConfig tc;
  CHECK(tc.epochs == 10);
  CHECK(tc.batch_size == 256);
  CHECK(tc.learning_rate == 5e-4);
  CHECK(TrainingConfig::finetune_defaults().learning_rate == 5e-5);
  CHECK(TrainingConfig::finetune_defaults().mode == TrainingMode::kFinetune);
  tc.epochs = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = {};
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = {};
  tc.learning_rate = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("learning-rate schedule") {
  TrainingConfig tc;
  tc.learning_rate = 1.0;
  CHECK(warmup_steps_for(tc, 1000) == 10);
  CHECK(warmup_steps_for(tc, 50) == 1);
  CHECK(scheduled_lr(tc, 0, 1000) == doctest::Approx(0.1));
  CHECK(scheduled_lr(tc, 9, 1000) == doctest::Approx(1.0));
  CHECK(scheduled_lr(tc, 10, 1000) == doctest::Approx(1.0));
  CHECK(scheduled_lr(tc, 505, 1000) == doctest::Approx(0.5));
  CHECK(scheduled_lr(tc, 999, 1000) == doctest::Approx(1.0 / 990));
  for (std::size_t s = 10; s + 1 < 1000; ++s) CHECK(scheduled_lr(tc, s + 1, 1000) < scheduled_lr(tc, s, 1000));
  tc.schedule = LrSchedule::kConstant;
  CHECK(scheduled_lr(tc, 999, 1000) == 1.0);
}

TEST_CASE("corpus smaller than a batch is a configuration error") {
  auto data = repeated("password", 10);
  CHECK_THROWS_AS(pretrain(ModelConfig::toy(), data, small_run(1, 11, 1e-3, 1)), ConfigError);
  CHECK_NOTHROW(pretrain(ModelConfig::toy(), data, small_run(1, 10, 1e-3, 1)));

  ModelConfig tiny = ModelConfig::toy();
  tiny.max_positions = 8;
  CHECK_THROWS_AS(pretrain(tiny, data, small_run(1, 2, 1e-3, 1)), ConfigError);

  auto tc = small_run(1, 2, 1e-3, 1);
  tc.mode = TrainingMode::kFinetune;
  CHECK_THROWS_AS(pretrain(ModelConfig::toy(), data, tc), ConfigError);
}

TEST_CASE("initial loss is near uniform ignorance") {
  auto data = grammar_corpus(256, 3);
  for (std::uint64_t seed : {1, 2, 3}) {
    auto r = pretrain(ModelConfig::toy(), data, small_run(1, 64, 1e-3, seed));
    CHECK(std::abs(r.report.initial_loss - std::log(100.0)) <= 0.2);
    CHECK(std::isfinite(r.report.epochs[0].loss));
  }
  auto r = pretrain(ModelConfig::small(), Corpus(synthetic_passwords(Grammar::kWordDigits, 8, 1), "s"),
                    small_run(1, 8, 1e-4, 5));
  CHECK(std::abs(r.report.initial_loss - std::log(100.0)) <= 0.2);
}

TEST_CASE("a single repeated password is memorized") {
  auto data = repeated("q1w2e3r4", 1024);
  auto r = pretrain(ModelConfig::toy(), data, small_run(10, 16, 1e-2, 7));
  const auto& ep = r.report.epochs;
  REQUIRE(ep.size() == 10);
  CHECK(ep.back().loss < 0.01);
  CHECK(cross_entropy(r.model, repeated("q1w2e3r4", 1)) < 0.01);
  for (std::size_t i = 2; i < ep.size(); ++i) CHECK(ep[i].loss <= ep[i - 1].loss);
  for (const auto& e : ep) CHECK(e.loss >= 0.0);
}

TEST_CASE("an enumerable four-password distribution is learned") {
  const std::vector<std::pair<std::string, std::size_t>> dist{
      {"abcdef", 400}, {"qwerty", 300}, {"123456", 200}, {"zxcvbn", 100}};
  std::vector<std::string> pws;
  for (const auto& [pw, c] : dist) pws.insert(pws.end(), c, pw);
  auto r = pretrain(ModelConfig::toy(), Corpus(pws, "four"), small_run(10, 16, 5e-3, 11));

  // Total variation over all strings: the mass outside the support counts fully.
  double inside = 0, tv = 0;
  for (const auto& [pw, c] : dist) {
    const double p = std::exp(r.model.log_prob(pw));
    inside += p;
    tv += std::abs(p - static_cast<double>(c) / 1000.0);
  }
  tv = 0.5 * (tv + (1.0 - inside));
  INFO("total variation " << tv);
  CHECK(tv < 0.05);
}

TEST_CASE("training is deterministic for a fixed seed and thread count") {
  auto data = grammar_corpus(96, 4);
  for (std::size_t threads : {1, 3}) {
    auto tc = small_run(2, 16, 2e-3, 9);
    tc.threads = threads;
    auto a = pretrain(ModelConfig::toy(), data, tc);
    auto b = pretrain(ModelConfig::toy(), data, tc);
    CHECK(std::equal(a.model.parameters().begin(), a.model.parameters().end(), b.model.parameters().begin()));
    CHECK(serialize_checkpoint(a.model) == serialize_checkpoint(b.model));
    CHECK(a.report.epochs.back().loss == b.report.epochs.back().loss);
  }
  auto c = pretrain(ModelConfig::toy(), data, small_run(2, 16, 2e-3, 10));
  auto d = pretrain(ModelConfig::toy(), data, small_run(2, 16, 2e-3, 9));
  CHECK(serialize_checkpoint(c.model) != serialize_checkpoint(d.model));
}

TEST_CASE("finetuning with a vanishing learning rate is a no-op") {
  auto data = grammar_corpus(128, 5);
  auto held = grammar_corpus(64, 6);
  auto base = pretrain(ModelConfig::toy(), data, small_run(2, 32, 2e-3, 1));
  auto tc = TrainingConfig::finetune_defaults();
  tc.epochs = 2;
  tc.batch_size = 32;
  tc.learning_rate = 1e-12;
  auto ft = finetune(base.model, data, tc, &held);
  REQUIRE(ft.report.eval_loss_before);
  REQUIRE(ft.report.eval_loss_after);
  CHECK(*ft.report.eval_loss_before == cross_entropy(base.model, held));
  CHECK(std::abs(*ft.report.eval_loss_after - *ft.report.eval_loss_before) <= 1e-6);

  tc.mode = TrainingMode::kPretrain;
  CHECK_THROWS_AS(finetune(base.model, data, tc), ConfigError);
}

TEST_CASE("finetuning from a checkpoint file") {
  auto data = grammar_corpus(64, 7);
  auto base = pretrain(ModelConfig::toy(), data, small_run(1, 32, 2e-3, 1));
  const auto path = temp_path("base.pwck");
  save_checkpoint(base.model, path);

  auto loaded = load_checkpoint(path);
  CHECK(loaded.config() == base.model.config());
  Decoder rounded = base.model;
  rounded.round_to_float();
  CHECK(std::equal(loaded.parameters().begin(), loaded.parameters().end(), rounded.parameters().begin()));

  auto tc = TrainingConfig::finetune_defaults();
  tc.epochs = 1;
  tc.batch_size = 16;
  auto ft = finetune(path, data, tc, nullptr, ModelConfig::toy());
  CHECK(ft.model.config() == ModelConfig::toy());

  ModelConfig other = ModelConfig::toy();
  other.layers = 3;
  CHECK_THROWS_AS(finetune(path, data, tc, nullptr, other), FormatError);
  CHECK_THROWS_AS(finetune(temp_path("missing.pwck"), data, tc), IoError);
  std::filesystem::remove(path);
}

TEST_CASE("report as line-delimited records") {
  auto data = grammar_corpus(64, 8);
  auto tc = small_run(2, 16, 2e-3, 1);
  tc.log_every = 2;
  auto r = pretrain(ModelConfig::toy(), data, tc);
  CHECK(r.report.step_records.size() == 4);
  std::istringstream in(r.report.to_jsonl());
  std::string line;
  std::size_t steps = 0, epochs = 0, summaries = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    const std::string kind = j.at("record");
    if (kind == "step") ++steps;
    if (kind == "epoch") {
      ++epochs;
      CHECK(j.contains("loss"));
      CHECK(j.contains("lr"));
      CHECK(j.contains("step"));
      CHECK(j.contains("timestamp"));
    }
    if (kind == "summary") ++summaries;
  }
  CHECK(steps == 4);
  CHECK(epochs == 2);
  CHECK(summaries == 1);
}
