#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pwlm/corpus.hpp"
#include "pwlm/model.hpp"

namespace pwlm {

enum class LrSchedule { kConstant, kWarmupDecay };
enum class TrainingMode { kPretrain, kFinetune };

struct TrainingConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 256;
  double learning_rate = 5e-4;
  LrSchedule schedule = LrSchedule::kWarmupDecay;
  // 0 selects 1% of the total number of optimizer steps (at least one).
  std::size_t warmup_steps = 0;
  std::uint64_t seed = 0;
  TrainingMode mode = TrainingMode::kPretrain;

  // AdamW
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;

  // Each worker owns a gradient buffer; results are bit-identical for a
  // fixed seed and thread count.
  std::size_t threads = 1;
  // Emit a step record every `log_every` optimizer steps (0: epochs only).
  std::size_t log_every = 0;

  static TrainingConfig pretrain_defaults();
  static TrainingConfig finetune_defaults();
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;   // optimizer steps completed at the end of the epoch
  double loss = 0.0;      // mean NLL per predicted token, nats
  double lr = 0.0;        // learning rate used by the epoch's last step
  double seconds = 0.0;   // since training start
};

struct TrainingReport {
  std::vector<EpochRecord> epochs;
  double initial_loss = 0.0;  // loss of the very first batch before any update
  double wall_seconds = 0.0;
  std::optional<double> eval_loss_before;
  std::optional<double> eval_loss_after;
  std::string checkpoint;
  // Step-level records when TrainingConfig::log_every > 0.
  std::vector<nlohmann::json> step_records;

  // One JSON object per line: step records, epoch records, then a summary.
  std::string to_jsonl() const;
};

struct TrainResult {
  Decoder model;
  TrainingReport report;
};

// Warmup length: tc.warmup_steps, or 1% of the steps when that is 0.
std::size_t warmup_steps_for(const TrainingConfig& tc, std::size_t total_steps);
// Rate for 0-based optimizer step `step`: linear ramp to the peak over the
// warmup, then linear decay reaching 0 after the last step.
double scheduled_lr(const TrainingConfig& tc, std::size_t step, std::size_t total_steps);

// Mean negative log-likelihood per predicted token (inference mode).
double cross_entropy(const Decoder& model, const Corpus& data, std::size_t threads = 1);

// Fresh N(0, 0.02) init from tc.seed, then minimizes mean per-token NLL.
// Throws ConfigError when the corpus is smaller than one batch.
TrainResult pretrain(const ModelConfig& cfg, const Corpus& data, const TrainingConfig& tc,
                     const Corpus* eval = nullptr);

// Continues training every parameter of `base` on `data`.
TrainResult finetune(const Decoder& base, const Corpus& data, const TrainingConfig& tc,
                     const Corpus* eval = nullptr);
// Loads the checkpoint first; when `expected` is set, its config must match.
TrainResult finetune(const std::filesystem::path& base_checkpoint, const Corpus& data,
                     const TrainingConfig& tc, const Corpus* eval = nullptr,
                     const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace pwlm
