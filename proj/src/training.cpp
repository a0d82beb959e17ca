#include "pwlm/training.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "parallel.hpp"
#include "pwlm/checkpoint.hpp"
#include "pwlm/error.hpp"

namespace pwlm {

TrainingConfig TrainingConfig::pretrain_defaults() { return {}; }

TrainingConfig TrainingConfig::finetune_defaults() {
  TrainingConfig tc;
  tc.learning_rate = 5e-5;
  tc.mode = TrainingMode::kFinetune;
  return tc;
}

void TrainingConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
}

std::string TrainingReport::to_jsonl() const {
  std::ostringstream out;
  for (const auto& r : step_records) out << r.dump() << '\n';
  for (const auto& e : epochs) {
    out << nlohmann::json{{"record", "epoch"}, {"epoch", e.epoch}, {"step", e.step},
                          {"loss", e.loss},    {"lr", e.lr},       {"timestamp", e.seconds}}
               .dump()
        << '\n';
  }
  nlohmann::json summary{{"record", "summary"},
                         {"initial_loss", initial_loss},
                         {"wall_seconds", wall_seconds},
                         {"checkpoint", checkpoint}};
  if (eval_loss_before) summary["eval_loss_before"] = *eval_loss_before;
  if (eval_loss_after) summary["eval_loss_after"] = *eval_loss_after;
  out << summary.dump() << '\n';
  return out.str();
}

double cross_entropy(const Decoder& model, const Corpus& data, std::size_t threads) {
  if (data.empty()) throw Error("cross_entropy of an empty corpus");
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, data.size()));
  std::vector<double> nll(workers, 0.0);
  std::vector<std::size_t> tokens(workers, 0);
  detail::parallel_chunks(data.size(), workers, [&](std::size_t b, std::size_t e, std::size_t w) {
    for (std::size_t i = b; i < e; ++i) {
      auto loss = sequence_loss(model, encode(data[i]));
      nll[w] += loss.nll;
      tokens[w] += loss.tokens;
    }
  });
  double total = 0;
  std::size_t count = 0;
  for (std::size_t w = 0; w < workers; ++w) {
    total += nll[w];
    count += tokens[w];
  }
  return total / static_cast<double>(count);
}

namespace {

class AdamW {
 public:
  AdamW(const Decoder& model, const TrainingConfig& tc)
      : tc_(tc), m_(model.parameters().size(), 0.0), v_(m_.size(), 0.0),
        decay_(m_.size(), 0) {
    for (const auto& t : model.layout().tensors()) {
      // Matrices (including embeddings) decay; biases and LN params do not.
      if (t.shape.size() == 2) std::fill_n(decay_.begin() + t.offset, t.size, 1);
    }
  }

  void step(std::span<double> params, std::span<const double> grad, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(tc_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(tc_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grad[i];
      m_[i] = tc_.beta1 * m_[i] + (1.0 - tc_.beta1) * g;
      v_[i] = tc_.beta2 * v_[i] + (1.0 - tc_.beta2) * g * g;
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      if (decay_[i]) params[i] -= lr * tc_.weight_decay * params[i];
      params[i] -= lr * mhat / (std::sqrt(vhat) + tc_.adam_eps);
    }
  }

 private:
  const TrainingConfig& tc_;
  std::vector<double> m_, v_;
  std::vector<char> decay_;
  std::uint64_t t_ = 0;
};

TrainResult run_training(Decoder model, const Corpus& data, const TrainingConfig& tc,
                         const Corpus* eval) {
  tc.validate();
  if (data.size() < tc.batch_size) {
    throw ConfigError("corpus of " + std::to_string(data.size()) +
                      " passwords is smaller than one batch of " + std::to_string(tc.batch_size));
  }
  for (const auto& pw : data) {
    if (!model.can_score(pw)) {
      throw ConfigError("training password of length " + std::to_string(pw.size()) +
                        " does not fit max_positions " +
                        std::to_string(model.config().max_positions));
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  TrainResult result{std::move(model), {}};
  Decoder& m = result.model;
  TrainingReport& report = result.report;
  if (eval) report.eval_loss_before = cross_entropy(m, *eval, tc.threads);

  std::vector<TokenSequence> encoded;
  encoded.reserve(data.size());
  for (const auto& pw : data) encoded.push_back(encode(pw));

  const std::size_t steps_per_epoch = (data.size() + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total_steps = steps_per_epoch * tc.epochs;
  const std::size_t workers = std::max<std::size_t>(1, tc.threads);
  const std::size_t n_params = m.parameters().size();

  AdamW opt(m, tc);
  std::vector<ParamBuffer> grads(workers, ParamBuffer(n_params));
  std::vector<double> shard_nll(workers);
  std::vector<std::size_t> order(data.size());
  std::size_t step = 0;
  const bool dropout = m.config().attention_dropout > 0.0;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(detail::mix_seed(tc.seed, 0x5EED0000 + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_nll = 0;
    std::size_t epoch_tokens = 0;
    double lr = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const std::size_t begin = s * tc.batch_size;
      const std::size_t end = std::min(begin + tc.batch_size, order.size());
      std::size_t batch_tokens = 0;
      for (std::size_t i = begin; i < end; ++i) batch_tokens += encoded[order[i]].size() - 1;
      const double scale = 1.0 / static_cast<double>(batch_tokens);

      detail::parallel_chunks(end - begin, workers, [&](std::size_t b, std::size_t e, std::size_t w) {
        std::fill(grads[w].begin(), grads[w].end(), 0.0);
        shard_nll[w] = 0;
        for (std::size_t i = b; i < e; ++i) {
          const std::size_t idx = order[begin + i];
          std::mt19937_64 rng(detail::mix_seed(tc.seed, step * tc.batch_size + i));
          auto loss = sequence_loss(m, encoded[idx], grads[w], scale, dropout ? &rng : nullptr);
          shard_nll[w] += loss.nll;
        }
      });
      const std::size_t used = std::max<std::size_t>(1, std::min(workers, end - begin));
      for (std::size_t w = 1; w < used; ++w) {
        for (std::size_t i = 0; i < n_params; ++i) grads[0][i] += grads[w][i];
      }
      double batch_nll = 0;
      for (std::size_t w = 0; w < used; ++w) batch_nll += shard_nll[w];
      if (step == 0) report.initial_loss = batch_nll * scale;

      lr = scheduled_lr(tc, step, total_steps);
      opt.step(m.parameters(), grads[0], lr);
      epoch_nll += batch_nll;
      epoch_tokens += batch_tokens;
      if (tc.log_every > 0 && (step + 1) % tc.log_every == 0) {
        report.step_records.push_back({{"record", "step"},
                                       {"epoch", epoch},
                                       {"step", step + 1},
                                       {"loss", batch_nll * scale},
                                       {"lr", lr},
                                       {"timestamp", elapsed()}});
      }
    }
    report.epochs.push_back(
        {epoch, step, epoch_nll / static_cast<double>(epoch_tokens), lr, elapsed()});
  }
  if (eval) report.eval_loss_after = cross_entropy(m, *eval, tc.threads);
  report.wall_seconds = elapsed();
  return result;
}

}  // namespace

std::size_t warmup_steps_for(const TrainingConfig& tc, std::size_t total_steps) {
  return tc.warmup_steps > 0 ? tc.warmup_steps : std::max<std::size_t>(1, total_steps / 100);
}

double scheduled_lr(const TrainingConfig& tc, std::size_t step, std::size_t total_steps) {
  if (tc.schedule == LrSchedule::kConstant) return tc.learning_rate;
  const std::size_t warmup = warmup_steps_for(tc, total_steps);
  if (step < warmup) {
    return tc.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  const double remaining = static_cast<double>(total_steps - step);
  const double span = static_cast<double>(std::max<std::size_t>(1, total_steps - warmup));
  return tc.learning_rate * remaining / span;
}

TrainResult pretrain(const ModelConfig& cfg, const Corpus& data, const TrainingConfig& tc,
                     const Corpus* eval) {
  if (tc.mode != TrainingMode::kPretrain) throw ConfigError("pretrain needs mode = pretrain");
  Decoder model = Decoder::initialized(cfg, tc.seed);
  return run_training(std::move(model), data, tc, eval);
}

TrainResult finetune(const Decoder& base, const Corpus& data, const TrainingConfig& tc,
                     const Corpus* eval) {
  if (tc.mode != TrainingMode::kFinetune) throw ConfigError("finetune needs mode = finetune");
  return run_training(base, data, tc, eval);
}

TrainResult finetune(const std::filesystem::path& base_checkpoint, const Corpus& data,
                     const TrainingConfig& tc, const Corpus* eval,
                     const std::optional<ModelConfig>& expected) {
  Decoder base = load_checkpoint(base_checkpoint);
  if (expected && !(*expected == base.config())) {
    throw FormatError("checkpoint " + base_checkpoint.string() +
                      " does not match the requested model config");
  }
  return finetune(base, data, tc, eval);
}

}  // namespace pwlm
