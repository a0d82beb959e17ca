#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "pwlm/guessing_model.hpp"
#include "pwlm/tokenizer.hpp"

namespace pwlm {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
// Parameter and gradient storage. Vectorized kernels pick their loop peeling
// from the address, so a fixed alignment keeps results bit-reproducible.
using ParamBuffer = std::vector<double, Eigen::aligned_allocator<double>>;

struct ModelConfig {
  std::size_t layers = 1;
  std::size_t embed_dim = 8;
  std::size_t intermediate_dim = 16;
  std::size_t heads = 2;
  std::size_t vocab_size = tok::kVocabSize;
  std::size_t max_positions = 32;
  double attention_dropout = 0.1;
  bool tie_output_embedding = true;

  std::size_t head_dim() const noexcept { return embed_dim / heads; }
  // Throws ConfigError on a non-integral head dimension, zero sizes, an
  // untied head (not supported) or a dropout outside [0, 1).
  void validate() const;

  static ModelConfig base();
  static ModelConfig small();
  // Desk-scale model used by tests and fixtures.
  static ModelConfig toy();
  // "base", "small" or "toy".
  static ModelConfig preset(std::string_view name);

  bool operator==(const ModelConfig&) const = default;
};

// vocab*E + max_positions*E + l*(4(E^2+E) + E*I + I + I*E + E + 4E) + 2E
std::uint64_t parameter_count(const ModelConfig& cfg);

struct TensorInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;  // in elements, into the flat parameter vector
  std::size_t size = 0;
  bool is_layer_norm = false;
};

// Offsets of one decoder block's tensors inside the flat parameter vector.
// Projection matrices are stored [in x out] so that y = x W + b.
struct BlockOffsets {
  std::size_t ln1_g, ln1_b;
  std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t ln2_g, ln2_b;
  std::size_t w1, b1, w2, b2;
};

class ParameterLayout {
 public:
  explicit ParameterLayout(const ModelConfig& cfg);

  const std::vector<TensorInfo>& tensors() const noexcept { return tensors_; }
  const TensorInfo& find(std::string_view name) const;
  std::size_t total() const noexcept { return total_; }

  std::size_t token_embedding() const noexcept { return tok_emb_; }
  std::size_t position_embedding() const noexcept { return pos_emb_; }
  const BlockOffsets& block(std::size_t i) const { return blocks_.at(i); }
  std::size_t final_ln_g() const noexcept { return lnf_g_; }
  std::size_t final_ln_b() const noexcept { return lnf_b_; }

 private:
  std::vector<TensorInfo> tensors_;
  std::vector<BlockOffsets> blocks_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, lnf_g_ = 0, lnf_b_ = 0;
  std::size_t total_ = 0;
};

// M(i, j) = 0 for i >= j, -inf above the diagonal.
Matrix causal_mask(std::size_t seq_len);

// Causal transformer decoder over the fixed 100-token vocabulary. Pre-LN
// blocks, GELU feed-forward, final layer norm and an output head tied to the
// token embedding. Parameters live in one flat vector described by layout().
class Decoder final : public GuessingModel {
 public:
  // All parameters zero; LN scales are NOT set to one.
  explicit Decoder(const ModelConfig& cfg);
  // N(0, 0.02) for embeddings and projections, zero biases, unit LN scales.
  static Decoder initialized(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return cfg_; }
  const ParameterLayout& layout() const noexcept { return layout_; }
  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }

  // Logits for every input position, seq_len x vocab. Inference mode (no
  // dropout). Throws BoundsError when ids.size() > max_positions.
  Matrix forward(std::span<const TokenId> ids) const;

  // softmax of the last position's logits.
  std::vector<double> next_token_probs(std::span<const TokenId> prefix) const;

  // Largest password length that fits the context with [SOS] and [EOS].
  std::size_t max_password_length() const noexcept { return cfg_.max_positions - 2; }

  double log_prob(std::string_view pw) const override;
  bool can_score(std::string_view pw) const override;
  std::vector<Sample> sample(std::size_t n, std::uint64_t seed) const override;
  std::string model_id() const override { return model_id_; }
  void set_model_id(std::string id) { model_id_ = std::move(id); }

  // Worker threads for sampling/scoring; 0 means one.
  void set_threads(std::size_t threads) noexcept { threads_ = threads; }
  std::size_t threads() const noexcept { return threads_; }

  // Rounds every parameter to the nearest float, matching what a checkpoint
  // round trip stores.
  void round_to_float();

 private:
  ModelConfig cfg_;
  ParameterLayout layout_;
  ParamBuffer params_;
  std::string model_id_ = "transformer";
  std::size_t threads_ = 1;
};

struct SequenceLoss {
  double nll = 0.0;          // summed over predicted tokens, nats
  std::size_t tokens = 0;    // number of predicted tokens (len - 1)
};

// Negative log-likelihood of predicting ids[1..] from ids[..-1]. When `grad`
// is non-empty, accumulates `scale` * d(nll)/d(params) into it. A non-null
// `dropout_rng` enables attention dropout (training mode).
SequenceLoss sequence_loss(const Decoder& model, std::span<const TokenId> ids,
                           std::span<double> grad = {}, double scale = 1.0,
                           std::mt19937_64* dropout_rng = nullptr);

}  // namespace pwlm
