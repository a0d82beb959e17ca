#include "pwlm/model.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "parallel.hpp"
#include "pwlm/corpus.hpp"
#include "pwlm/error.hpp"

namespace pwlm {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;

using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;
using ConstRowMap = Eigen::Map<const RowVec>;
using MutRowMap = Eigen::Map<RowVec>;

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void ModelConfig::validate() const {
  if (layers == 0 || embed_dim == 0 || intermediate_dim == 0 || heads == 0 ||
      max_positions < 2) {
    throw ConfigError("model dimensions must be positive and max_positions >= 2");
  }
  if (embed_dim % heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (vocab_size != static_cast<std::size_t>(tok::kVocabSize)) {
    throw ConfigError("vocab_size must be " + std::to_string(tok::kVocabSize));
  }
  if (!(attention_dropout >= 0.0 && attention_dropout < 1.0)) {
    throw ConfigError("attention_dropout must lie in [0, 1)");
  }
  if (!tie_output_embedding) throw ConfigError("only tied output embeddings are supported");
}

ModelConfig ModelConfig::base() {
  ModelConfig c;
  c.layers = 12;
  c.embed_dim = 768;
  c.intermediate_dim = 3072;
  c.heads = 12;
  c.max_positions = 1024;
  return c;
}

ModelConfig ModelConfig::small() {
  ModelConfig c;
  c.layers = 6;
  c.embed_dim = 256;
  c.intermediate_dim = 1024;
  c.heads = 4;
  c.max_positions = 64;
  return c;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.layers = 2;
  c.embed_dim = 32;
  c.intermediate_dim = 64;
  c.heads = 2;
  c.max_positions = 32;
  return c;
}

ModelConfig ModelConfig::preset(std::string_view name) {
  if (name == "base") return base();
  if (name == "small") return small();
  if (name == "toy") return toy();
  throw ConfigError("unknown model preset '" + std::string(name) + "' (base, small, toy)");
}

std::uint64_t parameter_count(const ModelConfig& cfg) {
  const std::uint64_t v = cfg.vocab_size, p = cfg.max_positions, e = cfg.embed_dim,
                      i = cfg.intermediate_dim, l = cfg.layers;
  const std::uint64_t per_block = 4 * (e * e + e) + e * i + i + i * e + e + 4 * e;
  return v * e + p * e + l * per_block + 2 * e;
}

// ---------------------------------------------------------------------------
// Layout

ParameterLayout::ParameterLayout(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t e = cfg.embed_dim, inter = cfg.intermediate_dim;
  auto add = [this](std::string name, std::vector<std::size_t> shape, bool ln = false) {
    std::size_t size = 1;
    for (auto d : shape) size *= d;
    tensors_.push_back({std::move(name), std::move(shape), total_, size, ln});
    total_ += size;
    return tensors_.back().offset;
  };
  tok_emb_ = add("tok_emb", {cfg.vocab_size, e});
  pos_emb_ = add("pos_emb", {cfg.max_positions, e});
  for (std::size_t b = 0; b < cfg.layers; ++b) {
    const std::string p = "blocks." + std::to_string(b) + ".";
    BlockOffsets o{};
    o.ln1_g = add(p + "ln1.g", {e}, true);
    o.ln1_b = add(p + "ln1.b", {e}, true);
    o.wq = add(p + "attn.wq", {e, e});
    o.bq = add(p + "attn.bq", {e});
    o.wk = add(p + "attn.wk", {e, e});
    o.bk = add(p + "attn.bk", {e});
    o.wv = add(p + "attn.wv", {e, e});
    o.bv = add(p + "attn.bv", {e});
    o.wo = add(p + "attn.wo", {e, e});
    o.bo = add(p + "attn.bo", {e});
    o.ln2_g = add(p + "ln2.g", {e}, true);
    o.ln2_b = add(p + "ln2.b", {e}, true);
    o.w1 = add(p + "ffn.w1", {e, inter});
    o.b1 = add(p + "ffn.b1", {inter});
    o.w2 = add(p + "ffn.w2", {inter, e});
    o.b2 = add(p + "ffn.b2", {e});
    blocks_.push_back(o);
  }
  lnf_g_ = add("ln_f.g", {e}, true);
  lnf_b_ = add("ln_f.b", {e}, true);
  if (total_ != parameter_count(cfg)) {
    throw ConfigError("internal: materialized tensors disagree with parameter_count");
  }
}

const TensorInfo& ParameterLayout::find(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw Error("no tensor named '" + std::string(name) + "'");
}

Matrix causal_mask(std::size_t seq_len) {
  const auto n = static_cast<Eigen::Index>(seq_len);
  Matrix m = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = -std::numeric_limits<double>::infinity();
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forward / backward kernels

namespace {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi * kInvSqrt2);
  return cdf + x * pdf;
}

struct LayerNormCache {
  Matrix xhat;
  Eigen::VectorXd rstd;
};

Matrix layer_norm(const Matrix& x, const double* g, const double* b, std::size_t e,
                  LayerNormCache* cache) {
  const auto n = static_cast<Eigen::Index>(e);
  ConstRowMap gamma(g, n), beta(b, n);
  Matrix xhat(x.rows(), x.cols());
  Eigen::VectorXd rstd(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    rstd(r) = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(r) = (x.row(r).array() - mean) * rstd(r);
  }
  Matrix y = (xhat.array().rowwise() * gamma.array()).rowwise() + beta.array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

// Returns dx; accumulates dgamma/dbeta.
Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& c, const double* g,
                           double* dg, double* db, std::size_t e) {
  const auto n = static_cast<Eigen::Index>(e);
  ConstRowMap gamma(g, n);
  MutRowMap(dg, n) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  MutRowMap(db, n) += dy.colwise().sum();
  Matrix dxhat = dy.array().rowwise() * gamma.array();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double m1 = dxhat.row(r).mean();
    const double m2 = (dxhat.row(r).array() * c.xhat.row(r).array()).mean();
    dx.row(r) = c.rstd(r) * (dxhat.row(r).array() - m1 - c.xhat.row(r).array() * m2);
  }
  return dx;
}

struct BlockCache {
  LayerNormCache ln1, ln2;
  Matrix a;                      // ln1 output
  Matrix q, k, v;                // projections
  std::vector<Matrix> probs;     // per head softmax output
  std::vector<Matrix> keep;      // per head dropout multiplier (empty if none)
  Matrix attn_cat;               // concatenated head outputs
  Matrix c;                      // ln2 output
  Matrix h1;                     // pre-activation
  Matrix act;                    // gelu(h1)
};

struct ForwardCache {
  std::vector<BlockCache> blocks;
  LayerNormCache ln_f;
  Matrix final_hidden;
};

class Kernels {
 public:
  explicit Kernels(const Decoder& m)
      : cfg_(m.config()), layout_(m.layout()), p_(m.parameters().data()) {}

  ConstMap mat(std::size_t off, std::size_t rows, std::size_t cols) const {
    return ConstMap(p_ + off, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  }
  ConstRowMap vec(std::size_t off, std::size_t n) const {
    return ConstRowMap(p_ + off, static_cast<Eigen::Index>(n));
  }

  Matrix embed(std::span<const TokenId> ids) const {
    const std::size_t e = cfg_.embed_dim;
    Matrix x(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(e));
    for (std::size_t t = 0; t < ids.size(); ++t) {
      if (ids[t] < 0 || ids[t] >= tok::kVocabSize) throw EncodingError("token id out of range", t);
      x.row(static_cast<Eigen::Index>(t)) =
          vec(layout_.token_embedding() + static_cast<std::size_t>(ids[t]) * e, e) +
          vec(layout_.position_embedding() + t * e, e);
    }
    return x;
  }

  // Runs every block and the final layer norm; returns hidden states.
  Matrix run(std::span<const TokenId> ids, ForwardCache* cache, std::mt19937_64* rng) const {
    if (ids.size() > cfg_.max_positions) {
      throw BoundsError("sequence of " + std::to_string(ids.size()) +
                        " tokens exceeds max_positions " + std::to_string(cfg_.max_positions));
    }
    const std::size_t e = cfg_.embed_dim, inter = cfg_.intermediate_dim, nh = cfg_.heads,
                      hd = cfg_.head_dim();
    const auto T = static_cast<Eigen::Index>(ids.size());
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const Matrix mask = causal_mask(ids.size());
    const double drop = cfg_.attention_dropout;
    const bool dropout = rng != nullptr && drop > 0.0;
    std::bernoulli_distribution keep_dist(1.0 - drop);

    Matrix x = embed(ids);
    if (cache) cache->blocks.resize(cfg_.layers);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const BlockOffsets& o = layout_.block(l);
      BlockCache local;
      BlockCache& bc = cache ? cache->blocks[l] : local;

      bc.a = layer_norm(x, p_ + o.ln1_g, p_ + o.ln1_b, e, cache ? &bc.ln1 : nullptr);
      bc.q = (bc.a * mat(o.wq, e, e)).rowwise() + vec(o.bq, e);
      bc.k = (bc.a * mat(o.wk, e, e)).rowwise() + vec(o.bk, e);
      bc.v = (bc.a * mat(o.wv, e, e)).rowwise() + vec(o.bv, e);
      bc.attn_cat.resize(T, static_cast<Eigen::Index>(e));
      bc.probs.resize(nh);
      bc.keep.assign(nh, Matrix());
      for (std::size_t h = 0; h < nh; ++h) {
        const auto c0 = static_cast<Eigen::Index>(h * hd);
        const auto w = static_cast<Eigen::Index>(hd);
        Matrix s = (bc.q.middleCols(c0, w) * bc.k.middleCols(c0, w).transpose()) * scale + mask;
        for (Eigen::Index r = 0; r < T; ++r) {
          const double mx = s.row(r).maxCoeff();
          s.row(r) = (s.row(r).array() - mx).exp();
          s.row(r) /= s.row(r).sum();
        }
        bc.probs[h] = std::move(s);
        if (dropout) {
          Matrix keep(T, T);
          for (Eigen::Index r = 0; r < T; ++r) {
            for (Eigen::Index c = 0; c < T; ++c) keep(r, c) = keep_dist(*rng) ? 1.0 / (1.0 - drop) : 0.0;
          }
          bc.attn_cat.middleCols(c0, w) =
              bc.probs[h].cwiseProduct(keep) * bc.v.middleCols(c0, w);
          bc.keep[h] = std::move(keep);
        } else {
          bc.attn_cat.middleCols(c0, w) = bc.probs[h] * bc.v.middleCols(c0, w);
        }
      }
      x += (bc.attn_cat * mat(o.wo, e, e)).rowwise() + vec(o.bo, e);

      bc.c = layer_norm(x, p_ + o.ln2_g, p_ + o.ln2_b, e, cache ? &bc.ln2 : nullptr);
      bc.h1 = (bc.c * mat(o.w1, e, inter)).rowwise() + vec(o.b1, inter);
      bc.act = bc.h1.unaryExpr(&gelu);
      x += (bc.act * mat(o.w2, inter, e)).rowwise() + vec(o.b2, e);
    }
    Matrix hidden = layer_norm(x, p_ + layout_.final_ln_g(), p_ + layout_.final_ln_b(), e,
                               cache ? &cache->ln_f : nullptr);
    if (cache) cache->final_hidden = hidden;
    return hidden;
  }

  Matrix logits(const Matrix& hidden) const {
    return hidden * mat(layout_.token_embedding(), cfg_.vocab_size, cfg_.embed_dim).transpose();
  }

  // dlogits: T x V. Accumulates into grad.
  void backward(std::span<const TokenId> ids, const ForwardCache& cache, const Matrix& dlogits,
                double* grad) const {
    const std::size_t e = cfg_.embed_dim, inter = cfg_.intermediate_dim, nh = cfg_.heads,
                      hd = cfg_.head_dim(), V = cfg_.vocab_size;
    const auto T = static_cast<Eigen::Index>(ids.size());
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    auto gmat = [grad](std::size_t off, std::size_t r, std::size_t c) {
      return MutMap(grad + off, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    };
    auto gvec = [grad](std::size_t off, std::size_t n) {
      return MutRowMap(grad + off, static_cast<Eigen::Index>(n));
    };

    // Tied head: logits = H * E^T.
    gmat(layout_.token_embedding(), V, e) += dlogits.transpose() * cache.final_hidden;
    Matrix dh = dlogits * mat(layout_.token_embedding(), V, e);
    Matrix dx = layer_norm_backward(dh, cache.ln_f, p_ + layout_.final_ln_g(),
                                    grad + layout_.final_ln_g(), grad + layout_.final_ln_b(), e);

    for (std::size_t li = cfg_.layers; li-- > 0;) {
      const BlockOffsets& o = layout_.block(li);
      const BlockCache& bc = cache.blocks[li];

      // Feed-forward branch.
      gmat(o.w2, inter, e) += bc.act.transpose() * dx;
      gvec(o.b2, e) += dx.colwise().sum();
      Matrix dact = dx * mat(o.w2, inter, e).transpose();
      Matrix dh1 = dact.cwiseProduct(bc.h1.unaryExpr(&gelu_grad));
      gmat(o.w1, e, inter) += bc.c.transpose() * dh1;
      gvec(o.b1, inter) += dh1.colwise().sum();
      Matrix dc = dh1 * mat(o.w1, e, inter).transpose();
      dx += layer_norm_backward(dc, bc.ln2, p_ + o.ln2_g, grad + o.ln2_g, grad + o.ln2_b, e);

      // Attention branch.
      gmat(o.wo, e, e) += bc.attn_cat.transpose() * dx;
      gvec(o.bo, e) += dx.colwise().sum();
      Matrix dcat = dx * mat(o.wo, e, e).transpose();
      Matrix dq(T, static_cast<Eigen::Index>(e)), dk(T, static_cast<Eigen::Index>(e)),
          dv(T, static_cast<Eigen::Index>(e));
      for (std::size_t h = 0; h < nh; ++h) {
        const auto c0 = static_cast<Eigen::Index>(h * hd);
        const auto w = static_cast<Eigen::Index>(hd);
        const Matrix& P = bc.probs[h];
        const bool dropped = bc.keep[h].size() > 0;
        Matrix pd = dropped ? Matrix(P.cwiseProduct(bc.keep[h])) : P;
        auto dout = dcat.middleCols(c0, w);
        dv.middleCols(c0, w) = pd.transpose() * dout;
        Matrix dp = dout * bc.v.middleCols(c0, w).transpose();
        if (dropped) dp = dp.cwiseProduct(bc.keep[h]);
        Eigen::VectorXd rowdot = (dp.cwiseProduct(P)).rowwise().sum();
        Matrix ds = P.cwiseProduct(dp.colwise() - rowdot) * scale;
        dq.middleCols(c0, w) = ds * bc.k.middleCols(c0, w);
        dk.middleCols(c0, w) = ds.transpose() * bc.q.middleCols(c0, w);
      }
      gmat(o.wq, e, e) += bc.a.transpose() * dq;
      gmat(o.wk, e, e) += bc.a.transpose() * dk;
      gmat(o.wv, e, e) += bc.a.transpose() * dv;
      gvec(o.bq, e) += dq.colwise().sum();
      gvec(o.bk, e) += dk.colwise().sum();
      gvec(o.bv, e) += dv.colwise().sum();
      Matrix da = dq * mat(o.wq, e, e).transpose() + dk * mat(o.wk, e, e).transpose() +
                  dv * mat(o.wv, e, e).transpose();
      dx += layer_norm_backward(da, bc.ln1, p_ + o.ln1_g, grad + o.ln1_g, grad + o.ln1_b, e);
    }

    for (Eigen::Index t = 0; t < T; ++t) {
      const auto id = static_cast<std::size_t>(ids[static_cast<std::size_t>(t)]);
      gvec(layout_.token_embedding() + id * e, e) += dx.row(t);
      gvec(layout_.position_embedding() + static_cast<std::size_t>(t) * e, e) += dx.row(t);
    }
  }

 private:
  const ModelConfig& cfg_;
  const ParameterLayout& layout_;
  const double* p_;
};

// Decoding of several sequences at once with per-slot key/value caches, used
// for sampling. Slots advance independently; each projection is one matrix
// product over all sequences fed in a step.
class BatchDecoder {
  using RowMajorMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

 public:
  BatchDecoder(const Decoder& m, std::size_t slots) : k_(m), m_(m) {
    keys_.resize(slots * m.config().layers);
    values_.resize(slots * m.config().layers);
    pos_.assign(slots, 0);
  }

  void reset(std::size_t slot) { pos_[slot] = 0; }

  // Feeds ids[r] to sequence slots[r] and returns their next-token logits,
  // one row each.
  Matrix step(std::span<const TokenId> ids, std::span<const std::size_t> slots) {
    const auto& cfg = m_.config();
    const auto& layout = m_.layout();
    const std::size_t e = cfg.embed_dim, inter = cfg.intermediate_dim, hd = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const double* p = m_.parameters().data();
    const auto rows = static_cast<Eigen::Index>(ids.size());

    Matrix x(rows, static_cast<Eigen::Index>(e));
    for (Eigen::Index r = 0; r < rows; ++r) {
      const std::size_t pos = pos_[slots[std::size_t(r)]];
      if (pos >= cfg.max_positions) throw BoundsError("incremental decoder exhausted its context");
      x.row(r) = k_.vec(layout.token_embedding() + static_cast<std::size_t>(ids[std::size_t(r)]) * e, e) +
                 k_.vec(layout.position_embedding() + pos * e, e);
    }
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const BlockOffsets& o = layout.block(l);
      Matrix a = layer_norm(x, p + o.ln1_g, p + o.ln1_b, e, nullptr);
      Matrix q = (a * k_.mat(o.wq, e, e)).rowwise() + k_.vec(o.bq, e);
      Matrix kk = (a * k_.mat(o.wk, e, e)).rowwise() + k_.vec(o.bk, e);
      Matrix vv = (a * k_.mat(o.wv, e, e)).rowwise() + k_.vec(o.bv, e);
      Matrix cat(rows, static_cast<Eigen::Index>(e));
      for (Eigen::Index r = 0; r < rows; ++r) {
        const std::size_t pos = pos_[slots[std::size_t(r)]];
        const auto t = static_cast<Eigen::Index>(pos);
        auto& kbuf = keys_[slots[std::size_t(r)] * cfg.layers + l];
        auto& vbuf = values_[slots[std::size_t(r)] * cfg.layers + l];
        const auto E = static_cast<Eigen::Index>(e);
        if (kbuf.size() < (pos + 1) * e) {
          kbuf.resize((pos + 1) * e);
          vbuf.resize((pos + 1) * e);
        }
        RowMajorMap keys(kbuf.data(), t + 1, E), values(vbuf.data(), t + 1, E);
        keys.row(t) = kk.row(r);
        values.row(t) = vv.row(r);
        for (std::size_t h = 0; h < cfg.heads; ++h) {
          const auto c0 = static_cast<Eigen::Index>(h * hd);
          const auto w = static_cast<Eigen::Index>(hd);
          RowVec s = (q.row(r).segment(c0, w) * keys.block(0, c0, t + 1, w).transpose()) * scale;
          s = (s.array() - s.maxCoeff()).exp();
          s /= s.sum();
          cat.row(r).segment(c0, w) = s * values.block(0, c0, t + 1, w);
        }
      }
      x += (cat * k_.mat(o.wo, e, e)).rowwise() + k_.vec(o.bo, e);
      Matrix c = layer_norm(x, p + o.ln2_g, p + o.ln2_b, e, nullptr);
      Matrix h1 = (c * k_.mat(o.w1, e, inter)).rowwise() + k_.vec(o.b1, inter);
      x += (h1.unaryExpr(&gelu) * k_.mat(o.w2, inter, e)).rowwise() + k_.vec(o.b2, e);
    }
    Matrix hidden = layer_norm(x, p + layout.final_ln_g(), p + layout.final_ln_b(), e, nullptr);
    for (std::size_t slot : slots) ++pos_[slot];
    return k_.logits(hidden);
  }

 private:
  Kernels k_;
  const Decoder& m_;
  // Row-major [position x embed] caches, grown on demand; [slot * layers + layer].
  std::vector<std::vector<double>> keys_, values_;
  std::vector<std::size_t> pos_;
};

void log_softmax_inplace(RowVec& row) {
  const double mx = row.maxCoeff();
  const double lse = mx + std::log((row.array() - mx).exp().sum());
  row.array() -= lse;
}

}  // namespace

// ---------------------------------------------------------------------------
// Decoder

Decoder::Decoder(const ModelConfig& cfg)
    : cfg_(cfg), layout_(cfg), params_(layout_.total(), 0.0) {}

Decoder Decoder::initialized(const ModelConfig& cfg, std::uint64_t seed) {
  Decoder d(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (const auto& t : d.layout_.tensors()) {
    double* p = d.params_.data() + t.offset;
    const bool is_bias = t.shape.size() == 1 && !t.is_layer_norm;
    if (t.is_layer_norm) {
      const bool is_scale = t.name.ends_with(".g");
      std::fill(p, p + t.size, is_scale ? 1.0 : 0.0);
    } else if (is_bias) {
      std::fill(p, p + t.size, 0.0);
    } else {
      for (std::size_t i = 0; i < t.size; ++i) p[i] = normal(rng);
    }
  }
  return d;
}

void Decoder::round_to_float() {
  for (auto& v : params_) v = static_cast<double>(static_cast<float>(v));
}

Matrix Decoder::forward(std::span<const TokenId> ids) const {
  Kernels k(*this);
  return k.logits(k.run(ids, nullptr, nullptr));
}

std::vector<double> Decoder::next_token_probs(std::span<const TokenId> prefix) const {
  if (prefix.empty()) throw Error("next_token_probs needs a non-empty prefix");
  Matrix logits = forward(prefix);
  RowVec last = logits.row(logits.rows() - 1);
  log_softmax_inplace(last);
  std::vector<double> out(static_cast<std::size_t>(last.size()));
  for (Eigen::Index i = 0; i < last.size(); ++i) out[static_cast<std::size_t>(i)] = std::exp(last(i));
  return out;
}

bool Decoder::can_score(std::string_view pw) const {
  if (pw.size() > max_password_length()) return false;
  for (char c : pw) {
    if (!is_printable_ascii(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

double Decoder::log_prob(std::string_view pw) const {
  TokenSequence ids = encode(pw);
  if (ids.size() > cfg_.max_positions) {
    throw BoundsError("password of length " + std::to_string(pw.size()) +
                      " does not fit max_positions " + std::to_string(cfg_.max_positions));
  }
  return -sequence_loss(*this, ids).nll;
}

std::vector<Sample> Decoder::sample(std::size_t n, std::uint64_t seed) const {
  // Draws are grouped in fixed blocks of indices, each decoded through
  // kSlots concurrent sequences; a finished slot takes the block's next
  // index. The grouping does not depend on the thread count.
  constexpr std::size_t kBlock = 512, kSlots = 32;
  std::vector<Sample> out(n);
  const std::size_t max_len = max_password_length();
  const std::size_t blocks = (n + kBlock - 1) / kBlock;
  detail::parallel_chunks(blocks, threads_, [&](std::size_t bbegin, std::size_t bend, std::size_t) {
    BatchDecoder dec(*this, kSlots);
    std::vector<std::mt19937_64> rngs(kSlots);
    std::vector<std::size_t> index(kSlots);  // draw held by each slot
    std::vector<TokenId> cur;
    std::vector<std::size_t> live;
    for (std::size_t blk = bbegin; blk < bend; ++blk) {
      std::size_t next_index = blk * kBlock;
      const std::size_t last = std::min(n, next_index + kBlock);
      cur.clear();
      live.clear();
      auto start = [&](std::size_t slot) {
        index[slot] = next_index;
        rngs[slot].seed(detail::mix_seed(seed, next_index));
        ++next_index;
        dec.reset(slot);
        cur.push_back(tok::kSos);
        live.push_back(slot);
      };
      for (std::size_t slot = 0; slot < kSlots && next_index < last; ++slot) start(slot);
      while (!live.empty()) {
        const Matrix logits = dec.step(cur, live);
        const std::vector<std::size_t> fed = std::move(live);
        cur.clear();
        live.clear();
        for (std::size_t r = 0; r < fed.size(); ++r) {
          const std::size_t slot = fed[r];
          Sample& s = out[index[slot]];
          RowVec logp = logits.row(static_cast<Eigen::Index>(r));
          log_softmax_inplace(logp);
          const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rngs[slot]);
          double acc = 0.0;
          TokenId next = tok::kEos;  // only reached through rounding at u ~ 1
          for (Eigen::Index v = 0; v < logp.size(); ++v) {
            acc += std::exp(logp(v));
            if (u < acc) {
              next = static_cast<TokenId>(v);
              break;
            }
          }
          s.log_prob += logp(next);
          bool done = true;
          if (next == tok::kEos) {
          } else if (!is_char_token(next)) {
            s.status = SampleStatus::kInvalid;
          } else if (s.text.size() == max_len) {
            s.status = SampleStatus::kTruncated;
          } else {
            s.text.push_back(id_to_char(next));
            done = false;
          }
          if (!done) {
            cur.push_back(next);
            live.push_back(slot);
          } else {
            // Rescore through the batched path so that a sampled string and
            // the same string scored later compare exactly equal.
            if (s.status == SampleStatus::kOk) s.log_prob = log_prob(s.text);
            if (next_index < last) start(slot);
          }
        }
      }
    }
  });
  return out;
}

SequenceLoss sequence_loss(const Decoder& model, std::span<const TokenId> ids,
                           std::span<double> grad, double scale, std::mt19937_64* dropout_rng) {
  if (ids.size() < 2) throw Error("sequence_loss needs at least two tokens");
  if (!grad.empty() && grad.size() != model.parameters().size()) {
    throw Error("gradient buffer does not match the parameter count");
  }
  Kernels k(model);
  auto inputs = ids.first(ids.size() - 1);
  ForwardCache cache;
  Matrix hidden = k.run(inputs, grad.empty() ? nullptr : &cache, dropout_rng);
  Matrix logits = k.logits(hidden);

  SequenceLoss out;
  out.tokens = inputs.size();
  Matrix dlogits;
  if (!grad.empty()) dlogits.resize(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    RowVec row = logits.row(t);
    log_softmax_inplace(row);
    const auto target = ids[static_cast<std::size_t>(t) + 1];
    out.nll -= row(target);
    if (!grad.empty()) {
      dlogits.row(t) = row.array().exp() * scale;
      dlogits(t, target) -= scale;
    }
  }
  if (!grad.empty()) k.backward(inputs, cache, dlogits, grad.data());
  return out;
}

}  // namespace pwlm
