#pragma once

// Plain-loop evaluation of the decoder, written independently of the Eigen
// kernels in src/model.cpp. Used as an oracle for forward().

#include <cmath>
#include <vector>

#include "pwlm/model.hpp"

namespace pwlm::testing {

inline std::vector<std::vector<double>> reference_logits(const Decoder& m,
                                                         const std::vector<TokenId>& ids) {
  const auto& cfg = m.config();
  const auto& L = m.layout();
  const double* p = m.parameters().data();
  const std::size_t T = ids.size(), E = cfg.embed_dim, I = cfg.intermediate_dim,
                    H = cfg.heads, D = cfg.head_dim(), V = cfg.vocab_size;
  using Rows = std::vector<std::vector<double>>;

  auto ln = [&](const Rows& x, std::size_t g, std::size_t b) {
    Rows y(T, std::vector<double>(E));
    for (std::size_t t = 0; t < T; ++t) {
      double mean = 0, var = 0;
      for (double v : x[t]) mean += v;
      mean /= double(E);
      for (double v : x[t]) var += (v - mean) * (v - mean);
      var /= double(E);
      for (std::size_t i = 0; i < E; ++i)
        y[t][i] = (x[t][i] - mean) / std::sqrt(var + 1e-5) * p[g + i] + p[b + i];
    }
    return y;
  };
  auto linear = [&](const Rows& x, std::size_t w, std::size_t b, std::size_t in, std::size_t out) {
    Rows y(x.size(), std::vector<double>(out));
    for (std::size_t t = 0; t < x.size(); ++t)
      for (std::size_t j = 0; j < out; ++j) {
        double s = p[b + j];
        for (std::size_t i = 0; i < in; ++i) s += x[t][i] * p[w + i * out + j];
        y[t][j] = s;
      }
    return y;
  };

  Rows x(T, std::vector<double>(E));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < E; ++i)
      x[t][i] = p[L.token_embedding() + std::size_t(ids[t]) * E + i] +
                p[L.position_embedding() + t * E + i];

  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto& o = L.block(l);
    Rows a = ln(x, o.ln1_g, o.ln1_b);
    Rows q = linear(a, o.wq, o.bq, E, E), k = linear(a, o.wk, o.bk, E, E),
         v = linear(a, o.wv, o.bv, E, E);
    Rows cat(T, std::vector<double>(E, 0.0));
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t i = 0; i < T; ++i) {
        std::vector<double> w(i + 1);
        double mx = -1e300, z = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0;
          for (std::size_t d = 0; d < D; ++d) s += q[i][h * D + d] * k[j][h * D + d];
          w[j] = s / std::sqrt(double(D));
          mx = std::max(mx, w[j]);
        }
        for (auto& s : w) z += (s = std::exp(s - mx));
        for (std::size_t j = 0; j <= i; ++j)
          for (std::size_t d = 0; d < D; ++d) cat[i][h * D + d] += w[j] / z * v[j][h * D + d];
      }
    Rows att = linear(cat, o.wo, o.bo, E, E);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < E; ++i) x[t][i] += att[t][i];
    Rows c = ln(x, o.ln2_g, o.ln2_b);
    Rows h1 = linear(c, o.w1, o.b1, E, I);
    for (auto& r : h1)
      for (auto& u : r) u = 0.5 * u * (1.0 + std::erf(u / std::sqrt(2.0)));
    Rows f = linear(h1, o.w2, o.b2, I, E);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < E; ++i) x[t][i] += f[t][i];
  }
  Rows hfin = ln(x, L.final_ln_g(), L.final_ln_b());
  Rows logits(T, std::vector<double>(V));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t v = 0; v < V; ++v) {
      double s = 0;
      for (std::size_t i = 0; i < E; ++i) s += hfin[t][i] * p[L.token_embedding() + v * E + i];
      logits[t][v] = s;
    }
  return logits;
}

}  // namespace pwlm::testing
