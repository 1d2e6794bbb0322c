#include "loss_graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "stsae/errors.hpp"

namespace stsae::detail {

template <typename S>
BasicSparseCode<S> dead_topk(std::span<const S> affine_row, std::span<const std::uint8_t> dead_mask,
                             std::uint32_t k_aux) {
  std::vector<S> masked(affine_row.size(), S(0));
  for (std::size_t i = 0; i < affine_row.size(); ++i) {
    if (dead_mask[i] && affine_row[i] > S(0)) masked[i] = affine_row[i];
  }
  return topk_activate<S>(masked, k_aux);
}

template <typename S>
S infonce_term(std::span<const BasicSparseCode<S>> codes, const PairSet& pairs, double tau,
               S scale, std::vector<std::vector<S>>* code_grads) {
  if (!(tau > 0.0)) throw std::invalid_argument("infonce: tau must be > 0");
  const std::size_t N = pairs.pairs.size(), M = pairs.candidates.size();
  if (N == 0) return S(0);
  const std::size_t n = codes.size();

  std::vector<std::int64_t> cand_pos(n, -1);
  for (std::size_t m = 0; m < M; ++m) {
    const auto id = pairs.candidates[m];
    if (id >= n) throw std::invalid_argument("infonce: candidate id out of range");
    cand_pos[id] = std::int64_t(m);
  }
  std::uint32_t H = 0;
  for (const auto& c : codes) H = std::max(H, c.dict_size);

  std::vector<double> norms(n);
  for (std::size_t t = 0; t < n; ++t) norms[t] = std::sqrt(double(codes[t].squared_norm()));

  std::vector<double> dense(H, 0.0);
  std::vector<std::int32_t> slot(H, -1);
  std::vector<double> sims(M), logits(M);
  const double grad_scale = double(scale) / (tau * double(N));
  double loss_sum = 0.0;

  for (const auto& [a, p] : pairs.pairs) {
    if (a >= n || p >= n) throw std::invalid_argument("infonce: pair id out of range");
    if (a == p) throw std::invalid_argument("infonce: anchor equals its positive");
    if (cand_pos[p] < 0) throw std::invalid_argument("infonce: positive not among candidates");
    const auto& A = codes[a];
    const double na = norms[a];
    for (std::size_t j = 0; j < A.active.size(); ++j) {
      dense[A.active[j].index] = double(A.active[j].value);
      slot[A.active[j].index] = std::int32_t(j);
    }

    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < M; ++m) {
      const auto c = pairs.candidates[m];
      if (c == a) continue;  // self-pair excluded
      const double nc = norms[c];
      double s = 0.0;
      if (na > 0.0 && nc > 0.0) {
        double dot = 0.0;
        for (const auto& e : codes[c].active) dot += dense[e.index] * double(e.value);
        s = dot / (na * nc);
      }
      sims[m] = s;
      logits[m] = s / tau;
      top = std::max(top, logits[m]);
    }
    double denom = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      if (pairs.candidates[m] != a) denom += std::exp(logits[m] - top);
    }
    const double lse = top + std::log(denom);
    const auto pos = std::size_t(cand_pos[p]);
    loss_sum += lse - logits[pos];

    if (code_grads) {
      auto& ga = (*code_grads)[a];
      double anchor_self = 0.0;
      for (std::size_t m = 0; m < M; ++m) {
        const auto c = pairs.candidates[m];
        if (c == a) continue;
        const double nc = norms[c];
        if (na == 0.0 || nc == 0.0) continue;
        const double w = std::exp(logits[m] - lse) - (m == pos ? 1.0 : 0.0);
        const double gs = grad_scale * w;
        if (gs == 0.0) continue;
        const double s = sims[m];
        const double inv = 1.0 / (na * nc);
        auto& gc = (*code_grads)[c];
        const auto& C = codes[c];
        for (std::size_t jc = 0; jc < C.active.size(); ++jc) {
          const auto idx = C.active[jc].index;
          const double vc = double(C.active[jc].value);
          const double va = dense[idx];
          if (va != 0.0) ga[std::size_t(slot[idx])] += S(gs * vc * inv);
          gc[jc] += S(gs * (va * inv - s * vc / (nc * nc)));
        }
        anchor_self += gs * s;
      }
      if (na > 0.0) {
        for (std::size_t j = 0; j < A.active.size(); ++j) {
          ga[j] -= S(anchor_self * double(A.active[j].value) / (na * na));
        }
      }
    }

    for (const auto& e : A.active) {
      dense[e.index] = 0.0;
      slot[e.index] = -1;
    }
  }
  return S(loss_sum / double(N));
}

namespace {

template <typename S>
void ensure_finite(const std::vector<S>& v, const char* term) {
  for (const S x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(term, std::string("non-finite gradient from loss term '") + term + "'");
    }
  }
}

template <typename S>
void ensure_finite(const std::vector<std::vector<S>>& v, const char* term) {
  for (const auto& row : v) ensure_finite(row, term);
}

// Backprop of an upstream d(loss)/d(x_hat) row through x_hat = W_d z + b_pre,
// restricted to the first `n_entries` actives of `code`.
template <typename S>
void backprop_decoder(const S* g_xhat, const BasicSparseCode<S>& code, std::size_t n_entries,
                      const SaeParams<S>& params, SaeGradients<S>& grads, bool frozen_decoder,
                      std::vector<S>& g_code, bool with_bias) {
  const std::size_t D = params.D(), H = params.H();
  for (std::size_t j = 0; j < n_entries; ++j) {
    const auto i = code.active[j].index;
    const S z = code.active[j].value;
    S acc = 0;
    for (std::size_t d = 0; d < D; ++d) {
      acc += params.W_d[d * H + i] * g_xhat[d];
      if (!frozen_decoder) grads.W_d[d * H + i] += g_xhat[d] * z;
    }
    g_code[j] += acc;
  }
  if (with_bias) {
    for (std::size_t d = 0; d < D; ++d) grads.b_pre[d] += g_xhat[d];
  }
}

}  // namespace

template <typename S>
GradResult<S> evaluate(const TokenBatch<S>& batch, const SaeParams<S>& params,
                       const VariantConfig& cfg, std::span<const std::uint8_t> dead_mask,
                       SaeGradients<S>* grads, bool frozen_decoder) {
  cfg.validate();
  const std::size_t D = params.D(), H = params.H();
  if (batch.dim != D) {
    throw std::invalid_argument("batch has dim " + std::to_string(batch.dim) + ", SAE expects " +
                                std::to_string(D));
  }
  const std::size_t B = batch.size();
  if (B == 0) throw std::invalid_argument("empty batch");
  if (cfg.needs_clips() && !batch.layout) {
    throw std::invalid_argument(std::string("variant '") + to_string(cfg.variant) +
                                "' needs whole-clip batches");
  }
  if (batch.layout && batch.layout->n_tokens() != B) {
    throw std::invalid_argument("batch layout does not match token count");
  }
  if (!dead_mask.empty() && dead_mask.size() != H) {
    throw std::invalid_argument("dead mask length != H");
  }

  const auto affine = encode_affine_batch<S>(batch.x, B, params);
  GradResult<S> result;
  result.codes = activate_batch<S>(affine, B, params.config, TopkEvalMode::batch, B);
  const auto& codes = result.codes;

  std::vector<S> x_hat(B * D);
  for (std::size_t b = 0; b < B; ++b) {
    std::copy(params.b_pre.begin(), params.b_pre.end(), x_hat.begin() + std::ptrdiff_t(b * D));
    decode_accumulate(codes[b], params, std::span<S>(x_hat.data() + b * D, D));
  }
  LossBreakdown& loss = result.loss;
  loss.recon = double(recon_loss<S>(batch.x, x_hat, D));

  // Matryoshka: high-group codes are the index-sorted prefix of each code.
  const bool matryoshka = params.config.matryoshka_split.has_value() && cfg.alpha_mat > 0.0;
  std::vector<std::size_t> high_len;
  std::vector<S> x_hat_high;
  if (matryoshka) {
    const auto split = *params.config.matryoshka_split;
    high_len.resize(B);
    x_hat_high.resize(B * D);
    for (std::size_t b = 0; b < B; ++b) {
      const auto& act = codes[b].active;
      high_len[b] = std::size_t(std::partition_point(act.begin(), act.end(),
                                                     [&](const auto& e) { return e.index < split; }) -
                                act.begin());
      S* out = x_hat_high.data() + b * D;
      std::copy(params.b_pre.begin(), params.b_pre.end(), out);
      for (std::size_t j = 0; j < high_len[b]; ++j) {
        for (std::size_t d = 0; d < D; ++d) out[d] += act[j].value * params.W_d[d * H + act[j].index];
      }
    }
    loss.matryoshka = cfg.alpha_mat * double(recon_loss<S>(batch.x, x_hat_high, D));
  }

  // Auxiliary dead-latent reconstruction of the residual x - x_hat.
  const bool any_dead =
      !dead_mask.empty() && std::any_of(dead_mask.begin(), dead_mask.end(), [](auto m) { return m != 0; });
  const bool use_aux = any_dead && cfg.alpha_aux > 0.0;
  const std::uint32_t k_aux = std::min<std::uint32_t>(
      cfg.k_aux ? cfg.k_aux : 2 * params.config.k, params.config.dict_size);
  std::vector<BasicSparseCode<S>> aux_codes;
  std::vector<S> aux_err;  // e - e_hat
  if (use_aux) {
    aux_codes.resize(B);
    aux_err.resize(B * D);
    double total = 0.0;
    std::vector<S> e_hat(D);
    for (std::size_t b = 0; b < B; ++b) {
      aux_codes[b] = dead_topk<S>(std::span<const S>(affine).subspan(b * H, H), dead_mask, k_aux);
      std::fill(e_hat.begin(), e_hat.end(), S(0));
      decode_accumulate(aux_codes[b], params, std::span<S>(e_hat));
      for (std::size_t d = 0; d < D; ++d) {
        const S e = batch.x[b * D + d] - x_hat[b * D + d];
        aux_err[b * D + d] = e - e_hat[d];
        total += double(aux_err[b * D + d]) * double(aux_err[b * D + d]);
      }
    }
    loss.aux = cfg.alpha_aux * total / double(B);
  }

  std::vector<std::vector<S>> g_code;
  if (grads) {
    g_code.resize(B);
    for (std::size_t b = 0; b < B; ++b) g_code[b].assign(codes[b].active.size(), S(0));
  }

  // Contrastive terms.
  if (batch.layout) {
    const ClipLayout& layout = *batch.layout;
    auto* gp = grads ? &g_code : nullptr;
    std::span<const BasicSparseCode<S>> code_span(codes);
    const bool temporal = (cfg.variant == Variant::temporal || cfg.variant == Variant::separate) &&
                          cfg.lambda_t > 0.0;
    if (temporal) {
      loss.temporal = cfg.lambda_t * double(infonce_term<S>(code_span, temporal_pairs(layout), cfg.tau,
                                                            S(cfg.lambda_t), gp));
      if (grads) ensure_finite(g_code, "temporal");
    }
    if (cfg.variant == Variant::separate && cfg.lambda_s > 0.0) {
      const auto width = resolve_frame_width(layout.patches, cfg.frame_width);
      loss.spatial = cfg.lambda_s * double(infonce_term<S>(code_span, spatial_pairs(layout, width),
                                                           cfg.tau, S(cfg.lambda_s), gp));
      if (grads) ensure_finite(g_code, "spatial");
    }
    if (cfg.variant == Variant::raster && cfg.lambda_r > 0.0) {
      loss.raster = cfg.lambda_r * double(infonce_term<S>(code_span, raster_pairs(layout), cfg.tau,
                                                          S(cfg.lambda_r), gp));
      if (grads) ensure_finite(g_code, "raster");
    }
  }

  loss.total = loss.sum_of_terms();
  if (!grads) return result;

  SaeGradients<S>& g = *grads;
  g = SaeGradients<S>::zeros(params.config);
  std::vector<S> g_row(D);

  // Reconstruction, plus aux through its residual: d/dx_hat.
  {
    const S c = S(-2.0 / double(B));
    const S c_aux = S(-2.0 * cfg.alpha_aux / double(B));
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t d = 0; d < D; ++d) g_row[d] = c * (batch.x[b * D + d] - x_hat[b * D + d]);
      ensure_finite(g_row, "recon");
      // The aux residual depends on x_hat as well.
      if (use_aux) {
        for (std::size_t d = 0; d < D; ++d) g_row[d] += c_aux * aux_err[b * D + d];
        ensure_finite(g_row, "aux");
      }
      backprop_decoder(g_row.data(), codes[b], codes[b].active.size(), params, g, frozen_decoder,
                       g_code[b], true);
    }
  }
  if (matryoshka) {
    const S c = S(-2.0 * cfg.alpha_mat / double(B));
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t d = 0; d < D; ++d) g_row[d] = c * (batch.x[b * D + d] - x_hat_high[b * D + d]);
      ensure_finite(g_row, "matryoshka");
      backprop_decoder(g_row.data(), codes[b], high_len[b], params, g, frozen_decoder, g_code[b], true);
    }
  }

  // Activation backward into per-token sparse preactivation gradients.
  const auto kind = params.config.activation.kind;
  const double inv_temp = 1.0 / params.config.activation.temperature;
  std::vector<std::vector<std::pair<std::uint32_t, S>>> g_pre(B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& act = codes[b].active;
    auto& gz = g_code[b];
    auto& out = g_pre[b];
    out.reserve(act.size());
    switch (kind) {
      case ActivationKind::topk:
      case ActivationKind::batch_topk:
        // Kept values equal their (positive) preactivations.
        for (std::size_t j = 0; j < act.size(); ++j) out.emplace_back(act[j].index, gz[j]);
        break;
      case ActivationKind::sparsemax: {
        if (act.empty()) break;
        double mean = 0.0;
        for (const S v : gz) mean += double(v);
        mean /= double(act.size());
        for (std::size_t j = 0; j < act.size(); ++j) {
          out.emplace_back(act[j].index, S(inv_temp * (double(gz[j]) - mean)));
        }
        break;
      }
      case ActivationKind::entmax15: {
        // J = diag(s) - s s^T / sum(s), s = sqrt(p) on the support.
        double ssum = 0.0, sg = 0.0;
        for (std::size_t j = 0; j < act.size(); ++j) {
          const double s = std::sqrt(double(act[j].value));
          ssum += s;
          sg += s * double(gz[j]);
        }
        for (std::size_t j = 0; j < act.size(); ++j) {
          const double s = std::sqrt(double(act[j].value));
          out.emplace_back(act[j].index, S(inv_temp * (s * double(gz[j]) - s * sg / ssum)));
        }
        break;
      }
    }
  }

  if (use_aux) {
    const S c = S(-2.0 * cfg.alpha_aux / double(B));
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t d = 0; d < D; ++d) g_row[d] = c * aux_err[b * D + d];
      ensure_finite(g_row, "aux");
      std::vector<S> g_aux(aux_codes[b].active.size(), S(0));
      backprop_decoder(g_row.data(), aux_codes[b], g_aux.size(), params, g, frozen_decoder, g_aux, false);
      for (std::size_t j = 0; j < g_aux.size(); ++j) {
        g_pre[b].emplace_back(aux_codes[b].active[j].index, g_aux[j]);
      }
    }
  }

  // Encoder: affine = W_e (x - b_pre) + b_e.
  std::vector<S> xc(D);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t d = 0; d < D; ++d) xc[d] = batch.x[b * D + d] - params.b_pre[d];
    for (const auto& [i, gu] : g_pre[b]) {
      if (!std::isfinite(gu)) throw NumericError("encoder", "non-finite preactivation gradient");
      S* gw = g.W_e.data() + std::size_t(i) * D;
      const S* w = params.W_e.data() + std::size_t(i) * D;
      for (std::size_t d = 0; d < D; ++d) {
        gw[d] += gu * xc[d];
        g.b_pre[d] -= gu * w[d];
      }
      g.b_e[i] += gu;
    }
  }
  return result;
}

#define STSAE_INSTANTIATE(S)                                                                   \
  template BasicSparseCode<S> dead_topk(std::span<const S>, std::span<const std::uint8_t>,     \
                                        std::uint32_t);                                        \
  template S infonce_term(std::span<const BasicSparseCode<S>>, const PairSet&, double, S,      \
                          std::vector<std::vector<S>>*);                                       \
  template GradResult<S> evaluate(const TokenBatch<S>&, const SaeParams<S>&,                   \
                                  const VariantConfig&, std::span<const std::uint8_t>,         \
                                  SaeGradients<S>*, bool);

STSAE_INSTANTIATE(float)
STSAE_INSTANTIATE(double)

#undef STSAE_INSTANTIATE

}  // namespace stsae::detail
