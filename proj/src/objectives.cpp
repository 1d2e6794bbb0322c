#include "stsae/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "loss_graph.hpp"

namespace stsae {

const char* to_string(Variant v) noexcept {
  switch (v) {
    case Variant::standard: return "standard";
    case Variant::temporal: return "temporal";
    case Variant::separate: return "separate";
    case Variant::raster: return "raster";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& name) {
  if (name == "standard") return Variant::standard;
  if (name == "temporal") return Variant::temporal;
  if (name == "separate") return Variant::separate;
  if (name == "raster") return Variant::raster;
  throw std::invalid_argument("unknown variant: " + name);
}

void VariantConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("VariantConfig: tau must be > 0");
  for (double c : {lambda_t, lambda_s, lambda_r, alpha_aux, alpha_mat}) {
    if (!(c >= 0.0) || !std::isfinite(c)) {
      throw std::invalid_argument("VariantConfig: loss coefficients must be finite and >= 0");
    }
  }
}

std::uint32_t resolve_frame_width(std::uint32_t patches, std::uint32_t requested) {
  if (requested != 0) {
    if (patches % requested != 0) {
      throw std::invalid_argument("frame width " + std::to_string(requested) +
                                  " does not divide P=" + std::to_string(patches));
    }
    return requested;
  }
  const auto root = static_cast<std::uint32_t>(std::lround(std::sqrt(double(patches))));
  if (root * root != patches) {
    throw std::invalid_argument("P=" + std::to_string(patches) +
                                " is not a square grid; set frame_width explicitly");
  }
  return root;
}

PairSet temporal_pairs(const ClipLayout& layout) {
  if (layout.frames < 2) throw std::invalid_argument("temporal_pairs: need T >= 2");
  PairSet out;
  out.pairs.reserve(layout.n_clips * (layout.frames - 1) * layout.patches);
  for (std::size_t c = 0; c < layout.n_clips; ++c) {
    for (std::uint32_t t = 0; t + 1 < layout.frames; ++t) {
      for (std::uint32_t p = 0; p < layout.patches; ++p) {
        out.pairs.emplace_back(std::uint32_t(layout.token_id(c, t, p)),
                               std::uint32_t(layout.token_id(c, t + 1, p)));
      }
    }
    for (std::uint32_t t = 1; t < layout.frames; ++t) {
      for (std::uint32_t p = 0; p < layout.patches; ++p) {
        out.candidates.push_back(std::uint32_t(layout.token_id(c, t, p)));
      }
    }
  }
  return out;
}

PairSet spatial_pairs(const ClipLayout& layout, std::uint32_t frame_width) {
  if (frame_width == 0 || layout.patches % frame_width != 0) {
    throw std::invalid_argument("spatial_pairs: P must be divisible by the frame width");
  }
  const std::uint32_t rows = layout.patches / frame_width;
  PairSet out;
  for (std::size_t c = 0; c < layout.n_clips; ++c) {
    for (std::uint32_t t = 0; t < layout.frames; ++t) {
      for (std::uint32_t r = 0; r < rows; ++r) {
        for (std::uint32_t col = 0; col + 1 < frame_width; ++col) {
          const std::uint32_t p = r * frame_width + col;
          out.pairs.emplace_back(std::uint32_t(layout.token_id(c, t, p)),
                                 std::uint32_t(layout.token_id(c, t, p + 1)));
          out.candidates.push_back(std::uint32_t(layout.token_id(c, t, p + 1)));
        }
      }
    }
  }
  return out;
}

PairSet raster_pairs(const ClipLayout& layout) {
  const std::size_t per_clip = layout.tokens_per_clip();
  PairSet out;
  if (per_clip < 2) return out;
  for (std::size_t c = 0; c < layout.n_clips; ++c) {
    const std::size_t base = c * per_clip;
    for (std::size_t s = 0; s + 1 < per_clip; ++s) {
      out.pairs.emplace_back(std::uint32_t(base + s), std::uint32_t(base + s + 1));
      out.candidates.push_back(std::uint32_t(base + s + 1));
    }
  }
  return out;
}

template <typename S>
S recon_loss(std::span<const S> x, std::span<const S> x_hat, std::size_t dim) {
  if (x.size() != x_hat.size() || dim == 0 || x.size() % dim != 0) {
    throw std::invalid_argument("recon_loss: shape mismatch");
  }
  const std::size_t n = x.size() / dim;
  if (n == 0) return S(0);
  S total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    S row = 0;
    for (std::size_t d = 0; d < dim; ++d) {
      const S r = x[i * dim + d] - x_hat[i * dim + d];
      row += r * r;
    }
    total += row;
  }
  return total / S(n);
}

template <typename S>
S aux_loss(std::span<const S> residual, std::span<const S> affine,
           std::span<const std::uint8_t> dead_mask, const SaeParams<S>& params,
           std::uint32_t k_aux) {
  if (k_aux < 1) throw std::invalid_argument("aux_loss: k_aux must be >= 1");
  const std::size_t D = params.D(), H = params.H();
  if (residual.size() % D != 0) throw std::invalid_argument("aux_loss: residual is not [B, D]");
  const std::size_t B = residual.size() / D;
  if (affine.size() != B * H || dead_mask.size() != H) {
    throw std::invalid_argument("aux_loss: affine / dead_mask shape mismatch");
  }
  if (B == 0 || std::none_of(dead_mask.begin(), dead_mask.end(), [](auto m) { return m != 0; })) {
    return S(0);
  }
  std::vector<S> e_hat(D);
  S total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const auto code = detail::dead_topk<S>(affine.subspan(b * H, H), dead_mask, k_aux);
    std::fill(e_hat.begin(), e_hat.end(), S(0));
    decode_accumulate(code, params, std::span<S>(e_hat));
    for (std::size_t d = 0; d < D; ++d) {
      const S r = residual[b * D + d] - e_hat[d];
      total += r * r;
    }
  }
  return total / S(B);
}

template <typename S>
S infonce(std::span<const BasicSparseCode<S>> codes, const PairSet& pairs, double tau) {
  return detail::infonce_term<S>(codes, pairs, tau, S(1), nullptr);
}

template <typename S>
LossBreakdown total_loss(const TokenBatch<S>& batch, const SaeParams<S>& params,
                         const VariantConfig& cfg, std::span<const std::uint8_t> dead_mask) {
  return detail::evaluate<S>(batch, params, cfg, dead_mask, nullptr, false).loss;
}

#define STSAE_INSTANTIATE(S)                                                                   \
  template S recon_loss(std::span<const S>, std::span<const S>, std::size_t);                 \
  template S aux_loss(std::span<const S>, std::span<const S>, std::span<const std::uint8_t>,   \
                      const SaeParams<S>&, std::uint32_t);                                     \
  template S infonce(std::span<const BasicSparseCode<S>>, const PairSet&, double);             \
  template LossBreakdown total_loss(const TokenBatch<S>&, const SaeParams<S>&,                 \
                                    const VariantConfig&, std::span<const std::uint8_t>);

STSAE_INSTANTIATE(float)
STSAE_INSTANTIATE(double)

#undef STSAE_INSTANTIATE

}  // namespace stsae
