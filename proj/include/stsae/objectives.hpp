#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stsae/features.hpp"
#include "stsae/sae.hpp"

namespace stsae {

enum class Variant { standard, temporal, separate, raster };

const char* to_string(Variant v) noexcept;
Variant variant_from_string(const std::string& name);

/// Loss coefficients and contrastive settings for one SAE variant.
struct VariantConfig {
  Variant variant = Variant::standard;
  double lambda_t = 0.1;
  double lambda_s = 0.05;
  double lambda_r = 0.1;
  double tau = 0.1;
  double alpha_aux = 0.03;
  // Weight of the high-group reconstruction; only used when the SAE has a
  // Matryoshka split. 0 disables it.
  double alpha_mat = 0.1;
  // Patch-grid width for spatial/raster pairing; 0 means sqrt(P).
  std::uint32_t frame_width = 0;
  // Dead-latent budget for the auxiliary loss; 0 means 2k.
  std::uint32_t k_aux = 0;

  void validate() const;
  bool needs_clips() const { return variant != Variant::standard; }
  bool operator==(const VariantConfig&) const = default;
};

/// Contrastive pairs over token ids of one batch. `candidates` lists every
/// positive-target token; each anchor is scored against all of them except
/// itself.
struct PairSet {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  std::vector<std::uint32_t> candidates;
};

/// Resolves a requested frame width (0 = square grid) against P.
std::uint32_t resolve_frame_width(std::uint32_t patches, std::uint32_t requested);

/// Same patch, consecutive frames: ((t, p), (t + 1, p)).
PairSet temporal_pairs(const ClipLayout& layout);

/// Horizontal neighbours inside a frame: ((t, r, c), (t, r, c + 1)).
PairSet spatial_pairs(const ClipLayout& layout, std::uint32_t frame_width);

/// Consecutive elements of the raster order s = t * P + r * W + c, including
/// row wraps and frame boundaries.
PairSet raster_pairs(const ClipLayout& layout);

/// Mean over tokens of the squared L2 residual.
template <typename S>
S recon_loss(std::span<const S> x, std::span<const S> x_hat, std::size_t dim);

/// Reconstructs `residual` from the top-k_aux positive preactivations among
/// dead latents; returns the mean squared error, or 0 if nothing is dead.
/// `affine` is the [B, H] raw encoder output.
template <typename S>
S aux_loss(std::span<const S> residual, std::span<const S> affine,
           std::span<const std::uint8_t> dead_mask, const SaeParams<S>& params,
           std::uint32_t k_aux);

/// Mean over anchors of -log softmax(cos(anchor, positive) / tau) against all
/// candidates other than the anchor itself.
template <typename S>
S infonce(std::span<const BasicSparseCode<S>> codes, const PairSet& pairs, double tau);

/// Weighted contribution of every loss term; they sum to `total`.
struct LossBreakdown {
  double recon = 0.0;
  double aux = 0.0;
  double temporal = 0.0;
  double spatial = 0.0;
  double raster = 0.0;
  double matryoshka = 0.0;
  double total = 0.0;

  double sum_of_terms() const { return recon + aux + temporal + spatial + raster + matryoshka; }
};

/// Full objective for one batch. `dead_mask` (length H, nonzero = dead) may
/// be empty, which disables the auxiliary term.
template <typename S>
LossBreakdown total_loss(const TokenBatch<S>& batch, const SaeParams<S>& params,
                         const VariantConfig& cfg, std::span<const std::uint8_t> dead_mask = {});

}  // namespace stsae
