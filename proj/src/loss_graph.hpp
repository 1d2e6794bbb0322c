#pragma once

#include <cstdint>
#include <span>

#include "stsae/gradients.hpp"

namespace stsae::detail {

// Forward pass of every loss term; backward as well when `grads` is set.
template <typename S>
GradResult<S> evaluate(const TokenBatch<S>& batch, const SaeParams<S>& params,
                       const VariantConfig& cfg, std::span<const std::uint8_t> dead_mask,
                       SaeGradients<S>* grads, bool frozen_decoder);

}  // namespace stsae::detail

#include <vector>

namespace stsae::detail {

// InfoNCE value. When `code_grads` is set, adds scale * dLoss/dz for each
// token, aligned with that token's active entries.
template <typename S>
S infonce_term(std::span<const BasicSparseCode<S>> codes, const PairSet& pairs, double tau,
               S scale, std::vector<std::vector<S>>* code_grads);

// Top-k_aux positive preactivations restricted to dead latents.
template <typename S>
BasicSparseCode<S> dead_topk(std::span<const S> affine_row, std::span<const std::uint8_t> dead_mask,
                             std::uint32_t k_aux);

}  // namespace stsae::detail
