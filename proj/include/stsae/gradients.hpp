#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stsae/features.hpp"
#include "stsae/objectives.hpp"
#include "stsae/sae.hpp"

namespace stsae {

/// Same shapes as SaeParams.
template <typename S>
struct SaeGradients {
  std::vector<S> W_e;
  std::vector<S> b_e;
  std::vector<S> b_pre;
  std::vector<S> W_d;

  static SaeGradients zeros(const SaeConfig& config) {
    const std::size_t D = config.input_dim, H = config.dict_size;
    return {std::vector<S>(H * D, S(0)), std::vector<S>(H, S(0)), std::vector<S>(D, S(0)),
            std::vector<S>(D * H, S(0))};
  }
};

template <typename S>
struct GradResult {
  LossBreakdown loss;
  std::vector<BasicSparseCode<S>> codes;
};

/// Analytic gradients of total_loss. TopK/BatchTopK index sets are held
/// fixed (straight-through on values); sparsemax and entmax use their exact
/// Jacobians. With `frozen_decoder` the W_d gradient is left at zero.
/// Throws NumericError naming the term when a gradient goes non-finite.
template <typename S>
GradResult<S> compute_grads(const TokenBatch<S>& batch, const SaeParams<S>& params,
                            const VariantConfig& cfg, std::span<const std::uint8_t> dead_mask,
                            bool frozen_decoder, SaeGradients<S>& out);

}  // namespace stsae
