#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stsae/sparse_code.hpp"

namespace stsae {

enum class ActivationKind { topk, batch_topk, sparsemax, entmax15 };

const char* to_string(ActivationKind kind) noexcept;
ActivationKind activation_from_string(const std::string& name);

struct Activation {
  ActivationKind kind = ActivationKind::topk;
  // Only used by sparsemax / entmax15.
  double temperature = 1.0;

  bool operator==(const Activation&) const = default;
};

/// How TopK-family activations select actives at evaluation time.
enum class TopkEvalMode { per_token, batch };

struct SaeConfig {
  std::uint32_t input_dim = 0;
  std::uint32_t dict_size = 0;
  std::uint32_t k = 64;
  Activation activation;
  // Size of the high-level prefix group; unset disables Matryoshka grouping.
  std::optional<std::uint32_t> matryoshka_split;

  void validate() const;
  bool operator==(const SaeConfig&) const = default;
};

/// Encoder/decoder weights. W_e is [H, D] and W_d is [D, H], both row-major.
template <typename S>
struct SaeParams {
  SaeConfig config;
  std::vector<S> W_e;
  std::vector<S> b_e;
  std::vector<S> b_pre;
  std::vector<S> W_d;

  std::size_t D() const { return config.input_dim; }
  std::size_t H() const { return config.dict_size; }

  static SaeParams zeros(const SaeConfig& config);

  std::span<const S> encoder_row(std::size_t h) const { return {W_e.data() + h * D(), D()}; }
  S decoder(std::size_t d, std::size_t h) const { return W_d[d * H() + h]; }

  template <typename T>
  SaeParams<T> cast() const {
    SaeParams<T> out;
    out.config = config;
    out.W_e.assign(W_e.begin(), W_e.end());
    out.b_e.assign(b_e.begin(), b_e.end());
    out.b_pre.assign(b_pre.begin(), b_pre.end());
    out.W_d.assign(W_d.begin(), W_d.end());
    return out;
  }

  // Throws std::invalid_argument on shape mismatch or non-finite entries.
  void validate() const;

  bool operator==(const SaeParams&) const = default;
};

/// Raw affine preactivation W_e (x - b_pre) + b_e.
template <typename S>
std::vector<S> encode_affine(std::span<const S> x, const SaeParams<S>& params);

/// ReLU of the affine preactivation; the input TopK selects from.
template <typename S>
std::vector<S> encode_preact(std::span<const S> x, const SaeParams<S>& params);

/// Keeps the k largest strictly-positive entries; ties go to the lower index.
template <typename S>
BasicSparseCode<S> topk_activate(std::span<const S> preact, std::uint32_t k);

/// Joint selection of the B*k largest positive entries over a [B, H] matrix.
/// Ties are broken by (token, index) order.
template <typename S>
std::vector<BasicSparseCode<S>> batch_topk_activate(std::span<const S> preacts, std::size_t batch,
                                                    std::uint32_t k);

template <typename S>
struct MatryoshkaCodes {
  std::vector<BasicSparseCode<S>> codes;
  std::vector<BasicSparseCode<S>> high_codes;
};

/// BatchTopK over the whole dictionary, then restriction (not reselection)
/// of each code to the first `split` features.
template <typename S>
MatryoshkaCodes<S> matryoshka_activate(std::span<const S> preacts, std::size_t batch,
                                       std::uint32_t k, std::uint32_t split);

/// Euclidean projection of preact_raw / temperature onto the simplex.
template <typename S>
std::vector<S> sparsemax(std::span<const S> preact_raw, double temperature);
template <typename S>
BasicSparseCode<S> sparsemax_activate(std::span<const S> preact_raw, double temperature);

/// 1.5-entmax of preact_raw / temperature, threshold found by 60 bisection
/// steps.
template <typename S>
std::vector<S> entmax15(std::span<const S> preact_raw, double temperature);
template <typename S>
BasicSparseCode<S> entmax15_activate(std::span<const S> preact_raw, double temperature);

/// x_hat = sum over actives of value * W_d[:, index] + b_pre.
template <typename S>
std::vector<S> decode(const BasicSparseCode<S>& code, const SaeParams<S>& params);

/// Adds value * W_d[:, index] for every active entry into `out` (no bias).
template <typename S>
void decode_accumulate(const BasicSparseCode<S>& code, const SaeParams<S>& params,
                       std::span<S> out);

/// Affine preactivations for n tokens, [n, H] row-major.
template <typename S>
std::vector<S> encode_affine_batch(std::span<const S> x, std::size_t n, const SaeParams<S>& params);

/// Applies the configured activation to [n, H] raw affine preactivations.
/// BatchTopK treats each `group` consecutive tokens as one selection batch
/// in batch mode and falls back to per-token TopK in per_token mode.
template <typename S>
std::vector<BasicSparseCode<S>> activate_batch(std::span<const S> affine, std::size_t n,
                                               const SaeConfig& config, TopkEvalMode mode,
                                               std::size_t group);

/// Encodes n tokens end to end.
template <typename S>
std::vector<BasicSparseCode<S>> encode_batch(std::span<const S> x, std::size_t n,
                                             const SaeParams<S>& params,
                                             TopkEvalMode mode = TopkEvalMode::per_token,
                                             std::size_t group = 0);

}  // namespace stsae
