#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "stsae/features.hpp"
#include "stsae/gradients.hpp"
#include "stsae/objectives.hpp"
#include "stsae/sae.hpp"

namespace stsae {

struct TrainConfig {
  VariantConfig variant;
  std::uint32_t epochs = 10;
  std::uint32_t batch_tokens = 4096;
  std::uint32_t batch_clips = 8;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  bool frozen_decoder = false;
  std::uint32_t dead_after_batches = 200;
  TopkEvalMode eval_topk_mode = TopkEvalMode::per_token;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct TrainRecord {
  std::uint64_t step = 0;
  LossBreakdown loss;
  double l0_mean = 0.0;
  std::uint32_t dead = 0;
  double ms_elapsed = 0.0;
};

struct TrainLog {
  std::vector<TrainRecord> records;

  /// CSV with header step,total,recon,aux,temp,spat,raster,mat,l0_mean,dead,ms_elapsed.
  /// With include_timing=false the wall-clock column is written as 0 so two
  /// identical runs produce identical bytes.
  void write_csv(std::ostream& out, bool include_timing = true) const;
  void write_csv(const std::filesystem::path& path, bool include_timing = true) const;

  /// Mean total loss of the records belonging to each epoch.
  std::vector<double> epoch_means(std::size_t batches_per_epoch) const;
};

/// Adam first/second moments for every parameter tensor.
struct AdamState {
  SaeGradients<float> m;
  SaeGradients<float> v;
  std::uint64_t step = 0;

  static AdamState zeros(const SaeConfig& config) {
    return {SaeGradients<float>::zeros(config), SaeGradients<float>::zeros(config), 0};
  }
};

/// Bias-corrected Adam update (state.step is incremented first). Unless the
/// decoder is frozen, W_d columns are then rescaled to unit norm and each
/// norm is folded into the matching encoder row and bias.
void adam_step(SaeParams<float>& params, const SaeGradients<float>& grads, AdamState& state,
               const TrainConfig& cfg);

/// Rescales every decoder column to unit L2 norm, multiplying the matching
/// encoder row and encoder bias by the old norm.
void normalize_decoder(SaeParams<float>& params);

/// Gaussian decoder columns normalized to unit norm, W_e = W_d^T, b_e = 0,
/// b_pre = mean training token.
SaeParams<float> init_params(const SaeConfig& config, const FeatureTensor& data, std::uint64_t seed);

/// H = expansion * D, TopK with the given k.
SaeConfig default_sae_config(std::uint32_t input_dim, std::uint32_t expansion = 8, std::uint32_t k = 64);

struct TrainResult {
  SaeParams<float> params;
  TrainLog log;
  std::size_t batches_per_epoch = 0;
};

/// Epoch loop over iter_batches (flat tokens for the standard variant, whole
/// clips otherwise). Deterministic given cfg.seed. Throws NumericError with
/// the step and breakdown when the loss goes non-finite.
TrainResult train(const FeatureTensor& data, const SaeConfig& arch, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

/// Encodes every token of a tensor with the evaluation-time activation rule.
/// Batch-mode BatchTopK selects jointly within each clip.
std::vector<SparseCode> encode_tensor(const FeatureTensor& data, const SaeParams<float>& params,
                                      TopkEvalMode mode = TopkEvalMode::per_token);

/// Decodes codes back to token space, [n, D] row-major.
std::vector<float> decode_all(const std::vector<SparseCode>& codes, const SaeParams<float>& params);

struct Checkpoint {
  SaeParams<float> params;
  TrainConfig config;
};

/// STSC: magic, u32 version, u64 json_len, JSON config, then b_pre, W_e, b_e,
/// W_d as f32. Written atomically.
void save_checkpoint(const SaeParams<float>& params, const TrainConfig& cfg,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace stsae
