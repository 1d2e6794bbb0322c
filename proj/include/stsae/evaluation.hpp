#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stsae/features.hpp"
#include "stsae/metrics.hpp"
#include "stsae/sae.hpp"

namespace stsae {

enum class Smoothing { none, ema, union_topk };

const char* to_string(Smoothing s) noexcept;
Smoothing smoothing_from_string(const std::string& name);

enum class ProbeSpace { full, high_group };

struct EvalOptions {
  TopkEvalMode eval_topk = TopkEvalMode::per_token;
  Smoothing smooth = Smoothing::none;
  double ema_alpha = 0.5;
  Lag1Mode lag1_mode = Lag1Mode::frame_pooled;
  std::size_t ms_top_m = 16;
  std::size_t purity_top_m = 8;
  std::size_t purity_top_features = 50;
  std::size_t jaccard_top_m = 16;
  std::size_t jaccard_pairs = 10000;
  std::uint64_t jaccard_seed = 0;
  std::uint64_t probe_split_seed = 0;
  ProbeSpace probe_space = ProbeSpace::full;

  nlohmann::json to_json() const;
  void from_json_strict(const nlohmann::json& j);
};

struct EvalResult {
  MetricsReport report;
  // Clip summaries of the (possibly smoothed) codes.
  ClipSummary summary;
  // Per-clip pooled probe features, [n_clips, F].
  std::vector<float> pooled;
  std::size_t pooled_dim = 0;
  std::optional<ProbeResult> probe;
  PurityResult purity;
};

/// Pooled probe inputs from a summary: every feature, or the Matryoshka
/// prefix group.
std::vector<float> pooled_features(const ClipSummary& summary, std::size_t n_features);

/// Encodes, optionally smooths, and runs the full metric battery. R^2 and
/// sparsity always describe the unsmoothed SAE codes; coherence, MS, purity,
/// Jaccard and the probe use the smoothed ones. Metrics whose inputs are
/// missing (labels, embeddings) are left unset.
EvalResult evaluate_model(const FeatureTensor& data, const SaeParams<float>& params,
                          const EvalOptions& opts, const EmbeddingSet* sim = nullptr);

/// Codes after the Temporal Union reselection, clip by clip.
std::vector<SparseCode> union_codes(const FeatureTensor& data, const SaeParams<float>& params);

}  // namespace stsae
