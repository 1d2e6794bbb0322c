#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stsae/features.hpp"
#include "stsae/metrics.hpp"
#include "stsae/sparse_code.hpp"

namespace stsae {

/// z~_0 = z_0, z~_t = alpha z_t + (1 - alpha) z~_{t-1} per (patch, feature).
/// `clip` holds T*P codes in frame/patch order; returns dense [T, P, H].
std::vector<float> ema_smooth(std::span<const SparseCode> clip, std::uint32_t frames,
                              std::uint32_t patches, double alpha);

/// Frame 0 is plain TopK. Later frames reselect the top-k positive
/// preactivations among this frame's plain TopK set and the previous frame's
/// selected set. `preacts` is [T, P, H].
std::vector<SparseCode> temporal_union_topk(std::span<const float> preacts, std::uint32_t frames,
                                            std::uint32_t patches, std::uint32_t dict_size,
                                            std::uint32_t k);

enum class AblationMode { top_by_weight, random };

const char* to_string(AblationMode m) noexcept;
AblationMode ablation_mode_from_string(const std::string& name);

struct AblationSpec {
  std::vector<std::uint32_t> Ns;
  AblationMode mode = AblationMode::top_by_weight;
  std::uint64_t seed = 0;
};

struct AblationRow {
  std::uint32_t N = 0;
  AblationMode mode = AblationMode::top_by_weight;
  double accuracy = 0.0;
};

/// Features ablated for a given N, most important first for top_by_weight.
std::vector<std::uint32_t> ablation_targets(const ProbeModel& probe, std::uint32_t N, AblationMode mode,
                                            std::uint64_t seed);

/// Zeroes the selected pooled dimensions of the `rows` clips and rescores them
/// with the unchanged probe.
std::vector<AblationRow> causal_ablate(const ProbeModel& probe, std::span<const float> pooled,
                                       std::span<const std::uint32_t> labels,
                                       std::span<const std::uint32_t> rows, const AblationSpec& spec);

struct RetrievalSpec {
  std::vector<double> alphas{0.01, 0.1, 1.0, 10.0, 100.0};
  std::uint32_t folds = 5;
  std::uint64_t split_seed = 0;
  double train_fraction = 0.8;

  void validate() const;
};

struct RidgeFit {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  // [E, F + 1] row-major; the last column is the intercept.
  std::vector<double> W;
  double alpha = 0.0;
  std::vector<double> cv_mse;

  std::vector<double> predict(std::span<const float> row) const;
};

/// Closed-form ridge with an unpenalized intercept.
RidgeFit ridge_fit(std::span<const float> X, std::span<const float> Y, std::size_t n, std::size_t F,
                   std::size_t E, double alpha);

/// Selects alpha by k-fold CV MSE, then refits on all n rows.
RidgeFit ridge_fit_cv(std::span<const float> X, std::span<const float> Y, std::size_t n, std::size_t F,
                      std::size_t E, const RetrievalSpec& spec);

struct RetrievalScores {
  double r_at_1 = 0.0;
  double r_at_5 = 0.0;
  std::size_t n_test = 0;
};

/// Ranks classes by cosine between the projected clip and each class
/// embedding, ties to the lower class id.
RetrievalScores retrieval_eval(const RidgeFit& fit, std::span<const float> X, std::size_t n,
                               std::span<const std::uint32_t> labels, const EmbeddingSet& classes);

struct RetrievalReport {
  double alpha = 0.0;
  RetrievalScores scores;

  nlohmann::json to_json() const;
};

/// Splits pooled clips train/test by split_seed, regresses the class text
/// embedding of each training clip, and scores the held-out clips.
RetrievalReport run_retrieval(std::span<const float> pooled, std::size_t F,
                              std::span<const std::uint32_t> labels, const EmbeddingSet& classes,
                              const RetrievalSpec& spec);

}  // namespace stsae
