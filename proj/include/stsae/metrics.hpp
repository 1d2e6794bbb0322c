#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stsae/features.hpp"
#include "stsae/sparse_code.hpp"

namespace stsae {

/// Raised when a metric has nothing to measure (constant series, no live
/// features, missing labels or embeddings).
class DegenerateInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 1 - SSE / SST with the global mean token as the baseline. With a layout,
/// both x and x_hat are first mean-pooled per clip.
double r_squared(std::span<const float> x, std::span<const float> x_hat, std::size_t dim,
                 const std::optional<ClipLayout>& pooled = std::nullopt);

struct Lag1Stats {
  double mean = 0.0;
  double frac_below_03 = 0.0;
  std::size_t n_series = 0;
  std::size_t n_features = 0;
};

/// Streams [n, T, F] blocks of frame-level series and accumulates the Pearson
/// correlation of (a_1..a_{T-1}) with (a_2..a_T) per series. Series whose
/// slices have variance below 1e-8 are skipped.
class Lag1Accumulator {
 public:
  Lag1Accumulator(std::uint32_t frames, std::size_t n_features);

  void add(std::span<const float> block, std::size_t n_series);
  Lag1Stats result() const;

 private:
  std::uint32_t frames_;
  std::size_t n_features_;
  std::vector<double> sum_;
  std::vector<std::size_t> count_;
};

/// Pearson lag-1 of a single series, or nullopt when degenerate.
std::optional<double> lag1_pearson(std::span<const double> series);

enum class Lag1Mode { frame_pooled, patch };

/// Clip-level summaries every clip-scoped metric is computed from. Built from
/// sparse codes or from dense (smoothed) per-clip activations.
struct ClipSummary {
  ClipLayout layout;
  std::size_t n_features = 0;
  // [n_clips, T, F] mean over patches.
  std::vector<float> frame_means;
  // [n_clips, F] max over the clip's tokens.
  std::vector<float> clip_max;
  // [n_clips, F] mean over the clip's tokens.
  std::vector<float> clip_mean;
  std::optional<Lag1Accumulator> patch_lag1;

  std::span<const float> max_row(std::size_t c) const { return {clip_max.data() + c * n_features, n_features}; }
  std::span<const float> mean_row(std::size_t c) const { return {clip_mean.data() + c * n_features, n_features}; }
};

class ClipSummaryBuilder {
 public:
  ClipSummaryBuilder(const ClipLayout& layout, std::size_t n_features, bool patch_lag1 = false);

  /// Clip activations as [T, P, F] dense values.
  void add_dense(std::span<const float> clip);
  /// Clip activations as T*P sparse codes in frame/patch order.
  void add_sparse(std::span<const SparseCode> clip);

  ClipSummary finish();

 private:
  ClipSummary s_;
  std::size_t clips_done_ = 0;
  std::vector<float> scratch_;
  std::vector<float> dense_;
};

ClipSummary summarize_codes(std::span<const SparseCode> codes, const ClipLayout& layout,
                            std::size_t n_features, bool patch_lag1 = false);
/// Treats the raw feature channels as activations.
ClipSummary summarize_raw(const FeatureTensor& tensor, bool patch_lag1 = false);

Lag1Stats lag1_autocorr(const ClipSummary& summary, Lag1Mode mode = Lag1Mode::frame_pooled);

struct SparsityStats {
  double l0_mean = 0.0;
  double dead_fraction = 0.0;
};

SparsityStats sparsity_stats(std::span<const SparseCode> codes, std::size_t dict_size);

/// Activation-weighted pairwise cosine of each feature's top-m clips,
/// averaged over features that fire on at least two clips.
double monosemanticity(const ClipSummary& summary, const EmbeddingSet& embeddings,
                       std::size_t top_m = 16);

struct PurityResult {
  double mean = 0.0;
  // Per feature; NaN for features that never fire.
  std::vector<double> per_feature;
};

/// Dominant-label fraction (count / top_m) of each feature's top clips, and
/// the mean over the `top_features` features with the largest activation mass.
PurityResult action_purity(const ClipSummary& summary, std::span<const std::uint32_t> labels,
                           std::size_t top_m = 8, std::size_t top_features = 50);

double jaccard_uniqueness(const ClipSummary& summary, std::size_t top_m = 16,
                          std::size_t sampled_pairs = 10000, std::uint64_t seed = 0);

/// Indices of the top-m clips by activation (positive only), ties to the
/// lower clip id.
std::vector<std::uint32_t> top_clips(const ClipSummary& summary, std::size_t feature, std::size_t top_m);

enum class FeatureSpace { raw_pooled, sae_pooled, sae_high_group };

const char* to_string(FeatureSpace s) noexcept;

struct ProbeModel {
  std::uint32_t n_classes = 0;
  std::size_t n_features = 0;
  // [n_classes, F] in standardized space.
  std::vector<float> W;
  std::vector<float> b;
  // Train-split standardization applied before W.
  std::vector<float> mean;
  std::vector<float> scale;
  FeatureSpace feature_space = FeatureSpace::sae_pooled;

  std::uint32_t predict(std::span<const float> row) const;
  /// L2 norm of each feature's weight column over classes.
  std::vector<double> importance() const;
};

struct ProbeOptions {
  std::uint64_t split_seed = 0;
  // Seed for a random weight init; nullopt starts from zero.
  std::optional<std::uint64_t> init_seed;
  double l2 = 1e-4;
  std::uint32_t iterations = 1000;
  double lr = 0.1;
  double momentum = 0.9;
  double test_fraction = 0.2;
  FeatureSpace feature_space = FeatureSpace::sae_pooled;
};

struct StratifiedSplit {
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> test;
};

StratifiedSplit stratified_split(std::span<const std::uint32_t> labels, double test_fraction,
                                 std::uint64_t seed);

struct ProbeResult {
  ProbeModel model;
  double accuracy = 0.0;
  double final_loss = 0.0;
  StratifiedSplit split;
};

/// Multinomial logistic regression on [n, F] clip features.
ProbeResult train_probe(std::span<const float> features, std::size_t n_features,
                        std::span<const std::uint32_t> labels, const ProbeOptions& opts = {});

double probe_accuracy(const ProbeModel& model, std::span<const float> features,
                      std::span<const std::uint32_t> labels, std::span<const std::uint32_t> rows);

struct MetricsReport {
  double r2 = 0.0;
  double r2_pooled = 0.0;
  double lag1_mean = 0.0;
  double lag1_frac_below_03 = 0.0;
  double l0_mean = 0.0;
  double dead_fraction = 0.0;
  std::optional<double> ms;
  std::optional<double> purity_mean;
  std::optional<double> jaccard_mean;
  std::optional<double> probe_top1;
  nlohmann::json config_echo = nlohmann::json::object();

  nlohmann::json to_json() const;
};

}  // namespace stsae
