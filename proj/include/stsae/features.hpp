#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace stsae {

/// Backbone activations for a set of clips.
///
/// Layout is clip-major, then frame, then patch, each token holding `dim`
/// contiguous floats. Patches within a frame are row-major over the patch grid.
struct FeatureTensor {
  std::uint32_t frames = 0;
  std::uint32_t patches = 0;
  std::uint32_t dim = 0;
  std::uint64_t n_clips = 0;
  std::vector<float> data;
  std::optional<std::vector<std::uint32_t>> labels;

  std::size_t tokens_per_clip() const { return std::size_t(frames) * patches; }
  std::size_t n_tokens() const { return std::size_t(n_clips) * tokens_per_clip(); }

  std::span<const float> token(std::size_t flat_index) const {
    return {data.data() + flat_index * dim, dim};
  }
  std::span<const float> token(std::size_t clip, std::size_t frame, std::size_t patch) const {
    return token((clip * frames + frame) * patches + patch);
  }
  std::span<const float> clip(std::size_t c) const {
    return {data.data() + c * tokens_per_clip() * dim, tokens_per_clip() * dim};
  }

  /// One past the largest label; 0 when unlabeled.
  std::uint32_t n_classes() const;

  /// Throws std::invalid_argument on shape, finiteness or label violations.
  void validate() const;

  bool operator==(const FeatureTensor&) const = default;
};

enum class EmbeddingKind : std::uint8_t { per_clip = 0, per_class = 1 };

/// Similarity-backbone embeddings (one row per clip) or text embeddings (one
/// row per class).
struct EmbeddingSet {
  EmbeddingKind kind = EmbeddingKind::per_clip;
  std::uint32_t dim = 0;
  std::uint64_t count = 0;
  std::vector<float> data;

  std::span<const float> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
  void validate() const;

  bool operator==(const EmbeddingSet&) const = default;
};

void write_features(const FeatureTensor& tensor, const std::filesystem::path& path);
FeatureTensor read_features(const std::filesystem::path& path);

void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet read_embeddings(const std::filesystem::path& path);

struct SynthConfig {
  std::uint64_t n_clips = 200;
  std::uint32_t frames = 8;
  std::uint32_t patches = 16;
  std::uint32_t dim = 32;
  std::uint32_t n_classes = 4;
  std::uint32_t true_dict_size = 64;
  std::uint32_t k_true = 4;
  double rho = 0.8;
  double noise_std = 0.0;
  // Spread of the class-conditional mean placed on the signal atom.
  double class_signal = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticData {
  FeatureTensor tensor;
  // Planted atoms, [true_dict_size, dim] row-major, unit norm.
  std::vector<float> dictionary;
};

/// Planted-dictionary generator with AR(1) coefficient dynamics.
///
/// Every (clip, patch) draws a fixed set of k_true atoms. Their coefficients
/// follow c_t = rho * c_{t-1} + sqrt(1 - rho^2) * eps_t, started from the
/// stationary law. When n_classes >= 2, atom 0 is always active and its
/// coefficient mean depends on the clip label.
SyntheticData synth_clips_with_dictionary(const SynthConfig& cfg);
FeatureTensor synth_clips(const SynthConfig& cfg);

struct ClipLayout {
  std::size_t n_clips = 0;
  std::uint32_t frames = 0;
  std::uint32_t patches = 0;

  std::size_t tokens_per_clip() const { return std::size_t(frames) * patches; }
  std::size_t n_tokens() const { return n_clips * tokens_per_clip(); }
  std::size_t token_id(std::size_t clip, std::size_t frame, std::size_t patch) const {
    return (clip * frames + frame) * patches + patch;
  }
  bool operator==(const ClipLayout&) const = default;
};

/// A minibatch of tokens, [n_tokens, dim] row-major. When `layout` is set the
/// tokens are whole clips in clip/frame/patch order.
template <typename S>
struct TokenBatch {
  std::size_t dim = 0;
  std::vector<S> x;
  std::optional<ClipLayout> layout;
  // Flat token ids (flat mode) or clip ids (clip mode) in the source tensor.
  std::vector<std::size_t> source;

  std::size_t size() const { return dim == 0 ? 0 : x.size() / dim; }
  std::span<const S> token(std::size_t i) const { return {x.data() + i * dim, dim}; }
};

enum class BatchMode { flat_tokens, whole_clips };

/// Single pass over a tensor in shuffled order. Each token (flat mode) or clip
/// (clip mode) is yielded exactly once; the final batch may be short.
class BatchStream {
 public:
  BatchStream(const FeatureTensor& tensor, BatchMode mode, std::size_t batch_size,
              std::uint64_t seed);

  std::optional<TokenBatch<float>> next();
  std::size_t n_batches() const;

 private:
  const FeatureTensor* tensor_;
  BatchMode mode_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

BatchStream iter_batches(const FeatureTensor& tensor, BatchMode mode, std::size_t batch_size,
                         std::uint64_t seed);

/// Whole tensor as one clip-mode batch, clips in storage order.
TokenBatch<float> as_clip_batch(const FeatureTensor& tensor);

/// Per-dimension mean over every token.
std::vector<float> token_mean(const FeatureTensor& tensor);

}  // namespace stsae
