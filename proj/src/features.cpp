#include "stsae/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "binary_io.hpp"
#include "stsae/errors.hpp"

namespace stsae {

const char* to_string(FormatErrc code) noexcept {
  switch (code) {
    case FormatErrc::io: return "io";
    case FormatErrc::bad_magic: return "bad_magic";
    case FormatErrc::unsupported_version: return "unsupported_version";
    case FormatErrc::truncated: return "truncated";
    case FormatErrc::non_finite: return "non_finite";
    case FormatErrc::invalid_header: return "invalid_header";
    case FormatErrc::bad_json: return "bad_json";
  }
  return "unknown";
}

TruncatedError::TruncatedError(const std::string& path, std::size_t expected, std::size_t actual)
    : FormatError(FormatErrc::truncated, path + ": truncated file, expected " +
                                             std::to_string(expected) + " bytes, found " +
                                             std::to_string(actual)),
      expected_(expected),
      actual_(actual) {}

namespace detail {

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrc::io, path.string() + ": cannot open for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatErrc::io, tmp.string() + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(FormatErrc::io, tmp.string() + ": write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw FormatError(FormatErrc::io, path.string() + ": rename failed");
  }
}

}  // namespace detail

namespace {

constexpr std::uint32_t kFormatVersion = 1;

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float f) { return std::isfinite(f); });
}

}  // namespace

std::uint32_t FeatureTensor::n_classes() const {
  if (!labels || labels->empty()) return 0;
  return *std::max_element(labels->begin(), labels->end()) + 1;
}

void FeatureTensor::validate() const {
  if (frames == 0 || patches == 0 || dim == 0) {
    throw std::invalid_argument("FeatureTensor: frames, patches and dim must be positive");
  }
  if (data.size() != n_tokens() * dim) {
    throw std::invalid_argument("FeatureTensor: data length " + std::to_string(data.size()) +
                                " != n_clips*T*P*D = " + std::to_string(n_tokens() * dim));
  }
  if (!all_finite(data)) throw std::invalid_argument("FeatureTensor: non-finite value in data");
  if (labels && labels->size() != n_clips) {
    throw std::invalid_argument("FeatureTensor: label count != n_clips");
  }
}

void EmbeddingSet::validate() const {
  if (dim == 0) throw std::invalid_argument("EmbeddingSet: dim must be positive");
  if (data.size() != count * dim) {
    throw std::invalid_argument("EmbeddingSet: data length != count*dim");
  }
  if (!all_finite(data)) throw std::invalid_argument("EmbeddingSet: non-finite value in data");
}

void write_features(const FeatureTensor& tensor, const std::filesystem::path& path) {
  if (!all_finite(tensor.data)) {
    throw FormatError(FormatErrc::non_finite, path.string() + ": refusing to write non-finite data");
  }
  tensor.validate();

  detail::ByteWriter w;
  w.magic("STSF");
  w.put<std::uint32_t>(kFormatVersion);
  w.put<std::uint32_t>(tensor.frames);
  w.put<std::uint32_t>(tensor.patches);
  w.put<std::uint32_t>(tensor.dim);
  w.put<std::uint64_t>(tensor.n_clips);
  w.put<std::uint8_t>(tensor.labels ? 1 : 0);
  w.zeros(7);
  w.array<float>(tensor.data);
  if (tensor.labels) w.array<std::uint32_t>(*tensor.labels);
  detail::write_file_atomic(path, w.bytes());
}

FeatureTensor read_features(const std::filesystem::path& path) {
  detail::ByteReader r(detail::read_file(path), path.string());
  r.expect_magic("STSF");
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion) {
    throw FormatError(FormatErrc::unsupported_version,
                      path.string() + ": unsupported STSF version " + std::to_string(version));
  }
  FeatureTensor t;
  t.frames = r.get<std::uint32_t>();
  t.patches = r.get<std::uint32_t>();
  t.dim = r.get<std::uint32_t>();
  t.n_clips = r.get<std::uint64_t>();
  const auto has_labels = r.get<std::uint8_t>();
  r.skip(7);
  if (t.frames == 0 || t.patches == 0 || t.dim == 0 || has_labels > 1) {
    throw FormatError(FormatErrc::invalid_header, path.string() + ": invalid STSF header");
  }

  const std::size_t n_values = t.n_tokens() * t.dim;
  r.require_total(r.offset() + n_values * sizeof(float) +
                  (has_labels ? t.n_clips * sizeof(std::uint32_t) : 0));
  t.data = r.array<float>(n_values);
  if (!all_finite(t.data)) {
    throw FormatError(FormatErrc::non_finite, path.string() + ": non-finite value in payload");
  }
  if (has_labels) t.labels = r.array<std::uint32_t>(t.n_clips);
  r.expect_end();
  return t;
}

void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  if (!all_finite(set.data)) {
    throw FormatError(FormatErrc::non_finite, path.string() + ": refusing to write non-finite data");
  }
  set.validate();

  detail::ByteWriter w;
  w.magic("STSE");
  w.put<std::uint32_t>(kFormatVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(set.kind));
  w.zeros(3);
  w.put<std::uint32_t>(set.dim);
  w.put<std::uint64_t>(set.count);
  w.array<float>(set.data);
  detail::write_file_atomic(path, w.bytes());
}

EmbeddingSet read_embeddings(const std::filesystem::path& path) {
  detail::ByteReader r(detail::read_file(path), path.string());
  r.expect_magic("STSE");
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion) {
    throw FormatError(FormatErrc::unsupported_version,
                      path.string() + ": unsupported STSE version " + std::to_string(version));
  }
  EmbeddingSet s;
  const auto kind = r.get<std::uint8_t>();
  r.skip(3);
  s.dim = r.get<std::uint32_t>();
  s.count = r.get<std::uint64_t>();
  if (kind > 1 || s.dim == 0) {
    throw FormatError(FormatErrc::invalid_header, path.string() + ": invalid STSE header");
  }
  s.kind = static_cast<EmbeddingKind>(kind);
  s.data = r.array<float>(s.count * s.dim);
  if (!all_finite(s.data)) {
    throw FormatError(FormatErrc::non_finite, path.string() + ": non-finite value in payload");
  }
  r.expect_end();
  return s;
}

void SynthConfig::validate() const {
  if (n_clips == 0 || frames == 0 || patches == 0 || dim == 0) {
    throw std::invalid_argument("SynthConfig: clips, frames, patches and dim must be positive");
  }
  if (true_dict_size == 0) throw std::invalid_argument("SynthConfig: true_dict_size must be positive");
  if (k_true == 0 || k_true > true_dict_size) {
    throw std::invalid_argument("SynthConfig: need 1 <= k_true <= true_dict_size");
  }
  if (!(rho >= 0.0 && rho < 1.0)) throw std::invalid_argument("SynthConfig: rho must lie in [0, 1)");
  if (!(noise_std >= 0.0)) throw std::invalid_argument("SynthConfig: noise_std must be >= 0");
  if (!std::isfinite(class_signal)) throw std::invalid_argument("SynthConfig: class_signal not finite");
}

SyntheticData synth_clips_with_dictionary(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::size_t D = cfg.dim;
  const std::size_t G = cfg.true_dict_size;
  std::vector<double> atoms(G * D);
  for (std::size_t a = 0; a < G; ++a) {
    double norm2 = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      atoms[a * D + d] = normal(rng);
      norm2 += atoms[a * D + d] * atoms[a * D + d];
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t d = 0; d < D; ++d) atoms[a * D + d] *= inv;
  }

  SyntheticData out;
  FeatureTensor& t = out.tensor;
  t.frames = cfg.frames;
  t.patches = cfg.patches;
  t.dim = cfg.dim;
  t.n_clips = cfg.n_clips;
  t.data.assign(t.n_tokens() * D, 0.0f);

  const bool labeled = cfg.n_classes >= 1;
  const bool class_atom = cfg.n_classes >= 2;
  if (labeled) {
    std::vector<std::uint32_t> labels(cfg.n_clips);
    for (std::size_t c = 0; c < cfg.n_clips; ++c) labels[c] = std::uint32_t(c % cfg.n_classes);
    std::shuffle(labels.begin(), labels.end(), rng);
    t.labels = std::move(labels);
  }

  const double innovation = std::sqrt(1.0 - cfg.rho * cfg.rho);
  std::vector<std::size_t> pool(G);
  std::vector<std::size_t> active(cfg.k_true);
  std::vector<double> coeff(cfg.k_true);
  std::vector<double> token(D);

  for (std::size_t c = 0; c < cfg.n_clips; ++c) {
    double class_mean = 0.0;
    if (class_atom) {
      const double y = (*t.labels)[c];
      class_mean = cfg.class_signal * (2.0 * y / double(cfg.n_classes - 1) - 1.0);
    }
    for (std::size_t p = 0; p < cfg.patches; ++p) {
      // Partial Fisher-Yates draw of the active atoms, fixed across frames.
      std::iota(pool.begin(), pool.end(), std::size_t{0});
      const std::size_t first = class_atom ? 1 : 0;
      if (class_atom) active[0] = 0;
      for (std::size_t j = first; j < cfg.k_true; ++j) {
        std::uniform_int_distribution<std::size_t> pick(j, G - 1);
        std::swap(pool[j], pool[pick(rng)]);
        active[j] = pool[j];
      }
      for (auto& v : coeff) v = normal(rng);

      for (std::size_t f = 0; f < cfg.frames; ++f) {
        if (f > 0) {
          for (auto& v : coeff) v = cfg.rho * v + innovation * normal(rng);
        }
        std::fill(token.begin(), token.end(), 0.0);
        for (std::size_t j = 0; j < cfg.k_true; ++j) {
          const double w = coeff[j] + (class_atom && j == 0 ? class_mean : 0.0);
          const double* atom = &atoms[active[j] * D];
          for (std::size_t d = 0; d < D; ++d) token[d] += w * atom[d];
        }
        if (cfg.noise_std > 0.0) {
          for (auto& v : token) v += cfg.noise_std * normal(rng);
        }
        float* dst = &t.data[((c * cfg.frames + f) * cfg.patches + p) * D];
        for (std::size_t d = 0; d < D; ++d) dst[d] = static_cast<float>(token[d]);
      }
    }
  }

  out.dictionary.assign(atoms.begin(), atoms.end());
  return out;
}

FeatureTensor synth_clips(const SynthConfig& cfg) {
  return synth_clips_with_dictionary(cfg).tensor;
}

BatchStream::BatchStream(const FeatureTensor& tensor, BatchMode mode, std::size_t batch_size,
                         std::uint64_t seed)
    : tensor_(&tensor), mode_(mode), batch_size_(batch_size) {
  if (batch_size == 0) throw std::invalid_argument("iter_batches: batch size must be >= 1");
  const std::size_t n = mode == BatchMode::flat_tokens ? tensor.n_tokens() : tensor.n_clips;
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order_.begin(), order_.end(), rng);
}

std::size_t BatchStream::n_batches() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

std::optional<TokenBatch<float>> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  const std::size_t D = tensor_->dim;

  TokenBatch<float> b;
  b.dim = D;
  b.source.assign(order_.begin() + std::ptrdiff_t(cursor_), order_.begin() + std::ptrdiff_t(end));
  if (mode_ == BatchMode::flat_tokens) {
    b.x.reserve(b.source.size() * D);
    for (auto id : b.source) {
      auto tok = tensor_->token(id);
      b.x.insert(b.x.end(), tok.begin(), tok.end());
    }
  } else {
    b.layout = ClipLayout{b.source.size(), tensor_->frames, tensor_->patches};
    b.x.reserve(b.source.size() * tensor_->tokens_per_clip() * D);
    for (auto id : b.source) {
      auto clip = tensor_->clip(id);
      b.x.insert(b.x.end(), clip.begin(), clip.end());
    }
  }
  cursor_ = end;
  return b;
}

BatchStream iter_batches(const FeatureTensor& tensor, BatchMode mode, std::size_t batch_size,
                         std::uint64_t seed) {
  return BatchStream(tensor, mode, batch_size, seed);
}

TokenBatch<float> as_clip_batch(const FeatureTensor& tensor) {
  TokenBatch<float> b;
  b.dim = tensor.dim;
  b.x = tensor.data;
  b.layout = ClipLayout{tensor.n_clips, tensor.frames, tensor.patches};
  b.source.resize(tensor.n_clips);
  std::iota(b.source.begin(), b.source.end(), std::size_t{0});
  return b;
}

std::vector<float> token_mean(const FeatureTensor& tensor) {
  std::vector<double> acc(tensor.dim, 0.0);
  const std::size_t n = tensor.n_tokens();
  for (std::size_t i = 0; i < n; ++i) {
    auto tok = tensor.token(i);
    for (std::size_t d = 0; d < tensor.dim; ++d) acc[d] += tok[d];
  }
  std::vector<float> mean(tensor.dim);
  for (std::size_t d = 0; d < tensor.dim; ++d) mean[d] = n ? float(acc[d] / double(n)) : 0.0f;
  return mean;
}

}  // namespace stsae
