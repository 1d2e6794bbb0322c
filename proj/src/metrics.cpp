#include "stsae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace stsae {

double r_squared(std::span<const float> x, std::span<const float> x_hat, std::size_t dim,
                 const std::optional<ClipLayout>& pooled) {
  if (x.size() != x_hat.size() || dim == 0 || x.size() % dim != 0) {
    throw std::invalid_argument("r_squared: shape mismatch");
  }
  std::size_t n = x.size() / dim;
  std::vector<double> px, ph;
  const float* xs = x.data();
  const float* hs = x_hat.data();
  if (pooled) {
    const std::size_t per = pooled->tokens_per_clip();
    if (per == 0 || pooled->n_tokens() != n) throw std::invalid_argument("r_squared: layout mismatch");
    px.assign(pooled->n_clips * dim, 0.0);
    ph.assign(pooled->n_clips * dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = i / per;
      for (std::size_t d = 0; d < dim; ++d) {
        px[c * dim + d] += xs[i * dim + d];
        ph[c * dim + d] += hs[i * dim + d];
      }
    }
    for (auto& v : px) v /= double(per);
    for (auto& v : ph) v /= double(per);
    n = pooled->n_clips;
  } else {
    px.assign(xs, xs + x.size());
    ph.assign(hs, hs + x.size());
  }
  if (n == 0) throw DegenerateInput("r_squared: no tokens");

  std::vector<double> mean(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) mean[d] += px[i * dim + d];
  for (auto& m : mean) m /= double(n);

  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double r = px[i * dim + d] - ph[i * dim + d];
      const double c = px[i * dim + d] - mean[d];
      sse += r * r;
      sst += c * c;
    }
  }
  if (!(sst > 0.0)) throw DegenerateInput("r_squared: input has zero variance");
  return 1.0 - sse / sst;
}

std::optional<double> lag1_pearson(std::span<const double> a) {
  const std::size_t m = a.size() < 2 ? 0 : a.size() - 1;
  if (m < 2) return std::nullopt;
  double mx = 0.0, my = 0.0;
  for (std::size_t t = 0; t < m; ++t) {
    mx += a[t];
    my += a[t + 1];
  }
  mx /= double(m);
  my /= double(m);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t t = 0; t < m; ++t) {
    const double dx = a[t] - mx, dy = a[t + 1] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx / double(m) < 1e-8 || syy / double(m) < 1e-8) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

Lag1Accumulator::Lag1Accumulator(std::uint32_t frames, std::size_t n_features)
    : frames_(frames), n_features_(n_features), sum_(n_features, 0.0), count_(n_features, 0) {
  if (frames < 3) throw std::invalid_argument("lag-1 autocorrelation needs T >= 3");
}

void Lag1Accumulator::add(std::span<const float> block, std::size_t n_series) {
  if (block.size() != n_series * frames_ * n_features_) {
    throw std::invalid_argument("Lag1Accumulator: block is not [n, T, F]");
  }
  std::vector<double> series(frames_);
  for (std::size_t s = 0; s < n_series; ++s) {
    const float* base = block.data() + s * frames_ * n_features_;
    for (std::size_t f = 0; f < n_features_; ++f) {
      for (std::uint32_t t = 0; t < frames_; ++t) series[t] = base[t * n_features_ + f];
      if (auto r = lag1_pearson(series)) {
        sum_[f] += *r;
        ++count_[f];
      }
    }
  }
}

Lag1Stats Lag1Accumulator::result() const {
  Lag1Stats out;
  double total = 0.0;
  std::size_t below = 0;
  for (std::size_t f = 0; f < n_features_; ++f) {
    if (count_[f] == 0) continue;
    total += sum_[f];
    out.n_series += count_[f];
    ++out.n_features;
    if (sum_[f] / double(count_[f]) < 0.3) ++below;
  }
  if (out.n_series == 0) throw DegenerateInput("lag-1 autocorrelation: every series is constant");
  out.mean = total / double(out.n_series);
  out.frac_below_03 = double(below) / double(out.n_features);
  return out;
}

ClipSummaryBuilder::ClipSummaryBuilder(const ClipLayout& layout, std::size_t n_features, bool patch_lag1) {
  s_.layout = layout;
  s_.n_features = n_features;
  s_.frame_means.assign(layout.n_clips * layout.frames * n_features, 0.0f);
  s_.clip_max.assign(layout.n_clips * n_features, 0.0f);
  s_.clip_mean.assign(layout.n_clips * n_features, 0.0f);
  if (patch_lag1) s_.patch_lag1.emplace(layout.frames, n_features);
}

void ClipSummaryBuilder::add_dense(std::span<const float> clip) {
  const std::size_t T = s_.layout.frames, P = s_.layout.patches, F = s_.n_features;
  if (clips_done_ >= s_.layout.n_clips) throw std::logic_error("ClipSummaryBuilder: too many clips");
  if (clip.size() != T * P * F) throw std::invalid_argument("ClipSummaryBuilder: clip is not [T, P, F]");
  const std::size_t c = clips_done_++;
  float* fm = s_.frame_means.data() + c * T * F;
  float* mx = s_.clip_max.data() + c * F;
  float* mn = s_.clip_mean.data() + c * F;
  std::vector<double> acc(F);
  std::vector<double> total(F, 0.0);
  std::fill(mx, mx + F, -std::numeric_limits<float>::infinity());
  for (std::size_t t = 0; t < T; ++t) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < P; ++p) {
      const float* row = clip.data() + (t * P + p) * F;
      for (std::size_t f = 0; f < F; ++f) {
        acc[f] += row[f];
        mx[f] = std::max(mx[f], row[f]);
      }
    }
    for (std::size_t f = 0; f < F; ++f) {
      fm[t * F + f] = float(acc[f] / double(P));
      total[f] += acc[f];
    }
  }
  for (std::size_t f = 0; f < F; ++f) mn[f] = float(total[f] / double(T * P));

  if (s_.patch_lag1) {
    scratch_.resize(P * T * F);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t p = 0; p < P; ++p)
        std::copy_n(clip.data() + (t * P + p) * F, F, scratch_.data() + (p * T + t) * F);
    s_.patch_lag1->add(scratch_, P);
  }
}

void ClipSummaryBuilder::add_sparse(std::span<const SparseCode> clip) {
  const std::size_t T = s_.layout.frames, P = s_.layout.patches, F = s_.n_features;
  if (clip.size() != T * P) throw std::invalid_argument("ClipSummaryBuilder: clip needs T*P codes");
  dense_.assign(T * P * F, 0.0f);
  for (std::size_t i = 0; i < clip.size(); ++i) {
    for (const auto& e : clip[i].active) {
      if (e.index >= F) throw std::invalid_argument("ClipSummaryBuilder: code index out of range");
      dense_[i * F + e.index] = e.value;
    }
  }
  add_dense(dense_);
}

ClipSummary ClipSummaryBuilder::finish() {
  if (clips_done_ != s_.layout.n_clips) throw std::logic_error("ClipSummaryBuilder: missing clips");
  return std::move(s_);
}

ClipSummary summarize_codes(std::span<const SparseCode> codes, const ClipLayout& layout,
                            std::size_t n_features, bool patch_lag1) {
  if (codes.size() != layout.n_tokens()) throw std::invalid_argument("summarize_codes: code count mismatch");
  ClipSummaryBuilder b(layout, n_features, patch_lag1);
  const std::size_t per = layout.tokens_per_clip();
  for (std::size_t c = 0; c < layout.n_clips; ++c) b.add_sparse(codes.subspan(c * per, per));
  return b.finish();
}

ClipSummary summarize_raw(const FeatureTensor& tensor, bool patch_lag1) {
  ClipSummaryBuilder b({tensor.n_clips, tensor.frames, tensor.patches}, tensor.dim, patch_lag1);
  for (std::size_t c = 0; c < tensor.n_clips; ++c) b.add_dense(tensor.clip(c));
  return b.finish();
}

Lag1Stats lag1_autocorr(const ClipSummary& summary, Lag1Mode mode) {
  if (mode == Lag1Mode::patch) {
    if (!summary.patch_lag1) throw std::invalid_argument("patch-level lag-1 was not collected");
    return summary.patch_lag1->result();
  }
  Lag1Accumulator acc(summary.layout.frames, summary.n_features);
  acc.add(summary.frame_means, summary.layout.n_clips);
  return acc.result();
}

SparsityStats sparsity_stats(std::span<const SparseCode> codes, std::size_t dict_size) {
  if (codes.empty()) throw std::invalid_argument("sparsity_stats: no codes");
  std::vector<std::uint8_t> alive(dict_size, 0);
  double l0 = 0.0;
  for (const auto& c : codes) {
    l0 += double(c.l0());
    for (const auto& e : c.active) alive[e.index] = 1;
  }
  const auto n_alive = std::count(alive.begin(), alive.end(), std::uint8_t{1});
  return {l0 / double(codes.size()), dict_size == 0 ? 0.0 : 1.0 - double(n_alive) / double(dict_size)};
}

std::vector<std::uint32_t> top_clips(const ClipSummary& summary, std::size_t feature, std::size_t top_m) {
  const std::size_t n = summary.layout.n_clips, F = summary.n_features;
  std::vector<std::uint32_t> idx;
  for (std::uint32_t c = 0; c < n; ++c) {
    if (summary.clip_max[c * F + feature] > 0.0f) idx.push_back(c);
  }
  const std::size_t m = std::min(top_m, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + std::ptrdiff_t(m), idx.end(),
                    [&](std::uint32_t a, std::uint32_t b) {
                      const float va = summary.clip_max[a * F + feature];
                      const float vb = summary.clip_max[b * F + feature];
                      return va != vb ? va > vb : a < b;
                    });
  idx.resize(m);
  return idx;
}

double monosemanticity(const ClipSummary& summary, const EmbeddingSet& emb, std::size_t top_m) {
  if (emb.count != summary.layout.n_clips) {
    throw std::invalid_argument("monosemanticity: " + std::to_string(emb.count) + " embeddings for " +
                                std::to_string(summary.layout.n_clips) + " clips");
  }
  std::vector<double> norms(emb.count);
  for (std::size_t c = 0; c < emb.count; ++c) {
    double n2 = 0.0;
    for (float v : emb.row(c)) n2 += double(v) * v;
    norms[c] = std::sqrt(n2);
  }
  auto cosine = [&](std::size_t a, std::size_t b) {
    if (norms[a] == 0.0 || norms[b] == 0.0) return 0.0;
    double dot = 0.0;
    const auto ra = emb.row(a), rb = emb.row(b);
    for (std::size_t d = 0; d < emb.dim; ++d) dot += double(ra[d]) * rb[d];
    return std::clamp(dot / (norms[a] * norms[b]), -1.0, 1.0);
  };

  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t h = 0; h < summary.n_features; ++h) {
    const auto clips = top_clips(summary, h, top_m);
    if (clips.size() < 2) continue;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      const double ai = summary.clip_max[clips[i] * summary.n_features + h];
      for (std::size_t j = i + 1; j < clips.size(); ++j) {
        const double w = ai * summary.clip_max[clips[j] * summary.n_features + h];
        num += w * cosine(clips[i], clips[j]);
        den += w;
      }
    }
    total += num / den;
    ++counted;
  }
  if (counted == 0) throw DegenerateInput("monosemanticity: no feature activates on two or more clips");
  return total / double(counted);
}

PurityResult action_purity(const ClipSummary& summary, std::span<const std::uint32_t> labels,
                           std::size_t top_m, std::size_t top_features) {
  const std::size_t n = summary.layout.n_clips, F = summary.n_features;
  if (labels.size() != n) throw DegenerateInput("action_purity: dataset is unlabeled");
  if (top_m == 0) throw std::invalid_argument("action_purity: top_m must be >= 1");
  const std::uint32_t C = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;

  PurityResult out;
  out.per_feature.assign(F, std::numeric_limits<double>::quiet_NaN());
  std::vector<double> mass(F, 0.0);
  std::vector<std::uint32_t> counts(C);
  for (std::size_t h = 0; h < F; ++h) {
    for (std::size_t c = 0; c < n; ++c) mass[h] += summary.clip_mean[c * F + h];
    const auto clips = top_clips(summary, h, top_m);
    if (clips.empty()) continue;
    std::fill(counts.begin(), counts.end(), 0u);
    for (auto c : clips) ++counts[labels[c]];
    out.per_feature[h] = double(*std::max_element(counts.begin(), counts.end())) / double(top_m);
  }

  std::vector<std::uint32_t> live;
  for (std::uint32_t h = 0; h < F; ++h) {
    if (!std::isnan(out.per_feature[h])) live.push_back(h);
  }
  if (live.empty()) throw DegenerateInput("action_purity: no feature ever fires");
  const std::size_t m = std::min(top_features, live.size());
  std::partial_sort(live.begin(), live.begin() + std::ptrdiff_t(m), live.end(),
                    [&](std::uint32_t a, std::uint32_t b) { return mass[a] != mass[b] ? mass[a] > mass[b] : a < b; });
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) acc += out.per_feature[live[i]];
  out.mean = acc / double(m);
  return out;
}

double jaccard_uniqueness(const ClipSummary& summary, std::size_t top_m, std::size_t sampled_pairs,
                          std::uint64_t seed) {
  std::vector<std::vector<std::uint32_t>> sets;
  for (std::size_t h = 0; h < summary.n_features; ++h) {
    auto s = top_clips(summary, h, top_m);
    if (s.empty()) continue;
    std::sort(s.begin(), s.end());
    sets.push_back(std::move(s));
  }
  const std::size_t L = sets.size();
  if (L < 2) throw DegenerateInput("jaccard_uniqueness: fewer than 2 live features");

  auto jaccard = [&](std::size_t a, std::size_t b) {
    std::size_t inter = 0, i = 0, j = 0;
    while (i < sets[a].size() && j < sets[b].size()) {
      if (sets[a][i] == sets[b][j]) {
        ++inter;
        ++i;
        ++j;
      } else if (sets[a][i] < sets[b][j]) {
        ++i;
      } else {
        ++j;
      }
    }
    return double(inter) / double(sets[a].size() + sets[b].size() - inter);
  };

  const std::size_t all_pairs = L * (L - 1) / 2;
  double total = 0.0;
  if (all_pairs <= sampled_pairs) {
    for (std::size_t a = 0; a < L; ++a)
      for (std::size_t b = a + 1; b < L; ++b) total += jaccard(a, b);
    return total / double(all_pairs);
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, L - 1);
  for (std::size_t s = 0; s < sampled_pairs; ++s) {
    std::size_t a = pick(rng), b = pick(rng);
    while (b == a) b = pick(rng);
    total += jaccard(a, b);
  }
  return total / double(sampled_pairs);
}

const char* to_string(FeatureSpace s) noexcept {
  switch (s) {
    case FeatureSpace::raw_pooled: return "raw_pooled";
    case FeatureSpace::sae_pooled: return "sae_pooled";
    case FeatureSpace::sae_high_group: return "sae_high_group";
  }
  return "unknown";
}

std::uint32_t ProbeModel::predict(std::span<const float> row) const {
  std::uint32_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::uint32_t k = 0; k < n_classes; ++k) {
    double s = b[k];
    for (std::size_t f = 0; f < n_features; ++f) {
      s += double(W[k * n_features + f]) * ((double(row[f]) - mean[f]) / scale[f]);
    }
    if (s > best_score) {
      best_score = s;
      best = k;
    }
  }
  return best;
}

std::vector<double> ProbeModel::importance() const {
  std::vector<double> out(n_features, 0.0);
  for (std::uint32_t k = 0; k < n_classes; ++k)
    for (std::size_t f = 0; f < n_features; ++f) out[f] += double(W[k * n_features + f]) * W[k * n_features + f];
  for (auto& v : out) v = std::sqrt(v);
  return out;
}

StratifiedSplit stratified_split(std::span<const std::uint32_t> labels, double test_fraction,
                                 std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("stratified_split: test fraction must lie in (0, 1)");
  }
  const std::uint32_t C = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<std::uint32_t>> by_class(C);
  for (std::uint32_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::mt19937_64 rng(seed);
  StratifiedSplit out;
  for (std::uint32_t k = 0; k < C; ++k) {
    auto& members = by_class[k];
    if (members.empty()) continue;
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_test = std::min<std::size_t>(
        members.size() - 1, std::size_t(std::llround(double(members.size()) * test_fraction)));
    out.test.insert(out.test.end(), members.begin(), members.begin() + std::ptrdiff_t(n_test));
    out.train.insert(out.train.end(), members.begin() + std::ptrdiff_t(n_test), members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

double probe_accuracy(const ProbeModel& model, std::span<const float> features,
                      std::span<const std::uint32_t> labels, std::span<const std::uint32_t> rows) {
  if (rows.empty()) throw std::invalid_argument("probe_accuracy: no rows");
  const std::size_t F = model.n_features;
  std::size_t hits = 0;
  for (auto r : rows) {
    if (model.predict(features.subspan(std::size_t(r) * F, F)) == labels[r]) ++hits;
  }
  return double(hits) / double(rows.size());
}

ProbeResult train_probe(std::span<const float> features, std::size_t F,
                        std::span<const std::uint32_t> labels, const ProbeOptions& opts) {
  using Mat = Eigen::MatrixXd;
  if (F == 0 || features.size() != labels.size() * F) throw std::invalid_argument("train_probe: features are not [n, F]");
  const std::size_t n = labels.size();
  const std::uint32_t C = n == 0 ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  if (C < 2) throw std::invalid_argument("train_probe: need at least 2 classes");
  if (n < 2 * std::size_t(C)) throw std::invalid_argument("train_probe: need n >= 2 * n_classes");

  ProbeResult res;
  res.split = stratified_split(labels, opts.test_fraction, opts.split_seed);
  const auto& train = res.split.train;
  {
    std::vector<std::uint8_t> present(C, 0);
    for (auto i : train) present[labels[i]] = 1;
    for (std::uint32_t k = 0; k < C; ++k) {
      if (!present[k]) throw std::invalid_argument("train_probe: class " + std::to_string(k) + " absent from training split");
    }
  }
  if (res.split.test.empty()) throw std::invalid_argument("train_probe: empty test split");

  auto& model = res.model;
  model.n_classes = C;
  model.n_features = F;
  model.feature_space = opts.feature_space;
  model.mean.assign(F, 0.0f);
  model.scale.assign(F, 1.0f);
  const std::size_t m = train.size();
  Mat X(m, F);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t f = 0; f < F; ++f) X(Eigen::Index(i), Eigen::Index(f)) = features[train[i] * F + f];
  for (std::size_t f = 0; f < F; ++f) {
    const double mu = X.col(Eigen::Index(f)).mean();
    const double var = (X.col(Eigen::Index(f)).array() - mu).square().mean();
    const double sd = var > 1e-12 ? std::sqrt(var) : 1.0;
    model.mean[f] = float(mu);
    model.scale[f] = float(sd);
    X.col(Eigen::Index(f)) = (X.col(Eigen::Index(f)).array() - double(model.mean[f])) / double(model.scale[f]);
  }
  Mat Y = Mat::Zero(m, C);
  for (std::size_t i = 0; i < m; ++i) Y(Eigen::Index(i), labels[train[i]]) = 1.0;

  Mat W = Mat::Zero(F, C);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(C);
  if (opts.init_seed) {
    std::mt19937_64 rng(*opts.init_seed);
    std::normal_distribution<double> normal(0.0, 0.1);
    for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = normal(rng);
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = normal(rng);
  }
  Mat vW = Mat::Zero(F, C);
  Eigen::RowVectorXd vb = Eigen::RowVectorXd::Zero(C);

  auto forward = [&](Mat& P) {
    P = X * W;
    P.rowwise() += b;
    double ce = 0.0;
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
      const double mx = P.row(i).maxCoeff();
      P.row(i) = (P.row(i).array() - mx).exp();
      const double z = P.row(i).sum();
      P.row(i) /= z;
      ce -= std::log(std::max(P.row(i).dot(Y.row(i)), 1e-300));
    }
    return ce / double(m) + 0.5 * opts.l2 * W.squaredNorm();
  };

  Mat P;
  for (std::uint32_t it = 0; it < opts.iterations; ++it) {
    forward(P);
    const Mat G = (P - Y) / double(m);
    const Mat gW = X.transpose() * G + opts.l2 * W;
    const Eigen::RowVectorXd gb = G.colwise().sum();
    vW = opts.momentum * vW - opts.lr * gW;
    vb = opts.momentum * vb - opts.lr * gb;
    W += vW;
    b += vb;
  }
  res.final_loss = forward(P);
  if (!W.allFinite() || !b.allFinite()) throw std::runtime_error("train_probe: weights diverged");

  model.W.resize(C * F);
  model.b.resize(C);
  for (std::uint32_t k = 0; k < C; ++k) {
    model.b[k] = float(b[k]);
    for (std::size_t f = 0; f < F; ++f) model.W[k * F + f] = float(W(Eigen::Index(f), k));
  }
  res.accuracy = probe_accuracy(model, features, labels, res.split.test);
  return res;
}

nlohmann::json MetricsReport::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {
      {"r2", r2},
      {"r2_pooled", r2_pooled},
      {"lag1_mean", lag1_mean},
      {"lag1_frac_below_03", lag1_frac_below_03},
      {"l0_mean", l0_mean},
      {"dead_fraction", dead_fraction},
      {"ms", opt(ms)},
      {"purity_mean", opt(purity_mean)},
      {"jaccard_mean", opt(jaccard_mean)},
      {"probe_top1", opt(probe_top1)},
      {"config_echo", config_echo},
  };
}

}  // namespace stsae
