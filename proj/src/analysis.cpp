#include "stsae/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include <Eigen/Dense>

#include "stsae/sae.hpp"

namespace stsae {

std::vector<float> ema_smooth(std::span<const SparseCode> clip, std::uint32_t frames,
                              std::uint32_t patches, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("ema_smooth: alpha must lie in (0, 1]");
  if (clip.size() != std::size_t(frames) * patches) throw std::invalid_argument("ema_smooth: clip needs T*P codes");
  if (clip.empty()) return {};
  const std::size_t H = clip.front().dict_size;
  const std::size_t P = patches;
  std::vector<float> out(clip.size() * H, 0.0f);
  for (std::size_t i = 0; i < clip.size(); ++i) {
    if (clip[i].dict_size != H) throw std::invalid_argument("ema_smooth: inconsistent dictionary size");
    for (const auto& e : clip[i].active) out[i * H + e.index] = e.value;
  }
  const float a = float(alpha), keep = float(1.0 - alpha);
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t p = 0; p < P; ++p) {
      float* cur = out.data() + (t * P + p) * H;
      const float* prev = out.data() + ((t - 1) * P + p) * H;
      for (std::size_t h = 0; h < H; ++h) cur[h] = a * cur[h] + keep * prev[h];
    }
  }
  return out;
}

std::vector<SparseCode> temporal_union_topk(std::span<const float> preacts, std::uint32_t frames,
                                            std::uint32_t patches, std::uint32_t dict_size,
                                            std::uint32_t k) {
  const std::size_t P = patches, H = dict_size;
  if (preacts.size() != std::size_t(frames) * P * H) {
    throw std::invalid_argument("temporal_union_topk: preacts is not [T, P, H]");
  }
  std::vector<SparseCode> out(std::size_t(frames) * P);
  std::vector<float> masked(H);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t p = 0; p < P; ++p) {
      const std::span<const float> row = preacts.subspan((t * P + p) * H, H);
      auto plain = topk_activate<float>(row, k);
      if (t == 0) {
        out[p] = std::move(plain);
        continue;
      }
      std::fill(masked.begin(), masked.end(), 0.0f);
      for (const auto& e : plain.active) masked[e.index] = row[e.index];
      for (const auto& e : out[(t - 1) * P + p].active) masked[e.index] = row[e.index];
      out[t * P + p] = topk_activate<float>(masked, k);
    }
  }
  return out;
}

const char* to_string(AblationMode m) noexcept {
  return m == AblationMode::top_by_weight ? "top" : "random";
}

AblationMode ablation_mode_from_string(const std::string& name) {
  if (name == "top" || name == "top_by_weight") return AblationMode::top_by_weight;
  if (name == "random" || name == "rand") return AblationMode::random;
  throw std::invalid_argument("unknown ablation mode: " + name);
}

std::vector<std::uint32_t> ablation_targets(const ProbeModel& probe, std::uint32_t N, AblationMode mode,
                                            std::uint64_t seed) {
  const std::size_t F = probe.n_features;
  if (N > F) {
    throw std::invalid_argument("ablation: N=" + std::to_string(N) + " exceeds feature count " + std::to_string(F));
  }
  std::vector<std::uint32_t> idx(F);
  std::iota(idx.begin(), idx.end(), 0u);
  if (mode == AblationMode::top_by_weight) {
    const auto imp = probe.importance();
    std::stable_sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) { return imp[a] > imp[b]; });
  } else {
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (std::uint64_t(N) + 1)));
    std::shuffle(idx.begin(), idx.end(), rng);
  }
  idx.resize(N);
  return idx;
}

std::vector<AblationRow> causal_ablate(const ProbeModel& probe, std::span<const float> pooled,
                                       std::span<const std::uint32_t> labels,
                                       std::span<const std::uint32_t> rows, const AblationSpec& spec) {
  const std::size_t F = probe.n_features;
  if (pooled.size() != labels.size() * F) throw std::invalid_argument("causal_ablate: pooled codes are not [n, F]");
  std::vector<AblationRow> table;
  std::vector<float> copy;
  for (auto N : spec.Ns) {
    const auto targets = ablation_targets(probe, N, spec.mode, spec.seed);
    copy.assign(pooled.begin(), pooled.end());
    for (auto r : rows)
      for (auto f : targets) copy[std::size_t(r) * F + f] = 0.0f;
    table.push_back({N, spec.mode, probe_accuracy(probe, copy, labels, rows)});
  }
  return table;
}

void RetrievalSpec::validate() const {
  if (alphas.empty()) throw std::invalid_argument("retrieval: alpha grid is empty");
  for (double a : alphas) {
    if (!(a > 0.0) || !std::isfinite(a)) throw std::invalid_argument("retrieval: ridge alphas must be > 0");
  }
  if (folds < 2) throw std::invalid_argument("retrieval: folds must be >= 2");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("retrieval: train_fraction must lie in (0, 1)");
  }
}

std::vector<double> RidgeFit::predict(std::span<const float> row) const {
  std::vector<double> y(out_dim);
  for (std::size_t e = 0; e < out_dim; ++e) {
    const double* w = W.data() + e * (in_dim + 1);
    double acc = w[in_dim];
    for (std::size_t f = 0; f < in_dim; ++f) acc += w[f] * row[f];
    y[e] = acc;
  }
  return y;
}

namespace {

using Mat = Eigen::MatrixXd;

Mat gather(std::span<const float> data, std::size_t cols, std::span<const std::size_t> rows) {
  Mat M(Eigen::Index(rows.size()), Eigen::Index(cols));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j) M(Eigen::Index(i), Eigen::Index(j)) = data[rows[i] * cols + j];
  return M;
}

RidgeFit solve(const Mat& X, const Mat& Y, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("ridge: alpha must be > 0");
  const Eigen::RowVectorXd mx = X.colwise().mean();
  const Eigen::RowVectorXd my = Y.colwise().mean();
  const Mat Xc = X.rowwise() - mx;
  const Mat Yc = Y.rowwise() - my;
  Mat A = Xc.transpose() * Xc;
  A.diagonal().array() += alpha;
  const Mat B = Eigen::LDLT<Mat>(A).solve(Xc.transpose() * Yc);  // [F, E]
  const Eigen::RowVectorXd intercept = my - mx * B;

  RidgeFit fit;
  fit.in_dim = std::size_t(X.cols());
  fit.out_dim = std::size_t(Y.cols());
  fit.alpha = alpha;
  fit.W.resize(fit.out_dim * (fit.in_dim + 1));
  for (std::size_t e = 0; e < fit.out_dim; ++e) {
    for (std::size_t f = 0; f < fit.in_dim; ++f) fit.W[e * (fit.in_dim + 1) + f] = B(Eigen::Index(f), Eigen::Index(e));
    fit.W[e * (fit.in_dim + 1) + fit.in_dim] = intercept[Eigen::Index(e)];
  }
  return fit;
}

double mse(const RidgeFit& fit, const Mat& X, const Mat& Y) {
  const std::size_t F = fit.in_dim, E = fit.out_dim;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (std::size_t e = 0; e < E; ++e) {
      const double* w = fit.W.data() + e * (F + 1);
      double p = w[F];
      for (std::size_t f = 0; f < F; ++f) p += w[f] * X(i, Eigen::Index(f));
      const double r = p - Y(i, Eigen::Index(e));
      acc += r * r;
    }
  }
  return acc / double(X.rows() * Eigen::Index(E));
}

}  // namespace

RidgeFit ridge_fit(std::span<const float> X, std::span<const float> Y, std::size_t n, std::size_t F,
                   std::size_t E, double alpha) {
  if (X.size() != n * F || Y.size() != n * E || n == 0) throw std::invalid_argument("ridge_fit: shape mismatch");
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return solve(gather(X, F, all), gather(Y, E, all), alpha);
}

RidgeFit ridge_fit_cv(std::span<const float> X, std::span<const float> Y, std::size_t n, std::size_t F,
                      std::size_t E, const RetrievalSpec& spec) {
  spec.validate();
  if (X.size() != n * F || Y.size() != n * E) throw std::invalid_argument("ridge_fit_cv: shape mismatch");
  if (n < spec.folds) {
    throw std::invalid_argument("ridge_fit_cv: " + std::to_string(n) + " rows for " + std::to_string(spec.folds) + " folds");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(spec.split_seed ^ 0xc0ffee);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<double> cv(spec.alphas.size(), 0.0);
  for (std::uint32_t k = 0; k < spec.folds; ++k) {
    std::vector<std::size_t> tr, va;
    for (std::size_t i = 0; i < n; ++i) (i % spec.folds == k ? va : tr).push_back(order[i]);
    const Mat Xt = gather(X, F, tr), Yt = gather(Y, E, tr);
    const Mat Xv = gather(X, F, va), Yv = gather(Y, E, va);
    for (std::size_t a = 0; a < spec.alphas.size(); ++a) {
      cv[a] += mse(solve(Xt, Yt, spec.alphas[a]), Xv, Yv) / double(spec.folds);
    }
  }
  const auto best = std::size_t(std::min_element(cv.begin(), cv.end()) - cv.begin());
  auto fit = ridge_fit(X, Y, n, F, E, spec.alphas[best]);
  fit.cv_mse = std::move(cv);
  return fit;
}

RetrievalScores retrieval_eval(const RidgeFit& fit, std::span<const float> X, std::size_t n,
                               std::span<const std::uint32_t> labels, const EmbeddingSet& classes) {
  if (X.size() != n * fit.in_dim || labels.size() != n) throw std::invalid_argument("retrieval_eval: shape mismatch");
  if (classes.dim != fit.out_dim) {
    throw std::invalid_argument("retrieval_eval: projection maps to " + std::to_string(fit.out_dim) +
                                " dims but class embeddings have " + std::to_string(classes.dim));
  }
  const std::size_t C = classes.count;
  for (auto y : labels) {
    if (y >= C) throw std::invalid_argument("retrieval_eval: label " + std::to_string(y) + " has no class embedding");
  }
  std::vector<double> cnorm(C);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (float v : classes.row(c)) s += double(v) * v;
    cnorm[c] = std::sqrt(s);
  }

  RetrievalScores out;
  out.n_test = n;
  if (n == 0) return out;
  std::size_t hit1 = 0, hit5 = 0;
  std::vector<double> sims(C);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = fit.predict(X.subspan(i * fit.in_dim, fit.in_dim));
    double pn = 0.0;
    for (double v : p) pn += v * v;
    pn = std::sqrt(pn);
    for (std::size_t c = 0; c < C; ++c) {
      double dot = 0.0;
      const auto row = classes.row(c);
      for (std::size_t e = 0; e < fit.out_dim; ++e) dot += p[e] * row[e];
      sims[c] = (pn == 0.0 || cnorm[c] == 0.0) ? 0.0 : dot / (pn * cnorm[c]);
    }
    const double own = sims[labels[i]];
    std::size_t rank = 0;
    for (std::size_t c = 0; c < C; ++c) {
      if (sims[c] > own || (sims[c] == own && c < labels[i])) ++rank;
    }
    if (rank < 1) ++hit1;
    if (rank < 5) ++hit5;
  }
  out.r_at_1 = double(hit1) / double(n);
  out.r_at_5 = double(hit5) / double(n);
  return out;
}

nlohmann::json RetrievalReport::to_json() const {
  return {{"alpha", alpha}, {"r_at_1", scores.r_at_1}, {"r_at_5", scores.r_at_5}, {"n_test", scores.n_test}};
}

RetrievalReport run_retrieval(std::span<const float> pooled, std::size_t F,
                              std::span<const std::uint32_t> labels, const EmbeddingSet& classes,
                              const RetrievalSpec& spec) {
  spec.validate();
  if (classes.kind != EmbeddingKind::per_class) {
    throw std::invalid_argument("retrieval: text embeddings must be a per_class STSE file");
  }
  const std::size_t n = labels.size();
  if (pooled.size() != n * F) throw std::invalid_argument("retrieval: pooled features are not [n, F]");
  const auto split = stratified_split(labels, 1.0 - spec.train_fraction, spec.split_seed);

  const std::size_t E = classes.dim;
  std::vector<float> Xtr, Ytr, Xte;
  std::vector<std::uint32_t> yte;
  for (auto i : split.train) {
    if (labels[i] >= classes.count) {
      throw std::invalid_argument("retrieval: label " + std::to_string(labels[i]) + " has no class embedding");
    }
    Xtr.insert(Xtr.end(), pooled.begin() + std::ptrdiff_t(i * F), pooled.begin() + std::ptrdiff_t((i + 1) * F));
    const auto t = classes.row(labels[i]);
    Ytr.insert(Ytr.end(), t.begin(), t.end());
  }
  for (auto i : split.test) {
    Xte.insert(Xte.end(), pooled.begin() + std::ptrdiff_t(i * F), pooled.begin() + std::ptrdiff_t((i + 1) * F));
    yte.push_back(labels[i]);
  }
  const auto fit = ridge_fit_cv(Xtr, Ytr, split.train.size(), F, E, spec);
  RetrievalReport rep;
  rep.alpha = fit.alpha;
  rep.scores = retrieval_eval(fit, Xte, yte.size(), yte, classes);
  return rep;
}

}  // namespace stsae
