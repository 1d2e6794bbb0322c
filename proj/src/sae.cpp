#include "stsae/sae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "stsae/parallel.hpp"

namespace stsae {

const char* to_string(ActivationKind kind) noexcept {
  switch (kind) {
    case ActivationKind::topk: return "topk";
    case ActivationKind::batch_topk: return "batch_topk";
    case ActivationKind::sparsemax: return "sparsemax";
    case ActivationKind::entmax15: return "entmax15";
  }
  return "unknown";
}

ActivationKind activation_from_string(const std::string& name) {
  if (name == "topk") return ActivationKind::topk;
  if (name == "batch_topk") return ActivationKind::batch_topk;
  if (name == "sparsemax") return ActivationKind::sparsemax;
  if (name == "entmax15") return ActivationKind::entmax15;
  throw std::invalid_argument("unknown activation: " + name);
}

void SaeConfig::validate() const {
  if (input_dim == 0 || dict_size == 0) {
    throw std::invalid_argument("SaeConfig: input_dim and dict_size must be positive");
  }
  if (k < 1 || k > dict_size) throw std::invalid_argument("SaeConfig: need 1 <= k <= H");
  const bool soft = activation.kind == ActivationKind::sparsemax ||
                    activation.kind == ActivationKind::entmax15;
  if (soft && !(activation.temperature > 0.0)) {
    throw std::invalid_argument("SaeConfig: activation temperature must be > 0");
  }
  if (matryoshka_split && (*matryoshka_split == 0 || *matryoshka_split >= dict_size)) {
    throw std::invalid_argument("SaeConfig: matryoshka split must lie in (0, H)");
  }
}

template <typename S>
SaeParams<S> SaeParams<S>::zeros(const SaeConfig& config) {
  config.validate();
  SaeParams p;
  p.config = config;
  const std::size_t D = config.input_dim, H = config.dict_size;
  p.W_e.assign(H * D, S(0));
  p.b_e.assign(H, S(0));
  p.b_pre.assign(D, S(0));
  p.W_d.assign(D * H, S(0));
  return p;
}

template <typename S>
void SaeParams<S>::validate() const {
  config.validate();
  const std::size_t D_ = D(), H_ = H();
  if (W_e.size() != H_ * D_ || b_e.size() != H_ || b_pre.size() != D_ || W_d.size() != D_ * H_) {
    throw std::invalid_argument("SaeParams: parameter shapes do not match config");
  }
  auto finite = [](const std::vector<S>& v) {
    return std::all_of(v.begin(), v.end(), [](S s) { return std::isfinite(s); });
  };
  if (!finite(W_e) || !finite(b_e) || !finite(b_pre) || !finite(W_d)) {
    throw std::invalid_argument("SaeParams: non-finite parameter");
  }
}

namespace {

template <typename S>
void check_input(std::span<const S> x, const SaeParams<S>& params) {
  if (x.size() != params.D()) {
    throw std::invalid_argument("encode: input has dim " + std::to_string(x.size()) +
                                ", expected " + std::to_string(params.D()));
  }
}

template <typename S>
void affine_into(const S* x, const SaeParams<S>& params, S* out) {
  const std::size_t D = params.D(), H = params.H();
  thread_local std::vector<S> centered;
  centered.resize(D);
  S* c = centered.data();
  for (std::size_t d = 0; d < D; ++d) c[d] = x[d] - params.b_pre[d];
  for (std::size_t h = 0; h < H; ++h) {
    const S* row = params.W_e.data() + h * D;
    S acc = 0;
    for (std::size_t d = 0; d < D; ++d) acc += row[d] * c[d];
    out[h] = acc + params.b_e[h];
  }
}

struct Candidate {
  double value;
  std::size_t token;
  std::uint32_t index;
};

// Strict weak order: larger value first, then lower (token, index).
bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.value != b.value) return a.value > b.value;
  if (a.token != b.token) return a.token < b.token;
  return a.index < b.index;
}

}  // namespace

template <typename S>
std::vector<S> encode_affine(std::span<const S> x, const SaeParams<S>& params) {
  check_input(x, params);
  std::vector<S> out(params.H());
  affine_into(x.data(), params, out.data());
  return out;
}

template <typename S>
std::vector<S> encode_preact(std::span<const S> x, const SaeParams<S>& params) {
  auto out = encode_affine(x, params);
  for (auto& v : out) v = std::max(v, S(0));
  return out;
}

template <typename S>
BasicSparseCode<S> topk_activate(std::span<const S> preact, std::uint32_t k) {
  if (k < 1) throw std::invalid_argument("topk_activate: k must be >= 1");
  std::vector<Candidate> pos;
  for (std::uint32_t i = 0; i < preact.size(); ++i) {
    if (preact[i] > S(0)) pos.push_back({double(preact[i]), 0, i});
  }
  if (pos.size() > k) {
    std::nth_element(pos.begin(), pos.begin() + k, pos.end(), ranks_before);
    pos.resize(k);
  }
  std::sort(pos.begin(), pos.end(), [](const Candidate& a, const Candidate& b) { return a.index < b.index; });

  BasicSparseCode<S> code;
  code.dict_size = static_cast<std::uint32_t>(preact.size());
  code.active.reserve(pos.size());
  for (const auto& c : pos) code.active.push_back({c.index, preact[c.index]});
  return code;
}

template <typename S>
std::vector<BasicSparseCode<S>> batch_topk_activate(std::span<const S> preacts, std::size_t batch,
                                                    std::uint32_t k) {
  if (k < 1) throw std::invalid_argument("batch_topk_activate: k must be >= 1");
  if (batch == 0 || preacts.size() % batch != 0) {
    throw std::invalid_argument("batch_topk_activate: preacts is not a [B, H] matrix with B >= 1");
  }
  const std::size_t H = preacts.size() / batch;
  std::vector<Candidate> pos;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::uint32_t i = 0; i < H; ++i) {
      const S v = preacts[b * H + i];
      if (v > S(0)) pos.push_back({double(v), b, i});
    }
  }
  const std::size_t budget = batch * std::size_t(k);
  if (pos.size() > budget) {
    std::nth_element(pos.begin(), pos.begin() + std::ptrdiff_t(budget), pos.end(), ranks_before);
    pos.resize(budget);
  }
  std::sort(pos.begin(), pos.end(), [](const Candidate& a, const Candidate& b) {
    return a.token != b.token ? a.token < b.token : a.index < b.index;
  });

  std::vector<BasicSparseCode<S>> codes(batch);
  for (auto& c : codes) c.dict_size = static_cast<std::uint32_t>(H);
  for (const auto& c : pos) codes[c.token].active.push_back({c.index, preacts[c.token * H + c.index]});
  return codes;
}

template <typename S>
MatryoshkaCodes<S> matryoshka_activate(std::span<const S> preacts, std::size_t batch,
                                       std::uint32_t k, std::uint32_t split) {
  if (batch == 0) throw std::invalid_argument("matryoshka_activate: empty batch");
  const std::size_t H = preacts.size() / batch;
  if (split == 0 || split >= H) throw std::invalid_argument("matryoshka_activate: split must lie in (0, H)");
  MatryoshkaCodes<S> out;
  out.codes = batch_topk_activate(preacts, batch, k);
  out.high_codes.reserve(batch);
  for (const auto& c : out.codes) out.high_codes.push_back(restrict_to_prefix(c, split));
  return out;
}

template <typename S>
std::vector<S> sparsemax(std::span<const S> preact_raw, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("sparsemax: temperature must be > 0");
  const std::size_t n = preact_raw.size();
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = double(preact_raw[i]) / temperature;
  std::vector<double> sorted = z;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());

  // Support size is the largest r with 1 + r * z_(r) > sum_{j<=r} z_(j).
  double cumsum = 0.0, support_sum = 0.0;
  std::size_t support = 0;
  for (std::size_t r = 1; r <= n; ++r) {
    cumsum += sorted[r - 1];
    if (1.0 + double(r) * sorted[r - 1] > cumsum) {
      support = r;
      support_sum = cumsum;
    }
  }
  const double tau = (support_sum - 1.0) / double(support);
  std::vector<S> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<S>(std::max(z[i] - tau, 0.0));
  return out;
}

template <typename S>
BasicSparseCode<S> sparsemax_activate(std::span<const S> preact_raw, double temperature) {
  const auto dense = sparsemax(preact_raw, temperature);
  return BasicSparseCode<S>::from_dense(dense);
}

template <typename S>
std::vector<S> entmax15(std::span<const S> preact_raw, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("entmax15: temperature must be > 0");
  const std::size_t n = preact_raw.size();
  // p_i = [z_i / 2 - tau]_+^2 with z = preact / temperature.
  std::vector<double> half(n);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    half[i] = 0.5 * double(preact_raw[i]) / temperature;
    top = std::max(top, half[i]);
  }
  auto mass = [&](double tau) {
    double s = 0.0;
    for (double h : half) {
      const double d = h - tau;
      if (d > 0.0) s += d * d;
    }
    return s;
  };
  double lo = top - 1.0, hi = top;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mass(mid) >= 1.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const double total = mass(lo);
  std::vector<S> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = half[i] - lo;
    out[i] = d > 0.0 ? static_cast<S>(d * d / total) : S(0);
  }
  return out;
}

template <typename S>
BasicSparseCode<S> entmax15_activate(std::span<const S> preact_raw, double temperature) {
  const auto dense = entmax15(preact_raw, temperature);
  return BasicSparseCode<S>::from_dense(dense);
}

template <typename S>
void decode_accumulate(const BasicSparseCode<S>& code, const SaeParams<S>& params,
                       std::span<S> out) {
  const std::size_t D = params.D(), H = params.H();
  for (const auto& e : code.active) {
    for (std::size_t d = 0; d < D; ++d) out[d] += e.value * params.W_d[d * H + e.index];
  }
}

template <typename S>
std::vector<S> decode(const BasicSparseCode<S>& code, const SaeParams<S>& params) {
  if (code.dict_size != params.H()) {
    throw std::invalid_argument("decode: code has H=" + std::to_string(code.dict_size) +
                                ", params have H=" + std::to_string(params.H()));
  }
  std::vector<S> out(params.b_pre.begin(), params.b_pre.end());
  decode_accumulate(code, params, std::span<S>(out));
  return out;
}

template <typename S>
std::vector<S> encode_affine_batch(std::span<const S> x, std::size_t n, const SaeParams<S>& params) {
  const std::size_t D = params.D(), H = params.H();
  if (x.size() != n * D) throw std::invalid_argument("encode_affine_batch: input is not [n, D]");
  std::vector<S> out(n * H);
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) affine_into(x.data() + i * D, params, out.data() + i * H);
  });
  return out;
}

template <typename S>
std::vector<BasicSparseCode<S>> activate_batch(std::span<const S> affine, std::size_t n,
                                               const SaeConfig& config, TopkEvalMode mode,
                                               std::size_t group) {
  const std::size_t H = config.dict_size;
  if (affine.size() != n * H) throw std::invalid_argument("activate_batch: input is not [n, H]");
  std::vector<BasicSparseCode<S>> codes(n);
  const auto kind = config.activation.kind;

  if (kind == ActivationKind::batch_topk && mode == TopkEvalMode::batch) {
    const std::size_t g = group == 0 ? n : group;
    std::vector<S> relu;
    for (std::size_t begin = 0; begin < n; begin += g) {
      const std::size_t len = std::min(g, n - begin);
      relu.assign(affine.begin() + std::ptrdiff_t(begin * H),
                  affine.begin() + std::ptrdiff_t((begin + len) * H));
      for (auto& v : relu) v = std::max(v, S(0));
      auto part = batch_topk_activate<S>(relu, len, config.k);
      std::move(part.begin(), part.end(), codes.begin() + std::ptrdiff_t(begin));
    }
    return codes;
  }

  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    std::vector<S> buf(H);
    for (std::size_t i = begin; i < end; ++i) {
      std::span<const S> row(affine.data() + i * H, H);
      switch (kind) {
        case ActivationKind::topk:
        case ActivationKind::batch_topk:
          for (std::size_t h = 0; h < H; ++h) buf[h] = std::max(row[h], S(0));
          codes[i] = topk_activate<S>(buf, config.k);
          break;
        case ActivationKind::sparsemax:
          codes[i] = sparsemax_activate(row, config.activation.temperature);
          break;
        case ActivationKind::entmax15:
          codes[i] = entmax15_activate(row, config.activation.temperature);
          break;
      }
    }
  });
  return codes;
}

template <typename S>
std::vector<BasicSparseCode<S>> encode_batch(std::span<const S> x, std::size_t n,
                                             const SaeParams<S>& params, TopkEvalMode mode,
                                             std::size_t group) {
  const auto affine = encode_affine_batch(x, n, params);
  return activate_batch<S>(affine, n, params.config, mode, group);
}

#define STSAE_INSTANTIATE(S)                                                                   \
  template struct SaeParams<S>;                                                                \
  template std::vector<S> encode_affine(std::span<const S>, const SaeParams<S>&);             \
  template std::vector<S> encode_preact(std::span<const S>, const SaeParams<S>&);             \
  template BasicSparseCode<S> topk_activate(std::span<const S>, std::uint32_t);               \
  template std::vector<BasicSparseCode<S>> batch_topk_activate(std::span<const S>,             \
                                                               std::size_t, std::uint32_t);    \
  template MatryoshkaCodes<S> matryoshka_activate(std::span<const S>, std::size_t,             \
                                                  std::uint32_t, std::uint32_t);               \
  template std::vector<S> sparsemax(std::span<const S>, double);                               \
  template BasicSparseCode<S> sparsemax_activate(std::span<const S>, double);                 \
  template std::vector<S> entmax15(std::span<const S>, double);                                \
  template BasicSparseCode<S> entmax15_activate(std::span<const S>, double);                  \
  template std::vector<S> decode(const BasicSparseCode<S>&, const SaeParams<S>&);             \
  template void decode_accumulate(const BasicSparseCode<S>&, const SaeParams<S>&,             \
                                  std::span<S>);                                               \
  template std::vector<S> encode_affine_batch(std::span<const S>, std::size_t,                \
                                              const SaeParams<S>&);                            \
  template std::vector<BasicSparseCode<S>> activate_batch(std::span<const S>, std::size_t,     \
                                                          const SaeConfig&, TopkEvalMode,      \
                                                          std::size_t);                        \
  template std::vector<BasicSparseCode<S>> encode_batch(std::span<const S>, std::size_t,       \
                                                        const SaeParams<S>&, TopkEvalMode,     \
                                                        std::size_t);

STSAE_INSTANTIATE(float)
STSAE_INSTANTIATE(double)

#undef STSAE_INSTANTIATE

}  // namespace stsae
