#include "stsae/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

#include "binary_io.hpp"
#include "loss_graph.hpp"
#include "stsae/config_json.hpp"
#include "stsae/errors.hpp"

namespace stsae {

template <typename S>
GradResult<S> compute_grads(const TokenBatch<S>& batch, const SaeParams<S>& params,
                            const VariantConfig& cfg, std::span<const std::uint8_t> dead_mask,
                            bool frozen_decoder, SaeGradients<S>& out) {
  return detail::evaluate<S>(batch, params, cfg, dead_mask, &out, frozen_decoder);
}

template GradResult<float> compute_grads(const TokenBatch<float>&, const SaeParams<float>&,
                                         const VariantConfig&, std::span<const std::uint8_t>, bool,
                                         SaeGradients<float>&);
template GradResult<double> compute_grads(const TokenBatch<double>&, const SaeParams<double>&,
                                          const VariantConfig&, std::span<const std::uint8_t>, bool,
                                          SaeGradients<double>&);

void TrainConfig::validate() const {
  variant.validate();
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("TrainConfig: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("TrainConfig: eps must be > 0");
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_tokens < 1 || batch_clips < 1) throw std::invalid_argument("TrainConfig: batch sizes must be >= 1");
}

void TrainLog::write_csv(std::ostream& out, bool include_timing) const {
  out << "step,total,recon,aux,temp,spat,raster,mat,l0_mean,dead,ms_elapsed\n";
  out << std::setprecision(9);
  for (const auto& r : records) {
    const auto& l = r.loss;
    out << r.step << ',' << l.total << ',' << l.recon << ',' << l.aux << ',' << l.temporal << ','
        << l.spatial << ',' << l.raster << ',' << l.matryoshka << ',' << r.l0_mean << ',' << r.dead
        << ',' << (include_timing ? r.ms_elapsed : 0.0) << '\n';
  }
}

void TrainLog::write_csv(const std::filesystem::path& path, bool include_timing) const {
  std::ostringstream ss;
  write_csv(ss, include_timing);
  const auto text = ss.str();
  detail::write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

std::vector<double> TrainLog::epoch_means(std::size_t batches_per_epoch) const {
  std::vector<double> means;
  if (batches_per_epoch == 0) return means;
  for (std::size_t start = 0; start < records.size(); start += batches_per_epoch) {
    const std::size_t end = std::min(records.size(), start + batches_per_epoch);
    double acc = 0.0;
    for (std::size_t i = start; i < end; ++i) acc += records[i].loss.total;
    means.push_back(acc / double(end - start));
  }
  return means;
}

namespace {

void adam_update(std::vector<float>& theta, const std::vector<float>& g, std::vector<float>& m,
                 std::vector<float>& v, const TrainConfig& cfg, double c1, double c2) {
  const float b1 = float(cfg.beta1), b2 = float(cfg.beta2);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = b1 * m[i] + (1.0f - b1) * g[i];
    v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
    const double m_hat = double(m[i]) / c1;
    const double v_hat = double(v[i]) / c2;
    theta[i] = float(double(theta[i]) - cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void normalize_decoder(SaeParams<float>& params) {
  const std::size_t D = params.D(), H = params.H();
  for (std::size_t h = 0; h < H; ++h) {
    double n2 = 0.0;
    for (std::size_t d = 0; d < D; ++d) n2 += double(params.W_d[d * H + h]) * params.W_d[d * H + h];
    const double n = std::sqrt(n2);
    if (n == 0.0 || std::abs(n - 1.0) < 1e-6) continue;
    for (std::size_t d = 0; d < D; ++d) params.W_d[d * H + h] = float(params.W_d[d * H + h] / n);
    for (std::size_t d = 0; d < D; ++d) params.W_e[h * D + d] = float(params.W_e[h * D + d] * n);
    params.b_e[h] = float(params.b_e[h] * n);
  }
}

void adam_step(SaeParams<float>& params, const SaeGradients<float>& grads, AdamState& state,
               const TrainConfig& cfg) {
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  adam_update(params.W_e, grads.W_e, state.m.W_e, state.v.W_e, cfg, c1, c2);
  adam_update(params.b_e, grads.b_e, state.m.b_e, state.v.b_e, cfg, c1, c2);
  adam_update(params.b_pre, grads.b_pre, state.m.b_pre, state.v.b_pre, cfg, c1, c2);
  if (!cfg.frozen_decoder) {
    adam_update(params.W_d, grads.W_d, state.m.W_d, state.v.W_d, cfg, c1, c2);
    normalize_decoder(params);
  }
}

SaeConfig default_sae_config(std::uint32_t input_dim, std::uint32_t expansion, std::uint32_t k) {
  SaeConfig c;
  c.input_dim = input_dim;
  c.dict_size = input_dim * expansion;
  c.k = k;
  return c;
}

SaeParams<float> init_params(const SaeConfig& config, const FeatureTensor& data, std::uint64_t seed) {
  auto p = SaeParams<float>::zeros(config);
  if (data.dim != config.input_dim) {
    throw std::invalid_argument("init_params: data dim " + std::to_string(data.dim) +
                                " != SAE input dim " + std::to_string(config.input_dim));
  }
  const std::size_t D = p.D(), H = p.H();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> col(D);
  for (std::size_t h = 0; h < H; ++h) {
    double n2 = 0.0;
    for (auto& v : col) {
      v = normal(rng);
      n2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(n2);
    for (std::size_t d = 0; d < D; ++d) {
      const float w = float(col[d] * inv);
      p.W_d[d * H + h] = w;
      p.W_e[h * D + d] = w;
    }
  }
  p.b_pre = token_mean(data);
  return p;
}

TrainResult train(const FeatureTensor& data, const SaeConfig& arch, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& checkpoint) {
  cfg.validate();
  arch.validate();
  data.validate();
  if (data.n_clips == 0) throw std::invalid_argument("train: empty dataset");

  TrainResult result;
  result.params = init_params(arch, data, cfg.seed);
  auto& params = result.params;
  auto state = AdamState::zeros(arch);
  auto grads = SaeGradients<float>::zeros(arch);

  const bool clips = cfg.variant.needs_clips();
  const BatchMode mode = clips ? BatchMode::whole_clips : BatchMode::flat_tokens;
  const std::size_t batch_size = clips ? cfg.batch_clips : cfg.batch_tokens;

  const std::size_t H = arch.dict_size;
  std::vector<std::uint64_t> last_fired(H, 0);
  std::vector<std::uint8_t> dead(H, 0);
  std::uint64_t step = 0;
  const auto start = std::chrono::steady_clock::now();

  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto stream = iter_batches(data, mode, batch_size, splitmix64(cfg.seed ^ splitmix64(epoch + 1)));
    if (epoch == 0) result.batches_per_epoch = stream.n_batches();
    while (auto batch = stream.next()) {
      std::uint32_t n_dead = 0;
      for (std::size_t h = 0; h < H; ++h) {
        dead[h] = step - last_fired[h] >= cfg.dead_after_batches ? 1 : 0;
        n_dead += dead[h];
      }

      auto res = compute_grads<float>(*batch, params, cfg.variant, dead, cfg.frozen_decoder, grads);
      if (!std::isfinite(res.loss.total)) {
        const auto& l = res.loss;
        std::ostringstream msg;
        msg << "non-finite loss at step " << step << " (recon=" << l.recon << " aux=" << l.aux
            << " temp=" << l.temporal << " spat=" << l.spatial << " raster=" << l.raster
            << " mat=" << l.matryoshka << ")";
        throw NumericError("total", msg.str());
      }
      adam_step(params, grads, state, cfg);
      ++step;

      double l0 = 0.0;
      for (const auto& code : res.codes) {
        l0 += double(code.l0());
        for (const auto& e : code.active) last_fired[e.index] = step;
      }
      TrainRecord rec;
      rec.step = step;
      rec.loss = res.loss;
      rec.l0_mean = l0 / double(res.codes.size());
      rec.dead = n_dead;
      rec.ms_elapsed =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      result.log.records.push_back(rec);
    }
  }
  if (checkpoint) save_checkpoint(params, cfg, *checkpoint);
  return result;
}

std::vector<SparseCode> encode_tensor(const FeatureTensor& data, const SaeParams<float>& params,
                                      TopkEvalMode mode) {
  if (data.dim != params.D()) {
    throw std::invalid_argument("features have D=" + std::to_string(data.dim) +
                                " but the SAE expects D=" + std::to_string(params.D()));
  }
  return encode_batch<float>(data.data, data.n_tokens(), params, mode, data.tokens_per_clip());
}

std::vector<float> decode_all(const std::vector<SparseCode>& codes, const SaeParams<float>& params) {
  const std::size_t D = params.D();
  std::vector<float> out(codes.size() * D);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    std::copy(params.b_pre.begin(), params.b_pre.end(), out.begin() + std::ptrdiff_t(i * D));
    decode_accumulate(codes[i], params, std::span<float>(out.data() + i * D, D));
  }
  return out;
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const SaeParams<float>& params, const TrainConfig& cfg,
                     const std::filesystem::path& path) {
  params.validate();
  const nlohmann::json j = {{"architecture", to_json(params.config)}, {"train", to_json(cfg)}};
  const std::string blob = j.dump();

  detail::ByteWriter w;
  w.magic("STSC");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(blob.size());
  w.raw(blob);
  w.array<float>(params.b_pre);
  w.array<float>(params.W_e);
  w.array<float>(params.b_e);
  w.array<float>(params.W_d);
  detail::write_file_atomic(path, w.bytes());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  detail::ByteReader r(detail::read_file(path), path.string());
  r.expect_magic("STSC");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(FormatErrc::unsupported_version,
                      path.string() + ": unsupported STSC version " + std::to_string(version));
  }
  const auto json_len = r.get<std::uint64_t>();
  if (json_len > r.size() - r.offset()) {
    throw FormatError(FormatErrc::bad_json, path.string() + ": JSON length " + std::to_string(json_len) +
                                                " exceeds remaining " +
                                                std::to_string(r.size() - r.offset()) + " bytes");
  }
  const std::string blob = r.string(json_len);

  Checkpoint ck;
  try {
    const auto j = nlohmann::json::parse(blob);
    reject_unknown_keys(j, {"architecture", "train"}, "checkpoint");
    from_json_strict(j.at("architecture"), ck.params.config);
    from_json_strict(j.at("train"), ck.config);
    ck.params.config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrc::bad_json, path.string() + ": malformed config JSON: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrc::bad_json, path.string() + ": invalid config JSON: " + e.what());
  }

  const std::size_t D = ck.params.config.input_dim, H = ck.params.config.dict_size;
  r.require_total(r.offset() + (D + H * D + H + D * H) * sizeof(float));
  ck.params.b_pre = r.array<float>(D);
  ck.params.W_e = r.array<float>(H * D);
  ck.params.b_e = r.array<float>(H);
  ck.params.W_d = r.array<float>(D * H);
  r.expect_end();
  try {
    ck.params.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrc::non_finite, path.string() + ": " + e.what());
  }
  return ck;
}

}  // namespace stsae
