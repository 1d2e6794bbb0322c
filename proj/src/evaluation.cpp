#include "stsae/evaluation.hpp"

#include <algorithm>
#include <stdexcept>

#include "stsae/analysis.hpp"
#include "stsae/config_json.hpp"
#include "stsae/trainer.hpp"

namespace stsae {

const char* to_string(Smoothing s) noexcept {
  switch (s) {
    case Smoothing::none: return "none";
    case Smoothing::ema: return "ema";
    case Smoothing::union_topk: return "union";
  }
  return "unknown";
}

Smoothing smoothing_from_string(const std::string& name) {
  if (name == "none") return Smoothing::none;
  if (name == "ema") return Smoothing::ema;
  if (name == "union") return Smoothing::union_topk;
  throw std::invalid_argument("unknown smoothing: " + name + " (expected none|ema|union)");
}

nlohmann::json EvalOptions::to_json() const {
  return {{"eval_topk", to_string(eval_topk)},
          {"smooth", to_string(smooth)},
          {"ema_alpha", ema_alpha},
          {"lag1_mode", lag1_mode == Lag1Mode::patch ? "patch" : "frame"},
          {"ms_top_m", ms_top_m},
          {"purity_top_m", purity_top_m},
          {"purity_top_features", purity_top_features},
          {"jaccard_top_m", jaccard_top_m},
          {"jaccard_pairs", jaccard_pairs},
          {"jaccard_seed", jaccard_seed},
          {"probe_split_seed", probe_split_seed},
          {"probe_space", probe_space == ProbeSpace::full ? "full" : "high"}};
}

void EvalOptions::from_json_strict(const nlohmann::json& j) {
  reject_unknown_keys(j, {"eval_topk", "smooth", "ema_alpha", "lag1_mode", "ms_top_m", "purity_top_m",
                          "purity_top_features", "jaccard_top_m", "jaccard_pairs", "jaccard_seed",
                          "probe_split_seed", "probe_space"},
                      "metrics config");
  if (j.contains("eval_topk")) eval_topk = topk_mode_from_string(j.at("eval_topk").get<std::string>());
  if (j.contains("smooth")) smooth = smoothing_from_string(j.at("smooth").get<std::string>());
  if (j.contains("ema_alpha")) ema_alpha = j.at("ema_alpha").get<double>();
  if (j.contains("lag1_mode")) {
    const auto m = j.at("lag1_mode").get<std::string>();
    if (m != "frame" && m != "patch") throw std::invalid_argument("lag1_mode must be frame|patch");
    lag1_mode = m == "patch" ? Lag1Mode::patch : Lag1Mode::frame_pooled;
  }
  if (j.contains("ms_top_m")) ms_top_m = j.at("ms_top_m").get<std::size_t>();
  if (j.contains("purity_top_m")) purity_top_m = j.at("purity_top_m").get<std::size_t>();
  if (j.contains("purity_top_features")) purity_top_features = j.at("purity_top_features").get<std::size_t>();
  if (j.contains("jaccard_top_m")) jaccard_top_m = j.at("jaccard_top_m").get<std::size_t>();
  if (j.contains("jaccard_pairs")) jaccard_pairs = j.at("jaccard_pairs").get<std::size_t>();
  if (j.contains("jaccard_seed")) jaccard_seed = j.at("jaccard_seed").get<std::uint64_t>();
  if (j.contains("probe_split_seed")) probe_split_seed = j.at("probe_split_seed").get<std::uint64_t>();
  if (j.contains("probe_space")) {
    const auto s = j.at("probe_space").get<std::string>();
    if (s != "full" && s != "high") throw std::invalid_argument("probe_space must be full|high");
    probe_space = s == "high" ? ProbeSpace::high_group : ProbeSpace::full;
  }
}

std::vector<float> pooled_features(const ClipSummary& summary, std::size_t n_features) {
  const std::size_t F = summary.n_features;
  if (n_features > F) throw std::invalid_argument("pooled_features: more features than the summary holds");
  std::vector<float> out(summary.layout.n_clips * n_features);
  for (std::size_t c = 0; c < summary.layout.n_clips; ++c) {
    std::copy_n(summary.clip_mean.data() + c * F, n_features, out.data() + c * n_features);
  }
  return out;
}

std::vector<SparseCode> union_codes(const FeatureTensor& data, const SaeParams<float>& params) {
  const auto kind = params.config.activation.kind;
  if (kind != ActivationKind::topk && kind != ActivationKind::batch_topk) {
    throw std::invalid_argument("Temporal Union smoothing needs a TopK-family activation");
  }
  const std::size_t per = data.tokens_per_clip(), H = params.H();
  std::vector<SparseCode> out;
  out.reserve(data.n_tokens());
  for (std::size_t c = 0; c < data.n_clips; ++c) {
    auto pre = encode_affine_batch<float>(data.clip(c), per, params);
    for (auto& v : pre) v = std::max(v, 0.0f);
    auto codes = temporal_union_topk(pre, data.frames, data.patches, std::uint32_t(H), params.config.k);
    std::move(codes.begin(), codes.end(), std::back_inserter(out));
  }
  return out;
}

EvalResult evaluate_model(const FeatureTensor& data, const SaeParams<float>& params, const EvalOptions& opts,
                          const EmbeddingSet* sim) {
  data.validate();
  if (data.dim != params.D()) {
    throw std::invalid_argument("checkpoint expects D=" + std::to_string(params.D()) + " but features have D=" +
                                std::to_string(data.dim));
  }
  const std::size_t H = params.H();
  const ClipLayout layout{data.n_clips, data.frames, data.patches};
  const bool patch = opts.lag1_mode == Lag1Mode::patch;

  EvalResult res;
  auto& rep = res.report;
  const auto codes = encode_tensor(data, params, opts.eval_topk);
  {
    const auto x_hat = decode_all(codes, params);
    rep.r2 = r_squared(data.data, x_hat, data.dim);
    rep.r2_pooled = r_squared(data.data, x_hat, data.dim, layout);
  }
  const auto sp = sparsity_stats(codes, H);
  rep.l0_mean = sp.l0_mean;
  rep.dead_fraction = sp.dead_fraction;

  switch (opts.smooth) {
    case Smoothing::none:
      res.summary = summarize_codes(codes, layout, H, patch);
      break;
    case Smoothing::union_topk:
      res.summary = summarize_codes(union_codes(data, params), layout, H, patch);
      break;
    case Smoothing::ema: {
      ClipSummaryBuilder b(layout, H, patch);
      const std::size_t per = layout.tokens_per_clip();
      for (std::size_t c = 0; c < layout.n_clips; ++c) {
        b.add_dense(ema_smooth(std::span<const SparseCode>(codes).subspan(c * per, per), data.frames,
                               data.patches, opts.ema_alpha));
      }
      res.summary = b.finish();
      break;
    }
  }

  const auto lag = lag1_autocorr(res.summary, opts.lag1_mode);
  rep.lag1_mean = lag.mean;
  rep.lag1_frac_below_03 = lag.frac_below_03;

  if (sim) {
    if (sim->kind != EmbeddingKind::per_clip) throw std::invalid_argument("similarity embeddings must be per_clip");
    try {
      rep.ms = monosemanticity(res.summary, *sim, opts.ms_top_m);
    } catch (const DegenerateInput&) {
    }
  }
  try {
    rep.jaccard_mean = jaccard_uniqueness(res.summary, opts.jaccard_top_m, opts.jaccard_pairs, opts.jaccard_seed);
  } catch (const DegenerateInput&) {
  }

  std::size_t F = H;
  FeatureSpace space = FeatureSpace::sae_pooled;
  if (opts.probe_space == ProbeSpace::high_group) {
    if (!params.config.matryoshka_split) throw std::invalid_argument("probe on the high group needs a Matryoshka SAE");
    F = *params.config.matryoshka_split;
    space = FeatureSpace::sae_high_group;
  }
  res.pooled = pooled_features(res.summary, F);
  res.pooled_dim = F;

  if (data.labels) {
    res.purity = action_purity(res.summary, *data.labels, opts.purity_top_m, opts.purity_top_features);
    rep.purity_mean = res.purity.mean;
    ProbeOptions po;
    po.split_seed = opts.probe_split_seed;
    po.feature_space = space;
    res.probe = train_probe(res.pooled, F, *data.labels, po);
    rep.probe_top1 = res.probe->accuracy;
  }
  return res;
}

}  // namespace stsae
