#include "stsae/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "binary_io.hpp"
#include "stsae/analysis.hpp"
#include "stsae/config_json.hpp"
#include "stsae/errors.hpp"
#include "stsae/metrics.hpp"
#include "stsae/parallel.hpp"

namespace stsae::cli {

SaeConfig ArchSpec::resolve(std::uint32_t input_dim) const {
  if (expansion < 1) throw UsageError("expansion must be >= 1");
  SaeConfig c = default_sae_config(input_dim, expansion, k);
  c.activation = {activation, temperature};
  if (matryoshka_split) {
    const double f = *matryoshka_split;
    if (!(f > 0.0 && f < 1.0)) throw UsageError("matryoshka split must lie in (0, 1)");
    const auto m = std::uint32_t(std::floor(f * c.dict_size + 1e-9));
    if (m < 1 || m >= c.dict_size) throw UsageError("matryoshka split leaves an empty group");
    c.matryoshka_split = m;
    if (c.activation.kind == ActivationKind::topk) c.activation.kind = ActivationKind::batch_topk;
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json sae_j = {{"expansion", sae.expansion},
                          {"k", sae.k},
                          {"activation", stsae::to_string(sae.activation)},
                          {"temperature", sae.temperature}};
  sae_j["matryoshka_split"] = sae.matryoshka_split ? nlohmann::json(*sae.matryoshka_split) : nlohmann::json(nullptr);
  return {{"train", stsae::to_json(train)},
          {"sae", sae_j},
          {"metrics", metrics.to_json()},
          {"paths",
           {{"features", paths.features},
            {"checkpoint", paths.checkpoint},
            {"log", paths.log},
            {"out", paths.out},
            {"sim", paths.sim},
            {"text", paths.text}}}};
}

RunConfig RunConfig::from_json_strict(const nlohmann::json& j) {
  RunConfig rc;
  try {
    reject_unknown_keys(j, {"train", "sae", "metrics", "paths"}, "run config");
    if (j.contains("train")) stsae::from_json_strict(j.at("train"), rc.train);
    if (j.contains("sae")) {
      const auto& s = j.at("sae");
      reject_unknown_keys(s, {"expansion", "k", "activation", "temperature", "matryoshka_split"}, "sae");
      if (s.contains("expansion")) rc.sae.expansion = s.at("expansion").get<std::uint32_t>();
      if (s.contains("k")) rc.sae.k = s.at("k").get<std::uint32_t>();
      if (s.contains("activation")) rc.sae.activation = activation_from_string(s.at("activation").get<std::string>());
      if (s.contains("temperature")) rc.sae.temperature = s.at("temperature").get<double>();
      if (s.contains("matryoshka_split") && !s.at("matryoshka_split").is_null()) {
        rc.sae.matryoshka_split = s.at("matryoshka_split").get<double>();
      }
    }
    if (j.contains("metrics")) rc.metrics.from_json_strict(j.at("metrics"));
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      reject_unknown_keys(p, {"features", "checkpoint", "log", "out", "sim", "text"}, "paths");
      auto get = [&](const char* key, std::string& dst) {
        if (p.contains(key)) dst = p.at(key).get<std::string>();
      };
      get("features", rc.paths.features);
      get("checkpoint", rc.paths.checkpoint);
      get("log", rc.paths.log);
      get("out", rc.paths.out);
      get("sim", rc.paths.sim);
      get("text", rc.paths.text);
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  return rc;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
  return from_json_strict(j);
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

void sort_sweep_rows(std::vector<SweepRow>& rows) {
  std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return std::tie(a.variant, a.lambda, a.tau, a.seed) < std::tie(b.variant, b.lambda, b.tau, b.seed);
  });
}

namespace {

using Overrides = std::vector<std::function<void()>>;

template <typename T>
CLI::Option* override_opt(CLI::App* app, Overrides& ov, const std::string& name,
                          std::function<void(const T&)> apply, const std::string& desc) {
  auto value = std::make_shared<T>();
  auto* opt = app->add_option(name, *value, desc);
  ov.push_back([opt, value, apply] {
    if (opt->count() > 0) apply(*value);
  });
  return opt;
}

void override_flag(CLI::App* app, Overrides& ov, const std::string& name, std::function<void()> apply,
                   const std::string& desc) {
  auto* opt = app->add_flag(name, desc);
  ov.push_back([opt, apply] {
    if (opt->count() > 0) apply();
  });
}

std::string fmt_double(double v) {
  std::ostringstream ss;
  ss << std::setprecision(9) << v;
  return ss.str();
}

std::string opt_csv(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); }

void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  detail::write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

std::string variant_label(const TrainConfig& train, const SaeConfig& arch) {
  std::string s = to_string(train.variant.variant);
  if (arch.matryoshka_split) s += "+m";
  return s;
}

void add_train_overrides(CLI::App* app, Overrides& ov, RunConfig& rc) {
  override_opt<std::string>(app, ov, "--variant", [&rc](const std::string& v) {
    rc.train.variant.variant = variant_from_string(v);
  }, "standard|temporal|separate|raster");
  override_opt<double>(app, ov, "--lambda-t", [&rc](double v) { rc.train.variant.lambda_t = v; }, "temporal weight");
  override_opt<double>(app, ov, "--lambda-s", [&rc](double v) { rc.train.variant.lambda_s = v; }, "spatial weight");
  override_opt<double>(app, ov, "--lambda-r", [&rc](double v) { rc.train.variant.lambda_r = v; }, "raster weight");
  override_opt<double>(app, ov, "--tau", [&rc](double v) { rc.train.variant.tau = v; }, "InfoNCE temperature");
  override_opt<double>(app, ov, "--alpha-aux", [&rc](double v) { rc.train.variant.alpha_aux = v; }, "aux loss weight");
  override_opt<double>(app, ov, "--alpha-mat", [&rc](double v) { rc.train.variant.alpha_mat = v; }, "Matryoshka loss weight");
  override_opt<std::uint32_t>(app, ov, "--frame-width", [&rc](std::uint32_t v) { rc.train.variant.frame_width = v; },
                              "patch-grid width (0 = sqrt(P))");
  override_opt<std::uint32_t>(app, ov, "--k-aux", [&rc](std::uint32_t v) { rc.train.variant.k_aux = v; }, "dead latents used by aux (0 = 2k)");
  override_opt<std::uint32_t>(app, ov, "--epochs", [&rc](std::uint32_t v) { rc.train.epochs = v; }, "epochs");
  override_opt<std::uint32_t>(app, ov, "--batch-tokens", [&rc](std::uint32_t v) { rc.train.batch_tokens = v; }, "tokens per batch (standard)");
  override_opt<std::uint32_t>(app, ov, "--batch-clips", [&rc](std::uint32_t v) { rc.train.batch_clips = v; }, "clips per batch (clip variants)");
  override_opt<double>(app, ov, "--lr", [&rc](double v) { rc.train.lr = v; }, "Adam learning rate");
  override_opt<std::uint64_t>(app, ov, "--seed", [&rc](std::uint64_t v) { rc.train.seed = v; }, "training seed");
  override_opt<std::uint32_t>(app, ov, "--dead-after", [&rc](std::uint32_t v) { rc.train.dead_after_batches = v; },
                              "batches without firing before a latent counts as dead");
  override_flag(app, ov, "--frozen-decoder", [&rc] { rc.train.frozen_decoder = true; }, "keep W_d at its initialization");
  override_opt<std::uint32_t>(app, ov, "--expansion", [&rc](std::uint32_t v) { rc.sae.expansion = v; }, "H = expansion * D");
  override_opt<std::uint32_t>(app, ov, "-k,--k", [&rc](std::uint32_t v) { rc.sae.k = v; }, "active latents per token");
  override_opt<std::string>(app, ov, "--activation", [&rc](const std::string& v) {
    rc.sae.activation = activation_from_string(v);
  }, "topk|batch_topk|sparsemax|entmax15");
  override_opt<double>(app, ov, "--temperature", [&rc](double v) { rc.sae.temperature = v; }, "sparsemax/entmax temperature");
  override_flag(app, ov, "--matryoshka", [&rc] {
    if (!rc.sae.matryoshka_split) rc.sae.matryoshka_split = 0.2;
  }, "Matryoshka grouping (BatchTopK)");
  override_opt<double>(app, ov, "--split", [&rc](double v) { rc.sae.matryoshka_split = v; }, "high-group fraction");
}

void add_metric_overrides(CLI::App* app, Overrides& ov, RunConfig& rc) {
  override_opt<std::string>(app, ov, "--eval-topk", [&rc](const std::string& v) {
    rc.metrics.eval_topk = topk_mode_from_string(v);
  }, "per_token|batch");
  override_opt<std::string>(app, ov, "--smooth", [&rc](const std::string& v) {
    rc.metrics.smooth = smoothing_from_string(v);
  }, "none|ema|union");
  override_opt<double>(app, ov, "--alpha", [&rc](double v) { rc.metrics.ema_alpha = v; }, "EMA alpha");
  override_opt<std::string>(app, ov, "--lag1-mode", [&rc](const std::string& v) {
    if (v != "frame" && v != "patch") throw UsageError("--lag1-mode must be frame|patch");
    rc.metrics.lag1_mode = v == "patch" ? Lag1Mode::patch : Lag1Mode::frame_pooled;
  }, "frame|patch");
  override_opt<std::size_t>(app, ov, "--ms-top", [&rc](std::size_t v) { rc.metrics.ms_top_m = v; }, "clips per feature for MS");
  override_opt<std::uint64_t>(app, ov, "--split-seed", [&rc](std::uint64_t v) { rc.metrics.probe_split_seed = v; }, "probe split seed");
  override_opt<std::string>(app, ov, "--probe-space", [&rc](const std::string& v) {
    if (v != "full" && v != "high") throw UsageError("--probe-space must be full|high");
    rc.metrics.probe_space = v == "high" ? ProbeSpace::high_group : ProbeSpace::full;
  }, "full|high");
  override_opt<std::string>(app, ov, "--sim", [&rc](const std::string& v) { rc.paths.sim = v; }, "per-clip STSE for MS");
}

RunConfig resolve(const std::string& config_path, Overrides& ov, RunConfig& flags_target) {
  if (!config_path.empty()) flags_target = RunConfig::load(config_path);
  try {
    for (auto& apply : ov) apply();
  } catch (const UsageError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (!(flags_target.metrics.ema_alpha > 0.0 && flags_target.metrics.ema_alpha <= 1.0)) {
    throw UsageError("--alpha must lie in (0, 1]");
  }
  try {
    flags_target.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return flags_target;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required ") + flag);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// ---- synth ---------------------------------------------------------------

int cmd_synth(const SynthConfig& sc, const std::string& out_path, std::ostream& out) {
  try {
    sc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto data = synth_clips(sc);
  write_features(data, out_path);
  std::ostringstream line;
  line << "synth: clips=" << data.n_clips << " T=" << data.frames << " P=" << data.patches << " D=" << data.dim
       << " classes=" << data.n_classes();
  if (data.frames >= 3) {
    try {
      line << " raw_lag1=" << std::setprecision(4) << lag1_autocorr(summarize_raw(data)).mean;
    } catch (const DegenerateInput&) {
      line << " raw_lag1=nan";
    }
  }
  line << " -> " << out_path << '\n';
  out << line.str();
  return 0;
}

// ---- train ---------------------------------------------------------------

int cmd_train(const RunConfig& rc, std::ostream& out) {
  require(rc.paths.features, "--features");
  require(rc.paths.checkpoint, "--out");
  const auto data = read_features(rc.paths.features);
  const auto arch = rc.sae.resolve(data.dim);
  const auto result = train(data, arch, rc.train, std::filesystem::path(rc.paths.checkpoint));
  if (!rc.paths.log.empty()) result.log.write_csv(std::filesystem::path(rc.paths.log));

  nlohmann::json summary = {{"checkpoint", rc.paths.checkpoint},
                            {"steps", result.log.records.size()},
                            {"final_loss", result.log.records.empty() ? 0.0 : result.log.records.back().loss.total},
                            {"epoch_mean_loss", result.log.epoch_means(result.batches_per_epoch)},
                            {"architecture", to_json(arch)},
                            {"config", rc.to_json()}};
  out << summary.dump() << '\n';
  return 0;
}

// ---- eval ----------------------------------------------------------------

std::optional<EmbeddingSet> load_sim(const RunConfig& rc) {
  if (rc.paths.sim.empty()) return std::nullopt;
  auto sim = read_embeddings(rc.paths.sim);
  if (sim.kind != EmbeddingKind::per_clip) throw UsageError("--sim must be a per_clip STSE file");
  return sim;
}

// Training settings come from the checkpoint, not from the command line.
nlohmann::json eval_echo(const RunConfig& rc) {
  auto j = rc.to_json();
  j.erase("train");
  j.erase("sae");
  return j;
}

nlohmann::json echo(const RunConfig& rc, const Checkpoint& ck) {
  return {{"run", eval_echo(rc)}, {"checkpoint_train", to_json(ck.config)}, {"architecture", to_json(ck.params.config)}};
}

int cmd_eval(const RunConfig& rc, const std::string& tables, std::ostream& out) {
  require(rc.paths.features, "--features");
  require(rc.paths.checkpoint, "--checkpoint");
  const auto ck = load_checkpoint(rc.paths.checkpoint);
  const auto data = read_features(rc.paths.features);
  const auto sim = load_sim(rc);
  auto res = evaluate_model(data, ck.params, rc.metrics, sim ? &*sim : nullptr);
  res.report.config_echo = echo(rc, ck);
  write_text(rc.paths.out, res.report.to_json().dump(2) + "\n", out);

  if (!tables.empty() && !res.purity.per_feature.empty()) {
    std::ostringstream csv;
    csv << "feature,purity\n";
    for (std::size_t h = 0; h < res.purity.per_feature.size(); ++h) {
      if (std::isnan(res.purity.per_feature[h])) continue;
      csv << h << ',' << fmt_double(res.purity.per_feature[h]) << '\n';
    }
    write_text(tables + "_purity.csv", csv.str(), out);
  }
  return 0;
}

// ---- ablate --------------------------------------------------------------

int cmd_ablate(const RunConfig& rc, const std::vector<std::uint32_t>& Ns, const std::vector<std::string>& modes,
               std::uint64_t seed, std::ostream& out) {
  require(rc.paths.features, "--features");
  require(rc.paths.checkpoint, "--checkpoint");
  std::vector<AblationMode> parsed;
  try {
    for (const auto& m : modes) parsed.push_back(ablation_mode_from_string(m));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (Ns.empty() || parsed.empty()) throw UsageError("--n and --mode need at least one value");

  const auto ck = load_checkpoint(rc.paths.checkpoint);
  const auto data = read_features(rc.paths.features);
  if (!data.labels) throw std::runtime_error("ablation needs a labeled feature file");
  auto res = evaluate_model(data, ck.params, rc.metrics);
  for (auto N : Ns) {
    if (N > res.pooled_dim) {
      throw UsageError("--n " + std::to_string(N) + " exceeds the probe's " + std::to_string(res.pooled_dim) + " features");
    }
  }
  const auto label = variant_label(ck.config, ck.params.config);
  std::ostringstream csv;
  csv << "variant,N,mode,accuracy\n";
  for (auto mode : parsed) {
    AblationSpec spec{Ns, mode, seed};
    for (const auto& row : causal_ablate(res.probe->model, res.pooled, *data.labels, res.probe->split.test, spec)) {
      csv << label << ',' << row.N << ',' << to_string(row.mode) << ',' << fmt_double(row.accuracy) << '\n';
    }
  }
  write_text(rc.paths.out, csv.str(), out);
  return 0;
}

// ---- retrieve ------------------------------------------------------------

int cmd_retrieve(const RunConfig& rc, const RetrievalSpec& spec, std::ostream& out) {
  require(rc.paths.features, "--features");
  require(rc.paths.text, "--text");
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto data = read_features(rc.paths.features);
  if (!data.labels) throw std::runtime_error("retrieval needs a labeled feature file");
  const auto text = read_embeddings(rc.paths.text);
  if (text.kind != EmbeddingKind::per_class) throw UsageError("--text must be a per_class STSE file");
  if (text.count < data.n_classes()) {
    throw std::runtime_error("text file has " + std::to_string(text.count) + " classes but labels need " +
                             std::to_string(data.n_classes()));
  }

  std::vector<float> pooled;
  std::size_t F = 0;
  nlohmann::json echo_j = {{"run", eval_echo(rc)}};
  if (!rc.paths.checkpoint.empty()) {
    const auto ck = load_checkpoint(rc.paths.checkpoint);
    if (ck.params.D() != data.dim) {
      throw std::runtime_error("checkpoint expects D=" + std::to_string(ck.params.D()) + " but features have D=" +
                               std::to_string(data.dim));
    }
    const auto codes = encode_tensor(data, ck.params, rc.metrics.eval_topk);
    const auto summary = summarize_codes(codes, {data.n_clips, data.frames, data.patches}, ck.params.H());
    F = ck.params.H();
    pooled = pooled_features(summary, F);
    echo_j["architecture"] = to_json(ck.params.config);
    echo_j["checkpoint_train"] = to_json(ck.config);
  } else {
    const auto summary = summarize_raw(data);
    F = data.dim;
    pooled = pooled_features(summary, F);
  }
  auto rep = run_retrieval(pooled, F, *data.labels, text, spec);
  auto j = rep.to_json();
  j["config_echo"] = echo_j;
  j["config_echo"]["retrieval"] = {{"alphas", spec.alphas}, {"folds", spec.folds}, {"split_seed", spec.split_seed},
                                   {"train_fraction", spec.train_fraction}};
  write_text(rc.paths.out, j.dump(2) + "\n", out);
  return 0;
}

// ---- sweep ---------------------------------------------------------------

const char* kSweepHeader =
    "variant,lambda,tau,seed,config_hash,r2,r2_pooled,lag1_mean,lag1_frac_below_03,l0_mean,dead_fraction,ms,"
    "purity_mean,jaccard_mean,probe_top1";

struct SweepJob {
  RunConfig rc;
  SaeConfig arch;
  SweepRow row;
};

std::vector<SweepRow> read_sweep_csv(const std::string& path) {
  std::vector<SweepRow> rows;
  std::ifstream in(path);
  if (!in) return rows;
  std::string line;
  if (!std::getline(in, line)) return rows;
  if (line != kSweepHeader) throw std::runtime_error(path + ": existing file is not a sweep table");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (int i = 0; i < 5; ++i) {
      const auto comma = line.find(',', start);
      if (comma == std::string::npos) throw std::runtime_error(path + ": malformed row: " + line);
      cells.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    SweepRow r;
    r.variant = cells[0];
    r.lambda = std::stod(cells[1]);
    r.tau = std::stod(cells[2]);
    r.seed = std::stoull(cells[3]);
    r.config_hash = cells[4];
    r.metrics_csv = line.substr(start);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string render_sweep(std::vector<SweepRow> rows) {
  sort_sweep_rows(rows);
  std::ostringstream csv;
  csv << kSweepHeader << '\n';
  for (const auto& r : rows) {
    csv << r.variant << ',' << fmt_double(r.lambda) << ',' << fmt_double(r.tau) << ',' << r.seed << ','
        << r.config_hash << ',' << r.metrics_csv << '\n';
  }
  return csv.str();
}

int cmd_sweep(const RunConfig& base, const std::vector<std::string>& variants, const std::vector<double>& lambdas,
              const std::vector<double>& taus, const std::vector<std::uint64_t>& seeds, unsigned jobs,
              std::ostream& out) {
  require(base.paths.features, "--features");
  require(base.paths.out, "--out");
  if (variants.empty() || seeds.empty()) throw UsageError("--variants and --seeds need at least one value");
  if (jobs < 1) throw UsageError("--jobs must be >= 1");
  const auto data = read_features(base.paths.features);
  const auto sim = load_sim(base);

  std::vector<SweepJob> all;
  std::set<std::string> seen;
  for (const auto& token : variants) {
    std::string name = token;
    bool mat = false;
    if (name.size() > 2 && name.substr(name.size() - 2) == "+m") {
      mat = true;
      name.resize(name.size() - 2);
    }
    Variant v;
    try {
      v = variant_from_string(name);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    const bool contrastive = v != Variant::standard;
    const std::vector<double> ls = contrastive ? lambdas : std::vector<double>{0.0};
    const std::vector<double> ts = contrastive ? taus : std::vector<double>{0.0};
    if (contrastive && (ls.empty() || ts.empty())) throw UsageError("contrastive variants need --lambdas and --taus");
    for (double lam : ls)
      for (double tau : ts)
        for (auto seed : seeds) {
          SweepJob job;
          job.rc = base;
          auto& vc = job.rc.train.variant;
          vc.variant = v;
          if (contrastive) {
            vc.tau = tau;
            if (v == Variant::temporal) vc.lambda_t = lam;
            if (v == Variant::separate) {
              vc.lambda_t = lam;
              vc.lambda_s = lam / 2.0;
            }
            if (v == Variant::raster) vc.lambda_r = lam;
          }
          job.rc.train.seed = seed;
          if (mat && !job.rc.sae.matryoshka_split) job.rc.sae.matryoshka_split = 0.2;
          if (!mat) job.rc.sae.matryoshka_split.reset();
          try {
            job.rc.train.validate();
          } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
          }
          job.arch = job.rc.sae.resolve(data.dim);
          const nlohmann::json key = {{"train", to_json(job.rc.train)},
                                      {"sae", to_json(job.arch)},
                                      {"metrics", job.rc.metrics.to_json()},
                                      {"features", base.paths.features}};
          job.row = {variant_label(job.rc.train, job.arch), lam, tau, seed, fnv1a_hex(key.dump()), ""};
          if (seen.insert(job.row.config_hash).second) all.push_back(std::move(job));
        }
  }

  auto rows = read_sweep_csv(base.paths.out);
  std::set<std::string> done;
  for (const auto& r : rows) done.insert(r.config_hash);
  std::vector<SweepJob*> pending;
  for (auto& j : all) {
    if (!done.count(j.row.config_hash)) pending.push_back(&j);
  }
  out << "sweep: " << all.size() << " configs, " << (all.size() - pending.size()) << " already done\n";

  std::mutex mu;
  std::size_t next = 0, finished = 0;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      SweepJob* job = nullptr;
      {
        std::lock_guard lock(mu);
        if (failure || next >= pending.size()) return;
        job = pending[next++];
      }
      try {
        const auto trained = train(data, job->arch, job->rc.train);
        const auto res = evaluate_model(data, trained.params, job->rc.metrics, sim ? &*sim : nullptr);
        const auto& m = res.report;
        job->row.metrics_csv = fmt_double(m.r2) + ',' + fmt_double(m.r2_pooled) + ',' + fmt_double(m.lag1_mean) + ',' +
                               fmt_double(m.lag1_frac_below_03) + ',' + fmt_double(m.l0_mean) + ',' +
                               fmt_double(m.dead_fraction) + ',' + opt_csv(m.ms) + ',' + opt_csv(m.purity_mean) + ',' +
                               opt_csv(m.jaccard_mean) + ',' + opt_csv(m.probe_top1);
        std::lock_guard lock(mu);
        rows.push_back(job->row);
        const auto text = render_sweep(rows);
        detail::write_file_atomic(base.paths.out, std::span<const char>(text.data(), text.size()));
        ++finished;
        out << "sweep: " << job->row.variant << " lambda=" << job->row.lambda << " tau=" << job->row.tau
            << " seed=" << job->row.seed << " done (" << finished << "/" << pending.size() << ")\n";
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const auto cap = std::min<std::size_t>({jobs, worker_threads(), std::max<std::size_t>(pending.size(), 1)});
    const auto n = unsigned(cap);
    for (unsigned i = 1; i < n; ++i) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);
  const auto text = render_sweep(rows);
  detail::write_file_atomic(base.paths.out, std::span<const char>(text.data(), text.size()));
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spatio-temporal sparse autoencoders for video features", "stsae"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "stsae 1.0");

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic planted-dictionary feature file");
  SynthConfig sc;
  std::string synth_out;
  synth->add_option("--clips", sc.n_clips, "number of clips")->capture_default_str();
  synth->add_option("--frames", sc.frames, "frames per clip (T)")->capture_default_str();
  synth->add_option("--patches", sc.patches, "patches per frame (P)")->capture_default_str();
  synth->add_option("--dim", sc.dim, "feature dimension (D)")->capture_default_str();
  synth->add_option("--classes", sc.n_classes, "number of action classes")->capture_default_str();
  synth->add_option("--dict-size", sc.true_dict_size, "planted dictionary size")->capture_default_str();
  synth->add_option("--k-true", sc.k_true, "planted atoms per patch")->capture_default_str();
  synth->add_option("--rho", sc.rho, "AR(1) coefficient in [0, 1)")->capture_default_str();
  synth->add_option("--noise", sc.noise_std, "additive noise std")->capture_default_str();
  synth->add_option("--class-signal", sc.class_signal, "spread of the class-conditional mean")->capture_default_str();
  synth->add_option("--seed", sc.seed, "seed")->capture_default_str();
  synth->add_option("--out", synth_out, "output STSF path")->required();

  // train / eval / ablate / retrieve / sweep share the run config.
  RunConfig rc;
  Overrides ov;
  std::string config_path;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run config (flags override it)");
    override_opt<std::string>(sub, ov, "--features", [&rc](const std::string& v) { rc.paths.features = v; }, "STSF features");
  };

  auto* train_cmd = app.add_subcommand("train", "train an SAE and write a checkpoint");
  add_common(train_cmd);
  add_train_overrides(train_cmd, ov, rc);
  override_opt<std::string>(train_cmd, ov, "--out", [&rc](const std::string& v) { rc.paths.checkpoint = v; }, "checkpoint path");
  override_opt<std::string>(train_cmd, ov, "--log", [&rc](const std::string& v) { rc.paths.log = v; }, "training log CSV");

  auto* eval_cmd = app.add_subcommand("eval", "run the metric battery on a checkpoint");
  std::string tables;
  add_common(eval_cmd);
  add_metric_overrides(eval_cmd, ov, rc);
  override_opt<std::string>(eval_cmd, ov, "--checkpoint", [&rc](const std::string& v) { rc.paths.checkpoint = v; }, "STSC checkpoint");
  override_opt<std::string>(eval_cmd, ov, "--out", [&rc](const std::string& v) { rc.paths.out = v; }, "report JSON (default stdout)");
  eval_cmd->add_option("--tables", tables, "prefix for per-feature CSV tables");

  auto* ablate_cmd = app.add_subcommand("ablate", "causal feature ablation against a trained probe");
  std::vector<std::uint32_t> ablate_n{10, 50, 100, 500};
  std::vector<std::string> ablate_modes{"top", "random"};
  std::uint64_t ablate_seed = 0;
  add_common(ablate_cmd);
  add_metric_overrides(ablate_cmd, ov, rc);
  override_opt<std::string>(ablate_cmd, ov, "--checkpoint", [&rc](const std::string& v) { rc.paths.checkpoint = v; }, "STSC checkpoint");
  override_opt<std::string>(ablate_cmd, ov, "--out", [&rc](const std::string& v) { rc.paths.out = v; }, "CSV output (default stdout)");
  ablate_cmd->add_option("--n", ablate_n, "feature counts to zero")->delimiter(',')->capture_default_str();
  ablate_cmd->add_option("--mode", ablate_modes, "top,random")->delimiter(',')->capture_default_str();
  ablate_cmd->add_option("--ablate-seed", ablate_seed, "seed for random ablation")->capture_default_str();

  auto* retrieve_cmd = app.add_subcommand("retrieve", "ridge video-to-text retrieval");
  RetrievalSpec rspec;
  add_common(retrieve_cmd);
  override_opt<std::string>(retrieve_cmd, ov, "--checkpoint", [&rc](const std::string& v) { rc.paths.checkpoint = v; },
                            "STSC checkpoint (omit to use raw pooled features)");
  override_opt<std::string>(retrieve_cmd, ov, "--text", [&rc](const std::string& v) { rc.paths.text = v; }, "per-class STSE");
  override_opt<std::string>(retrieve_cmd, ov, "--out", [&rc](const std::string& v) { rc.paths.out = v; }, "report JSON (default stdout)");
  override_opt<std::string>(retrieve_cmd, ov, "--eval-topk", [&rc](const std::string& v) {
    rc.metrics.eval_topk = topk_mode_from_string(v);
  }, "per_token|batch");
  retrieve_cmd->add_option("--alphas", rspec.alphas, "ridge grid")->delimiter(',')->capture_default_str();
  retrieve_cmd->add_option("--folds", rspec.folds, "CV folds")->capture_default_str();
  retrieve_cmd->add_option("--split-seed", rspec.split_seed, "train/test and fold seed")->capture_default_str();
  retrieve_cmd->add_option("--train-fraction", rspec.train_fraction, "train share")->capture_default_str();

  auto* sweep_cmd = app.add_subcommand("sweep", "train and evaluate a grid of configurations");
  std::string variants_s = "standard,temporal,separate,raster,temporal+m";
  std::vector<double> lambdas{0.01, 0.05, 0.5};
  std::vector<double> taus{0.05, 0.2, 0.5};
  std::vector<std::uint64_t> seeds{0};
  unsigned jobs = 1;
  add_common(sweep_cmd);
  add_train_overrides(sweep_cmd, ov, rc);
  add_metric_overrides(sweep_cmd, ov, rc);
  override_opt<std::string>(sweep_cmd, ov, "--out", [&rc](const std::string& v) { rc.paths.out = v; }, "sweep CSV");
  sweep_cmd->add_option("--variants", variants_s, "comma list; suffix +m for Matryoshka")->capture_default_str();
  sweep_cmd->add_option("--lambdas", lambdas, "contrastive weights")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--taus", taus, "InfoNCE temperatures")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--seeds", seeds, "seeds")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--jobs", jobs, "configs trained in parallel")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << "stsae 1.0\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(sc, synth_out, out);
    const auto resolved = resolve(config_path, ov, rc);
    if (train_cmd->parsed()) return cmd_train(resolved, out);
    if (eval_cmd->parsed()) return cmd_eval(resolved, tables, out);
    if (ablate_cmd->parsed()) return cmd_ablate(resolved, ablate_n, ablate_modes, ablate_seed, out);
    if (retrieve_cmd->parsed()) return cmd_retrieve(resolved, rspec, out);
    if (sweep_cmd->parsed()) {
      return cmd_sweep(resolved, split_list(variants_s), lambdas, taus, seeds, jobs, out);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace stsae::cli
