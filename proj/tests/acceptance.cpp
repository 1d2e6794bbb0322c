// Acceptance harness: one PASS/FAIL line per criterion, with the measured
// numbers. Exit status is 0 only when the failing set equals --expect-fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "gradcheck.hpp"
#include "stsae/analysis.hpp"
#include "stsae/errors.hpp"
#include "stsae/evaluation.hpp"
#include "stsae/metrics.hpp"
#include "stsae/trainer.hpp"
#include "test_util.hpp"

using namespace stsae;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(prec) << v;
  return ss.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---- shared synthetic runs ----------------------------------------------

struct CoherenceRun {
  FeatureTensor data;
  double raw = 0.0;
  double standard = 0.0;
  double temporal = 0.0;
  double control = 0.0;
  SaeParams<float> standard_params;
};

const std::vector<std::uint64_t> kSeeds{1, 2, 3};

SynthConfig coherence_data(std::uint64_t seed) {
  SynthConfig c;
  c.n_clips = 200;
  c.frames = 8;
  c.patches = 16;
  c.dim = 32;
  c.rho = 0.8;
  c.n_classes = 4;
  c.seed = seed;
  return c;
}

double code_lag1(const FeatureTensor& data, const SaeParams<float>& p) {
  const auto codes = encode_tensor(data, p);
  return lag1_autocorr(summarize_codes(codes, {data.n_clips, data.frames, data.patches}, p.H())).mean;
}

std::vector<CoherenceRun>& coherence_runs(double* seconds = nullptr) {
  static std::vector<CoherenceRun> runs;
  static double elapsed = 0.0;
  if (runs.empty()) {
    const auto t0 = Clock::now();
    for (auto seed : kSeeds) {
      CoherenceRun r;
      r.data = synth_clips(coherence_data(seed));
      r.raw = lag1_autocorr(summarize_raw(r.data)).mean;
      const auto arch = default_sae_config(r.data.dim, 8, 8);
      TrainConfig cfg;
      cfg.seed = seed;
      r.standard_params = train(r.data, arch, cfg).params;
      r.standard = code_lag1(r.data, r.standard_params);
      cfg.variant.variant = Variant::temporal;
      cfg.variant.lambda_t = 0.1;
      cfg.variant.tau = 0.1;
      r.temporal = code_lag1(r.data, train(r.data, arch, cfg).params);
      runs.push_back(std::move(r));
    }
    elapsed = seconds_since(t0);
    // Matched-budget control: clip batching with the contrastive weight off.
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const auto arch = default_sae_config(runs[i].data.dim, 8, 8);
      TrainConfig cfg;
      cfg.seed = kSeeds[i];
      cfg.variant.variant = Variant::temporal;
      cfg.variant.lambda_t = 0.0;
      runs[i].control = code_lag1(runs[i].data, train(runs[i].data, arch, cfg).params);
    }
  }
  if (seconds) *seconds = elapsed;
  return runs;
}

struct RecoveryRun {
  FeatureTensor data;
  SaeParams<float> learned;
  double r2_learned = 0.0;
  double r2_frozen = 0.0;
};

double token_r2(const FeatureTensor& data, const SaeParams<float>& p) {
  return r_squared(data.data, decode_all(encode_tensor(data, p), p), data.dim);
}

RecoveryRun& recovery_run() {
  static std::optional<RecoveryRun> run;
  if (!run) {
    RecoveryRun r;
    SynthConfig c = coherence_data(7);
    c.true_dict_size = 32;
    c.k_true = 4;
    c.noise_std = 0.0;
    r.data = synth_clips(c);
    const auto arch = default_sae_config(r.data.dim, 8, 8);
    TrainConfig cfg;
    cfg.seed = 7;
    cfg.epochs = 10;
    cfg.batch_tokens = 256;
    r.learned = train(r.data, arch, cfg).params;
    r.r2_learned = token_r2(r.data, r.learned);
    cfg.frozen_decoder = true;
    r.r2_frozen = token_r2(r.data, train(r.data, arch, cfg).params);
    run = std::move(r);
  }
  return *run;
}

// ---- criteria -----------------------------------------------------------

Outcome ac1() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string where;
  for (auto v : {Variant::standard, Variant::temporal, Variant::separate, Variant::raster}) {
    for (bool mat : {false, true}) {
      const auto c = testing::make_grad_case(v, mat, 11);
      const auto rep = testing::check_gradients(c, 1e-4);
      if (rep.max_rel >= worst) {
        worst = rep.max_rel;
        where = std::string(to_string(v)) + (mat ? "+m " : " ") + rep.worst;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 30.0,
          "8 variant configs, max rel err " + fmt(worst, 12) + " (" + where + "), " + fmt(secs, 2) + " s"};
}

Outcome ac2() {
  std::mt19937_64 rng(2024);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::uniform_int_distribution<std::uint32_t> kd(1, 64), bd(1, 16);
  std::size_t bad_topk = 0, bad_batch = 0, enough = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::uint32_t H = 128, k = kd(rng);
    const std::size_t B = bd(rng);
    std::vector<float> pre(B * H);
    const float shift = float(trial % 5) - 2.0f;
    for (auto& v : pre) v = normal(rng) + shift;
    std::size_t positives = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const auto row = std::span<const float>(pre).subspan(b * H, H);
      const auto pos = std::size_t(std::count_if(row.begin(), row.end(), [](float x) { return x > 0; }));
      positives += pos;
      const auto code = topk_activate<float>(row, k);
      if (pos >= k) ++enough;
      if (code.l0() != std::min<std::size_t>(k, pos)) ++bad_topk;
    }
    std::size_t total = 0;
    for (const auto& c : batch_topk_activate<float>(pre, B, k)) total += c.l0();
    if (total != std::min<std::size_t>(B * k, positives)) ++bad_batch;
  }
  return {bad_topk == 0 && bad_batch == 0,
          "1000 cases: TopK L0 violations " + std::to_string(bad_topk) + " (" + std::to_string(enough) +
              " rows with >= k positives), BatchTopK total violations " + std::to_string(bad_batch)};
}

Outcome ac3() {
  double secs = 0.0;
  auto& runs = coherence_runs(&secs);
  bool a = true, b = true;
  std::ostringstream d;
  d << "raw/std/temporal/control lag-1 per seed:";
  for (const auto& r : runs) {
    a = a && (r.raw - r.standard >= 0.02);
    b = b && (r.temporal - r.standard >= 0.02);
    d << " [" << fmt(r.raw, 3) << "/" << fmt(r.standard, 3) << "/" << fmt(r.temporal, 3) << "/" << fmt(r.control, 3)
      << "]";
  }
  double gap_a = 1e9, gap_b = 1e9;
  for (const auto& r : runs) {
    gap_a = std::min(gap_a, r.raw - r.standard);
    gap_b = std::min(gap_b, r.temporal - r.standard);
  }
  d << "; (a) min raw-std " << fmt(gap_a, 3) << (a ? " ok" : " FAIL") << "; (b) min temporal-std " << fmt(gap_b, 3)
    << (b ? " ok" : " FAIL (needs >= 0.02)") << "; " << fmt(secs, 1) << " s";
  return {a && b && secs < 300.0, d.str()};
}

Outcome ac4() {
  const auto t0 = Clock::now();
  auto& r = recovery_run();
  return {r.r2_learned >= 0.8, "token R^2 " + fmt(r.r2_learned) + " after 10 epochs (first use " +
                                   fmt(seconds_since(t0), 1) + " s)"};
}

Outcome ac5() {
  auto& r = recovery_run();
  const double gap = r.r2_learned - r.r2_frozen;
  return {gap >= 0.1, "learned " + fmt(r.r2_learned) + " vs frozen " + fmt(r.r2_frozen) + ", gap " + fmt(gap)};
}

Outcome ac6() {
  auto& r = recovery_run();
  const auto& p = r.learned;
  const std::size_t n = std::min<std::size_t>(r.data.n_tokens(), 4096);
  const auto affine = encode_affine_batch<float>(std::span<const float>(r.data.data).subspan(0, n * p.D()), n, p);
  std::vector<double> l0;
  for (double T : {0.1, 1.0, 10.0, 50.0}) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += double(sparsemax_activate<float>(std::span<const float>(affine).subspan(i * p.H(), p.H()), T).l0());
    }
    l0.push_back(acc / double(n));
  }
  const bool mono = std::is_sorted(l0.begin(), l0.end());
  return {mono, "mean L0 at T=0.1,1,10,50: " + fmt(l0[0], 2) + ", " + fmt(l0[1], 2) + ", " + fmt(l0[2], 2) + ", " +
                    fmt(l0[3], 2)};
}

Outcome ac7() {
  auto& runs = coherence_runs();
  bool ok = true;
  std::ostringstream d;
  d << "drop top/random (N=5,10) per seed:";
  for (std::size_t s = 0; s < runs.size(); ++s) {
    const auto res = evaluate_model(runs[s].data, runs[s].standard_params, EvalOptions{});
    const auto& probe = *res.probe;
    const auto& labels = *runs[s].data.labels;
    d << " [";
    for (std::uint32_t N : {5u, 10u}) {
      AblationSpec top{{N}, AblationMode::top_by_weight, 0};
      const double top_acc = causal_ablate(probe.model, res.pooled, labels, probe.split.test, top)[0].accuracy;
      double rnd_acc = 0.0;
      const int draws = 10;
      for (int k = 0; k < draws; ++k) {
        AblationSpec rnd{{N}, AblationMode::random, std::uint64_t(100 + k)};
        rnd_acc += causal_ablate(probe.model, res.pooled, labels, probe.split.test, rnd)[0].accuracy / draws;
      }
      const double top_drop = probe.accuracy - top_acc, rnd_drop = probe.accuracy - rnd_acc;
      ok = ok && top_drop >= rnd_drop;
      d << (N == 10 ? " " : "") << fmt(top_drop, 3) << "/" << fmt(rnd_drop, 3);
    }
    d << "]";
  }

  // Single planted signal: one pooled feature carries the label.
  std::mt19937_64 rng(5);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  const std::size_t n = 400, F = 64, signal = 17;
  std::vector<float> X(n * F);
  std::vector<std::uint32_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = std::uint32_t(i % 2);
    for (std::size_t f = 0; f < F; ++f) X[i * F + f] = std::max(0.0f, normal(rng));
    X[i * F + signal] = y[i] ? 3.0f + 0.2f * std::abs(normal(rng)) : 0.2f * std::abs(normal(rng));
  }
  const auto probe = train_probe(X, F, y);
  AblationSpec one{{1}, AblationMode::top_by_weight, 0};
  const double ablated = causal_ablate(probe.model, X, y, probe.split.test, one)[0].accuracy;
  const bool planted = std::abs(ablated - 0.5) <= 0.10;
  d << "; planted signal: " << fmt(probe.accuracy, 3) << " -> " << fmt(ablated, 3) << " (chance 0.5)";
  return {ok && planted, d.str() + " (random = mean of 10 draws)"};
}

Outcome ac8() {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::uint32_t T = 6, P = 3, H = 12;
    std::vector<SparseCode> clip;
    for (std::uint32_t i = 0; i < T * P; ++i) {
      std::vector<float> d(H);
      for (auto& v : d) v = u(rng) < 0.3f ? u(rng) : 0.0f;
      clip.push_back(SparseCode::from_dense(d));
    }
    const double alpha = 0.05 + 0.9 * u(rng);
    const auto out = ema_smooth(clip, T, P, alpha);
    for (std::uint32_t p = 0; p < P; ++p) {
      for (std::uint32_t h = 0; h < H; ++h) {
        double prev = clip[p].to_dense()[h];
        worst = std::max(worst, std::abs(out[p * H + h] - prev));
        for (std::uint32_t t = 1; t < T; ++t) {
          prev = alpha * clip[t * P + p].to_dense()[h] + (1 - alpha) * prev;
          worst = std::max(worst, std::abs(out[(t * P + p) * H + h] - prev));
        }
      }
    }
  }

  std::size_t union_bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::uint32_t T = 5, P = 2, H = 16, k = 1 + trial % 6;
    std::vector<float> pre(T * P * H);
    for (auto& v : pre) v = std::max(0.0f, normal(rng));
    const auto out = temporal_union_topk(pre, T, P, H, k);
    for (std::uint32_t p = 0; p < P; ++p) {
      std::set<std::uint32_t> prev;
      for (std::uint32_t t = 0; t < T; ++t) {
        const auto row = std::span<const float>(pre).subspan((t * P + p) * H, H);
        std::set<std::uint32_t> cand = prev;
        for (auto& e : topk_activate<float>(row, k).active) cand.insert(e.index);
        std::set<std::uint32_t> got;
        for (auto& e : out[t * P + p].active) got.insert(e.index);
        if (got.size() > k) ++union_bad;
        if (!std::includes(cand.begin(), cand.end(), got.begin(), got.end())) ++union_bad;
        prev = got;
      }
    }
  }

  auto& runs = coherence_runs();
  EvalOptions none, ema;
  ema.smooth = Smoothing::ema;
  ema.ema_alpha = 0.5;
  const double l_none = evaluate_model(runs[0].data, runs[0].standard_params, none).report.lag1_mean;
  const double l_ema = evaluate_model(runs[0].data, runs[0].standard_params, ema).report.lag1_mean;
  const bool ok = worst < 1e-6 && union_bad == 0 && l_ema != l_none;
  return {ok, "EMA max recurrence err " + fmt(worst, 9) + "; union violations " + std::to_string(union_bad) +
                  "/1000 cases; lag-1 none " + fmt(l_none) + " vs EMA(0.5) " + fmt(l_ema)};
}

Outcome ac9() {
  std::mt19937_64 rng(9);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  const std::size_t C = 10, F = 24, n = 400;
  const std::uint32_t E = 16;
  EmbeddingSet classes;
  classes.kind = EmbeddingKind::per_class;
  classes.dim = E;
  classes.count = C;
  classes.data.resize(C * E);
  for (auto& v : classes.data) v = normal(rng);
  std::vector<float> M(F * E), X(n * F);
  for (auto& v : M) v = normal(rng);
  std::vector<std::uint32_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = std::uint32_t(i % C);
    for (std::size_t f = 0; f < F; ++f) {
      double s = 0.0;
      for (std::size_t e = 0; e < E; ++e) s += M[f * E + e] * classes.row(y[i])[e];
      X[i * F + f] = float(s);
    }
  }
  const auto rep = run_retrieval(X, F, y, classes, RetrievalSpec{});
  const bool linear_ok = rep.alpha <= 0.1 && rep.scores.r_at_1 >= 0.95;

  RidgeFit random_fit;
  random_fit.in_dim = F;
  random_fit.out_dim = E;
  random_fit.W.resize(E * (F + 1));
  for (auto& w : random_fit.W) w = normal(rng);
  const std::size_t nq = 5000;
  std::vector<float> Q(nq * F);
  for (auto& v : Q) v = normal(rng);
  std::vector<std::uint32_t> yq(nq);
  for (std::size_t i = 0; i < nq; ++i) yq[i] = std::uint32_t(i % C);
  const auto chance = retrieval_eval(random_fit, Q, nq, yq, classes);
  const double p = 1.0 / C, sigma = std::sqrt(p * (1 - p) / double(nq));
  const bool chance_ok = std::abs(chance.r_at_1 - p) <= 3 * sigma;
  return {linear_ok && chance_ok, "linear data: alpha " + fmt(rep.alpha, 2) + ", R@1 " + fmt(rep.scores.r_at_1, 3) +
                                      ", R@5 " + fmt(rep.scores.r_at_5, 3) + "; random projection R@1 " +
                                      fmt(chance.r_at_1, 4) + " vs chance " + fmt(p, 3) + " +/- " + fmt(3 * sigma, 4)};
}

Outcome ac10() {
  testing::TempDir dir("accept");
  std::vector<std::string> failures;
  auto expect = [&](bool cond, const std::string& what) {
    if (!cond) failures.push_back(what);
  };

  SynthConfig sc;
  sc.n_clips = 16;
  sc.frames = 4;
  sc.patches = 4;
  sc.dim = 8;
  sc.true_dict_size = 16;
  sc.seed = 4;
  const auto data = synth_clips(sc);
  auto arch = default_sae_config(data.dim, 4, 4);
  arch.activation.kind = ActivationKind::batch_topk;
  arch.matryoshka_split = 6;
  for (auto v : {Variant::standard, Variant::separate}) {
    TrainConfig cfg;
    cfg.variant.variant = v;
    cfg.epochs = 2;
    cfg.batch_tokens = 32;
    cfg.batch_clips = 4;
    cfg.seed = 3;
    const auto a = train(data, arch, cfg, dir / "a.stsc");
    const auto b = train(data, arch, cfg, dir / "b.stsc");
    a.log.write_csv(dir / "a.csv", false);
    b.log.write_csv(dir / "b.csv", false);
    expect(testing::slurp(dir / "a.stsc") == testing::slurp(dir / "b.stsc"), "checkpoint bytes differ");
    expect(testing::slurp(dir / "a.csv") == testing::slurp(dir / "b.csv"), "log bytes differ");
  }

  write_features(data, dir / "f.stsf");
  write_features(read_features(dir / "f.stsf"), dir / "g.stsf");
  expect(testing::slurp(dir / "f.stsf") == testing::slurp(dir / "g.stsf"), "STSF roundtrip");
  EmbeddingSet e;
  e.kind = EmbeddingKind::per_class;
  e.dim = 3;
  e.count = 4;
  e.data = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  write_embeddings(e, dir / "e.stse");
  write_embeddings(read_embeddings(dir / "e.stse"), dir / "e2.stse");
  expect(testing::slurp(dir / "e.stse") == testing::slurp(dir / "e2.stse"), "STSE roundtrip");
  const auto ck = load_checkpoint(dir / "a.stsc");
  save_checkpoint(ck.params, ck.config, dir / "c.stsc");
  expect(testing::slurp(dir / "a.stsc") == testing::slurp(dir / "c.stsc"), "STSC roundtrip");

  auto corrupt = [&](const std::string& src, const std::function<void(std::vector<char>&)>& edit,
                     const std::function<void(const std::filesystem::path&)>& load, FormatErrc want,
                     const std::string& what) {
    auto bytes = testing::slurp(dir / src);
    edit(bytes);
    testing::dump(dir / "bad.bin", bytes);
    try {
      load(dir / "bad.bin");
      failures.push_back(what + ": accepted");
    } catch (const FormatError& err) {
      expect(err.code() == want, what + ": got " + to_string(err.code()));
    }
  };
  const auto load_f = [](const std::filesystem::path& p) { read_features(p); };
  const auto load_e = [](const std::filesystem::path& p) { read_embeddings(p); };
  const auto load_c = [](const std::filesystem::path& p) { load_checkpoint(p); };
  corrupt("f.stsf", [](auto& b) { std::memcpy(b.data(), "XXXX", 4); }, load_f, FormatErrc::bad_magic, "STSF magic");
  corrupt("f.stsf", [](auto& b) { b[4] = 7; }, load_f, FormatErrc::unsupported_version, "STSF version");
  corrupt("f.stsf", [](auto& b) { b.resize(b.size() / 2); }, load_f, FormatErrc::truncated, "STSF truncation");
  corrupt("f.stsf", [](auto& b) {
    const float nan = std::nanf("");
    std::memcpy(b.data() + 40, &nan, 4);
  }, load_f, FormatErrc::non_finite, "STSF NaN");
  corrupt("e.stse", [](auto& b) { b.resize(b.size() - 1); }, load_e, FormatErrc::truncated, "STSE truncation");
  corrupt("e.stse", [](auto& b) { std::memcpy(b.data(), "STSF", 4); }, load_e, FormatErrc::bad_magic, "STSE magic");
  corrupt("a.stsc", [](auto& b) {
    const std::uint64_t len = 1ull << 50;
    std::memcpy(b.data() + 8, &len, 8);
  }, load_c, FormatErrc::bad_json, "STSC JSON length");
  corrupt("a.stsc", [](auto& b) { b.resize(b.size() - 3); }, load_c, FormatErrc::truncated, "STSC truncation");

  std::string detail = "2 variants trained twice: identical checkpoints and logs; STSF/STSE/STSC roundtrips; 8 "
                       "corruptions";
  if (!failures.empty()) {
    detail = "failures:";
    for (const auto& f : failures) detail += " [" + f + "]";
  }
  return {failures.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> expected_fail;
  std::string unit_tests;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--expect-fail" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string id;
      while (std::getline(ss, id, ',')) expected_fail.insert(id);
    } else if (a == "--unit-tests" && i + 1 < argc) {
      unit_tests = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--expect-fail AC3,...] [--unit-tests path]\n";
      return 2;
    }
  }

  const auto start = Clock::now();
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"AC1", ac1}, {"AC2", ac2}, {"AC3", ac3}, {"AC4", ac4}, {"AC5", ac5},
      {"AC6", ac6}, {"AC7", ac7}, {"AC8", ac8}, {"AC9", ac9}, {"AC10", ac10}};
  std::set<std::string> failed;
  auto report = [&](const std::string& id, const Outcome& o) {
    if (!o.pass) failed.insert(id);
    std::cout << id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  };
  for (const auto& [id, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    report(id, o);
  }

  // AC11: this harness plus the unit suite, wall clock.
  double unit_secs = 0.0;
  bool unit_ok = true;
  if (!unit_tests.empty()) {
    const auto t0 = Clock::now();
    const std::string cmd = "\"" + unit_tests + "\" --no-intro=true --minimal=true > /dev/null 2>&1";
    unit_ok = std::system(cmd.c_str()) == 0;
    unit_secs = seconds_since(t0);
  }
  const double total = seconds_since(start);
  const std::string threads = std::to_string(std::max(1u, std::thread::hardware_concurrency()));
  report("AC11", {total < 600.0 && unit_ok,
                  "acceptance " + fmt(total - unit_secs, 1) + " s + unit suite " +
                      (unit_tests.empty() ? std::string("not run") : fmt(unit_secs, 1) + " s") +
                      (unit_ok ? "" : " (unit suite FAILED)") + " = " + fmt(total, 1) + " s on " + threads +
                      " hardware thread(s); limit 600 s"});

  std::cout << (criteria.size() + 1 - failed.size()) << "/" << criteria.size() + 1 << " criteria pass";
  if (!failed.empty()) {
    std::cout << "; failing:";
    for (const auto& f : failed) std::cout << ' ' << f;
  }
  std::cout << std::endl;
  if (failed != expected_fail) {
    std::cout << "failing set differs from the expected set";
    if (!expected_fail.empty()) {
      std::cout << " {";
      for (const auto& f : expected_fail) std::cout << ' ' << f;
      std::cout << " }";
    }
    std::cout << std::endl;
    return 1;
  }
  return 0;
}
