#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "gradcheck.hpp"
#include "stsae/gradients.hpp"
#include "stsae/objectives.hpp"

using namespace stsae;
using stsae::testing::check_gradients;
using stsae::testing::make_grad_case;

TEST_SUITE("gradients") {

TEST_CASE("analytic gradients match central differences for every variant") {
  for (auto v : {Variant::standard, Variant::temporal, Variant::separate, Variant::raster}) {
    for (bool mat : {false, true}) {
      for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto c = make_grad_case(v, mat, seed);
        const auto rep = check_gradients(c);
        INFO(to_string(v) << (mat ? "+m" : "") << " seed " << seed << " worst " << rep.worst);
        CHECK(rep.max_rel < 1e-4);
      }
    }
  }
}

TEST_CASE("soft activations have exact gradients too") {
  for (auto kind : {ActivationKind::sparsemax, ActivationKind::entmax15}) {
    for (auto v : {Variant::standard, Variant::temporal}) {
      const auto c = make_grad_case(v, false, 4, kind, 0.5);
      const auto rep = check_gradients(c);
      INFO(to_string(kind) << " " << to_string(v) << " worst " << rep.worst);
      CHECK(rep.max_rel < 1e-4);
    }
  }
}

TEST_CASE("breakdown terms sum to the total and reduce to recon + aux") {
  auto c = make_grad_case(Variant::separate, true, 5);
  auto loss = total_loss<double>(c.batch, c.params, c.cfg, c.dead);
  CHECK(loss.sum_of_terms() == doctest::Approx(loss.total).epsilon(1e-6));
  CHECK(loss.temporal > 0.0);
  CHECK(loss.spatial > 0.0);
  CHECK(loss.matryoshka > 0.0);

  c.cfg.lambda_t = c.cfg.lambda_s = c.cfg.lambda_r = 0.0;
  c.cfg.alpha_mat = 0.0;
  loss = total_loss<double>(c.batch, c.params, c.cfg, c.dead);
  const std::size_t B = c.batch.size(), D = c.params.D();
  const auto affine = encode_affine_batch<double>(c.batch.x, B, c.params);
  const auto codes = activate_batch<double>(affine, B, c.params.config, TopkEvalMode::batch, B);
  std::vector<double> x_hat;
  for (const auto& code : codes) {
    const auto row = decode(code, c.params);
    x_hat.insert(x_hat.end(), row.begin(), row.end());
  }
  std::vector<double> resid(B * D);
  for (std::size_t i = 0; i < B * D; ++i) resid[i] = c.batch.x[i] - x_hat[i];
  const double recon = recon_loss<double>(c.batch.x, x_hat, D);
  const double aux = aux_loss<double>(resid, affine, c.dead, c.params, c.cfg.k_aux);
  CHECK(loss.total == doctest::Approx(recon + c.cfg.alpha_aux * aux).epsilon(1e-12));
}

TEST_CASE("perfect reconstruction gives zero gradients") {
  SaeConfig arch;
  arch.input_dim = 3;
  arch.dict_size = 3;
  arch.k = 3;
  auto p = SaeParams<double>::zeros(arch);
  for (int i = 0; i < 3; ++i) p.W_e[i * 3 + i] = p.W_d[i * 3 + i] = 1.0;
  TokenBatch<double> batch;
  batch.dim = 3;
  batch.x = {1, 2, 3, 0.5, 0.25, 4};
  VariantConfig cfg;
  std::vector<std::uint8_t> dead(3, 0);
  auto g = SaeGradients<double>::zeros(arch);
  const auto r = compute_grads<double>(batch, p, cfg, dead, false, g);
  CHECK(r.loss.total == 0.0);
  for (const auto* t : {&g.W_e, &g.b_e, &g.b_pre, &g.W_d}) {
    CHECK(std::all_of(t->begin(), t->end(), [](double v) { return v == 0.0; }));
  }
}

TEST_CASE("frozen decoder leaves the W_d gradient at zero") {
  const auto c = make_grad_case(Variant::temporal, false, 6);
  auto g = SaeGradients<double>::zeros(c.params.config);
  compute_grads<double>(c.batch, c.params, c.cfg, c.dead, true, g);
  CHECK(std::all_of(g.W_d.begin(), g.W_d.end(), [](double v) { return v == 0.0; }));
  CHECK(std::any_of(g.W_e.begin(), g.W_e.end(), [](double v) { return v != 0.0; }));
}

TEST_CASE("shape errors") {
  auto c = make_grad_case(Variant::temporal, false, 7);
  auto g = SaeGradients<double>::zeros(c.params.config);
  c.batch.layout.reset();
  CHECK_THROWS_AS(compute_grads<double>(c.batch, c.params, c.cfg, c.dead, false, g), std::invalid_argument);
}

}  // TEST_SUITE
