#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "stsae/objectives.hpp"
#include "stsae/sae.hpp"

using namespace stsae;

namespace {

SparseCode code_of(std::vector<float> dense) {
  return SparseCode::from_dense(std::span<const float>(dense));
}

ClipLayout layout(std::size_t n, std::uint32_t T, std::uint32_t P) { return {n, T, P}; }

}  // namespace

TEST_SUITE("objectives") {

TEST_CASE("recon loss") {
  const std::vector<float> x{1, 2, 3, 4};
  CHECK(recon_loss<float>(x, x, 2) == 0.0f);
  const std::vector<float> one{1, 0}, zero{0, 0};
  CHECK(recon_loss<float>(one, zero, 2) == 1.0f);
  const std::vector<float> odd{1, 2, 3};
  CHECK_THROWS_AS(recon_loss<float>(x, odd, 2), std::invalid_argument);

  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t B = 37, D = 13;
  std::vector<double> a(B * D), b(B * D);
  for (auto& v : a) v = normal(rng);
  for (auto& v : b) v = normal(rng);
  double want = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t d = 0; d < D; ++d) want += (a[i * D + d] - b[i * D + d]) * (a[i * D + d] - b[i * D + d]);
  }
  want /= double(B);
  CHECK(recon_loss<double>(a, b, D) == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("aux loss") {
  SaeConfig c;
  c.input_dim = 2;
  c.dict_size = 2;
  c.k = 1;
  auto p = SaeParams<float>::zeros(c);
  // Column 1 of W_d points along e / |e|.
  const std::vector<float> e{3, 4};
  p.W_d = {1, 0.6f, 0, 0.8f};
  const std::vector<float> affine{0.1f, 2.0f};
  const std::vector<std::uint8_t> none{0, 0}, dead{0, 1};
  CHECK(aux_loss<float>(e, affine, none, p, 1) == 0.0f);
  const std::vector<float> zero{0, 0};
  CHECK(aux_loss<float>(zero, affine, dead, p, 1) == doctest::Approx(4.0));
  const float l = aux_loss<float>(e, affine, dead, p, 1);
  CHECK(l < 25.0f);
  // One-column least squares: e - 2 * u with u = e / 5 leaves (1 - 2/5)^2 * 25.
  CHECK(l == doctest::Approx(9.0));
}

TEST_CASE("aux loss of a zero residual with zero preactivations") {
  SaeConfig c;
  c.input_dim = 2;
  c.dict_size = 2;
  c.k = 1;
  auto p = SaeParams<float>::zeros(c);
  p.W_d = {1, 0, 0, 1};
  const std::vector<float> zero{0, 0}, affine{0, 0};
  const std::vector<std::uint8_t> dead{1, 1};
  CHECK(aux_loss<float>(zero, affine, dead, p, 1) == 0.0f);
}

TEST_CASE("infonce closed forms") {
  // Tokens: 0 anchor, 1 positive, 2 negative.
  PairSet ps;
  ps.pairs = {{0, 1}};
  ps.candidates = {1, 2};

  std::vector<SparseCode> tied{code_of({1, 1, 0}), code_of({1, 0, 0}), code_of({0, 1, 0})};
  CHECK(infonce<float>(tied, ps, 0.7) == doctest::Approx(std::log(2.0)));

  std::vector<SparseCode> sep{code_of({1, 0, 0}), code_of({2, 0, 0}), code_of({0, 0, 3})};
  CHECK(infonce<float>(sep, ps, 1.0) == doctest::Approx(std::log1p(std::exp(-1.0))));
  CHECK(infonce<float>(sep, ps, 1.0) == doctest::Approx(0.3133).epsilon(1e-3));

  PairSet missing = ps;
  missing.candidates = {2};
  CHECK_THROWS_AS(infonce<float>(sep, missing, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(infonce<float>(sep, ps, 0.0), std::invalid_argument);
}

TEST_CASE("infonce falls as tau shrinks when the positive is most similar") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  int checked = 0;
  for (int trial = 0; trial < 200 && checked < 50; ++trial) {
    std::vector<SparseCode> codes;
    for (int i = 0; i < 6; ++i) {
      std::vector<float> d(10);
      for (auto& v : d) v = u(rng) < 0.4f ? u(rng) : 0.0f;
      d[i] += 0.01f;
      codes.push_back(code_of(d));
    }
    PairSet ps;
    ps.pairs = {{0, 1}};
    ps.candidates = {1, 2, 3, 4, 5};
    const float pos = sparse_cosine(codes[0], codes[1]);
    bool strict = true;
    for (int j = 2; j < 6; ++j) strict = strict && sparse_cosine(codes[0], codes[j]) < pos - 1e-3f;
    if (!strict) continue;
    ++checked;
    std::vector<BasicSparseCode<double>> dc;
    for (auto& c : codes) {
      BasicSparseCode<double> x;
      x.dict_size = c.dict_size;
      for (auto& e : c.active) x.active.push_back({e.index, e.value});
      dc.push_back(x);
    }
    double last = infonce<double>(dc, ps, 2.0);
    for (double tau : {1.0, 0.5, 0.2, 0.1, 0.05}) {
      const double l = infonce<double>(dc, ps, tau);
      CHECK(l < last);
      last = l;
    }
  }
  CHECK(checked >= 20);
}

TEST_CASE("temporal pairs") {
  CHECK(temporal_pairs(layout(1, 2, 3)).pairs.size() == 3);
  CHECK(temporal_pairs(layout(1, 16, 256)).pairs.size() == 3840);
  const auto l = layout(2, 4, 3);
  for (auto [a, b] : temporal_pairs(l).pairs) {
    CHECK(a % 3 == b % 3);
    CHECK(b == a + 3);
    CHECK(a / 12 == b / 12);
  }
  CHECK_THROWS_AS(temporal_pairs(layout(1, 1, 3)), std::invalid_argument);
}

TEST_CASE("spatial pairs") {
  CHECK(spatial_pairs(layout(1, 1, 9), 3).pairs.size() == 6);
  CHECK(spatial_pairs(layout(1, 2, 4), 1).pairs.empty());
  CHECK(spatial_pairs(layout(1, 2, 9), 3).pairs.size() == 12);
  for (auto [a, b] : spatial_pairs(layout(2, 2, 9), 3).pairs) {
    CHECK(b == a + 1);
    CHECK(a % 3 != 2);
  }
  CHECK_THROWS_AS(spatial_pairs(layout(1, 2, 9), 2), std::invalid_argument);
}

TEST_CASE("raster pairs") {
  const auto r = raster_pairs(layout(1, 2, 9));
  CHECK(r.pairs.size() == 17);
  int crossing = 0;
  for (auto [a, b] : r.pairs) {
    CHECK(b == a + 1);
    if (a / 9 != b / 9) {
      ++crossing;
      CHECK(a == 8);
      CHECK(b == 9);
    }
  }
  CHECK(crossing == 1);
  CHECK(raster_pairs(layout(1, 1, 5)).pairs.size() == 4);
  // No pair crosses a clip boundary.
  for (auto [a, b] : raster_pairs(layout(3, 2, 2)).pairs) CHECK(a / 4 == b / 4);
}

TEST_CASE("pair candidates are the positive targets") {
  const auto t = temporal_pairs(layout(1, 3, 2));
  std::set<std::uint32_t> pos;
  for (auto [a, b] : t.pairs) pos.insert(b);
  CHECK(std::set<std::uint32_t>(t.candidates.begin(), t.candidates.end()) == pos);
}

TEST_CASE("variant config defaults and validation") {
  VariantConfig v;
  CHECK(v.alpha_aux == 0.03);
  CHECK(v.lambda_t == 0.1);
  CHECK(v.lambda_s == 0.05);
  CHECK(v.tau == 0.1);
  CHECK(v.alpha_mat == 0.1);
  v.tau = 0.0;
  CHECK_THROWS_AS(v.validate(), std::invalid_argument);
  CHECK(variant_from_string("raster") == Variant::raster);
  CHECK_THROWS_AS(variant_from_string("spatial"), std::invalid_argument);
  CHECK(resolve_frame_width(16, 0) == 4);
}

}  // TEST_SUITE
