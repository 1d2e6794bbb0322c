#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "stsae/sae.hpp"

using namespace stsae;

namespace {

SaeParams<float> identity_params(std::uint32_t D) {
  SaeConfig c;
  c.input_dim = D;
  c.dict_size = D;
  c.k = D;
  auto p = SaeParams<float>::zeros(c);
  for (std::uint32_t i = 0; i < D; ++i) {
    p.W_e[i * D + i] = 1.0f;
    p.W_d[i * D + i] = 1.0f;
  }
  return p;
}

std::vector<float> values_of(const SparseCode& c) {
  return c.to_dense();
}

// (value, index) pairs sorted by value desc then index asc.
std::vector<std::pair<float, std::uint32_t>> sorted_positive(std::span<const float> v, std::size_t offset = 0) {
  std::vector<std::pair<float, std::uint32_t>> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] > 0.0f) out.emplace_back(v[i], std::uint32_t(i + offset));
  }
  std::sort(out.begin(), out.end(), [](auto a, auto b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  return out;
}

// Sort-based exact 1.5-entmax of z / temperature.
std::vector<double> entmax_closed_form(std::span<const float> raw, double temperature) {
  const std::size_t n = raw.size();
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = 0.5 * raw[i] / temperature;
  auto s = z;
  std::sort(s.rbegin(), s.rend());
  double tau = 0.0, sum = 0.0, sumsq = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    sum += s[k - 1];
    sumsq += s[k - 1] * s[k - 1];
    const double mean = sum / k, msq = sumsq / k;
    const double delta = (1.0 - k * (msq - mean * mean)) / k;
    if (delta < 0) break;
    const double t = mean - std::sqrt(delta);
    if (t > s[k - 1]) break;
    tau = t;
  }
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = std::pow(std::max(z[i] - tau, 0.0), 2);
  return p;
}

}  // namespace

TEST_SUITE("sae") {

TEST_CASE("encode_preact hand examples") {
  auto p = identity_params(3);
  const std::vector<float> x{1, -2, 3};
  CHECK(encode_preact<float>(x, p) == std::vector<float>{1, 0, 3});

  auto z = p;
  std::fill(z.W_e.begin(), z.W_e.end(), 0.0f);
  CHECK(encode_preact<float>(x, z) == std::vector<float>{0, 0, 0});

  p.b_pre = {1, 1, 1};
  p.b_e = {0.5f, 0.5f, 0.5f};
  const std::vector<float> ones{1, 1, 1};
  CHECK(encode_preact<float>(ones, p) == std::vector<float>{0.5f, 0.5f, 0.5f});

  const std::vector<float> short_x{1, 2};
  CHECK_THROWS_AS(encode_preact<float>(short_x, p), std::invalid_argument);
}

TEST_CASE("topk examples") {
  const std::vector<float> a{3, 0, 2, 0.5f};
  const auto c = topk_activate<float>(a, 2);
  REQUIRE(c.active.size() == 2);
  CHECK(c.active[0].index == 0);
  CHECK(c.active[0].value == 3.0f);
  CHECK(c.active[1].index == 2);
  CHECK(c.active[1].value == 2.0f);

  const auto all = topk_activate<float>(a, 4);
  CHECK(values_of(all) == std::vector<float>{3, 0, 2, 0.5f});

  const std::vector<float> ties{1, 1, 1};
  const auto t = topk_activate<float>(ties, 2);
  REQUIRE(t.active.size() == 2);
  CHECK(t.active[0].index == 0);
  CHECK(t.active[1].index == 1);

  CHECK_THROWS_AS(topk_activate<float>(ties, 0), std::invalid_argument);
}

TEST_CASE("topk agrees with a full sort on random inputs") {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::uniform_int_distribution<std::uint32_t> kdist(1, 12);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<float> v(16);
    for (auto& x : v) x = std::round(normal(rng) * 4.0f) / 4.0f;
    const auto k = kdist(rng);
    const auto code = topk_activate<float>(v, k);
    code.validate();
    auto ref = sorted_positive(v);
    ref.resize(std::min<std::size_t>(ref.size(), k));
    std::vector<std::uint32_t> want;
    for (auto& [val, idx] : ref) want.push_back(idx);
    std::sort(want.begin(), want.end());
    std::vector<std::uint32_t> got;
    for (auto& e : code.active) got.push_back(e.index);
    CHECK(got == want);
  }
}

TEST_CASE("batch topk examples") {
  const std::vector<float> single{3, 0, 2, 0.5f};
  CHECK(batch_topk_activate<float>(single, 1, 2)[0] == topk_activate<float>(single, 2));

  const std::vector<float> a{5, 0, 1, 2};
  const auto ca = batch_topk_activate<float>(a, 2, 1);
  REQUIRE(ca[0].active.size() == 1);
  REQUIRE(ca[1].active.size() == 1);
  CHECK(ca[0].active[0].index == 0);
  CHECK(ca[0].active[0].value == 5.0f);
  CHECK(ca[1].active[0].index == 1);
  CHECK(ca[1].active[0].value == 2.0f);

  const std::vector<float> b{5, 4, 0, 0};
  const auto cb = batch_topk_activate<float>(b, 2, 1);
  CHECK(cb[0].active.size() == 2);
  CHECK(cb[1].active.empty());
}

TEST_CASE("batch topk agrees with a global sort") {
  std::mt19937_64 rng(9);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t B = 1 + trial % 5, H = 8;
    const std::uint32_t k = 1 + trial % 3;
    std::vector<float> v(B * H);
    for (auto& x : v) x = normal(rng);
    const auto codes = batch_topk_activate<float>(v, B, k);
    auto ref = sorted_positive(v);
    ref.resize(std::min(ref.size(), B * k));
    std::vector<float> dense(B * H, 0.0f);
    for (auto& [val, idx] : ref) dense[idx] = val;
    for (std::size_t b = 0; b < B; ++b) {
      codes[b].validate();
      const auto got = codes[b].to_dense();
      CHECK(std::equal(got.begin(), got.end(), dense.begin() + b * H));
    }
  }
}

TEST_CASE("matryoshka restriction") {
  const std::vector<float> low{5, 4, 0, 0, 0, 0};
  const auto m1 = matryoshka_activate<float>(low, 1, 2, 3);
  CHECK(m1.high_codes[0].active == m1.codes[0].active);

  const std::vector<float> high{0, 0, 0, 0, 5, 4};
  const auto m2 = matryoshka_activate<float>(high, 1, 2, 3);
  CHECK(m2.codes[0].active.size() == 2);
  CHECK(m2.high_codes[0].active.empty());

  CHECK_THROWS_AS(matryoshka_activate<float>(high, 1, 2, 0), std::invalid_argument);
  CHECK_THROWS_AS(matryoshka_activate<float>(high, 1, 2, 6), std::invalid_argument);

  SaeConfig c;
  c.input_dim = 768;
  c.dict_size = 6144;
  c.k = 64;
  c.matryoshka_split = std::uint32_t(std::floor(0.2 * c.dict_size + 1e-9));
  CHECK(*c.matryoshka_split == 1228);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("sparsemax examples") {
  const std::vector<float> eq{1, 1};
  CHECK(sparsemax<float>(eq, 1.0) == std::vector<float>{0.5f, 0.5f});
  const std::vector<float> two{2, 0};
  CHECK(sparsemax<float>(two, 1.0) == std::vector<float>{1.0f, 0.0f});
  const std::vector<float> flat(7, 3.0f);
  const auto u = sparsemax_activate<float>(flat, 1.0);
  CHECK(u.l0() == 7);
  for (auto& e : u.active) CHECK(e.value == doctest::Approx(1.0 / 7));
  CHECK_THROWS_AS(sparsemax<float>(eq, 0.0), std::invalid_argument);
}

TEST_CASE("entmax15 examples and closed-form agreement") {
  const std::vector<float> eq{1, 1};
  const auto a = entmax15<float>(eq, 1.0);
  CHECK(a[0] == doctest::Approx(0.5));
  CHECK(a[1] == doctest::Approx(0.5));
  const std::vector<float> wide{5, 0};
  const auto b = entmax15<float>(wide, 1.0);
  CHECK(b[0] == doctest::Approx(1.0));
  CHECK(b[1] == 0.0f);
  CHECK_THROWS_AS(entmax15<float>(eq, -1.0), std::invalid_argument);

  std::mt19937_64 rng(17);
  std::normal_distribution<float> normal(0.0f, 2.0f);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<float> v(12);
    for (auto& x : v) x = normal(rng);
    const double temp = trial % 3 == 0 ? 0.5 : 1.0;
    const auto got = entmax15<float>(v, temp);
    const auto want = entmax_closed_form(v, temp);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-4));

    const auto sm = sparsemax<float>(v, temp);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (sm[i] > 0.0f) CHECK(got[i] > 0.0f);
    }
  }
}

TEST_CASE("decode examples and dense oracle") {
  auto p = identity_params(3);
  p.b_pre = {0.25f, -1.0f, 2.0f};
  SparseCode empty;
  empty.dict_size = 3;
  CHECK(decode<float>(empty, p) == p.b_pre);

  std::mt19937_64 rng(3);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  SaeConfig c;
  c.input_dim = 5;
  c.dict_size = 11;
  c.k = 3;
  auto q = SaeParams<float>::zeros(c);
  for (auto& w : q.W_d) w = normal(rng);
  SparseCode one;
  one.dict_size = 11;
  one.active = {{4, 1.0f}};
  const auto col = decode<float>(one, q);
  for (std::size_t d = 0; d < 5; ++d) CHECK(col[d] == q.W_d[d * 11 + 4]);

  for (auto& b : q.b_pre) b = normal(rng);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<float> z(11, 0.0f);
    for (auto& v : z) v = std::max(0.0f, normal(rng));
    const auto code = SparseCode::from_dense(z);
    const auto got = decode<float>(code, q);
    for (std::size_t d = 0; d < 5; ++d) {
      double want = q.b_pre[d];
      for (std::size_t h = 0; h < 11; ++h) want += double(q.W_d[d * 11 + h]) * z[h];
      CHECK(std::abs(got[d] - want) < 1e-6 * std::max(1.0, std::abs(want)) + 1e-6);
    }
  }
}

TEST_CASE("topk l0 equals k when enough preactivations are positive") {
  std::mt19937_64 rng(123);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::uniform_int_distribution<std::uint32_t> kdist(1, 32);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<float> v(64);
    for (auto& x : v) x = normal(rng);
    const auto k = kdist(rng);
    const auto positives = std::size_t(std::count_if(v.begin(), v.end(), [](float x) { return x > 0; }));
    const auto code = topk_activate<float>(v, k);
    CHECK(code.l0() == std::min<std::size_t>(k, positives));
  }
}

TEST_CASE("sparse code helpers") {
  const std::vector<float> a{0, 2, 0, 1};
  const auto c = SparseCode::from_dense(a);
  CHECK(c.l0() == 2);
  CHECK(c.norm() == doctest::Approx(std::sqrt(5.0)));
  CHECK(sparse_cosine(c, c) == doctest::Approx(1.0));
  SparseCode bad;
  bad.dict_size = 4;
  bad.active = {{2, 1.0f}, {1, 1.0f}};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK(restrict_to_prefix(c, 2).l0() == 1);
}

TEST_CASE("config validation") {
  SaeConfig c;
  c.input_dim = 4;
  c.dict_size = 8;
  c.k = 9;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.k = 2;
  CHECK_NOTHROW(c.validate());
  CHECK(activation_from_string("batch_topk") == ActivationKind::batch_topk);
  CHECK_THROWS_AS(activation_from_string("relu"), std::invalid_argument);
}

}  // TEST_SUITE
