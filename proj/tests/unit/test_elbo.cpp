#include <bit>
#include <cmath>

#include "bgpo/elbo.hpp"
#include "doctest.h"
#include "fd.hpp"

using namespace bgpo;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.embed_dim = 16;
  c.ffn_dim = 24;
  c.context_length = 32;
  c.output_init_std = 1.0;
  return c;
}

TokenSeq prompt_of(const std::string& s) { return {Vocabulary::standard().encode(s), SeqRole::prompt}; }
TokenSeq response_of(const std::string& s) { return {Vocabulary::standard().encode(s), SeqRole::response}; }

MaskedView view_with(const TokenSeq& y, double t, const std::vector<int>& masked) {
  MaskedView v;
  v.t = t;
  v.tokens = y.ids;
  v.mask_flags.assign(y.size(), 0);
  for (int i : masked) {
    v.tokens[i] = Vocabulary::standard().mask_id();
    v.mask_flags[i] = 1;
    ++v.k;
  }
  return v;
}

// Integral of t^(k-1) (1-t)^(n-k) over [lo, 1] by composite Simpson.
double beta_quadrature(std::size_t k, std::size_t n, double lo = 0.0) {
  const int steps = 20000;
  const double h = (1.0 - lo) / steps;
  auto f = [&](double t) {
    return std::pow(t, static_cast<double>(k) - 1.0) * std::pow(1.0 - t, static_cast<double>(n - k));
  };
  double s = f(lo) + f(1.0);
  for (int i = 1; i < steps; ++i) s += (i % 2 == 1 ? 4.0 : 2.0) * f(lo + i * h);
  return s * h / 3.0;
}

}  // namespace

TEST_CASE("per-step loss edge cases") {
  const MaskPredictor m(small_config(), 1);
  const TokenSeq x = prompt_of("Cab=");
  const TokenSeq y = response_of("ba__");
  CHECK(per_step_loss(m, x, y, view_with(y, 0.4, {})) == 0.0);

  const MaskedView all = view_with(y, 1.0, {0, 1, 2, 3});
  const Matrix lp = token_logprobs(m, x, all);
  double s = 0.0;
  for (std::size_t i = 0; i < 4; ++i) s += lp.row(i)[y.ids[i]];
  CHECK(per_step_loss(m, x, y, all) == doctest::Approx(s).epsilon(1e-15));

  // t * loss does not depend on t for a fixed pattern.
  const double a = per_step_loss(m, x, y, view_with(y, 0.25, {1, 3}));
  const double b = per_step_loss(m, x, y, view_with(y, 0.8, {1, 3}));
  CHECK(0.25 * a == doctest::Approx(0.8 * b).epsilon(1e-14));

  MaskedView wrong = view_with(y, 0.5, {0});
  wrong.tokens.pop_back();
  CHECK_THROWS_AS(per_step_loss(m, x, y, wrong), std::invalid_argument);
}

TEST_CASE("uniform predictor gives -k log V / t") {
  const MaskPredictor u = MaskPredictor::uniform(ModelConfig{});
  const TokenSeq x = prompt_of("N123>06=");
  const TokenSeq y = response_of("1+2*3___");
  for (const auto& [t, masked] : std::vector<std::pair<double, std::vector<int>>>{
           {0.5, {0}}, {0.3, {1, 4, 6}}, {1.0, {0, 1, 2, 3, 4, 5, 6, 7}}}) {
    const double want = -static_cast<double>(masked.size()) * std::log(32.0) / t;
    CHECK(per_step_loss(u, x, y, view_with(y, t, masked)) == doctest::Approx(want).epsilon(1e-13));
  }
}

TEST_CASE("graph per-step loss equals the plain value and has correct gradients") {
  MaskPredictor m(small_config(), 2);
  const TokenSeq x = prompt_of("P101=");
  const TokenSeq y = response_of("0_");
  const MaskedView v = view_with(y, 0.6, {0, 1});
  std::vector<double> g(m.params().size(), 0.0);
  {
    Arena a;
    const auto leaves = a.bind(m.params(), g);
    const Var l = per_step_loss(m, leaves, x, y, v);
    CHECK(l.value() == per_step_loss(m, x, y, v));
    a.backward(l);
  }
  Rng rng(3);
  auto theta = m.params().values();
  for (int i = 0; i < 30; ++i) {
    const std::size_t idx = rng.below(theta.size());
    const double x0 = theta[idx];
    theta[idx] = x0 + 1e-5;
    const double up = per_step_loss(m, x, y, v);
    theta[idx] = x0 - 1e-5;
    const double down = per_step_loss(m, x, y, v);
    theta[idx] = x0;
    CHECK(fd::rel_err(g[idx], (up - down) / 2e-5) < 1e-6);
  }
}

TEST_CASE("timestamp sampling") {
  Rng rng(4);
  TimeSampling ts;
  for (double t : draw_times(10000, ts, rng)) {
    CHECK(t > ts.epsilon);
    CHECK(t <= 1.0);
  }
  ts.stratified = true;
  const auto st = draw_times(8, ts, rng);
  for (std::size_t j = 0; j < 8; ++j) {
    const double lo = ts.epsilon + (1.0 - ts.epsilon) * static_cast<double>(j) / 8.0;
    const double hi = ts.epsilon + (1.0 - ts.epsilon) * static_cast<double>(j + 1) / 8.0;
    CHECK(st[j] > lo);
    CHECK(st[j] <= hi);
  }
  CHECK_THROWS_AS(draw_times(0, ts, rng), std::invalid_argument);
}

TEST_CASE("mc_elbo basics") {
  const MaskPredictor m(small_config(), 5);
  const TokenSeq x = prompt_of("Cabc=");
  const TokenSeq y = response_of("cba");
  Rng r1(9), r2(9);
  McBatch b;
  const double one = mc_elbo(m, x, y, 1, TimeSampling{}, r1, &b);
  REQUIRE(b.n_t() == 1);
  CHECK(one == per_step_loss(m, x, y, b.samples[0].view));

  // Reusing a batch under the same parameters reproduces every loss bitwise.
  McBatch big;
  const double est = mc_elbo(m, x, y, 16, TimeSampling{}, r2, &big);
  McBatch again = big;
  eval_old(again, m, x, y);
  double s = 0.0;
  for (std::size_t j = 0; j < 16; ++j) {
    CHECK(again.samples[j].ell_old == big.samples[j].ell_old);
    s += again.samples[j].ell_old;
  }
  CHECK(est == s / 16.0);

  // Graph estimate equals the plain one for the same draws.
  Rng r3(9), r4(9);
  std::vector<double> g(m.params().size(), 0.0);
  Arena a;
  const auto leaves = a.bind(m.params(), g);
  CHECK(mc_elbo(m, leaves, x, y, 7, TimeSampling{}, r3).value() ==
        mc_elbo(m, x, y, 7, TimeSampling{}, r4));
}

TEST_CASE("single-token response: every masked draw equals the exact ELBO") {
  const MaskPredictor m(small_config(), 6);
  const TokenSeq x = prompt_of("P1=");
  const TokenSeq y = response_of("1");
  const double exact = exact_elbo(m, x, y);
  const Matrix lp = token_logprobs(m, x, view_with(y, 1.0, {0}));
  CHECK(exact == doctest::Approx(lp.row(0)[y.ids[0]]).epsilon(1e-15));
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    McBatch b;
    const double v = mc_elbo(m, x, y, 1, TimeSampling{}, rng, &b);
    const auto& s = b.samples[0];
    if (s.view.k == 1) {
      CHECK(std::abs(s.t * v - exact) <= 1e-12);
    } else {
      CHECK(v == 0.0);
    }
  }
}

TEST_CASE("ELBO weights equal the Beta integral") {
  CHECK(elbo_weight(1, 1) == 1.0);
  CHECK(elbo_weight(1, 2) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(elbo_weight(2, 2) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(elbo_weight(1, 3) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(elbo_weight(2, 3) == doctest::Approx(1.0 / 6).epsilon(1e-15));
  CHECK(elbo_weight(3, 3) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  for (std::size_t n = 1; n <= 8; ++n) {
    for (std::size_t k = 1; k <= n; ++k) {
      if (k == 1) continue;  // singular integrand at 0 for Simpson
      CHECK(elbo_weight(k, n) == doctest::Approx(beta_quadrature(k, n)).epsilon(1e-9));
    }
  }
  CHECK_THROWS_AS(elbo_weight(0, 3), std::invalid_argument);
}

TEST_CASE("truncated ELBO weights equal the Beta integral over [eps, 1]") {
  for (double eps : {1e-3, 0.1, 0.5}) {
    for (std::size_t n = 1; n <= 8; ++n) {
      for (std::size_t k = 1; k <= n; ++k) {
        CHECK(elbo_weight(k, n, eps) == doctest::Approx(beta_quadrature(k, n, eps) / (1.0 - eps)).epsilon(1e-9));
      }
    }
  }
  CHECK(elbo_weight(2, 5, 0.0) == elbo_weight(2, 5));
  CHECK_THROWS_AS(elbo_weight(1, 2, 1.0), std::invalid_argument);
}

TEST_CASE("exact ELBO equals a quadrature over t of the pattern expectation") {
  // Independent route: E_t[ sum_m P(m | t) * loss(m, t) ] with P(m|t) =
  // t^k (1-t)^(n-k), integrated numerically.
  const MaskPredictor m(small_config(), 7);
  const TokenSeq x = prompt_of("Cabc=");
  const TokenSeq y = response_of("cb_");
  const std::size_t n = y.size();
  std::vector<double> pattern_sum(1U << n, 0.0);
  for (std::uint32_t mask = 1; mask < (1U << n); ++mask) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < n; ++i) {
      if ((mask >> i) & 1U) idx.push_back(static_cast<int>(i));
    }
    pattern_sum[mask] = per_step_loss(m, x, y, view_with(y, 1.0, idx));
  }
  const int steps = 20000;
  auto integrand = [&](double t) {
    double s = 0.0;
    for (std::uint32_t mask = 1; mask < (1U << n); ++mask) {
      const int k = std::popcount(mask);
      s += std::pow(t, k - 1) * std::pow(1.0 - t, static_cast<int>(n) - k) * pattern_sum[mask];
    }
    return s;
  };
  const double h = 1.0 / steps;
  double q = integrand(0.0) + integrand(1.0);
  for (int i = 1; i < steps; ++i) q += (i % 2 == 1 ? 4.0 : 2.0) * integrand(i * h);
  q *= h / 3.0;
  CHECK(exact_elbo(m, x, y) == doctest::Approx(q).epsilon(1e-10));

  const TokenSeq too_long = response_of("aaaaaaaaaaaaa");
  CHECK_THROWS_AS(exact_elbo(m, x, too_long), std::invalid_argument);
}

TEST_CASE("mc_elbo is unbiased for the exact ELBO") {
  const MaskPredictor m(small_config(), 8);
  const TokenSeq x = prompt_of("N12>03=");
  const TokenSeq y = response_of("1+2");
  const double exact = exact_elbo(m, x, y);
  Rng rng(10);
  const int draws = 20000;
  double s = 0.0, ss = 0.0;
  for (int i = 0; i < draws; ++i) {
    const double v = mc_elbo(m, x, y, 1, TimeSampling{}, rng);
    s += v;
    ss += v * v;
  }
  const double mean = s / draws;
  const double se = std::sqrt((ss / draws - mean * mean) / (draws - 1));
  CHECK(std::abs(mean - exact) < 3.0 * se);
}
