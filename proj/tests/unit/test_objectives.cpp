#include <algorithm>
#include <cmath>

#include "bgpo/objectives.hpp"
#include "doctest.h"

using namespace bgpo;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.embed_dim = 16;
  c.ffn_dim = 24;
  c.context_length = 32;
  c.output_init_std = 0.5;
  return c;
}

TokenSeq prompt_of(const std::string& s) { return {Vocabulary::standard().encode(s), SeqRole::prompt}; }
TokenSeq response_of(const std::string& s) { return {Vocabulary::standard().encode(s), SeqRole::response}; }

// A batch whose d_j are given: ell_cur is a free leaf holding d_j, ell_old 0.
McBatch batch_with(Arena& a, const std::vector<double>& d) {
  McBatch b;
  for (double x : d) {
    McSample s;
    s.ell_cur = a.leaf(x);
    s.ell_old = 0.0;
    s.d = x;
    b.samples.push_back(s);
  }
  return b;
}

double rel_l2(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    ref += b[i] * b[i];
  }
  return std::sqrt(diff / ref);
}

}  // namespace

TEST_CASE("group advantages") {
  CHECK(group_advantages(std::vector<double>{1, 0}) == std::vector<double>{1, -1});
  CHECK(group_advantages(std::vector<double>{1, 0, 0, 1}) == std::vector<double>{1, -1, -1, 1});
  CHECK(group_advantages(std::vector<double>{0.3, 0.3, 0.3}) == std::vector<double>{0, 0, 0});
  CHECK_THROWS_AS(group_advantages(std::vector<double>{1}), std::invalid_argument);

  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> r(2 + rng.below(15));
    for (double& x : r) x = rng.bernoulli(0.3) ? 1.0 : rng.uniform();
    const auto a = group_advantages(r);
    if (std::all_of(r.begin(), r.end(), [&](double x) { return x == r[0]; })) {
      for (double x : a) CHECK(x == 0.0);
      continue;
    }
    double mean = 0.0, var = 0.0;
    for (double x : a) mean += x;
    mean /= static_cast<double>(a.size());
    for (double x : a) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(a.size()));
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(sd - 1.0) < 1e-6);
  }
}

TEST_CASE("ratio objective examples") {
  auto ratio = [](std::vector<double> d, double adv) {
    Arena a;
    return ratio_objective(batch_with(a, d), adv).value();
  };
  CHECK(ratio({0, 0, 0}, 1.7) == 1.7);
  CHECK(ratio({0.5, 0.1}, 2.0) == doctest::Approx(2.0 * std::exp(0.3)).epsilon(1e-15));
  CHECK(ratio({0.5, 0.1}, 2.0) == doctest::Approx(2.69972).epsilon(1e-6));
  CHECK(ratio({std::log(2.0), std::log(0.5)}, -1.0) == doctest::Approx(-1.0).epsilon(1e-15));
}

TEST_CASE("boundary terms examples") {
  struct Summary {
    double total = 0.0;
    std::vector<Branch> branches;
  };
  auto terms = [](std::vector<double> d, double adv) {
    Arena a;
    Summary s;
    for (const auto& t : boundary_terms(batch_with(a, d), adv)) {
      s.total += t.g.value();
      s.branches.push_back(t.branch);
    }
    return s;
  };
  for (double adv : {1.3, -0.4, 0.0}) CHECK(terms({0, 0, 0, 0}, adv).total == adv);
  const auto pos = terms({0.5, 0.1}, 2.0);
  CHECK(pos.total == doctest::Approx(2.6).epsilon(1e-15));
  for (Branch b : pos.branches) CHECK(b == Branch::taylor);
  const auto neg = terms({std::log(2.0), std::log(0.5)}, -1.0);
  CHECK(neg.total == doctest::Approx(-1.25).epsilon(1e-15));
  for (Branch b : neg.branches) CHECK(b == Branch::jensen);
  CHECK(pos.total <= ratio_value(2.0, std::vector<double>{0.5, 0.1}));
  CHECK(neg.total <= ratio_value(-1.0, std::vector<double>{std::log(2.0), std::log(0.5)}));
}

TEST_CASE("lemmas and lower-bound dominance on random draws") {
  Rng rng(2);
  for (int i = 0; i < 10000; ++i) {
    const double delta = rng.uniform(-20.0, 20.0);
    CHECK(std::exp(delta) >= 1.0 + delta - 1e-12);
  }
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> d(1 + rng.below(32));
    double s = 0.0, se = 0.0;
    for (double& x : d) {
      x = rng.uniform(-3.0, 3.0);
      s += x;
      se += std::exp(x);
    }
    const double n = static_cast<double>(d.size());
    CHECK(std::exp(s / n) <= se / n + 1e-12);
  }
  for (int i = 0; i < 10000; ++i) {
    const double adv = rng.uniform(-3.0, 3.0);
    std::vector<double> d(1 + rng.below(64));
    for (double& x : d) x = rng.uniform(-2.0, 2.0);
    CHECK(lower_bound_value(adv, d) <= ratio_value(adv, d) + 1e-12);
  }
}

TEST_CASE("graph terms agree with plain values") {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    Arena a;
    std::vector<double> d(1 + rng.below(8));
    for (double& x : d) x = rng.uniform(-1.0, 1.0);
    const double adv = rng.uniform(-2.0, 2.0);
    const McBatch b = batch_with(a, d);
    CHECK(ratio_objective(b, adv).value() == ratio_value(adv, d));
    for (const auto& t : boundary_terms(b, adv)) {
      CHECK(t.g.value() == boundary_term_value(adv, d[t.j], d.size()));
    }
  }
}

namespace {

struct Fixture {
  MaskPredictor model{small_config(), 4};
  MaskPredictor old{small_config(), 5};
  RolloutGroup group;
  std::vector<McBatch> batches;

  Fixture(std::size_t n_t, bool on_policy) {
    if (on_policy) old = MaskPredictor(model.config(), model.params());
    group.prompt = prompt_of("Cabd=");
    for (const char* r : {"dba", "abd", "dab"}) group.responses.push_back(response_of(r));
    group.rewards = {1.0, 0.0, 0.5};
    group.advantages = group_advantages(group.rewards);
    Rng rng(6);
    for (const auto& y : group.responses) {
      McBatch b = draw_batch(y, n_t, TimeSampling{}, rng);
      eval_old(b, old, group.prompt, y);
      batches.push_back(std::move(b));
    }
  }
};

}  // namespace

TEST_CASE("streamed BGPO terms equal the monolithic loss in value and gradient") {
  Fixture f(5, false);
  const std::size_t p = f.model.params().size();

  std::vector<double> g_stream(p, 0.0);
  double stream_sum = 0.0;
  std::size_t terms = 0;
  {
    Arena a;
    const auto leaves = a.bind(f.model.params(), g_stream);
    bgpo_loss_terms(f.model, leaves, f.group, f.batches, [&](std::size_t, const ObjectiveTerm&, Var loss) {
      stream_sum += loss.value();
      ++terms;
      a.backward(loss);
      a.release();
    });
  }
  CHECK(terms == 15);

  std::vector<double> g_mono(p, 0.0);
  double mono_value = 0.0;
  {
    Arena a;
    const auto leaves = a.bind(f.model.params(), g_mono);
    std::vector<Var> all;
    bgpo_loss_terms(f.model, leaves, f.group, f.batches,
                    [&](std::size_t, const ObjectiveTerm&, Var loss) { all.push_back(loss); });
    const Var total = sum(all);
    mono_value = total.value();
    a.backward(total);
  }
  // -(1/G) sum_i R_lb(i), evaluated from plain d values.
  double want = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> d;
    for (const auto& s : f.batches[i].samples) d.push_back(s.d);
    want -= lower_bound_value(f.group.advantages[i], d) / 3.0;
  }
  CHECK(std::abs(stream_sum - want) <= 1e-12);
  CHECK(std::abs(mono_value - want) <= 1e-12);
  CHECK(rel_l2(g_stream, g_mono) <= 1e-9);
}

TEST_CASE("trivial BGPO term") {
  MaskPredictor m(small_config(), 1);
  RolloutGroup grp;
  grp.prompt = prompt_of("P1=");
  grp.responses = {response_of("1")};
  grp.advantages = {0.0};
  McBatch b;
  b.samples.resize(1);
  b.samples[0].t = 1.0;
  b.samples[0].view.t = 1.0;
  b.samples[0].view.tokens = grp.responses[0].ids;
  b.samples[0].view.mask_flags = {0};
  std::vector<McBatch> batches{b};
  std::vector<double> g(m.params().size(), 0.0);
  Arena a;
  const auto leaves = a.bind(m.params(), g);
  int calls = 0;
  bgpo_loss_terms(m, leaves, grp, batches, [&](std::size_t, const ObjectiveTerm& t, Var loss) {
    ++calls;
    CHECK(t.d == 0.0);
    CHECK(loss.value() == 0.0);
  });
  CHECK(calls == 1);
}

TEST_CASE("on-policy equivalence of values and gradients") {
  const MaskPredictor model(small_config(), 11);
  const MaskPredictor old(model.config(), model.params());
  const TokenSeq x = prompt_of("N345>17=");
  const TokenSeq y = response_of("3+4*5_");
  for (std::size_t n_t : {1, 2, 3, 4, 5, 7, 16}) {
    for (double adv : {1.25, -0.75}) {
      ObjectiveConfig lb;
      lb.n_t = n_t;
      ObjectiveConfig ratio = lb;
      ratio.algorithm = Algorithm::vrpo_ol;
      std::vector<double> g1(model.params().size(), 0.0), g2(model.params().size(), 0.0);
      const auto o1 = response_gradient(lb, model, old, x, y, adv, 1.0, 42, g1);
      const auto o2 = response_gradient(ratio, model, old, x, y, adv, 1.0, 42, g2);
      CHECK(o1.objective == adv);
      CHECK(o2.objective == adv);
      CHECK(rel_l2(g1, g2) <= 1e-9);
    }
  }
}

TEST_CASE("off-policy values differ and the bound stays below the ratio") {
  const MaskPredictor model(small_config(), 11);
  MaskPredictor old(model.config(), model.params());
  Rng rng(1);
  for (double& v : old.params().values()) v += 1e-3 * rng.normal();
  const TokenSeq x = prompt_of("N345>17=");
  const TokenSeq y = response_of("3+4*5_");
  for (double adv : {1.0, -1.0}) {
    ObjectiveConfig lb;
    lb.n_t = 8;
    ObjectiveConfig ratio = lb;
    ratio.algorithm = Algorithm::vrpo_ol;
    std::vector<double> g(model.params().size(), 0.0);
    const auto o1 = response_gradient(lb, model, old, x, y, adv, 1.0, 3, g);
    const auto o2 = response_gradient(ratio, model, old, x, y, adv, 1.0, 3, g);
    CHECK(o1.objective != o2.objective);
    CHECK(o1.objective <= o2.objective + 1e-12);
  }
}

TEST_CASE("memory separation between streamed and retained objectives") {
  const MaskPredictor model(small_config(), 12);
  const TokenSeq x = prompt_of("Cabc=");
  const TokenSeq y = response_of("cba_____");
  std::vector<std::size_t> bgpo_peaks, vrpo_peaks;
  for (std::size_t n_t : {1, 2, 4, 8, 16}) {
    for (Algorithm alg : {Algorithm::bgpo, Algorithm::vrpo_ol}) {
      ObjectiveConfig cfg;
      cfg.algorithm = alg;
      cfg.n_t = n_t;
      cfg.time.epsilon = 0.5;  // every sample masks something most of the time
      std::vector<double> g(model.params().size(), 0.0);
      const auto out = response_gradient(cfg, model, model, x, y, 1.0, 1.0, 8, g);
      (alg == Algorithm::bgpo ? bgpo_peaks : vrpo_peaks).push_back(out.peak_live);
    }
  }
  for (std::size_t p : bgpo_peaks) CHECK(p == bgpo_peaks.front());
  for (std::size_t i = 1; i < vrpo_peaks.size(); ++i) CHECK(vrpo_peaks[i] > vrpo_peaks[i - 1]);
  const std::size_t leaves = model.params().num_arrays();
  CHECK(vrpo_peaks[4] - leaves >= 4 * (vrpo_peaks[1] - leaves));
}

TEST_CASE("single-pass log-probability") {
  const MaskPredictor u = MaskPredictor::uniform(ModelConfig{});
  const TokenSeq x = prompt_of("N123>06=");
  const TokenSeq y = response_of("1*2*3");
  Rng rng(1);
  CHECK(single_pass_logprob(u, x, response_of("1+23"), 0.15, rng) ==
        doctest::Approx(-4.0 * std::log(32.0)).epsilon(1e-14));

  const MaskPredictor m(small_config(), 2);
  Rng a(5), b(5), c(6);
  CHECK(single_pass_logprob(m, x, y, 0.0, a) == single_pass_logprob(m, x, y, 0.0, c));
  Rng a2(7), b2(7);
  CHECK(single_pass_logprob(m, x, y, 0.5, a2) == single_pass_logprob(m, x, y, 0.5, b2));
  CHECK_THROWS_AS(single_pass_logprob(m, x, y, 1.0, a), std::invalid_argument);

  std::vector<double> g(m.params().size(), 0.0);
  Arena ar;
  const auto leaves = ar.bind(m.params(), g);
  const TokenSeq xm = mask_prompt(x, 0.3, c);
  CHECK(single_pass_logprob(m, leaves, xm, y).value() == single_pass_logprob(m, xm, y));
}

TEST_CASE("diffu-GRPO objective and clipping") {
  const MaskPredictor model(small_config(), 13);
  MaskPredictor old(model.config(), model.params());
  const TokenSeq x = prompt_of("N345>17=");
  const TokenSeq y = response_of("3+4*5");
  ObjectiveConfig cfg;
  cfg.algorithm = Algorithm::diffu_grpo;
  cfg.n_t = 3;
  std::vector<double> g(model.params().size(), 0.0);
  const auto on = response_gradient(cfg, model, old, x, y, 0.8, 1.0, 1, g);
  CHECK(on.objective == doctest::Approx(0.8).epsilon(1e-15));
  double norm = 0.0;
  for (double v : g) norm += v * v;
  CHECK(norm > 0.0);

  // Far off-policy with a tight clip: for one advantage sign the ratio
  // leaves the band on the binding side and the gradient changes.
  for (double& v : old.params().values()) v *= 0.5;
  std::size_t changed = 0;
  for (double adv : {0.8, -0.8}) {
    ObjectiveConfig clipped = cfg;
    clipped.clip = 1e-6;
    std::vector<double> g2(model.params().size(), 0.0), g3(model.params().size(), 0.0);
    const auto c = response_gradient(clipped, model, old, x, y, adv, 1.0, 1, g2);
    const auto u = response_gradient(cfg, model, old, x, y, adv, 1.0, 1, g3);
    CHECK(c.objective <= u.objective);
    changed += g2 != g3;
  }
  CHECK(changed >= 1);
}

TEST_CASE("algorithm names") {
  CHECK(parse_algorithm("bgpo") == Algorithm::bgpo);
  CHECK(parse_algorithm("vrpo-ol") == Algorithm::vrpo_ol);
  CHECK(parse_algorithm("diffu_grpo") == Algorithm::diffu_grpo);
  CHECK(to_string(Algorithm::vrpo_ol) == "vrpo_ol");
  CHECK_THROWS_AS(parse_algorithm("ppo"), std::invalid_argument);
}
