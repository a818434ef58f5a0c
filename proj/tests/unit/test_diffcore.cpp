#include <cmath>

#include "bgpo/diffcore.hpp"
#include "bgpo/rng.hpp"
#include "doctest.h"
#include "fd.hpp"

using namespace bgpo;

TEST_CASE("scalar op values and derivatives") {
  Arena a;
  Var x = a.leaf(0.0);
  Var e = exp(x);
  CHECK(e.value() == 1.0);
  a.backward(e);
  CHECK(x.grad()[0] == 1.0);

  Arena b;
  Var y = b.leaf(1.0);
  Var l = log(y);
  CHECK(l.value() == 0.0);
  b.backward(l);
  CHECK(y.grad()[0] == 1.0);
}

TEST_CASE("d/dx exp(2x) at 0.5 matches finite differences") {
  const fd::Builder f = [](Arena&, const std::vector<Var>& v) { return exp(2.0 * v[0]); };
  const std::vector<fd::Shape> s{{1, 1}};
  const fd::Inputs x{{0.5}};
  const double ad = fd::autodiff(f, s, x)[0][0];
  const double num = fd::numeric(f, s, x, 1e-6)[0][0];
  CHECK(ad == doctest::Approx(2.0 * std::exp(1.0)).epsilon(1e-12));
  CHECK(fd::rel_err(ad, num) < 1e-8);
  CHECK(ad == doctest::Approx(5.43656).epsilon(1e-6));
}

TEST_CASE("backward accumulates into leaf gradients") {
  Arena a;
  Var x = a.leaf(3.0);
  a.backward(x);
  CHECK(x.grad()[0] == 1.0);
  a.backward(x * x);
  CHECK(x.grad()[0] == 7.0);
}

TEST_CASE("accumulation across backward calls equals backward of the sum") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const double x0 = rng.uniform(0.2, 2.0);
    const double y0 = rng.uniform(0.2, 2.0);
    Arena a;
    Var x = a.leaf(x0);
    Var y = a.leaf(y0);
    a.backward(exp(x * y));
    a.release();
    a.backward(log(x) / y);
    a.release();
    Arena b;
    Var x2 = b.leaf(x0);
    Var y2 = b.leaf(y0);
    b.backward(exp(x2 * y2) + log(x2) / y2);
    CHECK(std::abs(x.grad()[0] - x2.grad()[0]) <= 1e-12 * std::max(1.0, std::abs(x2.grad()[0])));
    CHECK(std::abs(y.grad()[0] - y2.grad()[0]) <= 1e-12 * std::max(1.0, std::abs(y2.grad()[0])));
  }
}

TEST_CASE("domain violations raise instead of producing NaN") {
  Arena a;
  Var x = a.leaf(0.0);
  Var n = a.leaf(-1.0);
  CHECK_THROWS_AS(log(x), DomainError);
  CHECK_THROWS_AS(log(n), DomainError);
  CHECK_THROWS_AS(x / 0.0, DomainError);
  CHECK_THROWS_AS(1.0 / x, DomainError);
  CHECK_THROWS_AS(n / x, DomainError);
}

TEST_CASE("release keeps leaves and gradients, drops intermediates") {
  Arena a;
  std::vector<Var> p;
  for (int i = 0; i < 5; ++i) p.push_back(a.leaf(1.0 + i));
  CHECK(a.live() == 5);
  Var s = (p[0] * p[1] + p[2]) * exp(p[3]) - p[4];
  a.backward(s);
  a.release();
  CHECK(a.live() == 5);
  CHECK(p[1].grad()[0] == doctest::Approx(std::exp(4.0)));
  CHECK_THROWS_AS(s.value(), GraphError);
  CHECK(p[0].value() == 1.0);
}

TEST_CASE("peak live node accounting") {
  Arena empty;
  CHECK(empty.peak_live() == 0);
  CHECK(empty.live() == 0);

  Arena a;
  Var x = a.leaf(0.7);
  Var y = exp(log(x * 2.0));
  a.backward(y);
  CHECK(a.peak_live() == 4);
  a.release();
  for (int round = 0; round < 3; ++round) {
    a.backward(exp(log(x * 2.0)));
    a.release();
  }
  CHECK(a.peak_live() == 4);
  CHECK(a.live() == 1);
}

TEST_CASE("misuse is reported") {
  Arena a;
  Var x = a.leaf(1.0);
  Var m = a.leaf(2, 2, std::vector<double>{1, 2, 3, 4});
  CHECK_THROWS_AS(a.backward(m), GraphError);
  CHECK_THROWS_AS(x + m, GraphError);
  Var t = x * 2.0;
  CHECK_THROWS_AS(a.leaf(3.0), GraphError);
  a.release();
  CHECK_THROWS_AS(a.backward(t), GraphError);
  Arena b;
  Var z = b.leaf(1.0);
  CHECK_THROWS_AS(x + z, GraphError);
}

TEST_CASE("constants do not receive gradients") {
  Arena a;
  Var x = a.leaf(2.0);
  Var c = a.constant(3.0);
  a.backward(x * c);
  CHECK(x.grad()[0] == 3.0);
  Arena b;
  Var k = b.constant(1.0);
  b.backward(exp(k));
}

TEST_CASE("bound parameter leaves write into the external gradient buffer") {
  ParamStore ps;
  ps.add("w", 1, 3);
  ps.add("b", 1, 1);
  ps.values(0)[0] = 1.0;
  ps.values(0)[1] = 2.0;
  ps.values(0)[2] = 3.0;
  ps.values(1)[0] = 0.5;
  std::vector<double> g(ps.size(), 0.0);
  Arena a;
  auto leaves = a.bind(ps, g);
  CHECK(a.live() == 2);
  a.backward(sum(leaves[0] * leaves[0]) * leaves[1]);
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 2.0);
  CHECK(g[2] == 3.0);
  CHECK(g[3] == 14.0);
  ps.zero_grads();
  for (double v : ps.grads()) CHECK(v == 0.0);
}

namespace {

// Random composite of scalar ops over three leaves, kept inside the domain.
fd::Builder random_scalar_function(Rng& rng) {
  std::vector<int> plan;
  const int steps = 3 + static_cast<int>(rng.below(6));
  for (int i = 0; i < 3 * steps; ++i) plan.push_back(static_cast<int>(rng.below(1000)));
  return [plan, steps](Arena&, const std::vector<Var>& leaves) {
    std::vector<Var> pool = leaves;
    for (int s = 0; s < steps; ++s) {
      const Var a = pool[plan[3 * s + 1] % pool.size()];
      const Var b = pool[plan[3 * s + 2] % pool.size()];
      switch (plan[3 * s] % 9) {
        case 0: pool.push_back(a + b); break;
        case 1: pool.push_back(a - b); break;
        case 2: pool.push_back(a * b); break;
        case 3: pool.push_back(a / (b * b + 1.0)); break;
        case 4: pool.push_back(exp(a * 0.3)); break;
        case 5: pool.push_back(log(a * a + 0.5)); break;
        case 6: pool.push_back(-a + 2.5 * b); break;
        case 7: pool.push_back(1.0 / (a * a + 1.0) - 0.5); break;
        default: {
          std::vector<Var> c{a, b, a * b};
          pool.push_back(plan[3 * s] % 2 == 0 ? sum(c) : mean(c));
        }
      }
    }
    return pool.back() + pool[pool.size() / 2];
  };
}

}  // namespace

TEST_CASE("random scalar composites match finite differences") {
  Rng rng(11);
  const std::vector<fd::Shape> shapes(3, {1, 1});
  for (int trial = 0; trial < 100; ++trial) {
    const auto f = random_scalar_function(rng);
    fd::Inputs x;
    for (int i = 0; i < 3; ++i) x.push_back({rng.uniform(-1.5, 1.5)});
    CHECK(fd::max_rel_err(fd::autodiff(f, shapes, x), fd::numeric(f, shapes, x)) < 1e-6);
  }
}

namespace {

std::vector<double> rand_values(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

// Contracts a matrix-valued node to a scalar with fixed random weights.
Var contract(Arena& a, Var m, std::uint64_t seed) {
  Rng rng(seed);
  const auto w = rand_values(m.rows() * m.cols(), rng);
  return sum(m * a.constant(m.rows(), m.cols(), w));
}

void check_matrix_op(const std::vector<fd::Shape>& shapes, const fd::Builder& f, Rng& rng) {
  fd::Inputs x;
  for (const auto& s : shapes) x.push_back(rand_values(s.rows * s.cols, rng));
  CHECK(fd::max_rel_err(fd::autodiff(f, shapes, x), fd::numeric(f, shapes, x)) < 1e-6);
}

}  // namespace

TEST_CASE("matrix ops match finite differences") {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t m = 1 + rng.below(4), k = 1 + rng.below(4), n = 1 + rng.below(5);
    check_matrix_op({{m, k}, {k, n}},
                    [](Arena& a, const std::vector<Var>& v) { return contract(a, matmul(v[0], v[1]), 1); }, rng);
    check_matrix_op({{m, n}, {1, n}},
                    [](Arena& a, const std::vector<Var>& v) { return contract(a, add_row(v[0], v[1]), 2); }, rng);
    check_matrix_op({{m, n}, {1, n}},
                    [](Arena& a, const std::vector<Var>& v) { return contract(a, rms_norm(v[0], v[1]), 3); }, rng);
    check_matrix_op({{m, n}},
                    [](Arena& a, const std::vector<Var>& v) { return contract(a, log_softmax(v[0]), 4); }, rng);
    check_matrix_op({{m, k}, {m, k}, {m, k}},
                    [](Arena& a, const std::vector<Var>& v) { return contract(a, attention(v[0], v[1], v[2]), 5); }, rng);
    check_matrix_op({{m, n}, {m, n}},
                    [](Arena& a, const std::vector<Var>& v) {
                      return contract(a, exp(v[0] * 0.5) * v[1] - v[1] / (v[0] * v[0] + 1.0), 6);
                    },
                    rng);
    check_matrix_op({{5, n}},
                    [](Arena& a, const std::vector<Var>& v) {
                      const std::vector<std::uint32_t> ids{4, 0, 4, 2};
                      const std::vector<std::size_t> rows{3, 1};
                      return contract(a, select_rows(gather_rows(v[0], ids), rows), 7);
                    },
                    rng);
    check_matrix_op({{3, 4}},
                    [](Arena& a, const std::vector<Var>& v) {
                      const std::vector<std::size_t> r{0, 2, 2}, c{3, 1, 1};
                      return contract(a, relu(pick(v[0], r, c)), 8);
                    },
                    rng);
  }
}

TEST_CASE("chain rule sums over every path") {
  // f = x*y + exp(x): df/dx = y + exp(x), df/dy = x.
  Arena a;
  Var x = a.leaf(0.3);
  Var y = a.leaf(-1.2);
  a.backward(x * y + exp(x));
  CHECK(x.grad()[0] == doctest::Approx(-1.2 + std::exp(0.3)).epsilon(1e-15));
  CHECK(y.grad()[0] == doctest::Approx(0.3).epsilon(1e-15));
}
