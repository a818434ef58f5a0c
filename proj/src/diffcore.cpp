#include "bgpo/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bgpo/kernels.hpp"

namespace bgpo {

// ---------------------------------------------------------------------------
// ParamStore

std::size_t ParamStore::add(std::string name, std::size_t rows, std::size_t cols) {
  if (find(name)) throw std::invalid_argument("duplicate parameter array: " + name);
  arrays_.push_back({std::move(name), rows, cols, values_.size()});
  values_.resize(values_.size() + rows * cols, 0.0);
  grads_.resize(values_.size(), 0.0);
  return arrays_.size() - 1;
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < arrays_.size(); ++i) {
    if (arrays_[i].name == name) return i;
  }
  return std::nullopt;
}

std::span<double> ParamStore::values(std::size_t i) {
  const Array& a = arrays_.at(i);
  return std::span<double>(values_).subspan(a.offset, a.size());
}

std::span<const double> ParamStore::values(std::size_t i) const {
  const Array& a = arrays_.at(i);
  return std::span<const double>(values_).subspan(a.offset, a.size());
}

std::span<double> ParamStore::grads(std::size_t i) {
  const Array& a = arrays_.at(i);
  return std::span<double>(grads_).subspan(a.offset, a.size());
}

std::span<const double> ParamStore::grads(std::size_t i) const {
  const Array& a = arrays_.at(i);
  return std::span<const double>(grads_).subspan(a.offset, a.size());
}

void ParamStore::zero_grads() { std::fill(grads_.begin(), grads_.end(), 0.0); }

bool ParamStore::same_layout(const ParamStore& other) const {
  if (arrays_.size() != other.arrays_.size()) return false;
  for (std::size_t i = 0; i < arrays_.size(); ++i) {
    const Array& a = arrays_[i];
    const Array& b = other.arrays_[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Var

double Var::value() const {
  arena->check(*this);
  if (arena->rows(id) * arena->cols(id) != 1) {
    throw GraphError("value() on a non-scalar node");
  }
  return arena->value(id)[0];
}

std::span<const double> Var::values() const {
  arena->check(*this);
  return arena->value(id);
}

std::size_t Var::rows() const {
  arena->check(*this);
  return arena->rows(id);
}

std::size_t Var::cols() const {
  arena->check(*this);
  return arena->cols(id);
}

std::span<const double> Var::grad() const {
  arena->check(*this);
  if (id >= arena->leaf_count()) throw GraphError("grad() is only kept for leaves");
  return arena->adjoint(id);
}

// ---------------------------------------------------------------------------
// Arena

void Arena::check(const Var& v) const {
  if (v.arena != this) throw GraphError("node belongs to a different arena");
  if (v.id >= nodes_.size()) throw GraphError("node id out of range");
  if (v.id >= leaf_count_ && v.epoch != epoch_) {
    throw GraphError("stale node handle used after release()");
  }
}

Var Arena::push(Node node) {
  nodes_.push_back(std::move(node));
  peak_ = std::max(peak_, nodes_.size());
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1), epoch_};
}

Var Arena::push_leaf(Node node) {
  if (nodes_.size() != leaf_count_) {
    throw GraphError("leaves must be created before intermediate nodes");
  }
  node.requires_grad = true;
  Var v = push(std::move(node));
  ++leaf_count_;
  return v;
}

Var Arena::leaf(double value) { return leaf(1, 1, std::span<const double>(&value, 1)); }

Var Arena::leaf(std::size_t rows, std::size_t cols, std::span<const double> values) {
  if (values.size() != rows * cols) throw GraphError("leaf value size does not match shape");
  Node n;
  n.rows = static_cast<std::uint32_t>(rows);
  n.cols = static_cast<std::uint32_t>(cols);
  n.value.assign(values.begin(), values.end());
  n.adjoint.assign(values.size(), 0.0);
  return push_leaf(std::move(n));
}

std::vector<Var> Arena::bind(const ParamStore& store, std::span<double> grads) {
  if (grads.size() != store.size()) throw GraphError("gradient buffer does not match store");
  std::vector<Var> out;
  out.reserve(store.num_arrays());
  for (std::size_t i = 0; i < store.num_arrays(); ++i) {
    const ParamStore::Array& a = store.array(i);
    Node n;
    n.rows = static_cast<std::uint32_t>(a.rows);
    n.cols = static_cast<std::uint32_t>(a.cols);
    n.ext_value = store.values(i).data();
    n.ext_grad = grads.data() + a.offset;
    out.push_back(push_leaf(std::move(n)));
  }
  return out;
}

Var Arena::constant(double value) { return constant(1, 1, std::span<const double>(&value, 1)); }

Var Arena::constant(std::size_t rows, std::size_t cols, std::span<const double> values) {
  if (values.size() != rows * cols) throw GraphError("constant size does not match shape");
  Node n;
  n.rows = static_cast<std::uint32_t>(rows);
  n.cols = static_cast<std::uint32_t>(cols);
  n.value.assign(values.begin(), values.end());
  return push(std::move(n));
}

Var Arena::make(std::size_t rows, std::size_t cols, std::initializer_list<Var> parents,
                Backprop backprop) {
  return make(rows, cols, std::span<const Var>(parents.begin(), parents.size()),
              std::move(backprop));
}

Var Arena::make(std::size_t rows, std::size_t cols, std::span<const Var> parents,
                Backprop backprop) {
  Node n;
  n.rows = static_cast<std::uint32_t>(rows);
  n.cols = static_cast<std::uint32_t>(cols);
  n.value.assign(rows * cols, 0.0);
  n.parents.reserve(parents.size());
  for (const Var& p : parents) {
    check(p);
    n.parents.push_back(p.id);
    n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
  }
  if (n.requires_grad) n.backprop = std::move(backprop);
  return push(std::move(n));
}

std::span<const double> Arena::value(std::uint32_t id) const {
  const Node& n = nodes_[id];
  const std::size_t size = std::size_t{n.rows} * n.cols;
  if (n.ext_value != nullptr) return {n.ext_value, size};
  return n.value;
}

std::span<double> Arena::mutable_value(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.ext_value != nullptr) throw GraphError("parameter leaves are read-only");
  return n.value;
}

std::span<double> Arena::adjoint(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return {};
  if (n.ext_grad != nullptr) return {n.ext_grad, std::size_t{n.rows} * n.cols};
  return n.adjoint;
}

void Arena::backward(Var root) {
  check(root);
  Node& r = nodes_[root.id];
  if (std::size_t{r.rows} * r.cols != 1) throw GraphError("backward() needs a scalar root");
  if (!r.requires_grad) return;
  if (root.id < leaf_count_) {
    adjoint(root.id)[0] += 1.0;
    return;
  }
  for (std::size_t i = leaf_count_; i <= root.id; ++i) {
    Node& n = nodes_[i];
    if (n.requires_grad) {
      n.adjoint.assign(std::size_t{n.rows} * n.cols, 0.0);
    }
  }
  r.adjoint[0] = 1.0;
  for (std::size_t i = root.id + 1; i-- > leaf_count_;) {
    Node& n = nodes_[i];
    if (!n.backprop) continue;
    for (std::uint32_t p : n.parents) {
      if (p >= i) throw GraphError("cycle detected at node " + std::to_string(i));
    }
    n.backprop(*this, static_cast<std::uint32_t>(i));
  }
}

void Arena::release() {
  nodes_.resize(leaf_count_);
  ++epoch_;
}

// ---------------------------------------------------------------------------
// Elementwise ops

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.arena != b.arena) throw GraphError(std::string(op) + ": operands in different arenas");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw GraphError(std::string(op) + ": shape mismatch");
  }
}

// out = f(a) with d(out)/d(a) = df(a, out), elementwise.
template <class F, class DF>
Var unary(Var a, F f, DF df) {
  Arena& ar = *a.arena;
  ar.check(a);
  Var out = ar.make(a.rows(), a.cols(), {a}, [df](Arena& g, std::uint32_t self) {
    const std::uint32_t p = g.parent(self, 0);
    auto ga = g.adjoint(p);
    auto go = g.adjoint(self);
    auto x = g.value(p);
    auto y = g.value(self);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * df(x[i], y[i]);
  });
  auto x = ar.value(a.id);
  auto y = ar.mutable_value(out.id);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(x[i]);
  return out;
}

}  // namespace

Var operator+(Var a, Var b) {
  require_same_shape(a, b, "add");
  Arena& ar = *a.arena;
  Var out = ar.make(a.rows(), a.cols(), {a, b}, [](Arena& g, std::uint32_t self) {
    auto go = g.adjoint(self);
    for (std::size_t k = 0; k < 2; ++k) {
      auto gp = g.adjoint(g.parent(self, k));
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += go[i];
    }
  });
  auto x = ar.value(a.id);
  auto z = ar.value(b.id);
  auto y = ar.mutable_value(out.id);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + z[i];
  return out;
}

Var operator+(Var a, double b) {
  return unary(a, [b](double x) { return x + b; }, [](double, double) { return 1.0; });
}

Var operator+(double a, Var b) { return b + a; }

Var operator-(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Arena& ar = *a.arena;
  Var out = ar.make(a.rows(), a.cols(), {a, b}, [](Arena& g, std::uint32_t self) {
    auto go = g.adjoint(self);
    auto ga = g.adjoint(g.parent(self, 0));
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
    auto gb = g.adjoint(g.parent(self, 1));
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
  });
  auto x = ar.value(a.id);
  auto z = ar.value(b.id);
  auto y = ar.mutable_value(out.id);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] - z[i];
  return out;
}

Var operator-(Var a, double b) {
  return unary(a, [b](double x) { return x - b; }, [](double, double) { return 1.0; });
}

Var operator-(double a, Var b) {
  return unary(b, [a](double x) { return a - x; }, [](double, double) { return -1.0; });
}

Var operator-(Var a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var operator*(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Arena& ar = *a.arena;
  Var out = ar.make(a.rows(), a.cols(), {a, b}, [](Arena& g, std::uint32_t self) {
    auto go = g.adjoint(self);
    const std::uint32_t pa = g.parent(self, 0);
    const std::uint32_t pb = g.parent(self, 1);
    auto x = g.value(pa);
    auto z = g.value(pb);
    auto ga = g.adjoint(pa);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * z[i];
    auto gb = g.adjoint(pb);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * x[i];
  });
  auto x = ar.value(a.id);
  auto z = ar.value(b.id);
  auto y = ar.mutable_value(out.id);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * z[i];
  return out;
}

Var operator*(Var a, double b) {
  return unary(a, [b](double x) { return x * b; }, [b](double, double) { return b; });
}

Var operator*(double a, Var b) { return b * a; }

Var operator/(Var a, Var b) {
  require_same_shape(a, b, "div");
  Arena& ar = *a.arena;
  for (double d : b.values()) {
    if (d == 0.0) throw DomainError("division by zero");
  }
  Var out = ar.make(a.rows(), a.cols(), {a, b}, [](Arena& g, std::uint32_t self) {
    auto go = g.adjoint(self);
    const std::uint32_t pa = g.parent(self, 0);
    const std::uint32_t pb = g.parent(self, 1);
    auto z = g.value(pb);
    auto y = g.value(self);
    auto ga = g.adjoint(pa);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] / z[i];
    auto gb = g.adjoint(pb);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i] * y[i] / z[i];
  });
  auto x = ar.value(a.id);
  auto z = ar.value(b.id);
  auto y = ar.mutable_value(out.id);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] / z[i];
  return out;
}

Var operator/(Var a, double b) {
  if (b == 0.0) throw DomainError("division by zero");
  return unary(a, [b](double x) { return x / b; }, [b](double, double) { return 1.0 / b; });
}

Var operator/(double a, Var b) {
  for (double d : b.values()) {
    if (d == 0.0) throw DomainError("division by zero");
  }
  return unary(
      b, [a](double x) { return a / x; }, [](double x, double y) { return -y / x; });
}

Var exp(Var a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double x : a.values()) {
    if (!(x > 0.0)) throw DomainError("log of non-positive value " + std::to_string(x));
  }
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(Var a) {
  Arena& ar = *a.arena;
  ar.check(a);
  Var out = ar.make(1, 1, {a}, [](Arena& g, std::uint32_t self) {
    const double go = g.adjoint(self)[0];
    for (double& x : g.adjoint(g.parent(self, 0))) x += go;
  });
  double s = 0.0;
  for (double x : ar.value(a.id)) s += x;
  ar.mutable_value(out.id)[0] = s;
  return out;
}

namespace {

Var scaled_sum(std::span<const Var> terms, double scale, bool divide) {
  if (terms.empty()) throw GraphError("sum of an empty collection");
  Arena& ar = *terms.front().arena;
  for (const Var& t : terms) {
    if (t.arena != &ar) throw GraphError("sum: operands in different arenas");
    if (t.rows() * t.cols() != 1) throw GraphError("sum: collection entries must be scalars");
  }
  const std::size_t n = terms.size();
  Var out = ar.make(1, 1, terms, [n, scale, divide](Arena& g, std::uint32_t self) {
    const double go = divide ? g.adjoint(self)[0] / scale : g.adjoint(self)[0];
    for (std::size_t k = 0; k < n; ++k) {
      auto gp = g.adjoint(g.parent(self, k));
      if (!gp.empty()) gp[0] += go;
    }
  });
  double s = 0.0;
  for (const Var& t : terms) s += ar.value(t.id)[0];
  ar.mutable_value(out.id)[0] = divide ? s / scale : s;
  return out;
}

}  // namespace

Var sum(std::span<const Var> terms) { return scaled_sum(terms, 1.0, false); }

Var mean(std::span<const Var> terms) {
  return scaled_sum(terms, static_cast<double>(terms.size()), true);
}

// ---------------------------------------------------------------------------
// Matrix ops

Var matmul(Var a, Var b) {
  if (a.arena != b.arena) throw GraphError("matmul: operands in different arenas");
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  const std::size_t n = b.cols();
  if (b.rows() != k) throw GraphError("matmul: inner dimensions differ");
  Arena& ar = *a.arena;
  Var out = ar.make(m, n, {a, b}, [m, k, n](Arena& g, std::uint32_t self) {
    const std::uint32_t pa = g.parent(self, 0);
    const std::uint32_t pb = g.parent(self, 1);
    auto go = g.adjoint(self);
    auto ga = g.adjoint(pa);
    if (!ga.empty()) kernels::matmul_grad_a(go.data(), g.value(pb).data(), ga.data(), m, k, n);
    auto gb = g.adjoint(pb);
    if (!gb.empty()) kernels::matmul_grad_b(g.value(pa).data(), go.data(), gb.data(), m, k, n);
  });
  kernels::matmul(ar.value(a.id).data(), ar.value(b.id).data(), ar.mutable_value(out.id).data(),
                  m, k, n);
  return out;
}

Var add_row(Var a, Var row) {
  if (a.arena != row.arena) throw GraphError("add_row: operands in different arenas");
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  if (row.rows() != 1 || row.cols() != n) throw GraphError("add_row: row shape mismatch");
  Arena& ar = *a.arena;
  Var out = ar.make(m, n, {a, row}, [m, n](Arena& g, std::uint32_t self) {
    auto go = g.adjoint(self);
    auto ga = g.adjoint(g.parent(self, 0));
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i];
    auto gr = g.adjoint(g.parent(self, 1));
    if (!gr.empty()) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) gr[j] += go[i * n + j];
      }
    }
  });
  auto x = ar.value(a.id);
  auto r = ar.value(row.id);
  auto y = ar.mutable_value(out.id);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = x[i * n + j] + r[j];
  }
  return out;
}

Var rms_norm(Var x, Var gain) {
  if (x.arena != gain.arena) throw GraphError("rms_norm: operands in different arenas");
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  if (gain.rows() != 1 || gain.cols() != n) throw GraphError("rms_norm: gain shape mismatch");
  Arena& ar = *x.arena;
  Var out = ar.make(m, n, {x, gain}, [m, n](Arena& g, std::uint32_t self) {
    const std::uint32_t px = g.parent(self, 0);
    const std::uint32_t pg = g.parent(self, 1);
    auto gx = g.adjoint(px);
    auto gg = g.adjoint(pg);
    kernels::rms_norm_backward(g.value(px).data(), g.value(pg).data(), g.aux(self).data(),
                               g.adjoint(self).data(), gx.empty() ? nullptr : gx.data(),
                               gg.empty() ? nullptr : gg.data(), m, n);
  });
  auto& inv = ar.aux(out.id);
  inv.resize(m);
  kernels::rms_norm_forward(ar.value(x.id).data(), ar.value(gain.id).data(),
                            ar.mutable_value(out.id).data(), inv.data(), m, n);
  return out;
}

Var attention(Var q, Var k, Var v) {
  if (q.arena != k.arena || q.arena != v.arena) {
    throw GraphError("attention: operands in different arenas");
  }
  const std::size_t len = q.rows();
  const std::size_t dim = q.cols();
  if (k.rows() != len || v.rows() != len || k.cols() != dim || v.cols() != dim) {
    throw GraphError("attention: shape mismatch");
  }
  Arena& ar = *q.arena;
  Var out = ar.make(len, dim, {q, k, v}, [len, dim](Arena& g, std::uint32_t self) {
    const std::uint32_t pq = g.parent(self, 0);
    const std::uint32_t pk = g.parent(self, 1);
    const std::uint32_t pv = g.parent(self, 2);
    // Inputs that need no gradient still get a scratch buffer to write into.
    std::vector<double> sq, sk, sv;
    auto target = [&](std::uint32_t p, std::vector<double>& scratch) -> double* {
      auto a = g.adjoint(p);
      if (!a.empty()) return a.data();
      scratch.assign(len * dim, 0.0);
      return scratch.data();
    };
    double* dq = target(pq, sq);
    double* dk = target(pk, sk);
    double* dv = target(pv, sv);
    kernels::attention_backward(g.value(pq).data(), g.value(pk).data(), g.value(pv).data(),
                                g.aux(self).data(), g.adjoint(self).data(), dq, dk, dv, len,
                                dim);
  });
  auto& probs = ar.aux(out.id);
  probs.resize(len * len);
  kernels::attention_forward(ar.value(q.id).data(), ar.value(k.id).data(),
                             ar.value(v.id).data(), ar.mutable_value(out.id).data(),
                             probs.data(), len, dim);
  return out;
}

Var log_softmax(Var a) {
  Arena& ar = *a.arena;
  ar.check(a);
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Var out = ar.make(m, n, {a}, [m, n](Arena& g, std::uint32_t self) {
    kernels::log_softmax_backward(g.value(self).data(), g.adjoint(self).data(),
                                  g.adjoint(g.parent(self, 0)).data(), m, n);
  });
  kernels::log_softmax_rows(ar.value(a.id).data(), ar.mutable_value(out.id).data(), m, n);
  return out;
}

Var gather_rows(Var table, std::span<const std::uint32_t> ids) {
  Arena& ar = *table.arena;
  ar.check(table);
  const std::size_t rows = table.rows();
  const std::size_t n = table.cols();
  std::vector<std::uint32_t> idx(ids.begin(), ids.end());
  for (std::uint32_t id : idx) {
    if (id >= rows) throw GraphError("gather_rows: index out of range");
  }
  Var out = ar.make(idx.size(), n, {table}, [idx, n](Arena& g, std::uint32_t self) {
    auto go = g.adjoint(self);
    auto gt = g.adjoint(g.parent(self, 0));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < n; ++j) gt[idx[i] * n + j] += go[i * n + j];
    }
  });
  auto t = ar.value(table.id);
  auto y = ar.mutable_value(out.id);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(t.begin() + static_cast<std::ptrdiff_t>(idx[i] * n), n,
                y.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return out;
}

Var select_rows(Var a, std::span<const std::size_t> rows) {
  Arena& ar = *a.arena;
  ar.check(a);
  const std::size_t n = a.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  for (std::size_t r : idx) {
    if (r >= a.rows()) throw GraphError("select_rows: index out of range");
  }
  Var out = ar.make(idx.size(), n, {a}, [idx, n](Arena& g, std::uint32_t self) {
    auto go = g.adjoint(self);
    auto ga = g.adjoint(g.parent(self, 0));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < n; ++j) ga[idx[i] * n + j] += go[i * n + j];
    }
  });
  auto x = ar.value(a.id);
  auto y = ar.mutable_value(out.id);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(idx[i] * n), n,
                y.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return out;
}

Var pick(Var a, std::span<const std::size_t> rows, std::span<const std::size_t> cols) {
  Arena& ar = *a.arena;
  ar.check(a);
  if (rows.size() != cols.size()) throw GraphError("pick: index lists differ in length");
  const std::size_t n = a.cols();
  std::vector<std::size_t> flat(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= a.rows() || cols[i] >= n) throw GraphError("pick: index out of range");
    flat[i] = rows[i] * n + cols[i];
  }
  Var out = ar.make(flat.size(), 1, {a}, [flat](Arena& g, std::uint32_t self) {
    auto go = g.adjoint(self);
    auto ga = g.adjoint(g.parent(self, 0));
    for (std::size_t i = 0; i < flat.size(); ++i) ga[flat[i]] += go[i];
  });
  auto x = ar.value(a.id);
  auto y = ar.mutable_value(out.id);
  for (std::size_t i = 0; i < flat.size(); ++i) y[i] = x[flat[i]];
  return out;
}

}  // namespace bgpo
