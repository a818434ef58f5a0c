#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bgpo {

/// Arithmetic domain violation (log of a non-positive value, division by zero).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Misuse of the graph: stale handles, shape mismatches, cycles.
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Named dense parameter arrays in one flat buffer, with a gradient buffer of
/// identical shape.
class ParamStore {
 public:
  struct Array {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t offset = 0;
    std::size_t size() const { return rows * cols; }
  };

  /// Appends a zero-filled array and returns its index.
  std::size_t add(std::string name, std::size_t rows, std::size_t cols);

  std::size_t num_arrays() const { return arrays_.size(); }
  const Array& array(std::size_t i) const { return arrays_.at(i); }
  std::optional<std::size_t> find(std::string_view name) const;

  std::span<double> values(std::size_t i);
  std::span<const double> values(std::size_t i) const;
  std::span<double> grads(std::size_t i);
  std::span<const double> grads(std::size_t i) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> grads() { return grads_; }
  std::span<const double> grads() const { return grads_; }

  /// Total element count across all arrays.
  std::size_t size() const { return values_.size(); }

  void zero_grads();

  bool same_layout(const ParamStore& other) const;

 private:
  std::vector<Array> arrays_;
  std::vector<double> values_;
  std::vector<double> grads_;
};

class Arena;

/// Handle to a node in an Arena. Nodes hold a dense row-major block of
/// values; scalars are 1x1. A handle is invalidated by Arena::release()
/// unless it refers to a leaf.
struct Var {
  Arena* arena = nullptr;
  std::uint32_t id = 0;
  std::uint64_t epoch = 0;

  double value() const;
  std::span<const double> values() const;
  std::size_t rows() const;
  std::size_t cols() const;
  /// Accumulated gradient; only meaningful for leaves.
  std::span<const double> grad() const;
};

/// Reverse-mode graph arena. Leaves (parameters and free variables) occupy
/// the first ids and survive release(); everything after them is
/// intermediate and is discarded by release(). Nodes only ever reference
/// lower ids, so construction order is a topological order.
class Arena {
 public:
  using Backprop = std::function<void(Arena&, std::uint32_t self)>;

  Arena() = default;
  Arena(const Arena&) = delete;
  Arena& operator=(const Arena&) = delete;

  /// Free leaf with its own gradient slot. Only allowed while no
  /// intermediate nodes are live.
  Var leaf(double value);
  Var leaf(std::size_t rows, std::size_t cols, std::span<const double> values);

  /// One leaf per parameter array. Gradients accumulate straight into
  /// `grads`, which must match the store's flat size. The store must outlive
  /// the arena and must not grow while bound.
  std::vector<Var> bind(const ParamStore& store, std::span<double> grads);
  std::vector<Var> bind(ParamStore& store) { return bind(store, store.grads()); }

  /// Non-differentiable input.
  Var constant(double value);
  Var constant(std::size_t rows, std::size_t cols, std::span<const double> values);

  /// Adds d(root)/d(leaf) to every leaf gradient slot. Root must be 1x1.
  void backward(Var root);

  /// Drops every intermediate node. Leaf gradients are preserved.
  void release();

  std::size_t live() const { return nodes_.size(); }
  std::size_t peak_live() const { return peak_; }
  std::size_t leaf_count() const { return leaf_count_; }

  // Node construction and access, for op implementations.
  Var make(std::size_t rows, std::size_t cols, std::initializer_list<Var> parents,
           Backprop backprop);
  Var make(std::size_t rows, std::size_t cols, std::span<const Var> parents, Backprop backprop);
  std::span<const double> value(std::uint32_t id) const;
  std::span<double> mutable_value(std::uint32_t id);
  /// Adjoint buffer of a node during backward; empty when the node does not
  /// depend on any leaf.
  std::span<double> adjoint(std::uint32_t id);
  std::vector<double>& aux(std::uint32_t id) { return nodes_[id].aux; }
  std::size_t rows(std::uint32_t id) const { return nodes_[id].rows; }
  std::size_t cols(std::uint32_t id) const { return nodes_[id].cols; }
  std::uint32_t parent(std::uint32_t id, std::size_t k) const { return nodes_[id].parents[k]; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

  /// Throws GraphError when `v` is not a live node of this arena.
  void check(const Var& v) const;

 private:
  struct Node {
    std::uint32_t rows = 1;
    std::uint32_t cols = 1;
    std::vector<double> value;
    std::vector<double> adjoint;
    std::vector<double> aux;
    const double* ext_value = nullptr;
    double* ext_grad = nullptr;
    std::vector<std::uint32_t> parents;
    bool requires_grad = false;
    Backprop backprop;
  };

  Var push(Node node);
  Var push_leaf(Node node);

  std::vector<Node> nodes_;
  std::size_t leaf_count_ = 0;
  std::size_t peak_ = 0;
  std::uint64_t epoch_ = 0;
};

// Elementwise arithmetic. Operands must share a shape; plain doubles act
// on every element.
Var operator+(Var a, Var b);
Var operator+(Var a, double b);
Var operator+(double a, Var b);
Var operator-(Var a, Var b);
Var operator-(Var a, double b);
Var operator-(double a, Var b);
Var operator-(Var a);
Var operator*(Var a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);
Var operator/(Var a, Var b);
Var operator/(Var a, double b);
Var operator/(double a, Var b);
Var exp(Var a);
Var log(Var a);
Var relu(Var a);

/// Sum of all elements, as a 1x1 node.
Var sum(Var a);
/// Sum of a collection of 1x1 nodes, added left to right.
Var sum(std::span<const Var> terms);
Var mean(std::span<const Var> terms);

// Matrix ops used by the mask predictor.
Var matmul(Var a, Var b);
/// a[m x n] + row[1 x n] broadcast over rows.
Var add_row(Var a, Var row);
Var rms_norm(Var x, Var gain);
/// Bidirectional single-head attention; q, k, v are len x dim.
Var attention(Var q, Var k, Var v);
Var log_softmax(Var a);
/// Rows of `table` selected by `ids` (embedding lookup).
Var gather_rows(Var table, std::span<const std::uint32_t> ids);
Var select_rows(Var a, std::span<const std::size_t> rows);
/// Column vector of a[rows[i], cols[i]].
Var pick(Var a, std::span<const std::size_t> rows, std::span<const std::size_t> cols);

}  // namespace bgpo
