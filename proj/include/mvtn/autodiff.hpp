#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace mvtn::ad {

class Tape;

// Handle to a scalar node on a tape. Cheap to copy; valid for the lifetime of
// the tape that created it (or until the tape is cleared).
struct Var {
  std::int32_t id = -1;
  Tape* tape = nullptr;

  double value() const;
  double grad() const;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over scalars. Nodes are appended in evaluation order, so
// creation order is a topological order and backward is a single reverse
// sweep. One tape per forward pass; rebuild instead of reusing graphs.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(double value);
  Var constant(double value) { return make_node(value); }

  std::size_t node_count() const { return value_.size(); }
  std::size_t edge_count() const { return edge_parent_.size(); }
  const std::vector<Var>& leaves() const { return leaves_; }

  // Accumulates d(loss)/d(node) into every node's gradient slot. May be
  // called once per tape; a second call without clear() is an error.
  void backward(Var loss);
  bool backward_done() const { return backward_done_; }
  std::size_t last_backward_visits() const { return last_visits_; }

  void clear();
  void reserve(std::size_t nodes, std::size_t edges);

  // Node construction. Partials are the local derivatives d(node)/d(parent).
  Var make_node(double value);
  Var make_node(double value, Var p0, double d0);
  Var make_node(double value, Var p0, double d0, Var p1, double d1);
  void add_edge(Var parent, double partial);  // append to the newest node

  double value_of(std::int32_t id) const { return value_[id]; }
  double grad_of(std::int32_t id) const { return grad_[id]; }

 private:
  friend struct Var;

  std::vector<double> value_;
  std::vector<double> grad_;
  std::vector<std::uint32_t> edge_begin_;  // per node; edges of node i are [edge_begin_[i], edge_begin_[i+1])
  std::vector<std::int32_t> edge_parent_;
  std::vector<double> edge_partial_;
  std::vector<Var> leaves_;
  bool backward_done_ = false;
  std::size_t last_visits_ = 0;
};

// --- scalar primitives ------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var add_const(Var a, double c);
Var mul_const(Var a, double c);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);    // subgradient 0 at the kink
Var sqrt(Var a);    // subgradient 0 at x = 0
Var pow_const(Var a, double exponent);
Var sin(Var a);
Var cos(Var a);
Var asin(Var a);
Var atan2(Var y, Var x);
Var max2(Var a, Var b);  // ties resolve to the first argument
Var min2(Var a, Var b);
Var abs(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator+(Var a, double c) { return add_const(a, c); }
inline Var operator+(double c, Var a) { return add_const(a, c); }
inline Var operator-(Var a, double c) { return add_const(a, -c); }
inline Var operator-(double c, Var a) { return add_const(neg(a), c); }
inline Var operator*(Var a, double c) { return mul_const(a, c); }
inline Var operator*(double c, Var a) { return mul_const(a, c); }
inline Var operator/(Var a, double c) { return mul_const(a, 1.0 / c); }

// Fused sum / inner product; one node with one edge per operand.
Var sum(std::span<const Var> xs);
// dot(x, w) + optional bias; partials are exact (w_i for x_i, x_i for w_i).
Var dot(std::span<const Var> xs, std::span<const Var> ws, Var bias = {});

// --- tensors ----------------------------------------------------------------

struct TensorView {
  std::vector<int> shape;
  std::vector<Var> elems;  // row-major

  std::int64_t size() const { return static_cast<std::int64_t>(elems.size()); }
  Var& at(std::size_t i) { return elems[i]; }
  const Var& at(std::size_t i) const { return elems[i]; }
};

TensorView make_leaves(Tape& tape, std::span<const double> values,
                       std::vector<int> shape);
TensorView make_constants(Tape& tape, std::span<const double> values,
                          std::vector<int> shape);

// A [m,k] x B [k,n] -> [m,n]
TensorView matmul(const TensorView& a, const TensorView& b);
// input [h,w,c], kernel [kh,kw,c,oc] with bias [oc]; valid padding.
TensorView conv2d_valid(const TensorView& input, const TensorView& kernel,
                        const TensorView& bias, int stride = 1);
TensorView max_pool(const TensorView& input, int window);  // [h,w,c] -> floor div
TensorView avg_pool(const TensorView& input, int window);
TensorView relu(const TensorView& input);
TensorView global_avg_pool(const TensorView& input);  // [h,w,c] -> [c]
// Elementwise max across equally shaped tensors (subgradient to first argmax).
TensorView elementwise_max(std::span<const TensorView> xs);
// Numerically stable fused softmax cross-entropy; gradient p_j - 1[j==label].
Var softmax_cross_entropy(const TensorView& logits, int label);

void backward(Tape& tape, const TensorView& loss);  // must hold exactly 1 node

// --- verification -----------------------------------------------------------

// Builds the function twice per coordinate for central differences and once
// for the analytic gradient; returns the max relative error with denominator
// max(|analytic|, |numeric|, 1e-8).
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct FiniteDiffReport {
  double max_rel_error = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

FiniteDiffReport finite_diff_check(const ScalarFn& fn,
                                   std::span<const double> params, double eps);

}  // namespace mvtn::ad
