#include "mvtn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mvtn/error.hpp"

namespace mvtn::ad {

namespace {

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) fail(ErrorCode::ShapeMismatch, "operands live on different tapes");
}

void check_finite(double v, const char* op) {
  if (!std::isfinite(v)) {
    fail(ErrorCode::DomainError, std::string(op) + " produced a non-finite value");
  }
}

}  // namespace

double Var::value() const { return tape->value_of(id); }
double Var::grad() const { return tape->grad_of(id); }

Var Tape::make_node(double value) {
  const auto id = static_cast<std::int32_t>(value_.size());
  value_.push_back(value);
  edge_begin_.push_back(static_cast<std::uint32_t>(edge_parent_.size()));
  return {id, this};
}

Var Tape::make_node(double value, Var p0, double d0) {
  Var v = make_node(value);
  add_edge(p0, d0);
  return v;
}

Var Tape::make_node(double value, Var p0, double d0, Var p1, double d1) {
  Var v = make_node(value);
  add_edge(p0, d0);
  add_edge(p1, d1);
  return v;
}

void Tape::add_edge(Var parent, double partial) {
  edge_parent_.push_back(parent.id);
  edge_partial_.push_back(partial);
}

Var Tape::leaf(double value) {
  Var v = make_node(value);
  leaves_.push_back(v);
  return v;
}

void Tape::backward(Var loss) {
  if (loss.tape != this || loss.id < 0 || loss.id >= static_cast<std::int32_t>(value_.size())) {
    fail(ErrorCode::NotScalar, "loss node does not belong to this tape");
  }
  if (backward_done_) {
    fail(ErrorCode::BackwardAlreadyRun, "backward was already run on this tape; clear() first");
  }
  backward_done_ = true;
  grad_.assign(value_.size(), 0.0);
  grad_[loss.id] = 1.0;
  last_visits_ = 0;
  for (std::int32_t i = loss.id; i >= 0; --i) {
    ++last_visits_;
    const double g = grad_[i];
    if (g == 0.0) continue;
    const std::uint32_t begin = edge_begin_[i];
    const std::uint32_t end = static_cast<std::size_t>(i) + 1 < edge_begin_.size()
                                  ? edge_begin_[i + 1]
                                  : static_cast<std::uint32_t>(edge_parent_.size());
    for (std::uint32_t e = begin; e < end; ++e) {
      grad_[edge_parent_[e]] += edge_partial_[e] * g;
    }
  }
}

void Tape::clear() {
  value_.clear();
  grad_.clear();
  edge_begin_.clear();
  edge_parent_.clear();
  edge_partial_.clear();
  leaves_.clear();
  backward_done_ = false;
  last_visits_ = 0;
}

void Tape::reserve(std::size_t nodes, std::size_t edges) {
  value_.reserve(nodes);
  edge_begin_.reserve(nodes);
  edge_parent_.reserve(edges);
  edge_partial_.reserve(edges);
}

// --- scalar primitives ------------------------------------------------------

Var add(Var a, Var b) {
  check_same_tape(a, b);
  return a.tape->make_node(a.value() + b.value(), a, 1.0, b, 1.0);
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  return a.tape->make_node(a.value() - b.value(), a, 1.0, b, -1.0);
}

Var mul(Var a, Var b) {
  check_same_tape(a, b);
  return a.tape->make_node(a.value() * b.value(), a, b.value(), b, a.value());
}

Var div(Var a, Var b) {
  check_same_tape(a, b);
  const double bv = b.value();
  if (bv == 0.0) fail(ErrorCode::DomainError, "division by zero");
  const double v = a.value() / bv;
  return a.tape->make_node(v, a, 1.0 / bv, b, -v / bv);
}

Var neg(Var a) { return a.tape->make_node(-a.value(), a, -1.0); }

Var add_const(Var a, double c) { return a.tape->make_node(a.value() + c, a, 1.0); }

Var mul_const(Var a, double c) { return a.tape->make_node(a.value() * c, a, c); }

Var exp(Var a) {
  const double v = std::exp(a.value());
  check_finite(v, "exp");
  return a.tape->make_node(v, a, v);
}

Var log(Var a) {
  if (!(a.value() > 0.0)) fail(ErrorCode::DomainError, "log of non-positive value");
  return a.tape->make_node(std::log(a.value()), a, 1.0 / a.value());
}

Var tanh(Var a) {
  const double t = std::tanh(a.value());
  return a.tape->make_node(t, a, 1.0 - t * t);
}

Var sigmoid(Var a) {
  const double x = a.value();
  const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                            : std::exp(x) / (1.0 + std::exp(x));
  return a.tape->make_node(s, a, s * (1.0 - s));
}

Var relu(Var a) {
  const double x = a.value();
  return x > 0.0 ? a.tape->make_node(x, a, 1.0) : a.tape->make_node(0.0);
}

Var sqrt(Var a) {
  const double x = a.value();
  if (x < 0.0) fail(ErrorCode::DomainError, "sqrt of negative value");
  const double r = std::sqrt(x);
  return x == 0.0 ? a.tape->make_node(0.0, a, 0.0)
                  : a.tape->make_node(r, a, 0.5 / r);
}

Var pow_const(Var a, double exponent) {
  const double x = a.value();
  if (x < 0.0 && exponent != std::floor(exponent)) {
    fail(ErrorCode::DomainError, "fractional power of negative value");
  }
  const double v = std::pow(x, exponent);
  check_finite(v, "pow_const");
  const double d = x == 0.0 ? 0.0 : exponent * v / x;
  return a.tape->make_node(v, a, d);
}

Var sin(Var a) { return a.tape->make_node(std::sin(a.value()), a, std::cos(a.value())); }

Var cos(Var a) { return a.tape->make_node(std::cos(a.value()), a, -std::sin(a.value())); }

Var asin(Var a) {
  const double x = a.value();
  if (x < -1.0 || x > 1.0) fail(ErrorCode::DomainError, "asin argument outside [-1, 1]");
  const double denom = std::sqrt(std::max(1.0 - x * x, 1e-300));
  return a.tape->make_node(std::asin(x), a, 1.0 / denom);
}

Var atan2(Var y, Var x) {
  check_same_tape(y, x);
  const double yv = y.value();
  const double xv = x.value();
  const double r2 = xv * xv + yv * yv;
  if (r2 == 0.0) fail(ErrorCode::DomainError, "atan2(0, 0)");
  return y.tape->make_node(std::atan2(yv, xv), y, xv / r2, x, -yv / r2);
}

Var max2(Var a, Var b) {
  check_same_tape(a, b);
  return a.value() >= b.value() ? a.tape->make_node(a.value(), a, 1.0)
                                : a.tape->make_node(b.value(), b, 1.0);
}

Var min2(Var a, Var b) {
  check_same_tape(a, b);
  return a.value() <= b.value() ? a.tape->make_node(a.value(), a, 1.0)
                                : a.tape->make_node(b.value(), b, 1.0);
}

Var abs(Var a) {
  return a.value() >= 0.0 ? a.tape->make_node(a.value(), a, 1.0)
                          : a.tape->make_node(-a.value(), a, -1.0);
}

Var sum(std::span<const Var> xs) {
  if (xs.empty()) fail(ErrorCode::ShapeMismatch, "sum over empty span");
  double acc = 0;
  for (const Var& x : xs) acc += x.value();
  Var out = xs[0].tape->make_node(acc);
  for (const Var& x : xs) xs[0].tape->add_edge(x, 1.0);
  return out;
}

Var dot(std::span<const Var> xs, std::span<const Var> ws, Var bias) {
  if (xs.size() != ws.size()) fail(ErrorCode::ShapeMismatch, "dot operand length mismatch");
  if (xs.empty()) fail(ErrorCode::ShapeMismatch, "dot over empty span");
  Tape* tape = xs[0].tape;
  double acc = bias.valid() ? bias.value() : 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) acc += xs[i].value() * ws[i].value();
  Var out = tape->make_node(acc);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    tape->add_edge(xs[i], ws[i].value());
    tape->add_edge(ws[i], xs[i].value());
  }
  if (bias.valid()) tape->add_edge(bias, 1.0);
  return out;
}

// --- tensors ----------------------------------------------------------------

namespace {

std::int64_t shape_size(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

}  // namespace

TensorView make_leaves(Tape& tape, std::span<const double> values, std::vector<int> shape) {
  if (shape_size(shape) != static_cast<std::int64_t>(values.size())) {
    fail(ErrorCode::ShapeMismatch, "shape does not match element count");
  }
  TensorView t;
  t.shape = std::move(shape);
  t.elems.reserve(values.size());
  for (double v : values) t.elems.push_back(tape.leaf(v));
  return t;
}

TensorView make_constants(Tape& tape, std::span<const double> values, std::vector<int> shape) {
  if (shape_size(shape) != static_cast<std::int64_t>(values.size())) {
    fail(ErrorCode::ShapeMismatch, "shape does not match element count");
  }
  TensorView t;
  t.shape = std::move(shape);
  t.elems.reserve(values.size());
  for (double v : values) t.elems.push_back(tape.constant(v));
  return t;
}

TensorView matmul(const TensorView& a, const TensorView& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0]) {
    fail(ErrorCode::ShapeMismatch, "matmul requires [m,k] x [k,n]");
  }
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tape* tape = a.elems[0].tape;
  TensorView out;
  out.shape = {m, n};
  out.elems.reserve(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0;
      for (int p = 0; p < k; ++p) acc += a.elems[i * k + p].value() * b.elems[p * n + j].value();
      Var node = tape->make_node(acc);
      for (int p = 0; p < k; ++p) {
        tape->add_edge(a.elems[i * k + p], b.elems[p * n + j].value());
        tape->add_edge(b.elems[p * n + j], a.elems[i * k + p].value());
      }
      out.elems.push_back(node);
    }
  }
  return out;
}

TensorView conv2d_valid(const TensorView& input, const TensorView& kernel,
                        const TensorView& bias, int stride) {
  if (input.shape.size() != 3 || kernel.shape.size() != 4 ||
      kernel.shape[2] != input.shape[2]) {
    fail(ErrorCode::ShapeMismatch, "conv2d expects input [h,w,c], kernel [kh,kw,c,oc]");
  }
  const int h = input.shape[0], w = input.shape[1], c = input.shape[2];
  const int kh = kernel.shape[0], kw = kernel.shape[1], oc = kernel.shape[3];
  if (bias.size() != oc) fail(ErrorCode::ShapeMismatch, "conv2d bias length mismatch");
  if (h < kh || w < kw) fail(ErrorCode::ShapeMismatch, "conv2d input smaller than kernel");
  const int oh = (h - kh) / stride + 1;
  const int ow = (w - kw) / stride + 1;
  Tape* tape = input.elems.empty() ? kernel.elems[0].tape : input.elems[0].tape;

  TensorView out;
  out.shape = {oh, ow, oc};
  out.elems.reserve(static_cast<std::size_t>(oh) * ow * oc);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (int f = 0; f < oc; ++f) {
        double acc = bias.elems[f].value();
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            for (int ch = 0; ch < c; ++ch) {
              const Var& x = input.elems[((oy * stride + ky) * w + (ox * stride + kx)) * c + ch];
              const Var& k = kernel.elems[((ky * kw + kx) * c + ch) * oc + f];
              acc += x.value() * k.value();
            }
          }
        }
        Var node = tape->make_node(acc);
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            for (int ch = 0; ch < c; ++ch) {
              const Var& x = input.elems[((oy * stride + ky) * w + (ox * stride + kx)) * c + ch];
              const Var& k = kernel.elems[((ky * kw + kx) * c + ch) * oc + f];
              tape->add_edge(x, k.value());
              tape->add_edge(k, x.value());
            }
          }
        }
        tape->add_edge(bias.elems[f], 1.0);
        out.elems.push_back(node);
      }
    }
  }
  return out;
}

TensorView max_pool(const TensorView& input, int window) {
  if (input.shape.size() != 3) fail(ErrorCode::ShapeMismatch, "max_pool expects [h,w,c]");
  const int h = input.shape[0], w = input.shape[1], c = input.shape[2];
  const int oh = h / window, ow = w / window;
  Tape* tape = input.elems[0].tape;
  TensorView out;
  out.shape = {oh, ow, c};
  out.elems.reserve(static_cast<std::size_t>(oh) * ow * c);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (int ch = 0; ch < c; ++ch) {
        int best = -1;
        double best_value = 0;
        for (int ky = 0; ky < window; ++ky) {
          for (int kx = 0; kx < window; ++kx) {
            const int idx = ((oy * window + ky) * w + (ox * window + kx)) * c + ch;
            const double v = input.elems[idx].value();
            if (best < 0 || v > best_value) {
              best = idx;
              best_value = v;
            }
          }
        }
        out.elems.push_back(tape->make_node(best_value, input.elems[best], 1.0));
      }
    }
  }
  return out;
}

TensorView avg_pool(const TensorView& input, int window) {
  if (input.shape.size() != 3) fail(ErrorCode::ShapeMismatch, "avg_pool expects [h,w,c]");
  const int h = input.shape[0], w = input.shape[1], c = input.shape[2];
  const int oh = h / window, ow = w / window;
  const double inv = 1.0 / (window * window);
  Tape* tape = input.elems[0].tape;
  TensorView out;
  out.shape = {oh, ow, c};
  out.elems.reserve(static_cast<std::size_t>(oh) * ow * c);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (int ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (int ky = 0; ky < window; ++ky)
          for (int kx = 0; kx < window; ++kx)
            acc += input.elems[((oy * window + ky) * w + (ox * window + kx)) * c + ch].value();
        Var node = tape->make_node(acc * inv);
        for (int ky = 0; ky < window; ++ky)
          for (int kx = 0; kx < window; ++kx)
            tape->add_edge(input.elems[((oy * window + ky) * w + (ox * window + kx)) * c + ch], inv);
        out.elems.push_back(node);
      }
    }
  }
  return out;
}

TensorView relu(const TensorView& input) {
  TensorView out;
  out.shape = input.shape;
  out.elems.reserve(input.elems.size());
  for (const Var& x : input.elems) out.elems.push_back(relu(x));
  return out;
}

TensorView global_avg_pool(const TensorView& input) {
  if (input.shape.size() != 3) fail(ErrorCode::ShapeMismatch, "global_avg_pool expects [h,w,c]");
  const int h = input.shape[0], w = input.shape[1], c = input.shape[2];
  const double inv = 1.0 / (static_cast<double>(h) * w);
  Tape* tape = input.elems[0].tape;
  TensorView out;
  out.shape = {c};
  out.elems.reserve(c);
  for (int ch = 0; ch < c; ++ch) {
    double acc = 0;
    for (int i = 0; i < h * w; ++i) acc += input.elems[i * c + ch].value();
    Var node = tape->make_node(acc * inv);
    for (int i = 0; i < h * w; ++i) tape->add_edge(input.elems[i * c + ch], inv);
    out.elems.push_back(node);
  }
  return out;
}

TensorView elementwise_max(std::span<const TensorView> xs) {
  if (xs.empty()) fail(ErrorCode::ShapeMismatch, "elementwise_max over no tensors");
  for (const TensorView& t : xs) {
    if (t.shape != xs[0].shape) fail(ErrorCode::ShapeMismatch, "elementwise_max shape mismatch");
  }
  Tape* tape = xs[0].elems[0].tape;
  TensorView out;
  out.shape = xs[0].shape;
  out.elems.reserve(xs[0].elems.size());
  for (std::size_t i = 0; i < xs[0].elems.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < xs.size(); ++j) {
      if (xs[j].elems[i].value() > xs[best].elems[i].value()) best = j;
    }
    out.elems.push_back(tape->make_node(xs[best].elems[i].value(), xs[best].elems[i], 1.0));
  }
  return out;
}

Var softmax_cross_entropy(const TensorView& logits, int label) {
  const int k = static_cast<int>(logits.elems.size());
  if (label < 0 || label >= k) {
    fail(ErrorCode::LabelOutOfRange, "label " + std::to_string(label) + " for " +
                                         std::to_string(k) + " logits");
  }
  Tape* tape = logits.elems[0].tape;
  double max_logit = logits.elems[0].value();
  for (const Var& l : logits.elems) max_logit = std::max(max_logit, l.value());
  double denom = 0;
  for (const Var& l : logits.elems) denom += std::exp(l.value() - max_logit);
  const double log_denom = std::log(denom) + max_logit;
  const double loss = log_denom - logits.elems[label].value();
  Var node = tape->make_node(loss);
  for (int j = 0; j < k; ++j) {
    const double p = std::exp(logits.elems[j].value() - log_denom);
    tape->add_edge(logits.elems[j], p - (j == label ? 1.0 : 0.0));
  }
  return node;
}

void backward(Tape& tape, const TensorView& loss) {
  if (loss.size() != 1) fail(ErrorCode::NotScalar, "backward requires a scalar loss");
  tape.backward(loss.elems[0]);
}

// --- verification -----------------------------------------------------------

FiniteDiffReport finite_diff_check(const ScalarFn& fn, std::span<const double> params,
                                   double eps) {
  FiniteDiffReport report;
  std::vector<double> p(params.begin(), params.end());

  const auto eval = [&fn](std::span<const double> values) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(values.size());
    for (double v : values) leaves.push_back(tape.leaf(v));
    return fn(tape, leaves).value();
  };

  {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(p.size());
    for (double v : p) leaves.push_back(tape.leaf(v));
    Var out = fn(tape, leaves);
    tape.backward(out);
    report.analytic.reserve(p.size());
    for (const Var& leaf : leaves) report.analytic.push_back(leaf.grad());
  }

  report.numeric.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + eps;
    const double hi = eval(p);
    p[i] = saved - eps;
    const double lo = eval(p);
    p[i] = saved;
    report.numeric[i] = (hi - lo) / (2.0 * eps);
    const double denom = std::max({std::abs(report.analytic[i]), std::abs(report.numeric[i]), 1e-8});
    report.max_rel_error =
        std::max(report.max_rel_error, std::abs(report.analytic[i] - report.numeric[i]) / denom);
  }
  return report;
}

}  // namespace mvtn::ad
