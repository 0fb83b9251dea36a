#pragma once

// Reverse-mode differentiation over ComplexTensor graphs.
//
// Every complex value z = x + iy is treated as the pair of real planes (x, y)
// and differentiated with ordinary real reverse mode. For a real scalar loss
// L the gradient handed to callers and carried between nodes is
//
//     g = dL/dx + i * dL/dy        (= 2 * dL/d(conj z) in Wirtinger notation)
//
// so non-holomorphic functions (|z|, ReLU on the planes, phase-dependent
// gates) need no special treatment. A holomorphic map out = c * z propagates
// g_in = conj(c) * g_out. Optimizers consume g directly; the factor of 2
// relative to the conjugate-Wirtinger derivative is folded into the step size.

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cvnn/tensor.hpp"

namespace cvnn {

class Tape;

class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const ComplexTensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// grad_in[k] is null when input k needs no gradient; otherwise it points at
/// a zero-initialised (or partially accumulated) tensor to add into.
using GradRefs = std::span<ComplexTensor* const>;
using BackwardFn = std::function<void(const ComplexTensor& grad_out, GradRefs grad_in)>;

/// Gradients of every requires_grad leaf after Tape::backward.
class GradStore {
 public:
  bool contains(const Var& v) const { return grads_.contains(v.id()); }
  const ComplexTensor& operator[](const Var& v) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::map<std::size_t, ComplexTensor> grads_;
};

/// Append-only record of a forward computation. Node ids are assigned in
/// recording order, so inputs always precede outputs. A tape supports one
/// backward pass; afterwards its closures are released and further recording
/// is rejected.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(ComplexTensor value, bool requires_grad = true);
  Var constant(ComplexTensor value) { return leaf(std::move(value), false); }

  /// Appends an op node. `backward` may be empty for ops that never need one.
  Var record(std::string_view kind, const std::vector<Var>& inputs, ComplexTensor result,
             BackwardFn backward);

  /// The loss must be a single element with |imag| <= 1e-12.
  GradStore backward(const Var& loss);

  const ComplexTensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::string& kind(std::size_t id) const { return nodes_.at(id).kind; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    std::string kind;
    ComplexTensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
  };

  void check_owned(const Var& v, std::string_view what) const;

  std::deque<Node> nodes_;  // deque keeps value references stable while recording
  bool consumed_ = false;
};

// Elementary differentiable ops. All binary ops require equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a * c for a fixed complex tensor c.
Var mul_const(const Var& a, const ComplexTensor& c);
/// Re(a) + 0i.
Var real_part(const Var& a);
/// Im(a) + 0i.
Var imag_part(const Var& a);
/// |a|^2 + 0i.
Var abs2(const Var& a);
/// Sum over all elements; shape (1).
Var sum(const Var& a);
/// sum(Re(a) * Re(c) + Im(a) * Im(c)); a real scalar projection of a.
Var sum_weighted(const Var& a, const ComplexTensor& c);
Var reshape(const Var& a, Shape shape);

/// Scalar-valued function of one variable, used by grad_check.
using ScalarFn = std::function<Var(Tape&, const Var&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  bool worst_in_imag = false;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares the tape gradient of f at x0 with central differences of step
/// eps on every real and imaginary coordinate. The relative error of one
/// coordinate is |a - n| / max(|a|, |n|, 1e-6 * max(1, |f(x0)|)); the floor
/// keeps coordinates whose true derivative is ~0 from dividing by round-off.
GradCheckReport grad_check_report(const ScalarFn& f, const ComplexTensor& x0, double eps);
double grad_check(const ScalarFn& f, const ComplexTensor& x0, double eps);

}  // namespace cvnn
