#include "cvnn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cvnn {

const ComplexTensor& Var::value() const {
  if (!tape_) throw AutodiffError("value() on an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

const ComplexTensor& GradStore::operator[](const Var& v) const {
  auto it = grads_.find(v.id());
  if (it == grads_.end()) {
    throw AutodiffError("no gradient stored for node " + std::to_string(v.id()));
  }
  return it->second;
}

void Tape::check_owned(const Var& v, std::string_view what) const {
  if (v.tape_ != this) {
    throw AutodiffError(std::string(what) + ": variable belongs to a different tape");
  }
}

Var Tape::leaf(ComplexTensor value, bool requires_grad) {
  if (consumed_) throw AutodiffError("tape already consumed by backward()");
  Node n;
  n.kind = "leaf";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string_view kind, const std::vector<Var>& inputs, ComplexTensor result,
                 BackwardFn backward) {
  if (consumed_) throw AutodiffError("tape already consumed by backward()");
  Node n;
  n.kind = std::string(kind);
  n.value = std::move(result);
  n.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    check_owned(in, kind);
    n.inputs.push_back(in.id_);
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

GradStore Tape::backward(const Var& loss) {
  check_owned(loss, "backward");
  if (consumed_) throw AutodiffError("backward() already ran on this tape");
  const auto& lv = nodes_[loss.id_].value;
  if (lv.size() != 1) {
    throw AutodiffError("loss must be a scalar, got shape " + shape_str(lv.shape()));
  }
  if (std::abs(lv.im()[0]) > 1e-12) {
    throw AutodiffError("loss must be real, imaginary part is " + std::to_string(lv.im()[0]));
  }

  std::vector<ComplexTensor> grads(nodes_.size());
  grads[loss.id_] = ComplexTensor::filled(lv.shape(), 1.0, 0.0);

  std::vector<ComplexTensor*> refs;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.is_leaf || grads[i].empty() || !node.backward) continue;
    refs.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const auto j = node.inputs[k];
      if (!nodes_[j].requires_grad) continue;
      if (grads[j].empty()) grads[j] = ComplexTensor::zeros(nodes_[j].value.shape());
      refs[k] = &grads[j];
    }
    node.backward(grads[i], refs);
    if (!node.is_leaf) grads[i] = ComplexTensor();
  }

  GradStore store;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    if (!node.is_leaf || !node.requires_grad) continue;
    store.grads_.emplace(i, grads[i].empty() ? ComplexTensor::zeros(node.value.shape())
                                             : std::move(grads[i]));
  }
  for (auto& node : nodes_) node.backward = nullptr;
  consumed_ = true;
  return store;
}

namespace {

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void accumulate(ComplexTensor& dst, const ComplexTensor& src, double s = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst.re()[i] += s * src.re()[i];
    dst.im()[i] += s * src.im()[i];
  }
}

/// dst += g * conj(c)
void accumulate_mul_conj(ComplexTensor& dst, const ComplexTensor& g, const ComplexTensor& c) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double gr = g.re()[i], gi = g.im()[i], cr = c.re()[i], ci = c.im()[i];
    dst.re()[i] += gr * cr + gi * ci;
    dst.im()[i] += gi * cr - gr * ci;
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  return a.tape()->record("add", {a, b}, cadd(a.value(), b.value()),
                          [](const ComplexTensor& g, GradRefs in) {
                            if (in[0]) accumulate(*in[0], g);
                            if (in[1]) accumulate(*in[1], g);
                          });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  return a.tape()->record("sub", {a, b}, csub(a.value(), b.value()),
                          [](const ComplexTensor& g, GradRefs in) {
                            if (in[0]) accumulate(*in[0], g);
                            if (in[1]) accumulate(*in[1], g, -1.0);
                          });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  const ComplexTensor* av = &a.value();
  const ComplexTensor* bv = &b.value();
  return a.tape()->record("mul", {a, b}, cmul(*av, *bv),
                          [av, bv](const ComplexTensor& g, GradRefs in) {
                            if (in[0]) accumulate_mul_conj(*in[0], g, *bv);
                            if (in[1]) accumulate_mul_conj(*in[1], g, *av);
                          });
}

Var scale(const Var& a, double s) {
  return a.tape()->record("scale", {a}, cvnn::scale(a.value(), s),
                          [s](const ComplexTensor& g, GradRefs in) {
                            if (in[0]) accumulate(*in[0], g, s);
                          });
}

Var mul_const(const Var& a, const ComplexTensor& c) {
  if (a.shape() != c.shape()) {
    throw ShapeError("mul_const: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(c.shape()));
  }
  return a.tape()->record("mul_const", {a}, cmul(a.value(), c),
                          [c](const ComplexTensor& g, GradRefs in) {
                            if (in[0]) accumulate_mul_conj(*in[0], g, c);
                          });
}

Var real_part(const Var& a) {
  ComplexTensor out(a.shape());
  std::copy(a.value().re().begin(), a.value().re().end(), out.re().begin());
  return a.tape()->record("real_part", {a}, std::move(out),
                          [](const ComplexTensor& g, GradRefs in) {
                            if (!in[0]) return;
                            for (std::size_t i = 0; i < g.size(); ++i) in[0]->re()[i] += g.re()[i];
                          });
}

Var imag_part(const Var& a) {
  ComplexTensor out(a.shape());
  std::copy(a.value().im().begin(), a.value().im().end(), out.re().begin());
  return a.tape()->record("imag_part", {a}, std::move(out),
                          [](const ComplexTensor& g, GradRefs in) {
                            if (!in[0]) return;
                            for (std::size_t i = 0; i < g.size(); ++i) in[0]->im()[i] += g.re()[i];
                          });
}

Var abs2(const Var& a) {
  const ComplexTensor* av = &a.value();
  ComplexTensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.re()[i] = av->re()[i] * av->re()[i] + av->im()[i] * av->im()[i];
  }
  return a.tape()->record("abs2", {a}, std::move(out), [av](const ComplexTensor& g, GradRefs in) {
    if (!in[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) {
      in[0]->re()[i] += 2.0 * av->re()[i] * g.re()[i];
      in[0]->im()[i] += 2.0 * av->im()[i] * g.re()[i];
    }
  });
}

Var sum(const Var& a) {
  double sr = 0.0, si = 0.0;
  for (double v : a.value().re()) sr += v;
  for (double v : a.value().im()) si += v;
  return a.tape()->record("sum", {a}, ComplexTensor::scalar(sr, si),
                          [](const ComplexTensor& g, GradRefs in) {
                            if (!in[0]) return;
                            for (auto& v : in[0]->re()) v += g.re()[0];
                            for (auto& v : in[0]->im()) v += g.im()[0];
                          });
}

Var sum_weighted(const Var& a, const ComplexTensor& c) {
  if (a.shape() != c.shape()) {
    throw ShapeError("sum_weighted: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(c.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    s += a.value().re()[i] * c.re()[i] + a.value().im()[i] * c.im()[i];
  }
  return a.tape()->record("sum_weighted", {a}, ComplexTensor::scalar(s),
                          [c](const ComplexTensor& g, GradRefs in) {
                            if (in[0]) accumulate(*in[0], c, g.re()[0]);
                          });
}

Var reshape(const Var& a, Shape shape) {
  return a.tape()->record("reshape", {a}, a.value().reshaped(std::move(shape)),
                          [](const ComplexTensor& g, GradRefs in) {
                            if (!in[0]) return;
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              in[0]->re()[i] += g.re()[i];
                              in[0]->im()[i] += g.im()[i];
                            }
                          });
}

GradCheckReport grad_check_report(const ScalarFn& f, const ComplexTensor& x0, double eps) {
  if (!(eps >= 1e-8 && eps <= 1e-3)) {
    throw std::invalid_argument("grad_check: eps must lie in [1e-8, 1e-3]");
  }
  ComplexTensor analytic;
  double f0 = 0.0;
  {
    Tape tape;
    Var x = tape.leaf(x0, true);
    Var loss = f(tape, x);
    f0 = loss.value().re()[0];
    analytic = tape.backward(loss)[x];
  }

  auto eval = [&](const ComplexTensor& x, std::size_t idx, bool imag) {
    Tape tape;
    Var v = tape.leaf(x, false);
    const double y = f(tape, v).value().re()[0];
    if (!std::isfinite(y)) {
      std::ostringstream os;
      os << "grad_check: f is not finite at probe of coordinate " << idx
         << (imag ? " (imag)" : " (real)");
      throw std::domain_error(os.str());
    }
    return y;
  };

  const double floor = 1e-6 * std::max(1.0, std::abs(f0));
  GradCheckReport rep;
  ComplexTensor probe = x0;
  for (int plane = 0; plane < 2; ++plane) {
    const bool imag = plane == 1;
    for (std::size_t i = 0; i < x0.size(); ++i) {
      double& coord = imag ? probe.im()[i] : probe.re()[i];
      const double orig = coord;
      coord = orig + eps;
      const double fp = eval(probe, i, imag);
      coord = orig - eps;
      const double fm = eval(probe, i, imag);
      coord = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = imag ? analytic.im()[i] : analytic.re()[i];
      const double err =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (err > rep.max_rel_error || (i == 0 && plane == 0)) {
        rep = {err, i, imag, a, numeric};
      }
    }
  }
  return rep;
}

double grad_check(const ScalarFn& f, const ComplexTensor& x0, double eps) {
  return grad_check_report(f, x0, eps).max_rel_error;
}

}  // namespace cvnn
