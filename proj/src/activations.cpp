#include "cvnn/activations.hpp"

#include <cmath>
#include <stdexcept>

namespace cvnn {

namespace {

// Value and real Jacobian of one pointwise map (x, y) -> (u, v).
struct Point {
  double u, v;
  double ux, uy, vx, vy;
};

double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

Point crelu_at(double x, double y) {
  const bool ax = x > 0, ay = y > 0;
  return {ax ? x : 0.0, ay ? y : 0.0, ax ? 1.0 : 0.0, 0.0, 0.0, ay ? 1.0 : 0.0};
}

Point zrelu_at(double x, double y) {
  if (x >= 0 && y >= 0) return {x, y, 1.0, 0.0, 0.0, 1.0};
  return {0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
}

Point split_tanh_at(double x, double y) {
  const double tx = std::tanh(x), ty = std::tanh(y);
  return {tx, ty, 1.0 - tx * tx, 0.0, 0.0, 1.0 - ty * ty};
}

Point cardioid_at(double x, double y) {
  const double r = std::hypot(x, y);
  if (r == 0.0) return {0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  const double c = x / r;  // cos(arg z)
  const double r3 = r * r * r;
  // u = x/2 + x^2/(2r), v = y/2 + xy/(2r)
  return {0.5 * x * (1.0 + c),
          0.5 * y * (1.0 + c),
          0.5 + c - 0.5 * x * x * x / r3,
          -0.5 * x * x * y / r3,
          0.5 * y / r - 0.5 * x * x * y / r3,
          0.5 + 0.5 * c - 0.5 * x * y * y / r3};
}

struct SmoothZrelu {
  double alpha;
  Point operator()(double x, double y) const {
    const double sa = sigmoid(alpha * x), sb = sigmoid(alpha * y);
    const double s = sa * sb;
    const double sx = alpha * sa * (1.0 - sa) * sb;
    const double sy = alpha * sb * (1.0 - sb) * sa;
    return {x * s, y * s, s + x * sx, x * sy, y * sx, s + y * sy};
  }
};

// modReLU with its derivative with respect to the bias.
struct ModPoint {
  Point p;
  double ub, vb;
};

ModPoint modrelu_at(double x, double y, double b) {
  const double r = std::hypot(x, y);
  if (r == 0.0 || r + b < 0.0) return {{0, 0, 0, 0, 0, 0}, 0, 0};
  const double k = (r + b) / r;
  const double r3 = r * r * r;
  // u = x + b x / r, v = y + b y / r
  return {{k * x, k * y, 1.0 + b * y * y / r3, -b * x * y / r3, -b * x * y / r3,
           1.0 + b * x * x / r3},
          x / r,
          y / r};
}

template <class F>
ComplexTensor map_forward(const ComplexTensor& z, F f) {
  ComplexTensor out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const Point p = f(z.re()[i], z.im()[i]);
    out.re()[i] = p.u;
    out.im()[i] = p.v;
  }
  return out;
}

template <class F>
Var record_pointwise(const char* kind, const Var& z, F f) {
  const ComplexTensor* zv = &z.value();
  return z.tape()->record(kind, {z}, map_forward(*zv, f),
                          [zv, f](const ComplexTensor& g, GradRefs in) {
                            if (!in[0]) return;
                            for (std::size_t i = 0; i < g.size(); ++i) {
                              const Point p = f(zv->re()[i], zv->im()[i]);
                              const double gu = g.re()[i], gv = g.im()[i];
                              in[0]->re()[i] += gu * p.ux + gv * p.vx;
                              in[0]->im()[i] += gu * p.uy + gv * p.vy;
                            }
                          });
}

// Channel of flat element i when dim 1 has `channels` entries.
struct ChannelIndex {
  std::size_t inner = 1, channels = 1;
  std::size_t operator()(std::size_t i) const { return (i / inner) % channels; }
};

ChannelIndex channel_index(const Shape& shape, std::size_t channels, const char* op) {
  if (shape.size() < 2 || shape[1] != channels) {
    throw ShapeError(std::string(op) + ": expected dim 1 of " + shape_str(shape) + " to be " +
                     std::to_string(channels));
  }
  ChannelIndex ci;
  ci.channels = channels;
  for (std::size_t d = 2; d < shape.size(); ++d) ci.inner *= shape[d];
  return ci;
}

}  // namespace

ActivationKind parse_activation(std::string_view name) {
  for (auto k : kAllActivations) {
    if (activation_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown activation '" + std::string(name) +
                              "' (expected crelu|modrelu|zrelu|smooth_zrelu|split_tanh|cardioid)");
}

std::string_view activation_name(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::crelu: return "crelu";
    case ActivationKind::modrelu: return "modrelu";
    case ActivationKind::zrelu: return "zrelu";
    case ActivationKind::smooth_zrelu: return "smooth_zrelu";
    case ActivationKind::split_tanh: return "split_tanh";
    case ActivationKind::cardioid: return "cardioid";
  }
  return "?";
}

Var crelu(const Var& z) { return record_pointwise("crelu", z, crelu_at); }
Var zrelu(const Var& z) { return record_pointwise("zrelu", z, zrelu_at); }
Var split_tanh(const Var& z) { return record_pointwise("split_tanh", z, split_tanh_at); }
Var cardioid(const Var& z) { return record_pointwise("cardioid", z, cardioid_at); }

Var smooth_zrelu(const Var& z, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("smooth_zrelu: alpha must be > 0");
  return record_pointwise("smooth_zrelu", z, SmoothZrelu{alpha});
}

Var modrelu(const Var& z, const Var& bias) {
  const ComplexTensor* zv = &z.value();
  const ComplexTensor* bv = &bias.value();
  const auto ci = channel_index(zv->shape(), bv->size(), "modrelu");
  ComplexTensor out(zv->shape());
  for (std::size_t i = 0; i < zv->size(); ++i) {
    const auto m = modrelu_at(zv->re()[i], zv->im()[i], bv->re()[ci(i)]);
    out.re()[i] = m.p.u;
    out.im()[i] = m.p.v;
  }
  return z.tape()->record(
      "modrelu", {z, bias}, std::move(out), [zv, bv, ci](const ComplexTensor& g, GradRefs in) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t c = ci(i);
          const auto m = modrelu_at(zv->re()[i], zv->im()[i], bv->re()[c]);
          const double gu = g.re()[i], gv = g.im()[i];
          if (in[0]) {
            in[0]->re()[i] += gu * m.p.ux + gv * m.p.vx;
            in[0]->im()[i] += gu * m.p.uy + gv * m.p.vy;
          }
          // b is real: its imaginary gradient stays zero.
          if (in[1]) in[1]->re()[c] += gu * m.ub + gv * m.vb;
        }
      });
}

Var apply_activation(const Activation& act, const Var& z, const Var& bias) {
  switch (act.kind) {
    case ActivationKind::crelu: return crelu(z);
    case ActivationKind::modrelu:
      if (!bias.valid()) throw std::invalid_argument("modrelu requires a bias variable");
      return modrelu(z, bias);
    case ActivationKind::zrelu: return zrelu(z);
    case ActivationKind::smooth_zrelu: return smooth_zrelu(z, act.alpha);
    case ActivationKind::split_tanh: return split_tanh(z);
    case ActivationKind::cardioid: return cardioid(z);
  }
  throw std::logic_error("unhandled activation");
}

ComplexTensor crelu(const ComplexTensor& z) { return map_forward(z, crelu_at); }
ComplexTensor zrelu(const ComplexTensor& z) { return map_forward(z, zrelu_at); }
ComplexTensor split_tanh(const ComplexTensor& z) { return map_forward(z, split_tanh_at); }
ComplexTensor cardioid(const ComplexTensor& z) { return map_forward(z, cardioid_at); }

ComplexTensor smooth_zrelu(const ComplexTensor& z, double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("smooth_zrelu: alpha must be > 0");
  return map_forward(z, SmoothZrelu{alpha});
}

ComplexTensor modrelu(const ComplexTensor& z, const RealTensor& bias) {
  ComplexTensor out(z.shape());
  // A single bias applies to every element; otherwise one per channel.
  const bool scalar_bias = bias.size() == 1;
  ChannelIndex ci;
  if (!scalar_bias) ci = channel_index(z.shape(), bias.size(), "modrelu");
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double b = scalar_bias ? bias[0] : bias[ci(i)];
    const auto m = modrelu_at(z.re()[i], z.im()[i], b);
    out.re()[i] = m.p.u;
    out.im()[i] = m.p.v;
  }
  return out;
}

}  // namespace cvnn
