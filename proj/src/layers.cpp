#include "cvnn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cvnn {

namespace {

using std::ptrdiff_t;
using std::size_t;

// Geometry of one 2-D correlation between an (H, W) plane and a (KH, KW) kernel.
struct Plane2d {
  size_t h, w, kh, kw, oh, ow, sh, sw, ph, pw;

  // Output rows [lo, hi) for which input row oy*sh + ky - ph is inside [0, h).
  std::pair<size_t, size_t> rows(size_t ky) const { return span(ky, ph, sh, h, oh); }
  std::pair<size_t, size_t> cols(size_t kx) const { return span(kx, pw, sw, w, ow); }

  static std::pair<size_t, size_t> span(size_t k, size_t pad, size_t stride, size_t in,
                                        size_t out) {
    const auto kk = static_cast<ptrdiff_t>(k), p = static_cast<ptrdiff_t>(pad),
               s = static_cast<ptrdiff_t>(stride), n = static_cast<ptrdiff_t>(in);
    ptrdiff_t lo = 0;
    if (p > kk) lo = (p - kk + s - 1) / s;
    ptrdiff_t hi = (n - 1 + p - kk) < 0 ? 0 : (n - 1 + p - kk) / s + 1;
    hi = std::min<ptrdiff_t>(hi, static_cast<ptrdiff_t>(out));
    if (hi < lo) hi = lo;
    return {static_cast<size_t>(lo), static_cast<size_t>(hi)};
  }
};

// out += s * corr(in, k)
void corr_acc(const Plane2d& g, const double* in, const double* k, double* out, double s) {
  for (size_t ky = 0; ky < g.kh; ++ky) {
    const auto [r0, r1] = g.rows(ky);
    for (size_t kx = 0; kx < g.kw; ++kx) {
      const double wv = s * k[ky * g.kw + kx];
      if (wv == 0.0) continue;
      const auto [c0, c1] = g.cols(kx);
      for (size_t oy = r0; oy < r1; ++oy) {
        const double* irow = in + (oy * g.sh + ky - g.ph) * g.w + (kx - g.pw);
        double* orow = out + oy * g.ow;
        if (g.sw == 1) {
          for (size_t ox = c0; ox < c1; ++ox) orow[ox] += wv * irow[ox];
        } else {
          for (size_t ox = c0; ox < c1; ++ox) orow[ox] += wv * irow[ox * g.sw];
        }
      }
    }
  }
}

// gin += s * corr^T(gout, k): scatter of the output gradient back to the input.
void corr_t_acc(const Plane2d& g, const double* gout, const double* k, double* gin, double s) {
  for (size_t ky = 0; ky < g.kh; ++ky) {
    const auto [r0, r1] = g.rows(ky);
    for (size_t kx = 0; kx < g.kw; ++kx) {
      const double wv = s * k[ky * g.kw + kx];
      if (wv == 0.0) continue;
      const auto [c0, c1] = g.cols(kx);
      for (size_t oy = r0; oy < r1; ++oy) {
        double* irow = gin + (oy * g.sh + ky - g.ph) * g.w + (kx - g.pw);
        const double* orow = gout + oy * g.ow;
        if (g.sw == 1) {
          for (size_t ox = c0; ox < c1; ++ox) irow[ox] += wv * orow[ox];
        } else {
          for (size_t ox = c0; ox < c1; ++ox) irow[ox * g.sw] += wv * orow[ox];
        }
      }
    }
  }
}

// gk += s * sum over outputs of gout * in (kernel gradient).
void corr_k_acc(const Plane2d& g, const double* gout, const double* in, double* gk, double s) {
  for (size_t ky = 0; ky < g.kh; ++ky) {
    const auto [r0, r1] = g.rows(ky);
    for (size_t kx = 0; kx < g.kw; ++kx) {
      const auto [c0, c1] = g.cols(kx);
      double acc = 0.0;
      for (size_t oy = r0; oy < r1; ++oy) {
        const double* irow = in + (oy * g.sh + ky - g.ph) * g.w + (kx - g.pw);
        const double* orow = gout + oy * g.ow;
        for (size_t ox = c0; ox < c1; ++ox) acc += orow[ox] * irow[ox * g.sw];
      }
      gk[ky * g.kw + kx] += s * acc;
    }
  }
}

struct ConvShapes {
  size_t n, cin, cout;
  Plane2d p;
};

ConvShapes conv_shapes(const Var& x, const Var& w, const Var& b, const Conv2dGeometry& geo,
                       const char* op) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4) {
    throw ShapeError(std::string(op) + ": expected x (N,C,H,W) and w (Cout,Cin,KH,KW), got " +
                     shape_str(xs) + " and " + shape_str(ws));
  }
  if (xs[1] != ws[1]) {
    throw ShapeError(std::string(op) + ": channel mismatch, input has " + std::to_string(xs[1]) +
                     " channels, kernel expects " + std::to_string(ws[1]));
  }
  if (b.shape() != Shape{ws[0]}) {
    throw ShapeError(std::string(op) + ": bias shape " + shape_str(b.shape()) + " != (" +
                     std::to_string(ws[0]) + ")");
  }
  if (geo.stride[0] == 0 || geo.stride[1] == 0) {
    throw std::invalid_argument(std::string(op) + ": stride must be positive");
  }
  ConvShapes s{xs[0], xs[1], ws[0], {}};
  s.p.h = xs[2];
  s.p.w = xs[3];
  s.p.kh = ws[2];
  s.p.kw = ws[3];
  s.p.sh = geo.stride[0];
  s.p.sw = geo.stride[1];
  s.p.ph = geo.padding[0];
  s.p.pw = geo.padding[1];
  s.p.oh = conv_out_dim(s.p.h, s.p.kh, s.p.sh, s.p.ph);
  s.p.ow = conv_out_dim(s.p.w, s.p.kw, s.p.sw, s.p.pw);
  return s;
}

void add_bias(ComplexTensor& out, const ComplexTensor& b, size_t n, size_t cout, size_t plane,
              bool imag) {
  for (size_t i = 0; i < n; ++i)
    for (size_t c = 0; c < cout; ++c) {
      double* dst = (imag ? out.im() : out.re()).data() + (i * cout + c) * plane;
      const double v = imag ? b.im()[c] : b.re()[c];
      std::fill(dst, dst + plane, v);
    }
}

void sum_bias_grad(const ComplexTensor& g, ComplexTensor& gb, size_t n, size_t cout,
                   size_t plane, bool imag) {
  for (size_t i = 0; i < n; ++i)
    for (size_t c = 0; c < cout; ++c) {
      const size_t off = (i * cout + c) * plane;
      double sr = 0.0, si = 0.0;
      for (size_t j = 0; j < plane; ++j) {
        sr += g.re()[off + j];
        si += g.im()[off + j];
      }
      gb.re()[c] += sr;
      if (imag) gb.im()[c] += si;
    }
}

}  // namespace

size_t conv_out_dim(size_t in, size_t kernel, size_t stride, size_t pad) {
  if (kernel == 0 || stride == 0) throw std::invalid_argument("kernel and stride must be >= 1");
  if (kernel > in + 2 * pad) {
    throw ShapeError("kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

Var complex_conv2d(const Var& x, const Var& w, const Var& bias, const Conv2dGeometry& geo) {
  const ConvShapes s = conv_shapes(x, w, bias, geo, "complex_conv2d");
  const Plane2d p = s.p;
  const size_t in_plane = p.h * p.w, out_plane = p.oh * p.ow, k_plane = p.kh * p.kw;
  const ComplexTensor* xv = &x.value();
  const ComplexTensor* wv = &w.value();

  ComplexTensor out({s.n, s.cout, p.oh, p.ow});
  add_bias(out, bias.value(), s.n, s.cout, out_plane, false);
  add_bias(out, bias.value(), s.n, s.cout, out_plane, true);
  for (size_t n = 0; n < s.n; ++n)
    for (size_t co = 0; co < s.cout; ++co) {
      double* orr = out.re().data() + (n * s.cout + co) * out_plane;
      double* oi = out.im().data() + (n * s.cout + co) * out_plane;
      for (size_t ci = 0; ci < s.cin; ++ci) {
        const double* a1 = xv->re().data() + (n * s.cin + ci) * in_plane;
        const double* b1 = xv->im().data() + (n * s.cin + ci) * in_plane;
        const double* a2 = wv->re().data() + (co * s.cin + ci) * k_plane;
        const double* b2 = wv->im().data() + (co * s.cin + ci) * k_plane;
        corr_acc(p, a1, a2, orr, 1.0);
        corr_acc(p, b1, b2, orr, -1.0);
        corr_acc(p, b1, a2, oi, 1.0);
        corr_acc(p, a1, b2, oi, 1.0);
      }
    }

  return x.tape()->record(
      "complex_conv2d", {x, w, bias}, std::move(out),
      [xv, wv, s, in_plane, out_plane, k_plane](const ComplexTensor& g, GradRefs in) {
        const Plane2d& p = s.p;
        for (size_t n = 0; n < s.n; ++n)
          for (size_t co = 0; co < s.cout; ++co) {
            const double* gr = g.re().data() + (n * s.cout + co) * out_plane;
            const double* gi = g.im().data() + (n * s.cout + co) * out_plane;
            for (size_t ci = 0; ci < s.cin; ++ci) {
              const size_t xo = (n * s.cin + ci) * in_plane, ko = (co * s.cin + ci) * k_plane;
              const double* a1 = xv->re().data() + xo;
              const double* b1 = xv->im().data() + xo;
              const double* a2 = wv->re().data() + ko;
              const double* b2 = wv->im().data() + ko;
              if (in[0]) {
                // g_x = g (*) conj(w)
                corr_t_acc(p, gr, a2, in[0]->re().data() + xo, 1.0);
                corr_t_acc(p, gi, b2, in[0]->re().data() + xo, 1.0);
                corr_t_acc(p, gi, a2, in[0]->im().data() + xo, 1.0);
                corr_t_acc(p, gr, b2, in[0]->im().data() + xo, -1.0);
              }
              if (in[1]) {
                // g_w = sum g * conj(x)
                corr_k_acc(p, gr, a1, in[1]->re().data() + ko, 1.0);
                corr_k_acc(p, gi, b1, in[1]->re().data() + ko, 1.0);
                corr_k_acc(p, gi, a1, in[1]->im().data() + ko, 1.0);
                corr_k_acc(p, gr, b1, in[1]->im().data() + ko, -1.0);
              }
            }
          }
        if (in[2]) sum_bias_grad(g, *in[2], s.n, s.cout, out_plane, true);
      });
}

Var real_conv2d(const Var& x, const Var& w, const Var& bias, const Conv2dGeometry& geo) {
  const ConvShapes s = conv_shapes(x, w, bias, geo, "real_conv2d");
  const Plane2d p = s.p;
  const size_t in_plane = p.h * p.w, out_plane = p.oh * p.ow, k_plane = p.kh * p.kw;
  const ComplexTensor* xv = &x.value();
  const ComplexTensor* wv = &w.value();

  ComplexTensor out({s.n, s.cout, p.oh, p.ow});
  add_bias(out, bias.value(), s.n, s.cout, out_plane, false);
  for (size_t n = 0; n < s.n; ++n)
    for (size_t co = 0; co < s.cout; ++co) {
      double* orr = out.re().data() + (n * s.cout + co) * out_plane;
      for (size_t ci = 0; ci < s.cin; ++ci) {
        corr_acc(p, xv->re().data() + (n * s.cin + ci) * in_plane,
                 wv->re().data() + (co * s.cin + ci) * k_plane, orr, 1.0);
      }
    }

  return x.tape()->record(
      "real_conv2d", {x, w, bias}, std::move(out),
      [xv, wv, s, in_plane, out_plane, k_plane](const ComplexTensor& g, GradRefs in) {
        for (size_t n = 0; n < s.n; ++n)
          for (size_t co = 0; co < s.cout; ++co) {
            const double* gr = g.re().data() + (n * s.cout + co) * out_plane;
            for (size_t ci = 0; ci < s.cin; ++ci) {
              const size_t xo = (n * s.cin + ci) * in_plane, ko = (co * s.cin + ci) * k_plane;
              if (in[0]) corr_t_acc(s.p, gr, wv->re().data() + ko, in[0]->re().data() + xo, 1.0);
              if (in[1]) corr_k_acc(s.p, gr, xv->re().data() + xo, in[1]->re().data() + ko, 1.0);
            }
          }
        if (in[2]) sum_bias_grad(g, *in[2], s.n, s.cout, out_plane, false);
      });
}

namespace {

struct LinearShapes {
  size_t n, din, dout;
};

LinearShapes linear_shapes(const Var& x, const Var& w, const Var& b, const char* op) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1]) {
    throw ShapeError(std::string(op) + ": dim mismatch between x " + shape_str(xs) + " and W " +
                     shape_str(ws));
  }
  if (b.shape() != Shape{ws[0]}) {
    throw ShapeError(std::string(op) + ": bias shape " + shape_str(b.shape()) + " != (" +
                     std::to_string(ws[0]) + ")");
  }
  return {xs[0], xs[1], ws[0]};
}

}  // namespace

Var complex_linear(const Var& x, const Var& w, const Var& bias) {
  const LinearShapes s = linear_shapes(x, w, bias, "complex_linear");
  const ComplexTensor* xv = &x.value();
  const ComplexTensor* wv = &w.value();
  const ComplexTensor& bv = bias.value();
  ComplexTensor out({s.n, s.dout});
  for (size_t n = 0; n < s.n; ++n) {
    const double* xr = xv->re().data() + n * s.din;
    const double* xi = xv->im().data() + n * s.din;
    for (size_t o = 0; o < s.dout; ++o) {
      const double* wr = wv->re().data() + o * s.din;
      const double* wi = wv->im().data() + o * s.din;
      double ar = bv.re()[o], ai = bv.im()[o];
      for (size_t k = 0; k < s.din; ++k) {
        ar += wr[k] * xr[k] - wi[k] * xi[k];
        ai += wr[k] * xi[k] + wi[k] * xr[k];
      }
      out.re()[n * s.dout + o] = ar;
      out.im()[n * s.dout + o] = ai;
    }
  }
  return x.tape()->record(
      "complex_linear", {x, w, bias}, std::move(out),
      [xv, wv, s](const ComplexTensor& g, GradRefs in) {
        for (size_t n = 0; n < s.n; ++n) {
          const double* xr = xv->re().data() + n * s.din;
          const double* xi = xv->im().data() + n * s.din;
          for (size_t o = 0; o < s.dout; ++o) {
            const double gr = g.re()[n * s.dout + o], gi = g.im()[n * s.dout + o];
            const double* wr = wv->re().data() + o * s.din;
            const double* wi = wv->im().data() + o * s.din;
            if (in[0]) {
              double* dxr = in[0]->re().data() + n * s.din;
              double* dxi = in[0]->im().data() + n * s.din;
              for (size_t k = 0; k < s.din; ++k) {
                dxr[k] += wr[k] * gr + wi[k] * gi;
                dxi[k] += wr[k] * gi - wi[k] * gr;
              }
            }
            if (in[1]) {
              double* dwr = in[1]->re().data() + o * s.din;
              double* dwi = in[1]->im().data() + o * s.din;
              for (size_t k = 0; k < s.din; ++k) {
                dwr[k] += gr * xr[k] + gi * xi[k];
                dwi[k] += gi * xr[k] - gr * xi[k];
              }
            }
            if (in[2]) {
              in[2]->re()[o] += gr;
              in[2]->im()[o] += gi;
            }
          }
        }
      });
}

Var real_linear(const Var& x, const Var& w, const Var& bias) {
  const LinearShapes s = linear_shapes(x, w, bias, "real_linear");
  const ComplexTensor* xv = &x.value();
  const ComplexTensor* wv = &w.value();
  const ComplexTensor& bv = bias.value();
  ComplexTensor out({s.n, s.dout});
  for (size_t n = 0; n < s.n; ++n) {
    const double* xr = xv->re().data() + n * s.din;
    for (size_t o = 0; o < s.dout; ++o) {
      const double* wr = wv->re().data() + o * s.din;
      double acc = bv.re()[o];
      for (size_t k = 0; k < s.din; ++k) acc += wr[k] * xr[k];
      out.re()[n * s.dout + o] = acc;
    }
  }
  return x.tape()->record("real_linear", {x, w, bias}, std::move(out),
                          [xv, wv, s](const ComplexTensor& g, GradRefs in) {
                            for (size_t n = 0; n < s.n; ++n) {
                              const double* xr = xv->re().data() + n * s.din;
                              for (size_t o = 0; o < s.dout; ++o) {
                                const double gr = g.re()[n * s.dout + o];
                                const double* wr = wv->re().data() + o * s.din;
                                if (in[0]) {
                                  double* dx = in[0]->re().data() + n * s.din;
                                  for (size_t k = 0; k < s.din; ++k) dx[k] += wr[k] * gr;
                                }
                                if (in[1]) {
                                  double* dw = in[1]->re().data() + o * s.din;
                                  for (size_t k = 0; k < s.din; ++k) dw[k] += gr * xr[k];
                                }
                                if (in[2]) in[2]->re()[o] += gr;
                              }
                            }
                          });
}

namespace {

struct PoolShapes {
  size_t n, c, h, w, oh, ow;
};

PoolShapes pool_shapes(const Var& x, const PoolSpec& spec, const char* op) {
  const auto& xs = x.shape();
  if (xs.size() != 4) throw ShapeError(std::string(op) + ": expected (N,C,H,W), got " + shape_str(xs));
  if (spec.kernel[0] == 0 || spec.kernel[1] == 0 || spec.stride[0] == 0 || spec.stride[1] == 0) {
    throw std::invalid_argument(std::string(op) + ": kernel and stride must be >= 1");
  }
  if (spec.kernel[0] > xs[2] || spec.kernel[1] > xs[3]) {
    throw ShapeError(std::string(op) + ": window larger than input " + shape_str(xs));
  }
  return {xs[0], xs[1], xs[2], xs[3], (xs[2] - spec.kernel[0]) / spec.stride[0] + 1,
          (xs[3] - spec.kernel[1]) / spec.stride[1] + 1};
}

// Shared forward of the two selection pools; `key` ranks window elements.
template <class Key>
Var selection_pool(const char* kind, const Var& x, const PoolSpec& spec, Key key, bool complex) {
  const PoolShapes s = pool_shapes(x, spec, kind);
  const ComplexTensor& xv = x.value();
  ComplexTensor out({s.n, s.c, s.oh, s.ow});
  std::vector<size_t> argmax(out.size());
  for (size_t nc = 0; nc < s.n * s.c; ++nc) {
    const size_t base = nc * s.h * s.w;
    for (size_t oy = 0; oy < s.oh; ++oy)
      for (size_t ox = 0; ox < s.ow; ++ox) {
        size_t best = base + oy * spec.stride[0] * s.w + ox * spec.stride[1];
        double best_key = key(xv, best);
        for (size_t ky = 0; ky < spec.kernel[0]; ++ky)
          for (size_t kx = 0; kx < spec.kernel[1]; ++kx) {
            const size_t idx =
                base + (oy * spec.stride[0] + ky) * s.w + ox * spec.stride[1] + kx;
            const double k = key(xv, idx);
            if (k > best_key) {
              best_key = k;
              best = idx;
            }
          }
        const size_t o = (nc * s.oh + oy) * s.ow + ox;
        argmax[o] = best;
        out.re()[o] = xv.re()[best];
        if (complex) out.im()[o] = xv.im()[best];
      }
  }
  return x.tape()->record(kind, {x}, std::move(out),
                          [argmax = std::move(argmax), complex](const ComplexTensor& g,
                                                                GradRefs in) {
                            if (!in[0]) return;
                            for (size_t o = 0; o < argmax.size(); ++o) {
                              in[0]->re()[argmax[o]] += g.re()[o];
                              if (complex) in[0]->im()[argmax[o]] += g.im()[o];
                            }
                          });
}

}  // namespace

Var complex_maxpool_mag(const Var& x, const PoolSpec& spec) {
  return selection_pool(
      "complex_maxpool_mag", x, spec,
      [](const ComplexTensor& t, size_t i) { return t.re()[i] * t.re()[i] + t.im()[i] * t.im()[i]; },
      true);
}

Var real_maxpool(const Var& x, const PoolSpec& spec) {
  return selection_pool(
      "real_maxpool", x, spec, [](const ComplexTensor& t, size_t i) { return t.re()[i]; }, false);
}

Var complex_avgpool(const Var& x, const PoolSpec& spec) {
  const PoolShapes s = pool_shapes(x, spec, "complex_avgpool");
  const ComplexTensor& xv = x.value();
  const double inv = 1.0 / static_cast<double>(spec.kernel[0] * spec.kernel[1]);
  ComplexTensor out({s.n, s.c, s.oh, s.ow});
  auto window = [s, spec](size_t nc, size_t oy, size_t ox, auto&& fn) {
    for (size_t ky = 0; ky < spec.kernel[0]; ++ky)
      for (size_t kx = 0; kx < spec.kernel[1]; ++kx)
        fn(nc * s.h * s.w + (oy * spec.stride[0] + ky) * s.w + ox * spec.stride[1] + kx);
  };
  for (size_t nc = 0; nc < s.n * s.c; ++nc)
    for (size_t oy = 0; oy < s.oh; ++oy)
      for (size_t ox = 0; ox < s.ow; ++ox) {
        double sr = 0.0, si = 0.0;
        window(nc, oy, ox, [&](size_t i) {
          sr += xv.re()[i];
          si += xv.im()[i];
        });
        const size_t o = (nc * s.oh + oy) * s.ow + ox;
        out.re()[o] = sr * inv;
        out.im()[o] = si * inv;
      }
  return x.tape()->record("complex_avgpool", {x}, std::move(out),
                          [s, inv, window](const ComplexTensor& g, GradRefs in) {
                            if (!in[0]) return;
                            for (size_t nc = 0; nc < s.n * s.c; ++nc)
                              for (size_t oy = 0; oy < s.oh; ++oy)
                                for (size_t ox = 0; ox < s.ow; ++ox) {
                                  const size_t o = (nc * s.oh + oy) * s.ow + ox;
                                  const double gr = g.re()[o] * inv, gi = g.im()[o] * inv;
                                  window(nc, oy, ox, [&](size_t i) {
                                    in[0]->re()[i] += gr;
                                    in[0]->im()[i] += gi;
                                  });
                                }
                          });
}

BnGamma parse_bn_gamma(std::string_view name) {
  if (name == "matrix") return BnGamma::matrix;
  if (name == "scalar") return BnGamma::scalar;
  throw std::invalid_argument("unknown bn_gamma '" + std::string(name) +
                              "' (expected matrix|scalar)");
}

BatchNormState::BatchNormState(size_t c)
    : channels(c), mean_re(c, 0.0), mean_im(c, 0.0), v_rr(c, 1.0), v_ri(c, 0.0), v_ii(c, 1.0) {}

ComplexTensor bn_gamma_init(size_t channels, BnGamma form) {
  const double g = 1.0 / std::sqrt(2.0);
  if (form == BnGamma::scalar) return ComplexTensor::filled({channels}, g, 0.0);
  ComplexTensor t({channels, 3});
  for (size_t c = 0; c < channels; ++c) {
    t.re()[3 * c + 0] = g;
    t.re()[3 * c + 2] = g;
  }
  return t;
}

std::array<double, 3> inv_sqrt_2x2(double a, double b, double c) {
  const double det = a * c - b * b;
  if (!(a > 0.0 && det > 0.0)) {
    throw std::domain_error("inv_sqrt_2x2: matrix is not positive definite");
  }
  const double s = std::sqrt(det);
  const double t = std::sqrt(a + c + 2.0 * s);
  const double d = s * t;
  return {(c + s) / d, -b / d, (a + s) / d};
}

namespace {

// d(inv_sqrt_2x2)/d(a, b, c) contracted with upstream (gw_rr, gw_ri, gw_ii).
std::array<double, 3> inv_sqrt_2x2_vjp(double a, double b, double c, double grr, double gri,
                                       double gii) {
  const double s = std::sqrt(a * c - b * b);
  const double t = std::sqrt(a + c + 2.0 * s);
  const double d = s * t;
  const double wrr = (c + s) / d, wri = -b / d, wii = (a + s) / d;
  // partials for q in (a, b, c)
  const double ds[3] = {c / (2.0 * s), -b / s, a / (2.0 * s)};
  const double dtr[3] = {1.0, 0.0, 1.0};
  const double dcq[3] = {0.0, 0.0, 1.0}, daq[3] = {1.0, 0.0, 0.0}, dbq[3] = {0.0, 1.0, 0.0};
  std::array<double, 3> out{};
  for (int q = 0; q < 3; ++q) {
    const double dt = (dtr[q] + 2.0 * ds[q]) / (2.0 * t);
    const double dd = t * ds[q] + s * dt;
    const double d_rr = (dcq[q] + ds[q] - wrr * dd) / d;
    const double d_ii = (daq[q] + ds[q] - wii * dd) / d;
    const double d_ri = (-dbq[q] - wri * dd) / d;
    out[q] = grr * d_rr + gri * d_ri + gii * d_ii;
  }
  return out;
}

struct ChannelLayout {
  size_t n, c, inner;
  size_t count() const { return n * inner; }
  template <class F>
  void for_each(size_t ch, F&& f) const {
    for (size_t i = 0; i < n; ++i) {
      const size_t base = (i * c + ch) * inner;
      for (size_t j = 0; j < inner; ++j) f(base + j);
    }
  }
};

ChannelLayout channel_layout(const Shape& xs, size_t channels, const char* op) {
  if (xs.size() < 2 || xs[1] != channels) {
    throw ShapeError(std::string(op) + ": expected (N, " + std::to_string(channels) +
                     ", ...), got " + shape_str(xs));
  }
  ChannelLayout l{xs[0], xs[1], 1};
  for (size_t d = 2; d < xs.size(); ++d) l.inner *= xs[d];
  return l;
}

}  // namespace

Var complex_batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& st) {
  const ChannelLayout L = channel_layout(x.shape(), st.channels, "complex_batchnorm");
  const bool matrix = st.gamma_form == BnGamma::matrix;
  const Shape gshape = matrix ? Shape{st.channels, 3} : Shape{st.channels};
  if (gamma.shape() != gshape || beta.shape() != Shape{st.channels}) {
    throw ShapeError("complex_batchnorm: gamma/beta shapes " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " do not match " + std::to_string(st.channels) +
                     " channels");
  }
  if (!(st.lambda > 0.0)) throw std::invalid_argument("complex_batchnorm: lambda must be > 0");
  const bool train = st.mode == BnMode::train;
  if (train && L.n < 2) {
    throw std::invalid_argument("complex_batchnorm: batch size must be >= 2 in train mode");
  }

  const ComplexTensor& xv = x.value();
  const ComplexTensor* gv = &gamma.value();
  const ComplexTensor& bv = beta.value();
  const size_t C = st.channels;
  const double M = static_cast<double>(L.count());

  // Per-channel statistics used by this pass (batch or running).
  std::vector<double> mu_r(C), mu_i(C), va(C), vb(C), vc(C);
  std::vector<std::array<double, 3>> W(C);
  ComplexTensor xc(xv.shape());   // centred input
  ComplexTensor xw(xv.shape());   // whitened input
  ComplexTensor out(xv.shape());
  for (size_t c = 0; c < C; ++c) {
    if (train) {
      double sr = 0.0, si = 0.0;
      L.for_each(c, [&](size_t i) {
        sr += xv.re()[i];
        si += xv.im()[i];
      });
      mu_r[c] = sr / M;
      mu_i[c] = si / M;
    } else {
      mu_r[c] = st.mean_re[c];
      mu_i[c] = st.mean_im[c];
    }
    double rr = 0.0, ri = 0.0, ii = 0.0;
    L.for_each(c, [&](size_t i) {
      const double a = xv.re()[i] - mu_r[c], b = xv.im()[i] - mu_i[c];
      xc.re()[i] = a;
      xc.im()[i] = b;
      rr += a * a;
      ri += a * b;
      ii += b * b;
    });
    if (train) {
      rr /= M;
      ri /= M;
      ii /= M;
      st.mean_re[c] = (1.0 - st.momentum) * st.mean_re[c] + st.momentum * mu_r[c];
      st.mean_im[c] = (1.0 - st.momentum) * st.mean_im[c] + st.momentum * mu_i[c];
      st.v_rr[c] = (1.0 - st.momentum) * st.v_rr[c] + st.momentum * rr;
      st.v_ri[c] = (1.0 - st.momentum) * st.v_ri[c] + st.momentum * ri;
      st.v_ii[c] = (1.0 - st.momentum) * st.v_ii[c] + st.momentum * ii;
    } else {
      rr = st.v_rr[c];
      ri = st.v_ri[c];
      ii = st.v_ii[c];
    }
    va[c] = rr + st.lambda;
    vb[c] = ri;
    vc[c] = ii + st.lambda;
    W[c] = inv_sqrt_2x2(va[c], vb[c], vc[c]);

    const double grr = matrix ? gv->re()[3 * c] : gv->re()[c];
    const double gri = matrix ? gv->re()[3 * c + 1] : 0.0;
    const double gii = matrix ? gv->re()[3 * c + 2] : gv->re()[c];
    const auto [wrr, wri, wii] = W[c];
    L.for_each(c, [&](size_t i) {
      const double a = xc.re()[i], b = xc.im()[i];
      const double tr = wrr * a + wri * b, ti = wri * a + wii * b;
      xw.re()[i] = tr;
      xw.im()[i] = ti;
      out.re()[i] = grr * tr + gri * ti + bv.re()[c];
      out.im()[i] = gri * tr + gii * ti + bv.im()[c];
    });
  }

  return x.tape()->record(
      "complex_batchnorm", {x, gamma, beta}, std::move(out),
      [L, C, M, matrix, train, gv, va = std::move(va), vb = std::move(vb), vc = std::move(vc),
       W = std::move(W), xc = std::move(xc), xw = std::move(xw)](const ComplexTensor& g,
                                                                 GradRefs in) {
        for (size_t c = 0; c < C; ++c) {
          const double grr = matrix ? gv->re()[3 * c] : gv->re()[c];
          const double gri = matrix ? gv->re()[3 * c + 1] : 0.0;
          const double gii = matrix ? gv->re()[3 * c + 2] : gv->re()[c];
          const auto [wrr, wri, wii] = W[c];

          double dg_rr = 0, dg_ri = 0, dg_ii = 0, db_r = 0, db_i = 0;
          double dw_rr = 0, dw_ri = 0, dw_ii = 0;
          L.for_each(c, [&](size_t i) {
            const double gor = g.re()[i], goi = g.im()[i];
            const double tr = xw.re()[i], ti = xw.im()[i];
            db_r += gor;
            db_i += goi;
            dg_rr += gor * tr;
            dg_ri += gor * ti + goi * tr;
            dg_ii += goi * ti;
            const double gtr = grr * gor + gri * goi, gti = gri * gor + gii * goi;
            dw_rr += gtr * xc.re()[i];
            dw_ri += gtr * xc.im()[i] + gti * xc.re()[i];
            dw_ii += gti * xc.im()[i];
          });
          if (in[1]) {
            if (matrix) {
              in[1]->re()[3 * c] += dg_rr;
              in[1]->re()[3 * c + 1] += dg_ri;
              in[1]->re()[3 * c + 2] += dg_ii;
            } else {
              in[1]->re()[c] += dg_rr + dg_ii;
            }
          }
          if (in[2]) {
            in[2]->re()[c] += db_r;
            in[2]->im()[c] += db_i;
          }
          if (!in[0]) continue;

          double dA = 0, dB = 0, dC = 0;
          if (train) {
            const auto d = inv_sqrt_2x2_vjp(va[c], vb[c], vc[c], dw_rr, dw_ri, dw_ii);
            dA = d[0];
            dB = d[1];
            dC = d[2];
          }
          // Gradient w.r.t. the centred input, then through the mean.
          double mean_r = 0.0, mean_i = 0.0;
          auto gxc = [&](size_t i, double& out_r, double& out_i) {
            const double gor = g.re()[i], goi = g.im()[i];
            const double gtr = grr * gor + gri * goi, gti = gri * gor + gii * goi;
            const double a = xc.re()[i], b = xc.im()[i];
            out_r = wrr * gtr + wri * gti + (2.0 * dA * a + dB * b) / M;
            out_i = wri * gtr + wii * gti + (2.0 * dC * b + dB * a) / M;
          };
          if (train) {
            L.for_each(c, [&](size_t i) {
              double r, im;
              gxc(i, r, im);
              mean_r += r;
              mean_i += im;
            });
            mean_r /= M;
            mean_i /= M;
          }
          L.for_each(c, [&](size_t i) {
            double r, im;
            gxc(i, r, im);
            in[0]->re()[i] += r - mean_r;
            in[0]->im()[i] += im - mean_i;
          });
        }
      });
}

Var real_batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& st) {
  const ChannelLayout L = channel_layout(x.shape(), st.channels, "real_batchnorm");
  if (gamma.shape() != Shape{st.channels} || beta.shape() != Shape{st.channels}) {
    throw ShapeError("real_batchnorm: gamma/beta must have shape (" +
                     std::to_string(st.channels) + ")");
  }
  const bool train = st.mode == BnMode::train;
  if (train && L.n < 2) {
    throw std::invalid_argument("real_batchnorm: batch size must be >= 2 in train mode");
  }
  const ComplexTensor& xv = x.value();
  const ComplexTensor* gv = &gamma.value();
  const ComplexTensor& bv = beta.value();
  const size_t C = st.channels;
  const double M = static_cast<double>(L.count());
  std::vector<double> inv_std(C);
  ComplexTensor xhat(xv.shape());
  ComplexTensor out(xv.shape());
  for (size_t c = 0; c < C; ++c) {
    double mu = st.mean_re[c], var = st.v_rr[c];
    if (train) {
      double s = 0.0;
      L.for_each(c, [&](size_t i) { s += xv.re()[i]; });
      mu = s / M;
      double v = 0.0;
      L.for_each(c, [&](size_t i) { v += (xv.re()[i] - mu) * (xv.re()[i] - mu); });
      var = v / M;
      st.mean_re[c] = (1.0 - st.momentum) * st.mean_re[c] + st.momentum * mu;
      st.v_rr[c] = (1.0 - st.momentum) * st.v_rr[c] + st.momentum * var;
    }
    inv_std[c] = 1.0 / std::sqrt(var + st.lambda);
    L.for_each(c, [&](size_t i) {
      xhat.re()[i] = (xv.re()[i] - mu) * inv_std[c];
      out.re()[i] = gv->re()[c] * xhat.re()[i] + bv.re()[c];
    });
  }
  return x.tape()->record(
      "real_batchnorm", {x, gamma, beta}, std::move(out),
      [L, C, M, train, gv, inv_std = std::move(inv_std), xhat = std::move(xhat)](
          const ComplexTensor& g, GradRefs in) {
        for (size_t c = 0; c < C; ++c) {
          double sg = 0.0, sgx = 0.0;
          L.for_each(c, [&](size_t i) {
            sg += g.re()[i];
            sgx += g.re()[i] * xhat.re()[i];
          });
          if (in[1]) in[1]->re()[c] += sgx;
          if (in[2]) in[2]->re()[c] += sg;
          if (!in[0]) continue;
          const double k = gv->re()[c] * inv_std[c];
          const double mg = train ? sg / M : 0.0, mgx = train ? sgx / M : 0.0;
          L.for_each(c, [&](size_t i) {
            in[0]->re()[i] += k * (g.re()[i] - mg - xhat.re()[i] * mgx);
          });
        }
      });
}

namespace {

Var logsoftmax_rows(const char* kind, const Var& x, bool use_abs) {
  const auto& xs = x.shape();
  if (xs.size() != 2 || xs[1] < 2) {
    throw ShapeError(std::string(kind) + ": expected (N, K) with K >= 2, got " + shape_str(xs));
  }
  const size_t N = xs[0], K = xs[1];
  const ComplexTensor* xv = &x.value();
  ComplexTensor out(xs);
  std::vector<double> mag(N * K);
  for (size_t i = 0; i < N * K; ++i) {
    mag[i] = use_abs ? std::hypot(xv->re()[i], xv->im()[i]) : xv->re()[i];
  }
  std::vector<double> prob(N * K);
  for (size_t n = 0; n < N; ++n) {
    const double* m = mag.data() + n * K;
    const double mx = *std::max_element(m, m + K);
    double se = 0.0;
    for (size_t k = 0; k < K; ++k) se += std::exp(m[k] - mx);
    const double lse = mx + std::log(se);
    for (size_t k = 0; k < K; ++k) {
      out.re()[n * K + k] = m[k] - lse;
      prob[n * K + k] = std::exp(m[k] - lse);
    }
  }
  return x.tape()->record(
      kind, {x}, std::move(out),
      [xv, N, K, use_abs, mag = std::move(mag), prob = std::move(prob)](const ComplexTensor& g, GradRefs in) {
        if (!in[0]) return;
        for (size_t n = 0; n < N; ++n) {
          double gs = 0.0;
          for (size_t k = 0; k < K; ++k) gs += g.re()[n * K + k];
          for (size_t k = 0; k < K; ++k) {
            const size_t i = n * K + k;
            const double dm = g.re()[i] - prob[i] * gs;
            if (!use_abs) {
              in[0]->re()[i] += dm;
            } else if (mag[i] > 0.0) {
              in[0]->re()[i] += dm * xv->re()[i] / mag[i];
              in[0]->im()[i] += dm * xv->im()[i] / mag[i];
            }
          }
        }
      });
}

}  // namespace

Var abs_logsoftmax_head(const Var& x) { return logsoftmax_rows("abs_logsoftmax_head", x, true); }
Var real_logsoftmax_head(const Var& x) { return logsoftmax_rows("real_logsoftmax_head", x, false); }

Var nll_loss(const Var& logp, std::span<const int> labels) {
  const auto& ls = logp.shape();
  if (ls.size() != 2) throw ShapeError("nll_loss: expected (N, K), got " + shape_str(ls));
  const size_t N = ls[0], K = ls[1];
  if (labels.size() != N) {
    throw ShapeError("nll_loss: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(N));
  }
  std::vector<int> y(labels.begin(), labels.end());
  double total = 0.0;
  for (size_t n = 0; n < N; ++n) {
    if (y[n] < 0 || static_cast<size_t>(y[n]) >= K) {
      throw std::out_of_range("nll_loss: label " + std::to_string(y[n]) + " outside [0, " +
                              std::to_string(K) + ")");
    }
    total += logp.value().re()[n * K + static_cast<size_t>(y[n])];
  }
  return logp.tape()->record("nll_loss", {logp},
                             ComplexTensor::scalar(-total / static_cast<double>(N)),
                             [y = std::move(y), N, K](const ComplexTensor& g, GradRefs in) {
                               if (!in[0]) return;
                               const double s = -g.re()[0] / static_cast<double>(N);
                               for (size_t n = 0; n < N; ++n) {
                                 in[0]->re()[n * K + static_cast<size_t>(y[n])] += s;
                               }
                             });
}

}  // namespace cvnn
