#include "cvnn/tensor.hpp"

#include <cmath>
#include <numbers>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "cvnn/rng.hpp"

namespace cvnn {

namespace {

constexpr char kTensorMagic[8] = {'C', 'V', 'T', 'N', 'S', 'R', '0', '1'};

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw ShapeError("tensor rank must be 1..4, got " + std::to_string(shape.size()));
  }
  for (auto d : shape) {
    if (d == 0) throw ShapeError("zero-sized dimension in shape " + shape_str(shape));
  }
}

RealTensor::RealTensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

RealTensor::RealTensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
  }
}

ComplexTensor::ComplexTensor(Shape shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  re_.assign(shape_numel(shape_), 0.0);
  im_.assign(re_.size(), 0.0);
}

ComplexTensor::ComplexTensor(Shape shape, std::vector<double> re, std::vector<double> im)
    : shape_(std::move(shape)), re_(std::move(re)), im_(std::move(im)) {
  check_shape(shape_);
  const auto n = shape_numel(shape_);
  if (re_.size() != n || im_.size() != n) {
    throw ShapeError("plane lengths " + std::to_string(re_.size()) + "/" +
                     std::to_string(im_.size()) + " do not match shape " + shape_str(shape_));
  }
}

ComplexTensor ComplexTensor::filled(Shape shape, double re, double im) {
  ComplexTensor t(std::move(shape));
  std::fill(t.re_.begin(), t.re_.end(), re);
  std::fill(t.im_.begin(), t.im_.end(), im);
  return t;
}

ComplexTensor ComplexTensor::scalar(double re, double im) { return filled({1}, re, im); }

ComplexTensor ComplexTensor::reshaped(Shape shape) const {
  check_shape(shape);
  if (shape_numel(shape) != size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return ComplexTensor(std::move(shape), re_, im_);
}

void ComplexTensor::fill_uniform(Rng& rng, double lo, double hi) {
  for (std::size_t i = 0; i < size(); ++i) {
    re_[i] = rng.uniform(lo, hi);
    im_[i] = rng.uniform(lo, hi);
  }
}

void ComplexTensor::fill_normal(Rng& rng, double stddev) {
  for (std::size_t i = 0; i < size(); ++i) {
    re_[i] = stddev * rng.normal();
    im_[i] = stddev * rng.normal();
  }
}

ComplexTensor from_parts(const RealTensor& real, const RealTensor& imag) {
  require_same_shape(real.shape(), imag.shape(), "from_parts");
  return ComplexTensor(real.shape(), {real.data().begin(), real.data().end()},
                       {imag.data().begin(), imag.data().end()});
}

RealTensor real_part(const ComplexTensor& t) {
  return RealTensor(t.shape(), {t.re().begin(), t.re().end()});
}

RealTensor imag_part(const ComplexTensor& t) {
  return RealTensor(t.shape(), {t.im().begin(), t.im().end()});
}

ComplexTensor cadd(const ComplexTensor& a, const ComplexTensor& b) {
  require_same_shape(a.shape(), b.shape(), "cadd");
  ComplexTensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.re()[i] = a.re()[i] + b.re()[i];
    out.im()[i] = a.im()[i] + b.im()[i];
  }
  return out;
}

ComplexTensor csub(const ComplexTensor& a, const ComplexTensor& b) {
  require_same_shape(a.shape(), b.shape(), "csub");
  ComplexTensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.re()[i] = a.re()[i] - b.re()[i];
    out.im()[i] = a.im()[i] - b.im()[i];
  }
  return out;
}

ComplexTensor cmul(const ComplexTensor& a, const ComplexTensor& b) {
  require_same_shape(a.shape(), b.shape(), "cmul");
  ComplexTensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ar = a.re()[i], ai = a.im()[i], br = b.re()[i], bi = b.im()[i];
    out.re()[i] = ar * br - ai * bi;
    out.im()[i] = ar * bi + ai * br;
  }
  return out;
}

ComplexTensor conj(const ComplexTensor& t) {
  ComplexTensor out = t;
  for (auto& v : out.im()) v = -v;
  return out;
}

ComplexTensor scale(const ComplexTensor& t, double s) {
  ComplexTensor out = t;
  for (auto& v : out.re()) v *= s;
  for (auto& v : out.im()) v *= s;
  return out;
}

RealTensor magnitude(const ComplexTensor& t) {
  RealTensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = std::hypot(t.re()[i], t.im()[i]);
  return out;
}

RealTensor phase(const ComplexTensor& t) {
  RealTensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double re = t.re()[i], im = t.im()[i];
    if (re == 0.0 && im == 0.0) {
      out[i] = 0.0;
      continue;
    }
    double a = std::atan2(im, re);
    // atan2(-0.0, x<0) returns -pi; fold onto the (-pi, pi] branch.
    if (a <= -std::numbers::pi) a = std::numbers::pi;
    out[i] = a;
  }
  return out;
}

ComplexTensor from_polar(const RealTensor& mag, const RealTensor& ph) {
  require_same_shape(mag.shape(), ph.shape(), "from_polar");
  ComplexTensor out(mag.shape());
  for (std::size_t i = 0; i < mag.size(); ++i) {
    out.re()[i] = mag[i] * std::cos(ph[i]);
    out.im()[i] = mag[i] * std::sin(ph[i]);
  }
  return out;
}

void write_tensor(std::ostream& os, const ComplexTensor& t) {
  os.write(kTensorMagic, sizeof(kTensorMagic));
  detail::write_u32_le(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) detail::write_u32_le(os, static_cast<std::uint32_t>(d));
  for (double v : t.re()) detail::write_f64_le(os, v);
  for (double v : t.im()) detail::write_f64_le(os, v);
  if (!os) throw std::runtime_error("failed writing tensor");
}

ComplexTensor read_tensor(std::istream& is) {
  char magic[8];
  detail::read_exact(is, magic, 8, "tensor magic");
  if (!std::equal(magic, magic + 8, kTensorMagic)) {
    throw FormatError("bad tensor magic (expected CVTNSR01)");
  }
  const auto rank = detail::read_u32_le(is, "tensor rank");
  if (rank == 0 || rank > 4) {
    throw FormatError("tensor rank " + std::to_string(rank) + " out of range 1..4");
  }
  Shape shape(rank);
  for (auto& d : shape) d = detail::read_u32_le(is, "tensor dims");
  check_shape(shape);
  const auto n = shape_numel(shape);
  std::vector<double> re(n), im(n);
  for (auto& v : re) v = detail::read_f64_le(is, "real plane");
  for (auto& v : im) v = detail::read_f64_le(is, "imag plane");
  return ComplexTensor(std::move(shape), std::move(re), std::move(im));
}

void save_tensor(const std::string& path, const ComplexTensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_tensor(os, t);
}

ComplexTensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_tensor(is);
}

}  // namespace cvnn
