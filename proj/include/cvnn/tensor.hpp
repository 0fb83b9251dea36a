#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cvnn {

class Rng;

using Shape = std::vector<std::size_t>;

/// Thrown for any shape or rank violation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a binary or text file does not follow its declared format.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
/// Rank must be 1..4 and every dimension at least 1.
void check_shape(const Shape& shape);

/// Real-valued N-d array (labels, magnitudes, real-valued outputs).
class RealTensor {
 public:
  RealTensor() = default;
  explicit RealTensor(Shape shape, double fill = 0.0);
  RealTensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool operator==(const RealTensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Complex N-d array stored as two contiguous planes (real, imaginary) of
/// 64-bit doubles, row-major, rank 1..4.
class ComplexTensor {
 public:
  ComplexTensor() = default;
  explicit ComplexTensor(Shape shape);
  ComplexTensor(Shape shape, std::vector<double> re, std::vector<double> im);

  static ComplexTensor zeros(Shape shape) { return ComplexTensor(std::move(shape)); }
  static ComplexTensor filled(Shape shape, double re, double im);
  static ComplexTensor scalar(double re, double im = 0.0);

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return re_.size(); }
  bool empty() const { return re_.empty(); }

  std::span<double> re() { return re_; }
  std::span<const double> re() const { return re_; }
  std::span<double> im() { return im_; }
  std::span<const double> im() const { return im_; }

  /// Same data, new shape with equal element count.
  ComplexTensor reshaped(Shape shape) const;

  /// Uniform fill of both planes on [lo, hi).
  void fill_uniform(Rng& rng, double lo, double hi);
  /// Independent N(0, stddev^2) fill of both planes.
  void fill_normal(Rng& rng, double stddev);

  bool operator==(const ComplexTensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> re_;
  std::vector<double> im_;
};

ComplexTensor from_parts(const RealTensor& real, const RealTensor& imag);
RealTensor real_part(const ComplexTensor& t);
RealTensor imag_part(const ComplexTensor& t);

ComplexTensor cadd(const ComplexTensor& a, const ComplexTensor& b);
ComplexTensor csub(const ComplexTensor& a, const ComplexTensor& b);
ComplexTensor cmul(const ComplexTensor& a, const ComplexTensor& b);
ComplexTensor conj(const ComplexTensor& t);
ComplexTensor scale(const ComplexTensor& t, double s);

RealTensor magnitude(const ComplexTensor& t);
/// Principal argument in (-pi, pi]; phase(0) is 0.
RealTensor phase(const ComplexTensor& t);
/// mag * exp(i*phase), elementwise.
ComplexTensor from_polar(const RealTensor& mag, const RealTensor& phase);

/// Binary tensor format: "CVTNSR01", u32 rank, u32 dims, real plane, imag
/// plane; all little-endian.
void write_tensor(std::ostream& os, const ComplexTensor& t);
ComplexTensor read_tensor(std::istream& is);
void save_tensor(const std::string& path, const ComplexTensor& t);
ComplexTensor load_tensor(const std::string& path);

}  // namespace cvnn
