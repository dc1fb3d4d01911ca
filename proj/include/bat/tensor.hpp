#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace bat {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

// Raised by every operation whose inputs have inconsistent or invalid shapes.
// Messages name the operation and the offending shapes.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Dense row-major contiguous tensor of 64-bit floats. `grad` is a same-shape
// accumulator that stays empty until something writes a gradient.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d);

  std::int64_t numel() const { return std::int64_t(data.size()); }

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);
  static Tensor from(Shape s, std::initializer_list<double> v);

  double& at(std::int64_t i) { return data[std::size_t(i)]; }
  double at(std::int64_t i) const { return data[std::size_t(i)]; }

  // Allocates (zeroed) grad storage if absent.
  std::vector<double>& ensure_grad();
  void zero_grad();
};

}  // namespace bat
