#include "bat/tensor.hpp"

#include <numeric>
#include <sstream>

namespace bat {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != std::int64_t(data.size()))
    throw ShapeError("tensor: " + std::to_string(data.size()) + " values for shape " + shape_str(shape));
  for (auto d_ : shape)
    if (d_ <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
}

Tensor Tensor::zeros(Shape s) {
  auto n = shape_numel(s);
  return Tensor(std::move(s), std::vector<double>(std::size_t(n), 0.0));
}

Tensor Tensor::full(Shape s, double v) {
  auto n = shape_numel(s);
  return Tensor(std::move(s), std::vector<double>(std::size_t(n), v));
}

Tensor Tensor::from(Shape s, std::initializer_list<double> v) {
  return Tensor(std::move(s), std::vector<double>(v));
}

std::vector<double>& Tensor::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

void Tensor::zero_grad() {
  if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
}

}  // namespace bat
