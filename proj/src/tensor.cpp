#include "segkit/tensor.hpp"

#include <cmath>

namespace segkit {

std::string Shape::str() const {
  return std::to_string(n) + "x" + std::to_string(h) + "x" + std::to_string(w) + "x" +
         std::to_string(c);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
Tensor<T> Tensor<T>::slice(int k) const {
  if (k < 0 || k >= shape_.n) throw ShapeError("batch index out of range");
  Shape s = shape_;
  s.n = 1;
  const std::size_t per = s.numel();
  std::vector<T> d(data_.begin() + static_cast<std::ptrdiff_t>(per * k),
                   data_.begin() + static_cast<std::ptrdiff_t>(per * (k + 1)));
  return Tensor<T>(s, std::move(d));
}

template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
  if (items.empty()) throw ShapeError("stack of zero tensors");
  Shape s = items.front().shape();
  for (const auto& t : items)
    if (t.shape() != s || s.n != 1) throw ShapeError("stack requires equal n == 1 shapes");
  s.n = static_cast<int>(items.size());
  std::vector<T> d;
  d.reserve(s.numel());
  for (const auto& t : items) d.insert(d.end(), t.raw().begin(), t.raw().end());
  return Tensor<T>(s, std::move(d));
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> stack(std::span<const Tensor<float>>);
template Tensor<double> stack(std::span<const Tensor<double>>);

}  // namespace segkit
