#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace segkit {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Batch × height × width × channels. A plain image is n == 1.
struct Shape {
  int n = 1;
  int h = 0;
  int w = 0;
  int c = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w) * static_cast<std::size_t>(c);
  }
  std::size_t pixels() const { return static_cast<std::size_t>(n) * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense NHWC grid of scalars, row-major with channels innermost.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(int h, int w, int c, T fill = T(0)) : Tensor(Shape{1, h, w, c}, fill) {}
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape) {
    if (shape.n <= 0 || shape.h <= 0 || shape.w <= 0 || shape.c <= 0)
      throw ShapeError("tensor dimensions must be positive, got " + shape.str());
    data_.assign(shape.numel(), fill);
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (shape.n <= 0 || shape.h <= 0 || shape.w <= 0 || shape.c <= 0)
      throw ShapeError("tensor dimensions must be positive, got " + shape.str());
    if (data_.size() != shape.numel())
      throw ShapeError("data length does not match shape " + shape.str());
  }

  const Shape& shape() const { return shape_; }
  int batch() const { return shape_.n; }
  int height() const { return shape_.h; }
  int width() const { return shape_.w; }
  int channels() const { return shape_.c; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(int n, int y, int x, int ch) const {
    return ((static_cast<std::size_t>(n) * shape_.h + y) * shape_.w + x) * shape_.c + ch;
  }
  std::size_t index(int y, int x, int ch) const { return index(0, y, x, ch); }

  T& at(int y, int x, int ch) { return data_[index(y, x, ch)]; }
  const T& at(int y, int x, int ch) const { return data_[index(y, x, ch)]; }
  T& at(int n, int y, int x, int ch) { return data_[index(n, y, x, ch)]; }
  const T& at(int n, int y, int x, int ch) const { return data_[index(n, y, x, ch)]; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  // Channel vector of one pixel.
  std::span<T> pixel(int n, int y, int x) {
    return std::span<T>(data_).subspan(index(n, y, x, 0), shape_.c);
  }
  std::span<const T> pixel(int n, int y, int x) const {
    return std::span<const T>(data_).subspan(index(n, y, x, 0), shape_.c);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  bool all_finite() const;

  // Image k of a batch as an n == 1 tensor.
  Tensor slice(int k) const;

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_{1, 0, 0, 0};
  std::vector<T> data_;
};

// Stacks n == 1 tensors of identical shape into one batch.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> items);

}  // namespace segkit
