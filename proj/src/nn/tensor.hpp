#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace iopfl::nn {

using Shape4 = std::array<std::size_t, 4>;

/// Dense NCHW tensor of doubles. Parameters use the same type: a conv kernel
/// is (out, in, k, k), biases and BN vectors are (1, C, 1, 1).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape4 shape, double fill = 0.0);
  Tensor(Shape4 shape, std::vector<double> data);

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

  const Shape4& shape() const noexcept { return shape_; }
  std::size_t n() const noexcept { return shape_[0]; }
  std::size_t c() const noexcept { return shape_[1]; }
  std::size_t h() const noexcept { return shape_[2]; }
  std::size_t w() const noexcept { return shape_[3]; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t plane() const noexcept { return shape_[2] * shape_[3]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& raw() noexcept { return data_; }
  const std::vector<double>& raw() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t y,
                    std::size_t x) const noexcept {
    return ((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
  }
  double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[index(n, c, y, x)];
  }
  double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[index(n, c, y, x)];
  }

  /// Pointer to the (n, c) spatial plane.
  double* plane_ptr(std::size_t n, std::size_t c) noexcept {
    return data_.data() + (n * shape_[1] + c) * plane();
  }
  const double* plane_ptr(std::size_t n, std::size_t c) const noexcept {
    return data_.data() + (n * shape_[1] + c) * plane();
  }

  void fill(double v);
  bool all_finite() const noexcept;
  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

  /// this += alpha * other
  void axpy(double alpha, const Tensor& other);
  void scale(double alpha);

  /// Samples [begin, end) along the batch axis.
  Tensor slice_batch(std::size_t begin, std::size_t end) const;
  /// Stacks tensors with equal (c, h, w) along the batch axis.
  static Tensor concat_batch(std::span<const Tensor> parts);

  bool operator==(const Tensor& o) const noexcept {
    return shape_ == o.shape_ && data_ == o.data_;
  }

 private:
  Shape4 shape_{0, 0, 0, 0};
  std::vector<double> data_;
};

std::string shape_string(const Shape4& s);
std::size_t shape_volume(const Shape4& s);

}  // namespace iopfl::nn
