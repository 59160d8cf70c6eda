#include "nn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "nn/error.hpp"

namespace iopfl::nn {

std::size_t shape_volume(const Shape4& s) { return s[0] * s[1] * s[2] * s[3]; }

std::string shape_string(const Shape4& s) {
  return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," +
         std::to_string(s[2]) + "," + std::to_string(s[3]) + ")";
}

Tensor::Tensor(Shape4 shape, double fill)
    : shape_(shape), data_(shape_volume(shape), fill) {}

Tensor::Tensor(Shape4 shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_volume(shape_)) {
    fail(ErrorKind::kShape, "tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string(shape_));
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::axpy(double alpha, const Tensor& other) {
  if (!same_shape(other)) {
    fail(ErrorKind::kShape, "axpy shape mismatch " + shape_string(shape_) + " vs " +
                                shape_string(other.shape_));
  }
  const double* src = other.data();
  double* dst = data();
  for (std::size_t i = 0; i < data_.size(); ++i) dst[i] += alpha * src[i];
}

void Tensor::scale(double alpha) {
  for (double& v : data_) v *= alpha;
}

Tensor Tensor::slice_batch(std::size_t begin, std::size_t end) const {
  if (begin > end || end > shape_[0]) fail(ErrorKind::kShape, "batch slice out of range");
  Tensor out({end - begin, shape_[1], shape_[2], shape_[3]});
  const std::size_t stride = shape_[1] * shape_[2] * shape_[3];
  std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
            data_.begin() + static_cast<std::ptrdiff_t>(end * stride), out.data_.begin());
  return out;
}

Tensor Tensor::concat_batch(std::span<const Tensor> parts) {
  if (parts.empty()) return {};
  Shape4 s = parts.front().shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.c() != s[1] || p.h() != s[2] || p.w() != s[3]) {
      fail(ErrorKind::kShape, "concat_batch: incompatible shapes");
    }
    total += p.n();
  }
  s[0] = total;
  Tensor out(s);
  auto it = out.data_.begin();
  for (const auto& p : parts) it = std::copy(p.data_.begin(), p.data_.end(), it);
  return out;
}

}  // namespace iopfl::nn
