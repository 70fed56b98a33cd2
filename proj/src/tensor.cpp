#include "slmfuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include "slmfuse/error.hpp"

namespace slmfuse {

namespace {

std::size_t extent_product(const std::vector<std::size_t>& shape) {
  if (shape.empty()) {
    throw ValidationError("tensor shape must have at least one extent");
  }
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) {
      throw ValidationError("tensor extents must be positive, got " +
                            shape_string(shape));
    }
    n *= e;
  }
  return n;
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(extent_product(shape_), fill) {
  if (!std::isfinite(fill)) {
    throw NumericalError("tensor fill value is not finite");
  }
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (extent_product(shape_) != data_.size()) {
    throw ValidationError("tensor shape " + slmfuse::shape_string(shape_) + " needs " +
                          std::to_string(extent_product(shape_)) +
                          " values, got " + std::to_string(data_.size()));
  }
  require_finite("tensor construction");
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.empty()) return 0;
  return data_.size() / shape_.back();
}

std::size_t Tensor::cols() const noexcept {
  return shape_.empty() ? 0 : shape_.back();
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

void Tensor::require_finite(const std::string& context) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw NumericalError("non-finite value in " + context + " at flat index " +
                           std::to_string(i));
    }
  }
}

std::string Tensor::shape_string() const { return slmfuse::shape_string(shape_); }

std::uint64_t fnv1a(const Tensor& t, std::uint64_t h) {
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t e : t.shape()) {
    const std::uint64_t e64 = e;
    mix(&e64, sizeof e64);
  }
  mix(t.data(), t.size() * sizeof(double));
  return h;
}

}  // namespace slmfuse
