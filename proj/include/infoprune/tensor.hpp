#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "infoprune/error.hpp"

namespace infoprune {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Named dense float32 array, row-major.
struct Tensor {
  std::string name;
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::string n, Shape s)
      : name(std::move(n)), shape(std::move(s)),
        data(static_cast<std::size_t>(shape_product(shape)), 0.0f) {}
  Tensor(std::string n, Shape s, std::vector<float> d)
      : name(std::move(n)), shape(std::move(s)), data(std::move(d)) {}

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t dim(std::size_t i) const { return shape.at(i); }

  /// Contiguous slice along the leading dimension.
  std::span<const float> row(std::int64_t i) const {
    const auto stride = static_cast<std::size_t>(numel() / shape.at(0));
    return {data.data() + static_cast<std::size_t>(i) * stride, stride};
  }

  bool operator==(const Tensor&) const = default;
};

using TensorMap = std::map<std::string, Tensor>;

/// Checks the record invariants: rank 1..4, positive dims, size agreement,
/// finite values.
inline void validate_tensor(const Tensor& t) {
  require(!t.shape.empty() && t.shape.size() <= 4,
          "tensor '" + t.name + "': rank must be 1-4, got " +
              std::to_string(t.shape.size()));
  for (auto d : t.shape)
    require(d > 0, "tensor '" + t.name + "': non-positive dimension in " +
                       shape_str(t.shape));
  require(shape_product(t.shape) == t.numel(),
          "tensor '" + t.name + "': size mismatch, shape " +
              shape_str(t.shape) + " needs " +
              std::to_string(shape_product(t.shape)) + " values, got " +
              std::to_string(t.numel()));
  for (float v : t.data)
    require(std::isfinite(v), "tensor '" + t.name + "': non-finite weight");
}

}  // namespace infoprune
