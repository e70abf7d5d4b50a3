#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dimnet {

// Dense row-major tensor of doubles. Shapes are small (rank <= 4 in
// practice); all layer math indexes the flat buffer directly.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shp, double fill = 0.0)
      : shape(std::move(shp)), data(numel_of(shape), fill) {}
  Tensor(std::vector<std::size_t> shp, std::vector<double> values)
      : shape(std::move(shp)), data(std::move(values)) {
    if (data.size() != numel_of(shape))
      throw std::invalid_argument("Tensor: data length does not match shape");
  }

  static std::size_t numel_of(const std::vector<std::size_t>& shp) {
    std::size_t n = 1;
    for (std::size_t d : shp) n *= d;
    return n;
  }

  std::size_t numel() const { return data.size(); }
  bool empty() const { return data.empty(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
};

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace dimnet
