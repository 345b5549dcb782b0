#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "imf/error.hpp"
#include "imf/rng.hpp"

namespace imf {

// Dense n-dimensional array of doubles, row-major, with an optional grad
// slot of identical shape. grad is empty until a backward pass fills it.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> values;
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s, double fill = 0.0);
  Tensor(std::vector<int64_t> s, std::vector<double> v);

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
  static Tensor uniform(std::vector<int64_t> s, Rng& rng, double lo, double hi);

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }

  // 2-D accessors.
  int64_t rows() const;
  int64_t cols() const;
  double& at(int64_t r, int64_t c) { return values[r * shape[1] + c]; }
  double at(int64_t r, int64_t c) const { return values[r * shape[1] + c]; }

  bool all_finite() const;
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_str() const;

  void ensure_grad();  // allocate zero grad if absent
};

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_to_string(const std::vector<int64_t>& shape);

// Named learnable tensor. Gradient accumulates additively across backward
// calls until zero_grad().
struct Parameter {
  std::string name;
  Tensor tensor;

  Parameter() = default;
  Parameter(std::string n, Tensor t) : name(std::move(n)), tensor(std::move(t)) {}

  int64_t numel() const { return tensor.numel(); }
  void zero_grad() { tensor.grad.assign(tensor.values.size(), 0.0); }
};

}  // namespace imf
