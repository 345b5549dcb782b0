#include "imf/tensor.hpp"

#include <cmath>
#include <sstream>

namespace imf {

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const std::vector<int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int64_t> s, double fill) : shape(std::move(s)) {
  for (int64_t d : shape)
    require(d >= 0, ErrorCategory::dimension, "negative dimension in shape ",
            shape_to_string(shape));
  values.assign(shape_numel(shape), fill);
}

Tensor::Tensor(std::vector<int64_t> s, std::vector<double> v)
    : shape(std::move(s)), values(std::move(v)) {
  require(shape_numel(shape) == static_cast<int64_t>(values.size()),
          ErrorCategory::dimension, "value count ", values.size(),
          " does not match shape ", shape_to_string(shape));
}

Tensor Tensor::uniform(std::vector<int64_t> s, Rng& rng, double lo, double hi) {
  Tensor t(std::move(s));
  for (double& v : t.values) v = rng.uniform(lo, hi);
  return t;
}

int64_t Tensor::rows() const {
  require(ndim() == 2, ErrorCategory::dimension, "rows() on non-2D tensor ",
          shape_str());
  return shape[0];
}

int64_t Tensor::cols() const {
  require(ndim() == 2, ErrorCategory::dimension, "cols() on non-2D tensor ",
          shape_str());
  return shape[1];
}

bool Tensor::all_finite() const {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape); }

void Tensor::ensure_grad() {
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

}  // namespace imf
