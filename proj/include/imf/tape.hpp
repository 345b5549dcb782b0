#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <vector>

#include "imf/tensor.hpp"

namespace imf {

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; valid while the tape
// is alive. Tapes are pinned in memory (non-movable), so the pointer is a
// reliable identity for the "loss not on tape" contract check.
struct Var {
  int id = -1;
  const Tape* tape = nullptr;
  bool valid() const { return id >= 0 && tape != nullptr; }
};

// View handed to a backward rule during replay. in_grad(k) is a scratch
// gradient slot for input k, zero-initialized on first access; rules add
// their contribution into it.
class Backprop {
 public:
  const std::vector<double>& out_grad() const { return *out_grad_; }
  const Tensor& out_value() const;
  const Tensor& in_value(int k) const;
  std::vector<double>& in_grad(int k);

 private:
  friend class Tape;
  Tape* tape_ = nullptr;
  int node_id_ = -1;
  const std::vector<double>* out_grad_ = nullptr;
  std::vector<std::vector<double>>* scratch_ = nullptr;
};

using BackwardFn = std::function<void(Backprop&)>;

// Reverse-mode tape. Operations append nodes in execution order; backward()
// replays them in reverse exactly once and then adds the fresh per-call
// gradients into every node's persistent grad slot (and into bound
// Parameters), so two backward calls without zeroing accumulate exactly the
// sum of two single-call gradients.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  // Leaves.
  Var leaf(Tensor value);
  Var param(Parameter& p);

  // Elementwise and structural ops.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var relu(Var a);
  Var sqrt_elem(Var a);  // d/dx at x == 0 defined as 0
  Var reshape(Var a, std::vector<int64_t> new_shape);

  // Matrix ops.
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var row_softmax(Var a, double scale);
  Var add_row_bias(Var a, Var bias);       // bias shape [n] or [1,n]
  Var linear(Var a, Parameter& weight, Parameter& bias);
  Var concat_cols(Var a, Var b);
  Var row_normalize(Var a);                // L2 per row; zero rows pass through
  Var row_feature_norm(Var a, Parameter& gain, Parameter& bias, double eps = 1e-6);

  // Reductions and indexing.
  Var sum(Var a);
  Var mean(Var a);
  Var row_sum(Var a);                      // [m,n] -> [m,1]
  Var pick(Var a, int64_t flat_index);     // scalar element
  Var gather_rows(Var a, std::vector<int64_t> rows);

  // Escape hatch for modules with custom kernels (sparse conv, conv2d).
  Var custom(Tensor out_value, std::vector<Var> inputs, BackwardFn back);

  void backward(Var loss);
  void zero_grad();  // clears node grad slots (parameters are zeroed by their owner)

  const Tensor& value(Var v) const;
  // Accumulated gradient of a node; empty if no backward reached it.
  const std::vector<double>& grad(Var v) const;
  Tensor grad_tensor(Var v) const;

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Tensor value;
    std::vector<int> inputs;
    BackwardFn back;
    Parameter* bound = nullptr;
    std::vector<double> grad;  // persistent accumulated gradient
  };

  friend class Backprop;
  Var push(Tensor value, std::vector<int> inputs, BackwardFn back,
           Parameter* bound = nullptr);
  int check(Var v) const;

  // deque keeps references to node values stable while new ops are recorded
  std::deque<Node> nodes_;
};

}  // namespace imf
