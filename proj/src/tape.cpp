#include "imf/tape.hpp"

#include <algorithm>
#include <cmath>

#include "imf/kernels.hpp"

namespace imf {

const Tensor& Backprop::out_value() const { return tape_->nodes_[node_id_].value; }

const Tensor& Backprop::in_value(int k) const {
  return tape_->nodes_[tape_->nodes_[node_id_].inputs[k]].value;
}

std::vector<double>& Backprop::in_grad(int k) {
  int id = tape_->nodes_[node_id_].inputs[k];
  auto& slot = (*scratch_)[id];
  if (slot.empty()) slot.assign(tape_->nodes_[id].value.values.size(), 0.0);
  return slot;
}

Var Tape::push(Tensor value, std::vector<int> inputs, BackwardFn back,
               Parameter* bound) {
  nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(back),
                        bound, {}});
  return Var{static_cast<int>(nodes_.size()) - 1, this};
}

int Tape::check(Var v) const {
  require(v.tape == this, ErrorCategory::contract,
          "tensor does not belong to this tape");
  require(v.id >= 0 && v.id < size(), ErrorCategory::contract,
          "invalid tape node id ", v.id);
  return v.id;
}

const Tensor& Tape::value(Var v) const { return nodes_[check(v)].value; }

const std::vector<double>& Tape::grad(Var v) const {
  return nodes_[check(v)].grad;
}

Tensor Tape::grad_tensor(Var v) const {
  const Node& n = nodes_[check(v)];
  Tensor g(n.value.shape);
  if (!n.grad.empty()) g.values = n.grad;
  return g;
}

Var Tape::leaf(Tensor value) { return push(std::move(value), {}, nullptr); }

Var Tape::param(Parameter& p) {
  return push(p.tensor, {}, nullptr, &p);
}

Var Tape::add(Var a, Var b) {
  int ia = check(a), ib = check(b);
  const Tensor& ta = nodes_[ia].value;
  const Tensor& tb = nodes_[ib].value;
  require(ta.same_shape(tb), ErrorCategory::dimension, "add shape mismatch ",
          ta.shape_str(), " vs ", tb.shape_str());
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i)
    out.values[i] = ta.values[i] + tb.values[i];
  return push(std::move(out), {ia, ib}, [](Backprop& bp) {
    const auto& g = bp.out_grad();
    auto& ga = bp.in_grad(0);
    auto& gb = bp.in_grad(1);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
}

Var Tape::sub(Var a, Var b) {
  int ia = check(a), ib = check(b);
  const Tensor& ta = nodes_[ia].value;
  const Tensor& tb = nodes_[ib].value;
  require(ta.same_shape(tb), ErrorCategory::dimension, "sub shape mismatch ",
          ta.shape_str(), " vs ", tb.shape_str());
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i)
    out.values[i] = ta.values[i] - tb.values[i];
  return push(std::move(out), {ia, ib}, [](Backprop& bp) {
    const auto& g = bp.out_grad();
    auto& ga = bp.in_grad(0);
    auto& gb = bp.in_grad(1);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  });
}

Var Tape::mul(Var a, Var b) {
  int ia = check(a), ib = check(b);
  const Tensor& ta = nodes_[ia].value;
  const Tensor& tb = nodes_[ib].value;
  require(ta.same_shape(tb), ErrorCategory::dimension, "mul shape mismatch ",
          ta.shape_str(), " vs ", tb.shape_str());
  Tensor out(ta.shape);
  for (int64_t i = 0; i < ta.numel(); ++i)
    out.values[i] = ta.values[i] * tb.values[i];
  return push(std::move(out), {ia, ib}, [](Backprop& bp) {
    const auto& g = bp.out_grad();
    const Tensor& va = bp.in_value(0);
    const Tensor& vb = bp.in_value(1);
    auto& ga = bp.in_grad(0);
    auto& gb = bp.in_grad(1);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * vb.values[i];
      gb[i] += g[i] * va.values[i];
    }
  });
}

Var Tape::scale(Var a, double s) {
  int ia = check(a);
  Tensor out(nodes_[ia].value.shape);
  for (int64_t i = 0; i < out.numel(); ++i)
    out.values[i] = nodes_[ia].value.values[i] * s;
  return push(std::move(out), {ia}, [s](Backprop& bp) {
    const auto& g = bp.out_grad();
    auto& ga = bp.in_grad(0);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

Var Tape::add_scalar(Var a, double s) {
  int ia = check(a);
  Tensor out(nodes_[ia].value.shape);
  for (int64_t i = 0; i < out.numel(); ++i)
    out.values[i] = nodes_[ia].value.values[i] + s;
  return push(std::move(out), {ia}, [](Backprop& bp) {
    const auto& g = bp.out_grad();
    auto& ga = bp.in_grad(0);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var Tape::relu(Var a) {
  int ia = check(a);
  Tensor out(nodes_[ia].value.shape);
  for (int64_t i = 0; i < out.numel(); ++i)
    out.values[i] = std::max(0.0, nodes_[ia].value.values[i]);
  // Subgradient at exactly 0 is 0.
  return push(std::move(out), {ia}, [](Backprop& bp) {
    const auto& g = bp.out_grad();
    const Tensor& x = bp.in_value(0);
    auto& ga = bp.in_grad(0);
    for (size_t i = 0; i < g.size(); ++i)
      if (x.values[i] > 0.0) ga[i] += g[i];
  });
}

Var Tape::sqrt_elem(Var a) {
  int ia = check(a);
  Tensor out(nodes_[ia].value.shape);
  for (int64_t i = 0; i < out.numel(); ++i)
    out.values[i] = std::sqrt(nodes_[ia].value.values[i]);
  // Subgradient at exactly 0 is 0 so hinge terms that vanish stay NaN-free.
  return push(std::move(out), {ia}, [](Backprop& bp) {
    const auto& g = bp.out_grad();
    const Tensor& x = bp.in_value(0);
    const Tensor& y = bp.out_value();
    auto& ga = bp.in_grad(0);
    for (size_t i = 0; i < g.size(); ++i)
      if (x.values[i] > 0.0) ga[i] += g[i] * 0.5 / y.values[i];
  });
}

Var Tape::reshape(Var a, std::vector<int64_t> new_shape) {
  int ia = check(a);
  require(shape_numel(new_shape) == nodes_[ia].value.numel(),
          ErrorCategory::dimension, "reshape from ",
          nodes_[ia].value.shape_str(), " to ", shape_to_string(new_shape));
  Tensor out(new_shape, nodes_[ia].value.values);
  return push(std::move(out), {ia}, [](Backprop& bp) {
    const auto& g = bp.out_grad();
    auto& ga = bp.in_grad(0);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var Tape::matmul(Var a, Var b) {
  int ia = check(a), ib = check(b);
  const Tensor& ta = nodes_[ia].value;
  const Tensor& tb = nodes_[ib].value;
  require(ta.ndim() == 2 && tb.ndim() == 2 && ta.shape[1] == tb.shape[0],
          ErrorCategory::dimension, "matmul shape mismatch ", ta.shape_str(),
          " vs ", tb.shape_str());
  int64_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
  Tensor out({m, n});
  kern::matmul_acc(ta.values.data(), tb.values.data(), out.values.data(), m, k, n);
  return push(std::move(out), {ia, ib}, [m, k, n](Backprop& bp) {
    const auto& g = bp.out_grad();
    const Tensor& va = bp.in_value(0);
    const Tensor& vb = bp.in_value(1);
    kern::matmul_nt_acc(g.data(), vb.values.data(), bp.in_grad(0).data(), m, k, n);
    kern::matmul_tn_acc(va.values.data(), g.data(), bp.in_grad(1).data(), m, k, n);
  });
}

Var Tape::transpose(Var a) {
  int ia = check(a);
  const Tensor& ta = nodes_[ia].value;
  require(ta.ndim() == 2, ErrorCategory::dimension,
          "transpose expects 2-D, got ", ta.shape_str());
  int64_t m = ta.shape[0], n = ta.shape[1];
  Tensor out({n, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out.values[j * m + i] = ta.values[i * n + j];
  return push(std::move(out), {ia}, [m, n](Backprop& bp) {
    const auto& g = bp.out_grad();
    auto& ga = bp.in_grad(0);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

Var Tape::row_softmax(Var a, double sc) {
  int ia = check(a);
  const Tensor& ta = nodes_[ia].value;
  require(ta.ndim() == 2, ErrorCategory::dimension,
          "row_softmax expects 2-D, got ", ta.shape_str());
  require(sc > 0.0, ErrorCategory::contract, "row_softmax scale must be > 0");
  require(ta.all_finite(), ErrorCategory::numeric,
          "row_softmax input contains non-finite values");
  int64_t m = ta.shape[0], n = ta.shape[1];
  Tensor out({m, n});
  for (int64_t i = 0; i < m; ++i) {
    const double* x = ta.values.data() + i * n;
    double* y = out.values.data() + i * n;
    double mx = x[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      y[j] = std::exp((x[j] - mx) / sc);
      z += y[j];
    }
    for (int64_t j = 0; j < n; ++j) y[j] /= z;
  }
  return push(std::move(out), {ia}, [m, n, sc](Backprop& bp) {
    const auto& g = bp.out_grad();
    const Tensor& y = bp.out_value();
    auto& ga = bp.in_grad(0);
    for (int64_t i = 0; i < m; ++i) {
      const double* gi = g.data() + i * n;
      const double* yi = y.values.data() + i * n;
      double dot = 0.0;
      for (int64_t j = 0; j < n; ++j) dot += gi[j] * yi[j];
      for (int64_t j = 0; j < n; ++j)
        ga[i * n + j] += yi[j] * (gi[j] - dot) / sc;
    }
  });
}

Var Tape::add_row_bias(Var a, Var bias) {
  int ia = check(a), ib = check(bias);
  const Tensor& ta = nodes_[ia].value;
  const Tensor& tb = nodes_[ib].value;
  require(ta.ndim() == 2, ErrorCategory::dimension,
          "add_row_bias expects 2-D input, got ", ta.shape_str());
  require(tb.numel() == ta.shape[1], ErrorCategory::dimension,
          "bias length ", tb.numel(), " does not match columns of ",
          ta.shape_str());
  int64_t m = ta.shape[0], n = ta.shape[1];
  Tensor out({m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j)
      out.values[i * n + j] = ta.values[i * n + j] + tb.values[j];
  return push(std::move(out), {ia, ib}, [m, n](Backprop& bp) {
    const auto& g = bp.out_grad();
    auto& ga = bp.in_grad(0);
    auto& gb = bp.in_grad(1);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) {
        ga[i * n + j] += g[i * n + j];
        gb[j] += g[i * n + j];
      }
  });
}

Var Tape::linear(Var a, Parameter& weight, Parameter& bias) {
  return add_row_bias(matmul(a, param(weight)), param(bias));
}

Var Tape::concat_cols(Var a, Var b) {
  int ia = check(a), ib = check(b);
  const Tensor& ta = nodes_[ia].value;
  const Tensor& tb = nodes_[ib].value;
  require(ta.ndim() == 2 && tb.ndim() == 2 && ta.shape[0] == tb.shape[0],
          ErrorCategory::dimension, "concat_cols row mismatch ", ta.shape_str(),
          " vs ", tb.shape_str());
  int64_t m = ta.shape[0], p = ta.shape[1], q = tb.shape[1];
  Tensor out({m, p + q});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < p; ++j)
      out.values[i * (p + q) + j] = ta.values[i * p + j];
    for (int64_t j = 0; j < q; ++j)
      out.values[i * (p + q) + p + j] = tb.values[i * q + j];
  }
  return push(std::move(out), {ia, ib}, [m, p, q](Backprop& bp) {
    const auto& g = bp.out_grad();
    auto& ga = bp.in_grad(0);
    auto& gb = bp.in_grad(1);
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < p; ++j) ga[i * p + j] += g[i * (p + q) + j];
      for (int64_t j = 0; j < q; ++j) gb[i * q + j] += g[i * (p + q) + p + j];
    }
  });
}

Var Tape::row_normalize(Var a) {
  int ia = check(a);
  const Tensor& ta = nodes_[ia].value;
  require(ta.ndim() == 2, ErrorCategory::dimension,
          "row_normalize expects 2-D, got ", ta.shape_str());
  int64_t m = ta.shape[0], n = ta.shape[1];
  Tensor out({m, n});
  std::vector<double> norms(m, 0.0);
  for (int64_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      double v = ta.values[i * n + j];
      s += v * v;
    }
    norms[i] = std::sqrt(s);
    double inv = norms[i] > 0.0 ? 1.0 / norms[i] : 1.0;
    for (int64_t j = 0; j < n; ++j)
      out.values[i * n + j] = ta.values[i * n + j] * inv;
  }
  return push(std::move(out), {ia},
              [m, n, norms = std::move(norms)](Backprop& bp) {
                const auto& g = bp.out_grad();
                const Tensor& y = bp.out_value();
                auto& ga = bp.in_grad(0);
                for (int64_t i = 0; i < m; ++i) {
                  if (norms[i] <= 0.0) continue;
                  const double* gi = g.data() + i * n;
                  const double* yi = y.values.data() + i * n;
                  double dot = 0.0;
                  for (int64_t j = 0; j < n; ++j) dot += gi[j] * yi[j];
                  for (int64_t j = 0; j < n; ++j)
                    ga[i * n + j] += (gi[j] - yi[j] * dot) / norms[i];
                }
              });
}

Var Tape::row_feature_norm(Var a, Parameter& gain, Parameter& bias, double eps) {
  int ia = check(a);
  {
    const Tensor& shp = nodes_[ia].value;
    require(shp.ndim() == 2, ErrorCategory::dimension,
            "row_feature_norm expects 2-D, got ", shp.shape_str());
    require(gain.tensor.numel() == shp.shape[1] &&
                bias.tensor.numel() == shp.shape[1],
            ErrorCategory::dimension, "row_feature_norm gain/bias length vs ",
            shp.shape_str());
  }
  // param() appends nodes, so take references only afterwards.
  int ig = check(param(gain));
  int ibv = check(param(bias));
  const Tensor& ta = nodes_[ia].value;
  const Tensor& tg = nodes_[ig].value;
  const Tensor& tb = nodes_[ibv].value;
  int64_t m = ta.shape[0], n = ta.shape[1];

  Tensor out({m, n});
  std::vector<double> xhat(static_cast<size_t>(m * n));
  std::vector<double> inv_std(m);
  for (int64_t i = 0; i < m; ++i) {
    const double* x = ta.values.data() + i * n;
    double mu = 0.0;
    for (int64_t j = 0; j < n; ++j) mu += x[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(n);
    double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (int64_t j = 0; j < n; ++j) {
      double h = (x[j] - mu) * inv;
      xhat[i * n + j] = h;
      out.values[i * n + j] = tg.values[j] * h + tb.values[j];
    }
  }
  return push(std::move(out), {ia, ig, ibv},
              [m, n, xhat = std::move(xhat),
               inv_std = std::move(inv_std)](Backprop& bp) {
                const auto& g = bp.out_grad();
                const Tensor& tg = bp.in_value(1);
                auto& ga = bp.in_grad(0);
                auto& ggain = bp.in_grad(1);
                auto& gbias = bp.in_grad(2);
                for (int64_t i = 0; i < m; ++i) {
                  const double* gi = g.data() + i * n;
                  const double* hi = xhat.data() + i * n;
                  double m1 = 0.0, m2 = 0.0;
                  for (int64_t j = 0; j < n; ++j) {
                    double gh = gi[j] * tg.values[j];
                    m1 += gh;
                    m2 += gh * hi[j];
                    ggain[j] += gi[j] * hi[j];
                    gbias[j] += gi[j];
                  }
                  m1 /= static_cast<double>(n);
                  m2 /= static_cast<double>(n);
                  for (int64_t j = 0; j < n; ++j) {
                    double gh = gi[j] * tg.values[j];
                    ga[i * n + j] += (gh - m1 - hi[j] * m2) * inv_std[i];
                  }
                }
              });
}

Var Tape::sum(Var a) {
  int ia = check(a);
  double s = 0.0;
  for (double v : nodes_[ia].value.values) s += v;
  return push(Tensor::scalar(s), {ia}, [](Backprop& bp) {
    double g = bp.out_grad()[0];
    auto& ga = bp.in_grad(0);
    for (auto& v : ga) v += g;
  });
}

Var Tape::mean(Var a) {
  int ia = check(a);
  int64_t n = nodes_[ia].value.numel();
  require(n > 0, ErrorCategory::contract, "mean of empty tensor");
  double s = 0.0;
  for (double v : nodes_[ia].value.values) s += v;
  double invn = 1.0 / static_cast<double>(n);
  return push(Tensor::scalar(s * invn), {ia}, [invn](Backprop& bp) {
    double g = bp.out_grad()[0] * invn;
    auto& ga = bp.in_grad(0);
    for (auto& v : ga) v += g;
  });
}

Var Tape::row_sum(Var a) {
  int ia = check(a);
  const Tensor& ta = nodes_[ia].value;
  require(ta.ndim() == 2, ErrorCategory::dimension,
          "row_sum expects 2-D, got ", ta.shape_str());
  int64_t m = ta.shape[0], n = ta.shape[1];
  Tensor out({m, 1});
  for (int64_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) s += ta.values[i * n + j];
    out.values[i] = s;
  }
  return push(std::move(out), {ia}, [m, n](Backprop& bp) {
    const auto& g = bp.out_grad();
    auto& ga = bp.in_grad(0);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) ga[i * n + j] += g[i];
  });
}

Var Tape::pick(Var a, int64_t flat_index) {
  int ia = check(a);
  const Tensor& ta = nodes_[ia].value;
  require(flat_index >= 0 && flat_index < ta.numel(), ErrorCategory::contract,
          "pick index ", flat_index, " out of range for ", ta.shape_str());
  return push(Tensor::scalar(ta.values[flat_index]), {ia},
              [flat_index](Backprop& bp) {
                bp.in_grad(0)[flat_index] += bp.out_grad()[0];
              });
}

Var Tape::gather_rows(Var a, std::vector<int64_t> rows) {
  int ia = check(a);
  const Tensor& ta = nodes_[ia].value;
  require(ta.ndim() == 2, ErrorCategory::dimension,
          "gather_rows expects 2-D, got ", ta.shape_str());
  int64_t n = ta.shape[1];
  for (int64_t r : rows)
    require(r >= 0 && r < ta.shape[0], ErrorCategory::contract,
            "gather_rows index ", r, " out of range for ", ta.shape_str());
  int64_t k = static_cast<int64_t>(rows.size());
  Tensor out({k, n});
  for (int64_t i = 0; i < k; ++i)
    for (int64_t j = 0; j < n; ++j)
      out.values[i * n + j] = ta.values[rows[i] * n + j];
  return push(std::move(out), {ia},
              [n, k, rows = std::move(rows)](Backprop& bp) {
                const auto& g = bp.out_grad();
                auto& ga = bp.in_grad(0);
                for (int64_t i = 0; i < k; ++i)
                  for (int64_t j = 0; j < n; ++j)
                    ga[rows[i] * n + j] += g[i * n + j];
              });
}

Var Tape::custom(Tensor out_value, std::vector<Var> inputs, BackwardFn back) {
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (Var v : inputs) ids.push_back(check(v));
  return push(std::move(out_value), std::move(ids), std::move(back));
}

void Tape::backward(Var loss) {
  int id = check(loss);
  require(nodes_[id].value.numel() == 1, ErrorCategory::contract,
          "backward loss must be scalar, got ", nodes_[id].value.shape_str());
  std::vector<std::vector<double>> scratch(nodes_.size());
  scratch[id] = {1.0};
  Backprop bp;
  bp.tape_ = this;
  bp.scratch_ = &scratch;
  for (int i = id; i >= 0; --i) {
    if (scratch[i].empty() || !nodes_[i].back) continue;
    bp.node_id_ = i;
    bp.out_grad_ = &scratch[i];
    nodes_[i].back(bp);
  }
  for (int i = 0; i <= id; ++i) {
    if (scratch[i].empty()) continue;
    Node& node = nodes_[i];
    if (node.grad.empty()) node.grad.assign(node.value.values.size(), 0.0);
    for (size_t j = 0; j < scratch[i].size(); ++j) node.grad[j] += scratch[i][j];
    if (node.bound) {
      node.bound->tensor.ensure_grad();
      for (size_t j = 0; j < scratch[i].size(); ++j)
        node.bound->tensor.grad[j] += scratch[i][j];
    }
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad.clear();
}

}  // namespace imf
