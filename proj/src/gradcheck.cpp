#include "imf/gradcheck.hpp"

#include <cmath>

namespace imf {

namespace {

Tensor make_projection(const Tensor& out, const Tensor& given) {
  if (given.numel() > 0) {
    require(given.numel() == out.numel(), ErrorCategory::dimension,
            "projection numel ", given.numel(), " vs output ", out.numel());
    return given;
  }
  if (out.numel() == 1) return Tensor(out.shape, 1.0);
  Rng rng(0x9c0ffeeULL);
  return Tensor::uniform(out.shape, rng, -1.0, 1.0);
}

double projected_loss(const Tensor& out, const Tensor& proj) {
  double s = 0.0;
  for (int64_t i = 0; i < out.numel(); ++i) s += out.values[i] * proj.values[i];
  return s;
}

void update_report(GradCheckReport& rep, int64_t i, double a, double n) {
  double denom = std::max({std::fabs(a), std::fabs(n), 1e-3});
  double rel = std::fabs(a - n) / denom;
  if (rel >= rep.max_rel_error) {
    rep.max_rel_error = rel;
    rep.worst_index = i;
    rep.analytic_at_worst = a;
    rep.numeric_at_worst = n;
  }
}

}  // namespace

GradCheckReport finite_diff_check(const TapeFn& f, const Tensor& x, double eps,
                                  const Tensor& projection) {
  require(eps > 0.0, ErrorCategory::contract, "finite_diff_check eps must be > 0");
  Tape tape;
  Var vx = tape.leaf(x);
  Var out = f(tape, vx);
  Tensor proj = make_projection(tape.value(out), projection);
  Var loss = tape.sum(tape.mul(out, tape.leaf(proj)));
  tape.backward(loss);
  Tensor analytic = tape.grad_tensor(vx);

  GradCheckReport rep;
  for (int64_t i = 0; i < x.numel(); ++i) {
    Tensor xp = x;
    xp.values[i] += eps;
    Tensor xm = x;
    xm.values[i] -= eps;
    Tape tp;
    double lp = projected_loss(tp.value(f(tp, tp.leaf(xp))), proj);
    Tape tm;
    double lm = projected_loss(tm.value(f(tm, tm.leaf(xm))), proj);
    double numeric = (lp - lm) / (2.0 * eps);
    update_report(rep, i, analytic.values[i], numeric);
  }
  return rep;
}

GradCheckReport finite_diff_check_param(const TapeBuildFn& build, Parameter& p,
                                        double eps, const Tensor& projection) {
  require(eps > 0.0, ErrorCategory::contract, "finite_diff_check eps must be > 0");
  p.zero_grad();
  Tape tape;
  Var out = build(tape);
  Tensor proj = make_projection(tape.value(out), projection);
  Var loss = tape.sum(tape.mul(out, tape.leaf(proj)));
  tape.backward(loss);
  Tensor analytic = p.tensor;

  GradCheckReport rep;
  for (int64_t i = 0; i < p.tensor.numel(); ++i) {
    double saved = p.tensor.values[i];
    p.tensor.values[i] = saved + eps;
    Tape tp;
    double lp = projected_loss(tp.value(build(tp)), proj);
    p.tensor.values[i] = saved - eps;
    Tape tm;
    double lm = projected_loss(tm.value(build(tm)), proj);
    p.tensor.values[i] = saved;
    double numeric = (lp - lm) / (2.0 * eps);
    update_report(rep, i, analytic.grad[i], numeric);
  }
  return rep;
}

}  // namespace imf
