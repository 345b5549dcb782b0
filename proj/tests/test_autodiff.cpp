#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "imf/gradcheck.hpp"
#include "imf/kernels.hpp"
#include "imf/rng.hpp"
#include "imf/tape.hpp"

using namespace imf;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
  Rng rng(seed);
  return Tensor::uniform(std::move(shape), rng, lo, hi);
}

}  // namespace

TEST_CASE("matmul identity and dot product") {
  Tape t;
  Var id2 = t.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
  Var b = t.leaf(Tensor({2, 2}, {3, 4, 5, 6}));
  Var c = t.matmul(id2, b);
  CHECK(t.value(c).values == std::vector<double>{3, 4, 5, 6});

  Var r = t.matmul(t.leaf(Tensor({1, 2}, {1, 2})), t.leaf(Tensor({2, 1}, {3, 4})));
  CHECK(t.value(r).values[0] == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape t;
  Var a = t.leaf(Tensor({2, 3}));
  Var b = t.leaf(Tensor({4, 2}));
  try {
    t.matmul(a, b);
    FAIL("expected dimension error");
  } catch (const Error& e) {
    CHECK(e.category == ErrorCategory::dimension);
    CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
    CHECK(std::string(e.what()).find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("matmul backward matches finite differences") {
  Tensor a = random_tensor({4, 3}, 11);
  Tensor b = random_tensor({3, 5}, 12);
  auto fa = [&](Tape& t, Var x) { return t.matmul(x, t.leaf(b)); };
  auto fb = [&](Tape& t, Var x) { return t.matmul(t.leaf(a), x); };
  CHECK(finite_diff_check(fa, a).max_rel_error < 1e-6);
  CHECK(finite_diff_check(fb, b).max_rel_error < 1e-6);
}

TEST_CASE("parallel matmul kernels bit-identical to serial reference") {
  Tensor a = random_tensor({17, 9}, 21);
  Tensor b = random_tensor({9, 13}, 22);
  Tensor c0({17, 13}), c1({17, 13});
  kern::matmul_acc(a.values.data(), b.values.data(), c0.values.data(), 17, 9, 13);
  ref::matmul_acc(a.values.data(), b.values.data(), c1.values.data(), 17, 9, 13);
  CHECK(c0.values == c1.values);

  Tensor g = random_tensor({17, 13}, 23);
  Tensor d0({9, 13}), d1({9, 13});
  kern::matmul_tn_acc(a.values.data(), g.values.data(), d0.values.data(), 17, 9, 13);
  ref::matmul_tn_acc(a.values.data(), g.values.data(), d1.values.data(), 17, 9, 13);
  CHECK(d0.values == d1.values);

  Tensor e0({17, 9}), e1({17, 9});
  kern::matmul_nt_acc(g.values.data(), b.values.data(), e0.values.data(), 17, 9, 13);
  ref::matmul_nt_acc(g.values.data(), b.values.data(), e1.values.data(), 17, 9, 13);
  CHECK(e0.values == e1.values);
}

TEST_CASE("row_softmax closed forms") {
  Tape t;
  Var u = t.row_softmax(t.leaf(Tensor({1, 3}, {7.5, 7.5, 7.5})), 3.0);
  for (double v : t.value(u).values) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

  Var w = t.row_softmax(t.leaf(Tensor({1, 2}, {0.0, std::log(3.0)})), 1.0);
  CHECK(t.value(w).values[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(t.value(w).values[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("row_softmax rows sum to one and entries in [0,1]") {
  for (uint64_t seed : {1u, 2u, 3u, 4u}) {
    Tensor x = random_tensor({5, 7}, seed, -30.0, 30.0);
    Tape t;
    const Tensor& y = t.value(t.row_softmax(t.leaf(x), 1.7));
    for (int64_t i = 0; i < 5; ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < 7; ++j) {
        double v = y.at(i, j);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        s += v;
      }
      CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("row_softmax rejects non-finite input") {
  Tape t;
  Tensor bad({1, 2}, {1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(t.row_softmax(t.leaf(bad), 1.0), Error);
}

TEST_CASE("relu definition and dead region") {
  Tape t;
  Var y = t.relu(t.leaf(Tensor({3}, {-1, 0, 2})));
  CHECK(t.value(y).values == std::vector<double>{0, 0, 2});

  Var x = t.leaf(Tensor({4}, {-3, -1, -2, -0.5}));
  Var z = t.relu(x);
  t.backward(t.sum(z));
  CHECK(t.value(z).values == std::vector<double>{0, 0, 0, 0});
  CHECK(t.grad_tensor(x).values == std::vector<double>{0, 0, 0, 0});
}

TEST_CASE("relu finite differences away from the kink") {
  Tensor x = random_tensor({6}, 5);
  for (auto& v : x.values) v += (v >= 0 ? 0.01 : -0.01);  // keep clear of 0
  auto f = [](Tape& t, Var v) { return t.relu(v); };
  CHECK(finite_diff_check(f, x).max_rel_error < 1e-6);
}

TEST_CASE("linear degenerate and identity cases") {
  Parameter w0("w", Tensor({3, 2}, 0.0));
  Parameter b0("b", Tensor({2}, {4.0, -2.0}));
  Tape t;
  Var out = t.linear(t.leaf(random_tensor({5, 3}, 7)), w0, b0);
  for (int64_t i = 0; i < 5; ++i) {
    CHECK(t.value(out).at(i, 0) == 4.0);
    CHECK(t.value(out).at(i, 1) == -2.0);
  }

  Parameter wi("w", Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  Parameter bz("b", Tensor({3}, 0.0));
  Tensor x = random_tensor({4, 3}, 8);
  Tape t2;
  Var out2 = t2.linear(t2.leaf(x), wi, bz);
  CHECK(t2.value(out2).values == x.values);
}

TEST_CASE("linear parameter gradients match finite differences") {
  Tensor x = random_tensor({4, 3}, 9);
  Parameter w("w", random_tensor({3, 5}, 10));
  Parameter b("b", random_tensor({5}, 11));
  auto build = [&](Tape& t) { return t.linear(t.leaf(x), w, b); };
  CHECK(finite_diff_check_param(build, w).max_rel_error < 1e-6);
  CHECK(finite_diff_check_param(build, b).max_rel_error < 1e-6);
}

TEST_CASE("backward of sum and quadratic") {
  Tape t;
  Var x = t.leaf(random_tensor({6}, 13));
  t.backward(t.sum(x));
  CHECK(t.grad_tensor(x).values == std::vector<double>(6, 1.0));

  Tape t2;
  Tensor xv = random_tensor({1, 5}, 14);
  Var v = t2.leaf(xv);
  Var q = t2.matmul(v, t2.transpose(v));  // x x^T = sum of squares
  t2.backward(q);
  Tensor g = t2.grad_tensor(v);
  for (int64_t i = 0; i < 5; ++i)
    CHECK(g.values[i] == doctest::Approx(2.0 * xv.values[i]).epsilon(1e-12));
}

TEST_CASE("backward contract errors") {
  Tape t;
  Var x = t.leaf(Tensor({2, 2}, 1.0));
  CHECK_THROWS_AS(t.backward(x), Error);  // not scalar

  Tape other;
  Var y = other.leaf(Tensor::scalar(1.0));
  CHECK_THROWS_AS(t.backward(y), Error);  // not on this tape
}

TEST_CASE("composed chain matches finite differences") {
  Parameter w("w", random_tensor({4, 3}, 15, -0.7, 0.7));
  Parameter b("b", random_tensor({3}, 16, -0.2, 0.2));
  Tensor k = random_tensor({5, 4}, 17);
  auto f = [&](Tape& t, Var x) {
    Var h = t.matmul(x, t.leaf(k));            // [m,5]x[5,4] -> [m,4]
    Var s = t.row_softmax(h, std::sqrt(4.0));
    return t.linear(s, w, b);
  };
  Tensor x = random_tensor({3, 5}, 18);
  CHECK(finite_diff_check(f, x).max_rel_error < 1e-5);
  auto build = [&](Tape& t) { return f(t, t.leaf(x)); };
  CHECK(finite_diff_check_param(build, w).max_rel_error < 1e-5);
  CHECK(finite_diff_check_param(build, b).max_rel_error < 1e-5);
}

TEST_CASE("finite_diff_check exactness on identity") {
  // Integer input, power-of-two eps and an all-ones projection keep every
  // float step exact, so the discrepancy is exactly zero.
  Tensor x({4}, {1, -2, 3, 5});
  Tensor ones({4}, 1.0);
  auto f = [](Tape&, Var v) { return v; };
  GradCheckReport rep = finite_diff_check(f, x, 0.5, ones);
  CHECK(rep.max_rel_error == 0.0);
}

TEST_CASE("finite_diff_check on softmax") {
  Tensor x = random_tensor({3, 4}, 19, -2.0, 2.0);
  auto f = [](Tape& t, Var v) { return t.row_softmax(v, 1.3); };
  CHECK(finite_diff_check(f, x).max_rel_error < 1e-6);
}

TEST_CASE("gradient accumulation across backward calls") {
  Parameter w("w", random_tensor({3, 3}, 20));
  Parameter b("b", random_tensor({3}, 21));
  Tensor x = random_tensor({2, 3}, 22);

  auto run_once = [&](int times) {
    w.zero_grad();
    b.zero_grad();
    Tape t;
    Var loss = t.sum(t.relu(t.linear(t.leaf(x), w, b)));
    for (int i = 0; i < times; ++i) t.backward(loss);
    return std::make_pair(w.tensor.grad, b.tensor.grad);
  };
  auto [gw1, gb1] = run_once(1);
  auto [gw2, gb2] = run_once(2);
  for (size_t i = 0; i < gw1.size(); ++i)
    CHECK(gw2[i] == doctest::Approx(2.0 * gw1[i]).epsilon(1e-15));
  for (size_t i = 0; i < gb1.size(); ++i)
    CHECK(gb2[i] == doctest::Approx(2.0 * gb1[i]).epsilon(1e-15));
}

TEST_CASE("tape replay determinism") {
  auto run = [](uint64_t seed) {
    Tensor x = random_tensor({6, 6}, seed);
    Tape t;
    Var y = t.row_softmax(t.matmul(t.leaf(x), t.leaf(x)), 2.0);
    return t.value(y).values;
  };
  CHECK(run(77) == run(77));
}

TEST_CASE("remaining op backward rules match finite differences") {
  Tensor x = random_tensor({4, 5}, 30);
  Tensor y = random_tensor({4, 5}, 31);
  std::vector<std::pair<const char*, TapeFn>> cases;
  cases.emplace_back("add", [&](Tape& t, Var v) { return t.add(v, t.leaf(y)); });
  cases.emplace_back("sub", [&](Tape& t, Var v) { return t.sub(t.leaf(y), v); });
  cases.emplace_back("mul", [&](Tape& t, Var v) { return t.mul(v, t.leaf(y)); });
  cases.emplace_back("scale", [](Tape& t, Var v) { return t.scale(v, -2.5); });
  cases.emplace_back("add_scalar", [](Tape& t, Var v) { return t.add_scalar(v, 0.7); });
  cases.emplace_back("transpose", [](Tape& t, Var v) { return t.transpose(v); });
  cases.emplace_back("row_sum", [](Tape& t, Var v) { return t.row_sum(v); });
  cases.emplace_back("mean", [](Tape& t, Var v) { return t.mean(v); });
  cases.emplace_back("reshape", [](Tape& t, Var v) { return t.reshape(v, {2, 10}); });
  cases.emplace_back("gather_rows", [](Tape& t, Var v) {
    return t.gather_rows(v, {3, 0, 0, 2});
  });
  cases.emplace_back("concat_cols", [&](Tape& t, Var v) {
    return t.concat_cols(v, t.leaf(y));
  });
  cases.emplace_back("row_normalize", [](Tape& t, Var v) { return t.row_normalize(v); });
  cases.emplace_back("pick", [](Tape& t, Var v) { return t.pick(v, 7); });
  for (auto& [name, fn] : cases) {
    INFO(name);
    CHECK(finite_diff_check(fn, x).max_rel_error < 1e-6);
  }

  // sqrt on strictly positive input
  Tensor xp = random_tensor({3, 3}, 32, 0.2, 2.0);
  CHECK(finite_diff_check([](Tape& t, Var v) { return t.sqrt_elem(v); }, xp)
            .max_rel_error < 1e-6);

  // row_feature_norm with parameters
  Parameter gain("g", random_tensor({5}, 33, 0.5, 1.5));
  Parameter bias("b", random_tensor({5}, 34, -0.3, 0.3));
  auto fnorm = [&](Tape& t, Var v) { return t.row_feature_norm(v, gain, bias); };
  CHECK(finite_diff_check(fnorm, x).max_rel_error < 1e-5);
  auto build = [&](Tape& t) { return fnorm(t, t.leaf(x)); };
  CHECK(finite_diff_check_param(build, gain).max_rel_error < 1e-5);
  CHECK(finite_diff_check_param(build, bias).max_rel_error < 1e-5);
}

TEST_CASE("sqrt_elem has zero subgradient at zero") {
  Tape t;
  Var x = t.leaf(Tensor({3}, {0.0, 4.0, 9.0}));
  Var y = t.sqrt_elem(x);
  t.backward(t.sum(y));
  Tensor g = t.grad_tensor(x);
  CHECK(g.values[0] == 0.0);
  CHECK(g.values[1] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(g.values[2] == doctest::Approx(1.0 / 6).epsilon(1e-15));
}
