#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "imf/gradcheck.hpp"
#include "imf/image.hpp"

using namespace imf;

namespace {

Image random_image(int w, int h, uint64_t seed) {
  Image img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<size_t>(w) * h * 3);
  Rng rng(seed);
  for (auto& p : img.pixels) p = rng.uniform();
  return img;
}

// Independent 6-loop convolution oracle (zero padding, "same").
Tensor conv_oracle(const Tensor& in, const Tensor& k, int stride) {
  int64_t h = in.shape[0], w = in.shape[1], cin = in.shape[2];
  int64_t kh = k.shape[0], kw = k.shape[1], cout = k.shape[3];
  int64_t oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
  Tensor out({oh, ow, cout});
  for (int64_t oy = 0; oy < oh; ++oy)
    for (int64_t ox = 0; ox < ow; ++ox)
      for (int64_t q = 0; q < cout; ++q) {
        double acc = 0.0;
        for (int64_t ky = 0; ky < kh; ++ky)
          for (int64_t kx = 0; kx < kw; ++kx)
            for (int64_t p = 0; p < cin; ++p) {
              int64_t y = oy * stride + ky - kh / 2;
              int64_t x = ox * stride + kx - kw / 2;
              if (y < 0 || y >= h || x < 0 || x >= w) continue;
              acc += in.values[(y * w + x) * cin + p] *
                     k.values[((ky * kw + kx) * cin + p) * cout + q];
            }
        out.values[(oy * ow + ox) * cout + q] = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("1x1 identity kernel is the identity") {
  Parameter k("k", Tensor({1, 1, 3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  Tensor in({4, 5, 3});
  Rng rng(1);
  for (auto& v : in.values) v = rng.uniform();
  Tape t;
  Var out = conv2d(t, t.leaf(in), k, 1);
  CHECK(t.value(out).values == in.values);
}

TEST_CASE("all-ones 3x3 kernel on a constant image sums 9c in the interior") {
  Parameter k("k", Tensor({3, 3, 1, 1}, 1.0));
  double c = 0.37;
  Tensor in({6, 6, 1}, c);
  Tape t;
  Var out = conv2d(t, t.leaf(in), k, 1);
  for (int64_t y = 1; y < 5; ++y)
    for (int64_t x = 1; x < 5; ++x)
      CHECK(t.value(out).values[y * 6 + x] == doctest::Approx(9 * c).epsilon(1e-14));
  // corner touches only 4 taps
  CHECK(t.value(out).values[0] == doctest::Approx(4 * c).epsilon(1e-14));
}

TEST_CASE("conv2d matches the naive loop oracle") {
  for (int stride : {1, 2}) {
    Rng rng(7 + stride);
    Tensor in = Tensor::uniform({6, 8, 2}, rng, -1, 1);
    Parameter k("k", Tensor::uniform({3, 3, 2, 4}, rng, -1, 1));
    Tape t;
    Var out = conv2d(t, t.leaf(in), k, stride);
    Tensor oracle = conv_oracle(in, k.tensor, stride);
    REQUIRE(t.value(out).shape == oracle.shape);
    for (int64_t i = 0; i < oracle.numel(); ++i)
      CHECK(std::fabs(t.value(out).values[i] - oracle.values[i]) < 1e-10);
  }
}

TEST_CASE("conv2d parallel and serial reference agree bit-for-bit") {
  Rng rng(11);
  Tensor in = Tensor::uniform({8, 10, 3}, rng, -1, 1);
  Tensor k = Tensor::uniform({3, 3, 3, 5}, rng, -1, 1);
  Tensor bias = Tensor::uniform({5}, rng, -1, 1);
  Tensor o1({4, 5, 5}), o2({4, 5, 5});
  kern::conv2d_forward(in.values.data(), 8, 10, 3, k.values.data(), 3, 3, 5, 2,
                       bias.values.data(), o1.values.data(), 4, 5);
  ref::conv2d_forward(in.values.data(), 8, 10, 3, k.values.data(), 3, 3, 5, 2,
                      bias.values.data(), o2.values.data(), 4, 5);
  CHECK(o1.values == o2.values);
}

TEST_CASE("conv2d gradients match finite differences") {
  for (int stride : {1, 2}) {
    Rng rng(20 + stride);
    Tensor in = Tensor::uniform({4, 6, 2}, rng, -1, 1);
    Parameter k("k", Tensor::uniform({3, 3, 2, 3}, rng, -0.8, 0.8));
    Parameter b("b", Tensor::uniform({3}, rng, -0.3, 0.3));
    auto f = [&](Tape& t, Var v) { return conv2d(t, v, k, stride, &b); };
    CHECK(finite_diff_check(f, in).max_rel_error < 1e-5);
    auto build = [&](Tape& t) { return f(t, t.leaf(in)); };
    CHECK(finite_diff_check_param(build, k).max_rel_error < 1e-5);
    CHECK(finite_diff_check_param(build, b).max_rel_error < 1e-5);
  }
}

TEST_CASE("conv2d shape errors") {
  Rng rng(31);
  Parameter k("k", Tensor::uniform({3, 3, 4, 2}, rng, -1, 1));
  Tape t;
  Var in = t.leaf(Tensor({4, 4, 3}));
  CHECK_THROWS_AS(conv2d(t, in, k, 1), Error);
}

TEST_CASE("encode_image row counts") {
  Rng rng(41);
  ImageEncoder enc(ImageEncoderConfig{{4, 6, 8}, 5}, "ie", rng);

  Tape t1;
  ImageFeatures f1 = enc.encode(t1, random_image(8, 8, 42));
  CHECK(t1.value(f1.feats).shape == std::vector<int64_t>{1, 5});

  Tape t2;
  ImageFeatures f2 = enc.encode(t2, random_image(160, 120, 43));
  CHECK(t2.value(f2.feats).shape == std::vector<int64_t>{300, 5});
  CHECK(f2.grid_h == 15);
  CHECK(f2.grid_w == 20);
}

TEST_CASE("encode_image rejects dimensions not divisible by 8") {
  Rng rng(51);
  ImageEncoder enc(ImageEncoderConfig{{4, 4, 4}, 4}, "ie", rng);
  Tape t;
  Image img = random_image(12, 8, 52);
  CHECK_THROWS_AS(enc.encode(t, img), Error);
}

TEST_CASE("changed rows are inside the receptive-field set of the edit") {
  Rng rng(61);
  ImageEncoder enc(ImageEncoderConfig{{4, 4, 4}, 4}, "ie", rng);
  Image a = random_image(32, 24, 62);
  Image b = a;
  // Edit one 8x8 block.
  int by = 8, bx = 16;
  Rng edit(63);
  for (int y = by; y < by + 8; ++y)
    for (int x = bx; x < bx + 8; ++x)
      for (int c = 0; c < 3; ++c) b.at(y, x, c) = edit.uniform();

  Tape ta, tb;
  const Tensor& fa = ta.value(enc.encode(ta, a).feats);
  const Tensor& fb = tb.value(enc.encode(tb, b).feats);

  // Receptive-field enumeration: compose in_range through the three
  // stride-2 extent-3 layers (the 1x1 projection adds nothing).
  auto rf = [](int o) {
    int lo = o, hi = o;
    for (int level = 0; level < 3; ++level) {
      lo = 2 * lo - 1;
      hi = 2 * hi + 1;
    }
    return std::pair<int, int>{lo, hi};
  };
  int gw = 32 / 8;
  for (int64_t r = 0; r < fa.shape[0]; ++r) {
    bool changed = false;
    for (int64_t c = 0; c < fa.shape[1]; ++c)
      if (fa.at(r, c) != fb.at(r, c)) changed = true;
    if (!changed) continue;
    auto [ylo, yhi] = rf(static_cast<int>(r) / gw);
    auto [xlo, xhi] = rf(static_cast<int>(r) % gw);
    bool overlaps = !(yhi < by || ylo > by + 7) && !(xhi < bx || xlo > bx + 7);
    CHECK(overlaps);
  }
}

TEST_CASE("encoder parameters receive finite-difference-verified gradients") {
  Rng rng(71);
  ImageEncoder enc(ImageEncoderConfig{{2, 3, 3}, 3}, "ie", rng);
  Image img = random_image(8, 8, 72);
  auto build = [&](Tape& t) { return enc.encode(t, img).feats; };
  for (Parameter* p : enc.parameters()) {
    INFO(p->name);
    CHECK(finite_diff_check_param(build, *p).max_rel_error < 1e-5);
  }
}

TEST_CASE("encoding is deterministic") {
  Rng rng(81);
  ImageEncoder enc(ImageEncoderConfig{{4, 4, 4}, 4}, "ie", rng);
  Image img = random_image(16, 16, 82);
  Tape t1, t2;
  CHECK(t1.value(enc.encode(t1, img).feats).values ==
        t2.value(enc.encode(t2, img).feats).values);
}
