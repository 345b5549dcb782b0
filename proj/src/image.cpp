#include "imf/image.hpp"

#include <cmath>

namespace imf {

Tensor image_to_tensor(const Image& img) {
  Tensor t({img.height, img.width, 3});
  t.values = img.pixels;
  return t;
}

namespace kern {

void conv2d_forward(const double* in, int64_t h, int64_t w, int64_t cin,
                    const double* k, int64_t kh, int64_t kw, int64_t cout,
                    int stride, const double* bias, double* out, int64_t oh,
                    int64_t ow) {
  int64_t ph = kh / 2, pw = kw / 2;
#pragma omp parallel for schedule(static)
  for (int64_t oy = 0; oy < oh; ++oy) {
    for (int64_t ox = 0; ox < ow; ++ox) {
      double* o = out + (oy * ow + ox) * cout;
      if (bias)
        for (int64_t q = 0; q < cout; ++q) o[q] = bias[q];
      for (int64_t ky = 0; ky < kh; ++ky) {
        int64_t y = oy * stride + ky - ph;
        if (y < 0 || y >= h) continue;
        for (int64_t kx = 0; kx < kw; ++kx) {
          int64_t x = ox * stride + kx - pw;
          if (x < 0 || x >= w) continue;
          const double* xi = in + (y * w + x) * cin;
          const double* kk = k + ((ky * kw + kx) * cin) * cout;
          for (int64_t p = 0; p < cin; ++p) {
            double v = xi[p];
            if (v == 0.0) continue;
            const double* kp = kk + p * cout;
            for (int64_t q = 0; q < cout; ++q) o[q] += v * kp[q];
          }
        }
      }
    }
  }
}

void conv2d_grad_input(const double* gout, int64_t oh, int64_t ow, int64_t cout,
                       const double* k, int64_t kh, int64_t kw, int64_t cin,
                       int stride, double* gin, int64_t h, int64_t w) {
  int64_t ph = kh / 2, pw = kw / 2;
#pragma omp parallel for schedule(static)
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      double* gi = gin + (y * w + x) * cin;
      for (int64_t ky = 0; ky < kh; ++ky) {
        int64_t ny = y - ky + ph;
        if (ny % stride != 0) continue;
        int64_t oy = ny / stride;
        if (oy < 0 || oy >= oh) continue;
        for (int64_t kx = 0; kx < kw; ++kx) {
          int64_t nx = x - kx + pw;
          if (nx % stride != 0) continue;
          int64_t ox = nx / stride;
          if (ox < 0 || ox >= ow) continue;
          const double* go = gout + (oy * ow + ox) * cout;
          const double* kk = k + ((ky * kw + kx) * cin) * cout;
          for (int64_t p = 0; p < cin; ++p) {
            const double* kp = kk + p * cout;
            double acc = 0.0;
            for (int64_t q = 0; q < cout; ++q) acc += go[q] * kp[q];
            gi[p] += acc;
          }
        }
      }
    }
  }
}

void conv2d_grad_kernel(const double* in, int64_t h, int64_t w, int64_t cin,
                        const double* gout, int64_t oh, int64_t ow,
                        int64_t cout, int stride, int64_t kh, int64_t kw,
                        double* gk) {
  int64_t ph = kh / 2, pw = kw / 2;
  int64_t taps = kh * kw;
#pragma omp parallel for schedule(static)
  for (int64_t tap = 0; tap < taps; ++tap) {
    int64_t ky = tap / kw, kx = tap % kw;
    double* gtap = gk + (ky * kw + kx) * cin * cout;
    for (int64_t oy = 0; oy < oh; ++oy) {
      int64_t y = oy * stride + ky - ph;
      if (y < 0 || y >= h) continue;
      for (int64_t ox = 0; ox < ow; ++ox) {
        int64_t x = ox * stride + kx - pw;
        if (x < 0 || x >= w) continue;
        const double* xi = in + (y * w + x) * cin;
        const double* go = gout + (oy * ow + ox) * cout;
        for (int64_t p = 0; p < cin; ++p) {
          double v = xi[p];
          if (v == 0.0) continue;
          double* gp = gtap + p * cout;
          for (int64_t q = 0; q < cout; ++q) gp[q] += v * go[q];
        }
      }
    }
  }
}

}  // namespace kern

namespace ref {

void conv2d_forward(const double* in, int64_t h, int64_t w, int64_t cin,
                    const double* k, int64_t kh, int64_t kw, int64_t cout,
                    int stride, const double* bias, double* out, int64_t oh,
                    int64_t ow) {
  int64_t ph = kh / 2, pw = kw / 2;
  for (int64_t oy = 0; oy < oh; ++oy) {
    for (int64_t ox = 0; ox < ow; ++ox) {
      double* o = out + (oy * ow + ox) * cout;
      if (bias)
        for (int64_t q = 0; q < cout; ++q) o[q] = bias[q];
      for (int64_t ky = 0; ky < kh; ++ky) {
        int64_t y = oy * stride + ky - ph;
        if (y < 0 || y >= h) continue;
        for (int64_t kx = 0; kx < kw; ++kx) {
          int64_t x = ox * stride + kx - pw;
          if (x < 0 || x >= w) continue;
          const double* xi = in + (y * w + x) * cin;
          const double* kk = k + ((ky * kw + kx) * cin) * cout;
          for (int64_t p = 0; p < cin; ++p) {
            double v = xi[p];
            if (v == 0.0) continue;
            const double* kp = kk + p * cout;
            for (int64_t q = 0; q < cout; ++q) o[q] += v * kp[q];
          }
        }
      }
    }
  }
}

}  // namespace ref

Var conv2d(Tape& tape, Var input, Parameter& kernel, int stride,
           Parameter* bias) {
  require(stride == 1 || stride == 2, ErrorCategory::contract,
          "conv2d stride must be 1 or 2, got ", stride);
  Var kv = tape.param(kernel);
  Var bv{};
  if (bias) bv = tape.param(*bias);
  const Tensor& in = tape.value(input);
  const Tensor& kt = tape.value(kv);
  require(in.ndim() == 3, ErrorCategory::dimension,
          "conv2d input must be HxWxC, got ", in.shape_str());
  require(kt.ndim() == 4, ErrorCategory::dimension,
          "conv2d kernel must be kh x kw x C_in x C_out, got ", kt.shape_str());
  require(kt.shape[2] == in.shape[2], ErrorCategory::dimension,
          "conv2d channel mismatch: input ", in.shape_str(), " vs kernel ",
          kt.shape_str());
  int64_t h = in.shape[0], w = in.shape[1], cin = in.shape[2];
  int64_t kh = kt.shape[0], kw = kt.shape[1], cout = kt.shape[3];
  if (bias)
    require(bias->tensor.numel() == cout, ErrorCategory::dimension,
            "conv2d bias length ", bias->tensor.numel(), " vs C_out ", cout);
  int64_t oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;

  Tensor out({oh, ow, cout});
  kern::conv2d_forward(in.values.data(), h, w, cin, kt.values.data(), kh, kw,
                       cout, stride,
                       bias ? tape.value(bv).values.data() : nullptr,
                       out.values.data(), oh, ow);

  std::vector<Var> inputs = {input, kv};
  if (bias) inputs.push_back(bv);
  bool has_bias = bias != nullptr;
  return tape.custom(
      std::move(out), std::move(inputs),
      [h, w, cin, kh, kw, cout, oh, ow, stride, has_bias](Backprop& bp) {
        const auto& g = bp.out_grad();
        const Tensor& in = bp.in_value(0);
        const Tensor& k = bp.in_value(1);
        kern::conv2d_grad_input(g.data(), oh, ow, cout, k.values.data(), kh,
                                kw, cin, stride, bp.in_grad(0).data(), h, w);
        kern::conv2d_grad_kernel(in.values.data(), h, w, cin, g.data(), oh, ow,
                                 cout, stride, kh, kw, bp.in_grad(1).data());
        if (has_bias) {
          auto& gb = bp.in_grad(2);
          for (int64_t px = 0; px < oh * ow; ++px)
            for (int64_t q = 0; q < cout; ++q) gb[q] += g[px * cout + q];
        }
      });
}

ImageEncoder::ImageEncoder(const ImageEncoderConfig& cfg,
                           const std::string& prefix, Rng& rng)
    : cfg_(cfg) {
  std::array<int64_t, 5> ch = {3, cfg.channels[0], cfg.channels[1],
                               cfg.channels[2], cfg.out_dim};
  for (int i = 0; i < 4; ++i) {
    int64_t kh = i < 3 ? 3 : 1;
    double bound = 1.0 / std::sqrt(static_cast<double>(kh * kh * ch[i]));
    kernels_[i] = Parameter(
        prefix + ".conv" + std::to_string(i + 1) + ".kernel",
        Tensor::uniform({kh, kh, ch[i], ch[i + 1]}, rng, -bound, bound));
    biases_[i] = Parameter(prefix + ".conv" + std::to_string(i + 1) + ".bias",
                           Tensor::uniform({ch[i + 1]}, rng, -bound, bound));
  }
}

ImageFeatures ImageEncoder::encode(Tape& tape, const Image& img) {
  require(img.dims_divisible_by_8(), ErrorCategory::contract,
          "image dimensions must be positive and divisible by 8, got ",
          img.width, "x", img.height);
  Var x = tape.leaf(image_to_tensor(img));
  for (int i = 0; i < 3; ++i)
    x = tape.relu(conv2d(tape, x, kernels_[i], 2, &biases_[i]));
  x = conv2d(tape, x, kernels_[3], 1, &biases_[3]);
  ImageFeatures out;
  out.grid_h = img.height / 8;
  out.grid_w = img.width / 8;
  out.feats = tape.reshape(
      x, {static_cast<int64_t>(out.grid_h) * out.grid_w, cfg_.out_dim});
  return out;
}

std::vector<Parameter*> ImageEncoder::parameters() {
  std::vector<Parameter*> ps;
  for (int i = 0; i < 4; ++i) {
    ps.push_back(&kernels_[i]);
    ps.push_back(&biases_[i]);
  }
  return ps;
}

}  // namespace imf
