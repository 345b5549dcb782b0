#pragma once

#include <array>

#include "imf/tape.hpp"

namespace imf {

// RGB image, channels in [0,1], row-major H x W x 3.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  double at(int y, int x, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  double& at(int y, int x, int c) {
    return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  bool dims_divisible_by_8() const {
    return width > 0 && height > 0 && width % 8 == 0 && height % 8 == 0;
  }
};

Tensor image_to_tensor(const Image& img);  // {H, W, 3}

// 2-D convolution with zero "same" padding. input {H, W, C_in}, kernel
// {kh, kw, C_in, C_out}, stride 1 or 2; output {ceil(H/s), ceil(W/s), C_out}.
// bias, when given, has C_out entries.
Var conv2d(Tape& tape, Var input, Parameter& kernel, int stride,
           Parameter* bias = nullptr);

// Texture features at 1/8 resolution: rows are grid cells in row-major
// order, row r <-> cell (r / (W/8), r % (W/8)).
struct ImageFeatures {
  Var feats;  // [M_i, C_i]
  int grid_h = 0;
  int grid_w = 0;
};

struct ImageEncoderConfig {
  std::array<int, 3> channels{8, 16, 32};
  int out_dim = 32;  // C_i
};

// Three stride-2 conv+relu blocks then a 1x1 projection.
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const ImageEncoderConfig& cfg, const std::string& prefix, Rng& rng);

  ImageFeatures encode(Tape& tape, const Image& img);
  std::vector<Parameter*> parameters();
  int out_dim() const { return cfg_.out_dim; }

 private:
  ImageEncoderConfig cfg_;
  std::array<Parameter, 4> kernels_;
  std::array<Parameter, 4> biases_;
};

// Serial reference for conv2d, kept for testing and benchmarks; bit-identical
// to the parallel path.
namespace ref {
void conv2d_forward(const double* in, int64_t h, int64_t w, int64_t cin,
                    const double* k, int64_t kh, int64_t kw, int64_t cout,
                    int stride, const double* bias, double* out, int64_t oh,
                    int64_t ow);
}

namespace kern {
void conv2d_forward(const double* in, int64_t h, int64_t w, int64_t cin,
                    const double* k, int64_t kh, int64_t kw, int64_t cout,
                    int stride, const double* bias, double* out, int64_t oh,
                    int64_t ow);
void conv2d_grad_input(const double* gout, int64_t oh, int64_t ow, int64_t cout,
                       const double* k, int64_t kh, int64_t kw, int64_t cin,
                       int stride, double* gin, int64_t h, int64_t w);
void conv2d_grad_kernel(const double* in, int64_t h, int64_t w, int64_t cin,
                        const double* gout, int64_t oh, int64_t ow,
                        int64_t cout, int stride, int64_t kh, int64_t kw,
                        double* gk);
}  // namespace kern

}  // namespace imf
