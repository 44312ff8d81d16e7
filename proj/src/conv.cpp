#include "kbae/conv.hpp"

#include <Eigen/Core>
#include <string>
#include <vector>

#include "kbae/errors.hpp"

namespace kbae {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

struct Geometry {
  std::size_t batch, channels, height, width;  // image side
  std::size_t kh, kw, stride, pad;
  std::size_t out_h, out_w;                    // sliding-window side

  std::size_t rows() const { return channels * kh * kw; }
  std::size_t cols() const { return batch * out_h * out_w; }
};

// Unfolds image patches into a (channels*kh*kw) x (batch*out_h*out_w) matrix.
void im2col(const double* image, const Geometry& g, double* col) {
  const std::size_t cols = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = col + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t b = 0; b < g.batch; ++b) {
          const double* plane = image + (b * g.channels + c) * g.height * g.width;
          double* dst = row + b * g.out_h * g.out_w;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                            static_cast<std::ptrdiff_t>(g.pad);
            double* out_row = dst + oy * g.out_w;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
              for (std::size_t ox = 0; ox < g.out_w; ++ox) out_row[ox] = 0.0;
              continue;
            }
            const double* in_row = plane + static_cast<std::size_t>(iy) * g.width;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                              static_cast<std::ptrdiff_t>(g.pad);
              out_row[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width))
                                ? 0.0
                                : in_row[static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back onto the image.
void col2im(const double* col, const Geometry& g, double* image) {
  const std::size_t cols = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const double* row = col + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t b = 0; b < g.batch; ++b) {
          double* plane = image + (b * g.channels + c) * g.height * g.width;
          const double* src = row + b * g.out_h * g.out_w;
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
            double* in_row = plane + static_cast<std::size_t>(iy) * g.width;
            const double* col_row = src + oy * g.out_w;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                              static_cast<std::ptrdiff_t>(g.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
              in_row[static_cast<std::size_t>(ix)] += col_row[ox];
            }
          }
        }
      }
    }
  }
}

// (channels x batch*plane) matrix <-> (batch, channels, plane) tensor layout.
void channels_major_to_tensor(const double* mat, std::size_t batch, std::size_t channels,
                              std::size_t plane, double* tensor, bool accumulate) {
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double* src = mat + c * batch * plane + b * plane;
      double* dst = tensor + (b * channels + c) * plane;
      if (accumulate) {
        for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
      } else {
        for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i];
      }
    }
  }
}

void tensor_to_channels_major(const double* tensor, std::size_t batch, std::size_t channels,
                              std::size_t plane, double* mat) {
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double* src = tensor + (b * channels + c) * plane;
      double* dst = mat + c * batch * plane + b * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i];
    }
  }
}

void check_kernel(const Tensor4& input, const Tensor4& weight, std::size_t in_channels_of_weight,
                  std::size_t out_channels, std::size_t bias_size, std::size_t stride,
                  const char* op) {
  if (stride < 1) throw ConfigError(std::string(op) + ": stride must be >= 1");
  if (input.dims().c != in_channels_of_weight) {
    throw ShapeError(std::string(op) + ": input " + input.dims().str() +
                     " does not match kernel " + weight.dims().str());
  }
  if (bias_size != 0 && bias_size != out_channels) {
    throw ShapeError(std::string(op) + ": bias of length " + std::to_string(bias_size) +
                     " for kernel " + weight.dims().str());
  }
}

Geometry conv_geometry(const Tensor4& input, const Tensor4& weight, std::size_t stride,
                       std::size_t pad) {
  const Dims& in = input.dims();
  const Dims& k = weight.dims();
  return Geometry{in.n, in.c, in.h, in.w, k.h, k.w, stride, pad,
                  conv_output_size(in.h, k.h, stride, pad),
                  conv_output_size(in.w, k.w, stride, pad)};
}

// For a transposed convolution the "image" is the output and the sliding
// window positions are the input pixels.
Geometry tconv_geometry(const Tensor4& input, const Tensor4& weight, std::size_t stride,
                        std::size_t pad) {
  const Dims& in = input.dims();
  const Dims& k = weight.dims();
  return Geometry{in.n, k.c, tconv_output_size(in.h, k.h, stride, pad),
                  tconv_output_size(in.w, k.w, stride, pad), k.h, k.w, stride, pad, in.h, in.w};
}

}  // namespace

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t pad) {
  if (stride < 1) throw ConfigError("stride must be >= 1");
  const auto span = static_cast<long long>(in + 2 * pad) - static_cast<long long>(kernel);
  if (span < 0 || span % static_cast<long long>(stride) != 0) {
    throw ConfigError("convolution output size (" + std::to_string(in) + " + 2*" +
                      std::to_string(pad) + " - " + std::to_string(kernel) + ")/" +
                      std::to_string(stride) + " + 1 is not a positive integer");
  }
  return static_cast<std::size_t>(span) / stride + 1;
}

std::size_t tconv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                              std::size_t pad) {
  if (stride < 1) throw ConfigError("stride must be >= 1");
  if (in == 0) throw ConfigError("transposed convolution of an empty input");
  const auto out = static_cast<long long>(stride * (in - 1) + kernel) -
                   static_cast<long long>(2 * pad);
  if (out <= 0) {
    throw ConfigError("transposed convolution output size " + std::to_string(out) +
                      " is not positive");
  }
  return static_cast<std::size_t>(out);
}

Tensor4 conv2d_forward(const Tensor4& input, const Tensor4& weight, std::span<const double> bias,
                       std::size_t stride, std::size_t pad) {
  const Dims& k = weight.dims();
  check_kernel(input, weight, k.c, k.n, bias.size(), stride, "conv2d");
  const Geometry g = conv_geometry(input, weight, stride, pad);
  const std::size_t plane = g.out_h * g.out_w;

  std::vector<double> col(g.rows() * g.cols());
  im2col(input.data(), g, col.data());
  std::vector<double> out_mat(k.n * g.cols());
  MatMap(out_mat.data(), k.n, g.cols()).noalias() =
      ConstMatMap(weight.data(), k.n, g.rows()) * ConstMatMap(col.data(), g.rows(), g.cols());

  Tensor4 out(Dims{g.batch, k.n, g.out_h, g.out_w});
  channels_major_to_tensor(out_mat.data(), g.batch, k.n, plane, out.data(), false);
  if (!bias.empty()) {
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t c = 0; c < k.n; ++c) {
        double* p = out.data() + (b * k.n + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += bias[c];
      }
    }
  }
  return out;
}

void conv2d_backward(const Tensor4& input, const Tensor4& weight, const Tensor4& grad_output,
                     std::size_t stride, std::size_t pad, Tensor4* grad_input,
                     Tensor4* grad_weight, std::span<double> grad_bias) {
  const Dims& k = weight.dims();
  const Geometry g = conv_geometry(input, weight, stride, pad);
  const std::size_t plane = g.out_h * g.out_w;
  require_same_dims(grad_output.dims(), Dims{g.batch, k.n, g.out_h, g.out_w}, "conv2d backward");

  std::vector<double> dout(k.n * g.cols());
  tensor_to_channels_major(grad_output.data(), g.batch, k.n, plane, dout.data());
  const ConstMatMap dout_map(dout.data(), k.n, g.cols());

  if (!grad_bias.empty()) {
    for (std::size_t c = 0; c < k.n; ++c) grad_bias[c] += dout_map.row(c).sum();
  }
  if (grad_weight != nullptr) {
    std::vector<double> col(g.rows() * g.cols());
    im2col(input.data(), g, col.data());
    MatMap(grad_weight->data(), k.n, g.rows()).noalias() +=
        dout_map * ConstMatMap(col.data(), g.rows(), g.cols()).transpose();
  }
  if (grad_input != nullptr) {
    std::vector<double> dcol(g.rows() * g.cols());
    MatMap(dcol.data(), g.rows(), g.cols()).noalias() =
        ConstMatMap(weight.data(), k.n, g.rows()).transpose() * dout_map;
    col2im(dcol.data(), g, grad_input->data());
  }
}

Tensor4 tconv2d_forward(const Tensor4& input, const Tensor4& weight, std::span<const double> bias,
                        std::size_t stride, std::size_t pad) {
  const Dims& k = weight.dims();
  check_kernel(input, weight, k.n, k.c, bias.size(), stride, "tconv2d");
  const Geometry g = tconv_geometry(input, weight, stride, pad);
  const std::size_t in_plane = g.out_h * g.out_w;

  std::vector<double> x(k.n * g.cols());
  tensor_to_channels_major(input.data(), g.batch, k.n, in_plane, x.data());
  std::vector<double> col(g.rows() * g.cols());
  MatMap(col.data(), g.rows(), g.cols()).noalias() =
      ConstMatMap(weight.data(), k.n, g.rows()).transpose() *
      ConstMatMap(x.data(), k.n, g.cols());

  Tensor4 out(Dims{g.batch, g.channels, g.height, g.width});
  col2im(col.data(), g, out.data());
  if (!bias.empty()) {
    const std::size_t plane = g.height * g.width;
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t c = 0; c < g.channels; ++c) {
        double* p = out.data() + (b * g.channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += bias[c];
      }
    }
  }
  return out;
}

void tconv2d_backward(const Tensor4& input, const Tensor4& weight, const Tensor4& grad_output,
                      std::size_t stride, std::size_t pad, Tensor4* grad_input,
                      Tensor4* grad_weight, std::span<double> grad_bias) {
  const Dims& k = weight.dims();
  const Geometry g = tconv_geometry(input, weight, stride, pad);
  const std::size_t in_plane = g.out_h * g.out_w;
  const std::size_t plane = g.height * g.width;
  require_same_dims(grad_output.dims(), Dims{g.batch, g.channels, g.height, g.width},
                    "tconv2d backward");

  if (!grad_bias.empty()) {
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t c = 0; c < g.channels; ++c) {
        const double* p = grad_output.data() + (b * g.channels + c) * plane;
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
        grad_bias[c] += s;
      }
    }
  }
  if (grad_weight == nullptr && grad_input == nullptr) return;

  std::vector<double> dcol(g.rows() * g.cols());
  im2col(grad_output.data(), g, dcol.data());
  const ConstMatMap dcol_map(dcol.data(), g.rows(), g.cols());

  if (grad_weight != nullptr) {
    std::vector<double> x(k.n * g.cols());
    tensor_to_channels_major(input.data(), g.batch, k.n, in_plane, x.data());
    MatMap(grad_weight->data(), k.n, g.rows()).noalias() +=
        ConstMatMap(x.data(), k.n, g.cols()) * dcol_map.transpose();
  }
  if (grad_input != nullptr) {
    std::vector<double> dx(k.n * g.cols());
    MatMap(dx.data(), k.n, g.cols()).noalias() =
        ConstMatMap(weight.data(), k.n, g.rows()) * dcol_map;
    channels_major_to_tensor(dx.data(), g.batch, k.n, in_plane, grad_input->data(), true);
  }
}

}  // namespace kbae
