#pragma once

#include <cstddef>
#include <span>

#include "kbae/tensor.hpp"

namespace kbae {

// Raw convolution kernels. Weight layouts follow the usual deep-learning
// convention:
//   conv2d  weight: out_ch x in_ch x kh x kw
//   tconv2d weight: in_ch x out_ch x kh x kw  (the kernel of the adjoint conv2d)
// Both are lowered to a GEMM over an im2col buffer.

// (in + 2*pad - k) / stride + 1, throwing ConfigError when it is not a
// positive integer.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t pad);

// stride*(in - 1) + k - 2*pad, throwing ConfigError when not positive.
std::size_t tconv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                              std::size_t pad);

Tensor4 conv2d_forward(const Tensor4& input, const Tensor4& weight, std::span<const double> bias,
                       std::size_t stride, std::size_t pad);

// Accumulates (+=) into whichever of grad_input / grad_weight / grad_bias is non-null.
void conv2d_backward(const Tensor4& input, const Tensor4& weight, const Tensor4& grad_output,
                     std::size_t stride, std::size_t pad, Tensor4* grad_input,
                     Tensor4* grad_weight, std::span<double> grad_bias);

Tensor4 tconv2d_forward(const Tensor4& input, const Tensor4& weight, std::span<const double> bias,
                        std::size_t stride, std::size_t pad);

void tconv2d_backward(const Tensor4& input, const Tensor4& weight, const Tensor4& grad_output,
                      std::size_t stride, std::size_t pad, Tensor4* grad_input,
                      Tensor4* grad_weight, std::span<double> grad_bias);

}  // namespace kbae
