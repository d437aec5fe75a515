#pragma once

#include <cstddef>

#include "transrank/numerics/tensor.hpp"

namespace transrank {

/// Per-axis (time, height, width) sizes for 3D convolution.
struct Extent3 {
  std::size_t t = 1;
  std::size_t h = 1;
  std::size_t w = 1;
  bool operator==(const Extent3&) const = default;
};

/// Shapes of one 3D convolution, batch excluded.
struct Conv3dGeometry {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Extent3 input;
  Extent3 kernel;
  Extent3 stride;
  Extent3 padding;
  Extent3 output;

  /// Validates shapes; input is C×T×H×W, kernel is Cout×Cin×kT×kH×kW.
  static Conv3dGeometry make(const Shape& input_chw, const Shape& kernel_shape,
                             Extent3 stride, Extent3 padding);

  std::size_t patch_size() const { return in_channels * kernel.t * kernel.h * kernel.w; }
  std::size_t out_positions() const { return output.t * output.h * output.w; }
  std::size_t in_volume() const { return in_channels * input.t * input.h * input.w; }
};

namespace kernels {

/// C = alpha * op(A) * op(B) + beta * C, row-major.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc);

/// Unfolds one sample (C×T×H×W) into a patch_size × out_positions matrix.
template <typename T>
void im2col(const Conv3dGeometry& g, const T* input, T* cols);

/// Adjoint of im2col: accumulates columns back into a C×T×H×W gradient.
template <typename T>
void col2im(const Conv3dGeometry& g, const T* cols, T* input_grad);

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Forward-only convolution of a C×T×H×W or N×C×T×H×W input.
template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      Extent3 stride, Extent3 padding);

}  // namespace kernels
}  // namespace transrank
