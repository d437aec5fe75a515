#include "transrank/numerics/kernels.hpp"

#include <cblas.h>

#include <algorithm>
#include <cstring>
#include <utility>
#include <string>

extern "C" void openblas_set_num_threads(int num_threads);

namespace transrank {

namespace {

std::size_t out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p,
                       const char* axis) {
  if (s == 0) throw ShapeError(std::string("conv3d stride along ") + axis + " must be >= 1");
  const auto padded = static_cast<long long>(in + 2 * p);
  const auto span = padded - static_cast<long long>(k);
  if (span < 0) {
    throw ShapeError(std::string("conv3d kernel does not fit padded input along ") + axis);
  }
  return static_cast<std::size_t>(span) / s + 1;
}

// Single-threaded BLAS keeps results bit-reproducible.
void pin_blas_threads() {
  static const bool pinned = [] {
    openblas_set_num_threads(1);
    return true;
  }();
  (void)pinned;
}

}  // namespace

Conv3dGeometry Conv3dGeometry::make(const Shape& input_chw, const Shape& kernel_shape,
                                    Extent3 stride, Extent3 padding) {
  if (input_chw.size() != 4) {
    throw ShapeError("conv3d input must be C x T x H x W, got " + shape_str(input_chw));
  }
  if (kernel_shape.size() != 5) {
    throw ShapeError("conv3d kernel must be Cout x Cin x kT x kH x kW, got " +
                     shape_str(kernel_shape));
  }
  if (kernel_shape[1] != input_chw[0]) {
    throw ShapeError("conv3d channel mismatch: input " + shape_str(input_chw) + ", kernel " +
                     shape_str(kernel_shape));
  }
  Conv3dGeometry g;
  g.in_channels = input_chw[0];
  g.out_channels = kernel_shape[0];
  g.input = {input_chw[1], input_chw[2], input_chw[3]};
  g.kernel = {kernel_shape[2], kernel_shape[3], kernel_shape[4]};
  g.stride = stride;
  g.padding = padding;
  g.output = {out_extent(g.input.t, g.kernel.t, stride.t, padding.t, "T"),
              out_extent(g.input.h, g.kernel.h, stride.h, padding.h, "H"),
              out_extent(g.input.w, g.kernel.w, stride.w, padding.w, "W")};
  return g;
}

namespace kernels {

template <>
void gemm<float>(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                 float alpha, const float* a, std::size_t lda, const float* b, std::size_t ldb,
                 float beta, float* c, std::size_t ldc) {
  pin_blas_threads();
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
              beta, c, static_cast<int>(ldc));
}

// The 64-bit path only serves gradient checks. It avoids cblas_dgemm, which
// returns wrong products on AVX-512 cores in the OpenBLAS 0.3.20 build this
// project was developed against.
template <>
void gemm<double>(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                  double alpha, const double* a, std::size_t lda, const double* b,
                  std::size_t ldb, double beta, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    for (std::size_t j = 0; j < n; ++j) crow[j] = beta == 0.0 ? 0.0 : beta * crow[j];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = alpha * (trans_a ? a[p * lda + i] : a[i * lda + p]);
      if (av == 0.0) continue;
      if (trans_b) {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * ldb + p];
      } else {
        const double* brow = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

namespace {

// Output columns [lo, hi) whose input column ow·stride + kw − pad is in range.
std::pair<std::size_t, std::size_t> valid_columns(const Conv3dGeometry& g, std::size_t kw) {
  const long pad = static_cast<long>(g.padding.w);
  const long stride = static_cast<long>(g.stride.w);
  const long k = static_cast<long>(kw);
  long lo = 0;
  while (lo < static_cast<long>(g.output.w) && lo * stride + k - pad < 0) ++lo;
  long hi = static_cast<long>(g.output.w);
  while (hi > lo && (hi - 1) * stride + k - pad >= static_cast<long>(g.input.w)) --hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

}  // namespace

template <typename T>
void im2col(const Conv3dGeometry& g, const T* input, T* cols) {
  const auto& in = g.input;
  const auto& out = g.output;
  const std::size_t positions = g.out_positions();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const T* plane = input + c * in.t * in.h * in.w;
    for (std::size_t kt = 0; kt < g.kernel.t; ++kt) {
      for (std::size_t kh = 0; kh < g.kernel.h; ++kh) {
        for (std::size_t kw = 0; kw < g.kernel.w; ++kw, ++row) {
          const auto [lo, hi] = valid_columns(g, kw);
          T* dst = cols + row * positions;
          for (std::size_t ot = 0; ot < out.t; ++ot) {
            const long it = static_cast<long>(ot * g.stride.t + kt) - static_cast<long>(g.padding.t);
            if (it < 0 || it >= static_cast<long>(in.t)) {
              std::memset(dst, 0, sizeof(T) * out.h * out.w);
              dst += out.h * out.w;
              continue;
            }
            for (std::size_t oh = 0; oh < out.h; ++oh) {
              const long ih = static_cast<long>(oh * g.stride.h + kh) - static_cast<long>(g.padding.h);
              if (ih < 0 || ih >= static_cast<long>(in.h)) {
                std::memset(dst, 0, sizeof(T) * out.w);
                dst += out.w;
                continue;
              }
              const T* src = plane + (static_cast<std::size_t>(it) * in.h + static_cast<std::size_t>(ih)) * in.w;
              for (std::size_t ow = 0; ow < lo; ++ow) *dst++ = T{0};
              const T* s = src + lo * g.stride.w + kw - g.padding.w;
              if (g.stride.w == 1) {
                std::memcpy(dst, s, sizeof(T) * (hi - lo));
                dst += hi - lo;
              } else {
                for (std::size_t ow = lo; ow < hi; ++ow, s += g.stride.w) *dst++ = *s;
              }
              for (std::size_t ow = hi; ow < out.w; ++ow) *dst++ = T{0};
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const Conv3dGeometry& g, const T* cols, T* input_grad) {
  const auto& in = g.input;
  const auto& out = g.output;
  const std::size_t positions = g.out_positions();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    T* plane = input_grad + c * in.t * in.h * in.w;
    for (std::size_t kt = 0; kt < g.kernel.t; ++kt) {
      for (std::size_t kh = 0; kh < g.kernel.h; ++kh) {
        for (std::size_t kw = 0; kw < g.kernel.w; ++kw, ++row) {
          const auto [lo, hi] = valid_columns(g, kw);
          const T* src = cols + row * positions;
          for (std::size_t ot = 0; ot < out.t; ++ot) {
            const long it = static_cast<long>(ot * g.stride.t + kt) - static_cast<long>(g.padding.t);
            if (it < 0 || it >= static_cast<long>(in.t)) {
              src += out.h * out.w;
              continue;
            }
            for (std::size_t oh = 0; oh < out.h; ++oh) {
              const long ih = static_cast<long>(oh * g.stride.h + kh) - static_cast<long>(g.padding.h);
              if (ih < 0 || ih >= static_cast<long>(in.h)) {
                src += out.w;
                continue;
              }
              T* dst = plane + (static_cast<std::size_t>(it) * in.h + static_cast<std::size_t>(ih)) * in.w;
              T* d = dst + lo * g.stride.w + kw - g.padding.w;
              for (std::size_t ow = lo; ow < hi; ++ow, d += g.stride.w) *d += src[ow];
              src += out.w;
            }
          }
        }
      }
    }
  }
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul shape mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
  BasicTensor<T> out({p, r});
  gemm<T>(false, false, p, r, q, T{1}, a.raw(), q, b.raw(), r, T{0}, out.raw(), r);
  return out;
}

template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      Extent3 stride, Extent3 padding) {
  const bool batched = input.rank() == 5;
  if (!batched && input.rank() != 4) {
    throw ShapeError("conv3d input must have rank 4 or 5, got " + shape_str(input.shape()));
  }
  const Shape sample(input.shape().end() - 4, input.shape().end());
  const auto g = Conv3dGeometry::make(sample, kernel.shape(), stride, padding);
  const std::size_t batch = batched ? input.dim(0) : 1;
  Shape out_shape = {g.out_channels, g.output.t, g.output.h, g.output.w};
  if (batched) out_shape.insert(out_shape.begin(), batch);
  BasicTensor<T> out(out_shape);
  std::vector<T> cols(g.patch_size() * g.out_positions());
  const std::size_t out_volume = g.out_channels * g.out_positions();
  for (std::size_t n = 0; n < batch; ++n) {
    im2col(g, input.raw() + n * g.in_volume(), cols.data());
    gemm<T>(false, false, g.out_channels, g.out_positions(), g.patch_size(), T{1}, kernel.raw(),
            g.patch_size(), cols.data(), g.out_positions(), T{0}, out.raw() + n * out_volume,
            g.out_positions());
  }
  return out;
}

#define TRANSRANK_INSTANTIATE(T)                                                          \
  template void im2col<T>(const Conv3dGeometry&, const T*, T*);                           \
  template void col2im<T>(const Conv3dGeometry&, const T*, T*);                           \
  template BasicTensor<T> matmul<T>(const BasicTensor<T>&, const BasicTensor<T>&);        \
  template BasicTensor<T> conv3d<T>(const BasicTensor<T>&, const BasicTensor<T>&, Extent3, \
                                    Extent3);

TRANSRANK_INSTANTIATE(float)
TRANSRANK_INSTANTIATE(double)
#undef TRANSRANK_INSTANTIATE

}  // namespace kernels
}  // namespace transrank
