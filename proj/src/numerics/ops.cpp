#include "transrank/numerics/ops.hpp"

#include <memory>

namespace transrank::ops {

namespace {

template <typename T>
void accumulate(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

template <typename T>
Var matmul(BasicTape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  auto out = kernels::matmul(av, bv);
  const std::size_t p = av.dim(0), q = av.dim(1), r = bv.dim(1);
  return tape.record(std::move(out), {a, b}, [a, b, p, q, r](BasicTape<T>& t, Var self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a)) {
      // dA += dC · Bᵀ
      kernels::gemm<T>(false, true, p, q, r, T{1}, g.raw(), r, t.value(b).raw(), r, T{1},
                       t.grad_buffer(a).raw(), q);
    }
    if (t.requires_grad(b)) {
      // dB += Aᵀ · dC
      kernels::gemm<T>(true, false, q, r, p, T{1}, t.value(a).raw(), q, g.raw(), r, T{1},
                       t.grad_buffer(b).raw(), r);
    }
  });
}

template <typename T>
Var add(BasicTape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  if (av.shape() != bv.shape()) {
    throw ShapeError("add shape mismatch: " + shape_str(av.shape()) + " vs " +
                     shape_str(bv.shape()));
  }
  BasicTensor<T> out = av;
  accumulate(out, bv);
  return tape.record(std::move(out), {a, b}, [a, b](BasicTape<T>& t, Var self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a)) accumulate(t.grad_buffer(a), g);
    if (t.requires_grad(b)) accumulate(t.grad_buffer(b), g);
  });
}

template <typename T>
Var scale(BasicTape<T>& tape, Var x, T factor) {
  BasicTensor<T> out = tape.value(x);
  for (auto& v : out.data()) v *= factor;
  return tape.record(std::move(out), {x}, [x, factor](BasicTape<T>& t, Var self) {
    const auto g = t.grad(self).data();
    auto dx = t.grad_buffer(x).data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * g[i];
  });
}

template <typename T>
Var relu(BasicTape<T>& tape, Var x) {
  BasicTensor<T> out = tape.value(x);
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  return tape.record(std::move(out), {x}, [x](BasicTape<T>& t, Var self) {
    const auto g = t.grad(self).data();
    const auto in = t.value(x).data();
    auto dx = t.grad_buffer(x).data();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (in[i] > T{0}) dx[i] += g[i];
    }
  });
}

template <typename T>
Var add_bias(BasicTape<T>& tape, Var x, Var bias) {
  const auto& xv = tape.value(x);
  const auto& bv = tape.value(bias);
  if (xv.rank() != 2 || bv.rank() != 1 || xv.dim(1) != bv.dim(0)) {
    throw ShapeError("add_bias shape mismatch: " + shape_str(xv.shape()) + " + " +
                     shape_str(bv.shape()));
  }
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  BasicTensor<T> out = xv;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += bv[j];
  }
  return tape.record(std::move(out), {x, bias}, [x, bias, rows, cols](BasicTape<T>& t, Var self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(x)) accumulate(t.grad_buffer(x), g);
    if (t.requires_grad(bias)) {
      auto& db = t.grad_buffer(bias);
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) db[j] += g[i * cols + j];
      }
    }
  });
}

template <typename T>
Var conv3d(BasicTape<T>& tape, Var input, Var kernel, std::optional<Var> bias, Extent3 stride,
           Extent3 padding) {
  const auto& in = tape.value(input);
  const auto& k = tape.value(kernel);
  const bool batched = in.rank() == 5;
  if (!batched && in.rank() != 4) {
    throw ShapeError("conv3d input must have rank 4 or 5, got " + shape_str(in.shape()));
  }
  const Shape sample(in.shape().end() - 4, in.shape().end());
  const auto g = Conv3dGeometry::make(sample, k.shape(), stride, padding);
  if (bias && (tape.value(*bias).rank() != 1 || tape.value(*bias).dim(0) != g.out_channels)) {
    throw ShapeError("conv3d bias must have one entry per output channel");
  }
  const std::size_t batch = batched ? in.dim(0) : 1;
  const std::size_t positions = g.out_positions();
  const std::size_t patch = g.patch_size();
  const std::size_t out_volume = g.out_channels * positions;

  Shape out_shape = {g.out_channels, g.output.t, g.output.h, g.output.w};
  if (batched) out_shape.insert(out_shape.begin(), batch);
  BasicTensor<T> out(out_shape);

  const bool keep_cols = tape.requires_grad(kernel);
  auto saved = std::make_shared<std::vector<T>>(keep_cols ? batch * patch * positions : 0);
  std::vector<T> scratch(keep_cols ? 0 : patch * positions);
  for (std::size_t n = 0; n < batch; ++n) {
    T* cols = keep_cols ? saved->data() + n * patch * positions : scratch.data();
    kernels::im2col(g, in.raw() + n * g.in_volume(), cols);
    kernels::gemm<T>(false, false, g.out_channels, positions, patch, T{1}, k.raw(), patch, cols,
                     positions, T{0}, out.raw() + n * out_volume, positions);
  }
  if (bias) {
    const auto& b = tape.value(*bias);
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t c = 0; c < g.out_channels; ++c) {
        T* dst = out.raw() + n * out_volume + c * positions;
        for (std::size_t p = 0; p < positions; ++p) dst[p] += b[c];
      }
    }
  }

  auto backward = [=](BasicTape<T>& t, Var self) {
    const auto& grad_out = t.grad(self);
    if (t.requires_grad(kernel)) {
      auto& dk = t.grad_buffer(kernel);
      for (std::size_t n = 0; n < batch; ++n) {
        // dK += dOut · colsᵀ
        kernels::gemm<T>(false, true, g.out_channels, patch, positions, T{1},
                         grad_out.raw() + n * out_volume, positions,
                         saved->data() + n * patch * positions, positions, T{1}, dk.raw(), patch);
      }
    }
    if (bias && t.requires_grad(*bias)) {
      auto& db = t.grad_buffer(*bias);
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < g.out_channels; ++c) {
          const T* src = grad_out.raw() + n * out_volume + c * positions;
          T acc{0};
          for (std::size_t p = 0; p < positions; ++p) acc += src[p];
          db[c] += acc;
        }
      }
    }
    if (t.requires_grad(input)) {
      auto& din = t.grad_buffer(input);
      std::vector<T> dcols(patch * positions);
      for (std::size_t n = 0; n < batch; ++n) {
        // dCols = Kᵀ · dOut
        kernels::gemm<T>(true, false, patch, positions, g.out_channels, T{1},
                         t.value(kernel).raw(), patch, grad_out.raw() + n * out_volume,
                         positions, T{0}, dcols.data(), positions);
        kernels::col2im(g, dcols.data(), din.raw() + n * g.in_volume());
      }
    }
  };
  if (bias) return tape.record(std::move(out), {input, kernel, *bias}, backward);
  return tape.record(std::move(out), {input, kernel}, backward);
}

template <typename T>
Var global_avg_pool(BasicTape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  if (xv.rank() != 4 && xv.rank() != 5) {
    throw ShapeError("global_avg_pool expects rank 4 or 5, got " + shape_str(xv.shape()));
  }
  const std::size_t volume = xv.dim(xv.rank() - 1) * xv.dim(xv.rank() - 2) * xv.dim(xv.rank() - 3);
  const std::size_t groups = xv.size() / volume;
  Shape out_shape(xv.shape().begin(), xv.shape().end() - 3);
  BasicTensor<T> out(out_shape);
  const T inv = T{1} / static_cast<T>(volume);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    T acc{0};
    const T* src = xv.raw() + gi * volume;
    for (std::size_t i = 0; i < volume; ++i) acc += src[i];
    out[gi] = acc * inv;
  }
  return tape.record(std::move(out), {x}, [x, volume, groups, inv](BasicTape<T>& t, Var self) {
    const auto& g = t.grad(self);
    auto& dx = t.grad_buffer(x);
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const T v = g[gi] * inv;
      T* dst = dx.raw() + gi * volume;
      for (std::size_t i = 0; i < volume; ++i) dst[i] += v;
    }
  });
}

template <typename T>
Var spatial_avg_pool(BasicTape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  if (xv.rank() != 5) {
    throw ShapeError("spatial_avg_pool expects N x C x T x H x W, got " + shape_str(xv.shape()));
  }
  const std::size_t area = xv.dim(3) * xv.dim(4);
  const std::size_t groups = xv.size() / area;
  BasicTensor<T> out({xv.dim(0), xv.dim(1), xv.dim(2)});
  const T inv = T{1} / static_cast<T>(area);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    T acc{0};
    const T* src = xv.raw() + gi * area;
    for (std::size_t i = 0; i < area; ++i) acc += src[i];
    out[gi] = acc * inv;
  }
  return tape.record(std::move(out), {x}, [x, area, groups, inv](BasicTape<T>& t, Var self) {
    const auto& g = t.grad(self);
    auto& dx = t.grad_buffer(x);
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const T v = g[gi] * inv;
      T* dst = dx.raw() + gi * area;
      for (std::size_t i = 0; i < area; ++i) dst[i] += v;
    }
  });
}

template <typename T>
Var reshape(BasicTape<T>& tape, Var x, Shape shape) {
  auto out = tape.value(x).reshaped(std::move(shape));
  return tape.record(std::move(out), {x}, [x](BasicTape<T>& t, Var self) {
    const auto g = t.grad(self).data();
    auto dx = t.grad_buffer(x).data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
  });
}

template <typename T>
Var concat(BasicTape<T>& tape, std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = tape.value(parts[0]).shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range");
  std::size_t outer = 1, inner = 1, total_axis = 0;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<std::size_t> widths;
  for (auto p : parts) {
    const Shape& s = tape.value(p).shape();
    if (s.size() != first.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw ShapeError("concat shape mismatch: " + shape_str(first) + " vs " + shape_str(s));
      }
    }
    widths.push_back(s[axis] * inner);
    total_axis += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total_axis;
  BasicTensor<T> out(out_shape);
  const std::size_t row = total_axis * inner;
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& src = tape.value(parts[k]);
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src.raw() + o * widths[k], widths[k], out.raw() + o * row + col);
    }
    col += widths[k];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record(std::move(out), std::span<const Var>(inputs),
                     [inputs, widths, outer, row](BasicTape<T>& t, Var self) {
                       const auto& g = t.grad(self);
                       std::size_t c = 0;
                       for (std::size_t k = 0; k < inputs.size(); ++k) {
                         if (t.requires_grad(inputs[k])) {
                           auto& dx = t.grad_buffer(inputs[k]);
                           for (std::size_t o = 0; o < outer; ++o) {
                             const T* src = g.raw() + o * row + c;
                             T* dst = dx.raw() + o * widths[k];
                             for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
                           }
                         }
                         c += widths[k];
                       }
                     });
}

template <typename T>
Var sum(BasicTape<T>& tape, Var x) {
  T acc{0};
  for (auto v : tape.value(x).data()) acc += v;
  return tape.record(BasicTensor<T>::scalar(acc), {x}, [x](BasicTape<T>& t, Var self) {
    const T g = t.grad(self)[0];
    for (auto& v : t.grad_buffer(x).data()) v += g;
  });
}

template <typename T>
Var dropout(BasicTape<T>& tape, Var x, T ratio, std::mt19937_64* rng) {
  if (rng == nullptr || ratio <= T{0}) {
    return reshape(tape, x, tape.value(x).shape());
  }
  if (ratio >= T{1}) throw std::invalid_argument("dropout ratio must be < 1");
  const auto& xv = tape.value(x);
  auto mask = std::make_shared<std::vector<T>>(xv.size());
  std::bernoulli_distribution keep(1.0 - static_cast<double>(ratio));
  const T kept = T{1} / (T{1} - ratio);
  BasicTensor<T> out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = keep(*rng) ? kept : T{0};
    out[i] *= (*mask)[i];
  }
  return tape.record(std::move(out), {x}, [x, mask](BasicTape<T>& t, Var self) {
    const auto g = t.grad(self).data();
    auto dx = t.grad_buffer(x).data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += (*mask)[i] * g[i];
  });
}

#define TRANSRANK_INSTANTIATE(T)                                                         \
  template Var matmul<T>(BasicTape<T>&, Var, Var);                                       \
  template Var add<T>(BasicTape<T>&, Var, Var);                                          \
  template Var scale<T>(BasicTape<T>&, Var, T);                                          \
  template Var relu<T>(BasicTape<T>&, Var);                                              \
  template Var add_bias<T>(BasicTape<T>&, Var, Var);                                     \
  template Var conv3d<T>(BasicTape<T>&, Var, Var, std::optional<Var>, Extent3, Extent3); \
  template Var global_avg_pool<T>(BasicTape<T>&, Var);                                   \
  template Var spatial_avg_pool<T>(BasicTape<T>&, Var);                                  \
  template Var reshape<T>(BasicTape<T>&, Var, Shape);                                    \
  template Var concat<T>(BasicTape<T>&, std::span<const Var>, std::size_t);              \
  template Var sum<T>(BasicTape<T>&, Var);                                               \
  template Var dropout<T>(BasicTape<T>&, Var, T, std::mt19937_64*);

TRANSRANK_INSTANTIATE(float)
TRANSRANK_INSTANTIATE(double)
#undef TRANSRANK_INSTANTIATE

}  // namespace transrank::ops
