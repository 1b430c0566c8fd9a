#pragma once

#include <cstdint>
#include <memory>

#include "mtvit/ops.hpp"
#include "mtvit/tensor.hpp"

namespace mtvit {

// Image tensors are [H, W, C], channels innermost.

namespace detail {

// Gather with a fixed index map; -1 entries read as zero (padding). The
// backward rule scatter-adds, which makes every op built on top of it (im2col
// and therefore conv) differentiable w.r.t. its input.
template <typename T>
Tensor<T> gather_map(const Tensor<T>& a, std::shared_ptr<std::vector<int64_t>> map,
                     Shape out_shape) {
  Tensor<T> out(std::move(out_shape));
  const size_t n = out.size();
  for (size_t i = 0; i < n; ++i) {
    const int64_t src = (*map)[i];
    out[i] = src >= 0 ? a[static_cast<size_t>(src)] : T(0);
  }
  Tape<T>* tp = active_tape<T>();
  if (tp && tp->recording(a)) {
    const int ia = tp->input_node(a);
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      if (T* da = t.grad_slot(ia))
        for (size_t i = 0; i < n; ++i) {
          const int64_t src = (*map)[i];
          if (src >= 0) da[static_cast<size_t>(src)] += g[i];
        }
    });
  }
  return out;
}

}  // namespace detail

// Unfolds kxk windows at the given stride/padding into rows of a
// [Ho*Wo x k*k*C] matrix, (dy, dx, c) order within a row.
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, size_t k, size_t stride, size_t pad) {
  if (x.rank() != 3)
    throw std::invalid_argument("im2col: image must be [H x W x C], got " +
                                shape_str(x.shape()));
  const size_t h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  if (h + 2 * pad < k || w + 2 * pad < k)
    throw std::invalid_argument("im2col: kernel " + std::to_string(k) +
                                " larger than padded image " + shape_str(x.shape()));
  const size_t ho = (h + 2 * pad - k) / stride + 1;
  const size_t wo = (w + 2 * pad - k) / stride + 1;
  auto map = std::make_shared<std::vector<int64_t>>(ho * wo * k * k * c);
  size_t ix = 0;
  for (size_t oy = 0; oy < ho; ++oy)
    for (size_t ox = 0; ox < wo; ++ox)
      for (size_t dy = 0; dy < k; ++dy)
        for (size_t dx = 0; dx < k; ++dx)
          for (size_t ch = 0; ch < c; ++ch) {
            const int64_t sy = static_cast<int64_t>(oy * stride + dy) -
                               static_cast<int64_t>(pad);
            const int64_t sx = static_cast<int64_t>(ox * stride + dx) -
                               static_cast<int64_t>(pad);
            (*map)[ix++] =
                (sy >= 0 && sy < static_cast<int64_t>(h) && sx >= 0 &&
                 sx < static_cast<int64_t>(w))
                    ? (sy * static_cast<int64_t>(w) + sx) * static_cast<int64_t>(c) +
                          static_cast<int64_t>(ch)
                    : -1;
          }
  return detail::gather_map(x, std::move(map), {ho * wo, k * k * c});
}

// 2D strided convolution as im2col + matmul, so it reuses the verified
// matmul backward. Weights are [k*k*Cin x Cout], bias [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 size_t k, size_t stride, size_t pad) {
  const size_t c = x.shape()[2];
  if (w.rank() != 2 || w.shape()[0] != k * k * c)
    throw_shape_mismatch("conv2d", {k * k * c, w.rank() == 2 ? w.shape()[1] : 0},
                         w.shape());
  const size_t h = x.shape()[0], iw = x.shape()[1];
  const size_t ho = (h + 2 * pad - k) / stride + 1;
  const size_t wo = (iw + 2 * pad - k) / stride + 1;
  Tensor<T> cols = im2col(x, k, stride, pad);
  Tensor<T> y = add_rowwise(matmul(cols, w), bias);
  return reshape(y, {ho, wo, w.shape()[1]});
}

// 2x2 average pooling with stride 2; extents must be even.
template <typename T>
Tensor<T> avgpool2(const Tensor<T>& x) {
  if (x.rank() != 3 || x.shape()[0] % 2 != 0 || x.shape()[1] % 2 != 0)
    throw std::invalid_argument("avgpool2: needs even [H x W x C], got " +
                                shape_str(x.shape()));
  const size_t h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  const size_t ho = h / 2, wo = w / 2;
  Tensor<T> out({ho, wo, c});
  for (size_t oy = 0; oy < ho; ++oy)
    for (size_t ox = 0; ox < wo; ++ox)
      for (size_t ch = 0; ch < c; ++ch)
        out.at(oy, ox, ch) =
            (x.at(2 * oy, 2 * ox, ch) + x.at(2 * oy, 2 * ox + 1, ch) +
             x.at(2 * oy + 1, 2 * ox, ch) + x.at(2 * oy + 1, 2 * ox + 1, ch)) /
            T(4);

  Tape<T>* tp = active_tape<T>();
  if (tp && tp->recording(x)) {
    const int ia = tp->input_node(x);
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      T* da = t.grad_slot(ia);
      if (!da) return;
      for (size_t oy = 0; oy < ho; ++oy)
        for (size_t ox = 0; ox < wo; ++ox)
          for (size_t ch = 0; ch < c; ++ch) {
            const T q = g[(oy * wo + ox) * c + ch] / T(4);
            da[((2 * oy) * w + 2 * ox) * c + ch] += q;
            da[((2 * oy) * w + 2 * ox + 1) * c + ch] += q;
            da[((2 * oy + 1) * w + 2 * ox) * c + ch] += q;
            da[((2 * oy + 1) * w + 2 * ox + 1) * c + ch] += q;
          }
    });
  }
  return out;
}

// Bilinear resize of an [H x W x C] image. Runs on raw pixels before any tape
// is active and never records; no gradient w.r.t. pixels is ever needed.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, size_t ho, size_t wo) {
  if (x.rank() != 3)
    throw std::invalid_argument("bilinear_resize: image must be [H x W x C], got " +
                                shape_str(x.shape()));
  const size_t h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
  if (ho == h && wo == w) return x.clone();
  Tensor<T> out({ho, wo, c});
  const double sy = static_cast<double>(h) / static_cast<double>(ho);
  const double sx = static_cast<double>(w) / static_cast<double>(wo);
  for (size_t oy = 0; oy < ho; ++oy) {
    double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    fy = std::max(0.0, std::min(fy, static_cast<double>(h - 1)));
    const size_t y0 = static_cast<size_t>(fy);
    const size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (size_t ox = 0; ox < wo; ++ox) {
      double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      fx = std::max(0.0, std::min(fx, static_cast<double>(w - 1)));
      const size_t x0 = static_cast<size_t>(fx);
      const size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (size_t ch = 0; ch < c; ++ch) {
        const double top = (1.0 - wx) * x.at(y0, x0, ch) + wx * x.at(y0, x1, ch);
        const double bot = (1.0 - wx) * x.at(y1, x0, ch) + wx * x.at(y1, x1, ch);
        out.at(oy, ox, ch) = static_cast<T>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

}  // namespace mtvit
