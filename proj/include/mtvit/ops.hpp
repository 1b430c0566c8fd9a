#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <type_traits>

#include "mtvit/tensor.hpp"

namespace mtvit {

// ---------------------------------------------------------------------------
// gemm kernels. ikj order keeps the inner loop on contiguous rows so the
// compiler vectorizes it. C is accumulated into, callers zero it first.
// ---------------------------------------------------------------------------

template <typename T>
inline void gemm_nn(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (size_t l = 0; l < k; ++l) {
      const T av = arow[l];
      const T* brow = b + l * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m×k] += G[m×n] · B[k×n]^T. Materializes B^T so the inner loop is the
// vectorizable ikj form rather than a serial dot-product reduction.
template <typename T>
inline void gemm_nt(const T* g, const T* b, T* c, size_t m, size_t n, size_t k) {
  std::vector<T> bt(n * k);
  for (size_t l = 0; l < k; ++l)
    for (size_t j = 0; j < n; ++j) bt[j * k + l] = b[l * n + j];
  gemm_nn(g, bt.data(), c, m, n, k);
}

// C[k×n] += A[m×k]^T · G[m×n]
template <typename T>
inline void gemm_tn(const T* a, const T* g, T* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* grow = g + i * n;
    for (size_t l = 0; l < k; ++l) {
      const T av = arow[l];
      T* crow = c + l * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
    throw_shape_mismatch("matmul", a.shape(), b.shape());
  const size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor<T> out({m, n});
  gemm_nn(a.data(), b.data(), out.data(), m, k, n);

  Tape<T>* tp = active_tape<T>();
  if (tp && (tp->recording(a) || tp->recording(b))) {
    const int ia = tp->input_node(a), ib = tp->input_node(b);
    auto abuf = a.buffer(), bbuf = b.buffer();
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      if (T* da = t.grad_slot(ia)) gemm_nt(g.data(), bbuf->data(), da, m, n, k);
      if (T* db = t.grad_slot(ib)) gemm_tn(abuf->data(), g.data(), db, m, k, n);
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2)
    throw std::invalid_argument("transpose: rank-2 tensor required, got " +
                                shape_str(a.shape()));
  const size_t m = a.shape()[0], n = a.shape()[1];
  Tensor<T> out({n, m});
  const T* src = a.data();
  T* dst = out.data();
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];

  Tape<T>* tp = active_tape<T>();
  if (tp && tp->recording(a)) {
    const int ia = tp->input_node(a);
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      if (T* da = t.grad_slot(ia))
        for (size_t i = 0; i < n; ++i)
          for (size_t j = 0; j < m; ++j) da[j * n + i] += g[i * m + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise and scalar ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw_shape_mismatch("add", a.shape(), b.shape());
  const size_t n = a.size();
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
  Tape<T>* tp = active_tape<T>();
  if (tp && (tp->recording(a) || tp->recording(b))) {
    const int ia = tp->input_node(a), ib = tp->input_node(b);
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      t.add_grad(ia, g);
      t.add_grad(ib, g);
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw_shape_mismatch("sub", a.shape(), b.shape());
  const size_t n = a.size();
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
  Tape<T>* tp = active_tape<T>();
  if (tp && (tp->recording(a) || tp->recording(b))) {
    const int ia = tp->input_node(a), ib = tp->input_node(b);
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      t.add_grad(ia, g);
      if (T* db = t.grad_slot(ib))
        for (size_t i = 0; i < n; ++i) db[i] -= g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw_shape_mismatch("mul", a.shape(), b.shape());
  const size_t n = a.size();
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
  Tape<T>* tp = active_tape<T>();
  if (tp && (tp->recording(a) || tp->recording(b))) {
    const int ia = tp->input_node(a), ib = tp->input_node(b);
    auto abuf = a.buffer(), bbuf = b.buffer();
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      if (T* da = t.grad_slot(ia))
        for (size_t i = 0; i < n; ++i) da[i] += g[i] * (*bbuf)[i];
      if (T* db = t.grad_slot(ib))
        for (size_t i = 0; i < n; ++i) db[i] += g[i] * (*abuf)[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * s;
  Tape<T>* tp = active_tape<T>();
  if (tp && tp->recording(a)) {
    const int ia = tp->input_node(a);
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      if (T* da = t.grad_slot(ia))
        for (size_t i = 0; i < n; ++i) da[i] += g[i] * s;
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) out[i] = a[i] + s;
  Tape<T>* tp = active_tape<T>();
  if (tp && tp->recording(a)) {
    const int ia = tp->input_node(a);
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) { t.add_grad(ia, g); });
  }
  return out;
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul_scalar(a, T(-1));
}

// Bias add: b has the extent of a's last axis and is added to every row.
template <typename T>
Tensor<T> add_rowwise(const Tensor<T>& a, const Tensor<T>& b) {
  const size_t d = a.shape().back();
  if (b.rank() != 1 || b.shape()[0] != d)
    throw_shape_mismatch("add_rowwise", a.shape(), b.shape());
  const size_t rows = a.size() / d;
  Tensor<T> out(a.shape());
  for (size_t r = 0; r < rows; ++r)
    for (size_t j = 0; j < d; ++j) out[r * d + j] = a[r * d + j] + b[j];

  Tape<T>* tp = active_tape<T>();
  if (tp && (tp->recording(a) || tp->recording(b))) {
    const int ia = tp->input_node(a), ib = tp->input_node(b);
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      t.add_grad(ia, g);
      if (T* db = t.grad_slot(ib))
        for (size_t r = 0; r < rows; ++r)
          for (size_t j = 0; j < d; ++j) db[j] += g[r * d + j];
    });
  }
  return out;
}

// Row vector [d] (or [1×d]) replicated to [n×d].
template <typename T>
Tensor<T> broadcast_row(const Tensor<T>& b, size_t n) {
  const size_t d = b.size();
  Tensor<T> out({n, d});
  for (size_t r = 0; r < n; ++r)
    std::memcpy(out.data() + r * d, b.data(), d * sizeof(T));
  Tape<T>* tp = active_tape<T>();
  if (tp && tp->recording(b)) {
    const int ib = tp->input_node(b);
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      if (T* db = t.grad_slot(ib))
        for (size_t r = 0; r < n; ++r)
          for (size_t j = 0; j < d; ++j) db[j] += g[r * d + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.size())
    throw_shape_mismatch("reshape", a.shape(), new_shape);
  Tensor<T> out(std::move(new_shape), std::vector<T>(a.data(), a.data() + a.size()));
  Tape<T>* tp = active_tape<T>();
  if (tp && tp->recording(a)) {
    const int ia = tp->input_node(a);
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) { t.add_grad(ia, g); });
  }
  return out;
}

namespace detail {
inline void axis_split(const Shape& s, size_t axis, size_t& outer, size_t& inner) {
  outer = 1;
  inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

template <typename T>
Tensor<T> slice(const Tensor<T>& a, size_t axis, size_t start, size_t len) {
  if (axis >= a.rank() || start + len > a.shape()[axis] || len == 0)
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") invalid for axis " +
                                std::to_string(axis) + " of " + shape_str(a.shape()));
  Shape os = a.shape();
  os[axis] = len;
  size_t outer, inner;
  detail::axis_split(a.shape(), axis, outer, inner);
  const size_t ext = a.shape()[axis];
  Tensor<T> out(os);
  for (size_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * len * inner,
                a.data() + (o * ext + start) * inner, len * inner * sizeof(T));

  Tape<T>* tp = active_tape<T>();
  if (tp && tp->recording(a)) {
    const int ia = tp->input_node(a);
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      if (T* da = t.grad_slot(ia))
        for (size_t o = 0; o < outer; ++o) {
          T* dst = da + (o * ext + start) * inner;
          const T* src = g.data() + o * len * inner;
          for (size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size())
    throw std::invalid_argument("concat: axis " + std::to_string(axis) +
                                " out of range for " + shape_str(s0));
  size_t ext = 0;
  for (const auto& p : parts) {
    if (p.rank() != s0.size()) throw_shape_mismatch("concat", s0, p.shape());
    for (size_t i = 0; i < s0.size(); ++i)
      if (i != axis && p.shape()[i] != s0[i])
        throw_shape_mismatch("concat", s0, p.shape());
    ext += p.shape()[axis];
  }
  Shape os = s0;
  os[axis] = ext;
  size_t outer, inner;
  detail::axis_split(os, axis, outer, inner);
  Tensor<T> out(os);
  size_t off = 0;
  for (const auto& p : parts) {
    const size_t pe = p.shape()[axis];
    for (size_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + (o * ext + off) * inner,
                  p.data() + o * pe * inner, pe * inner * sizeof(T));
    off += pe;
  }

  Tape<T>* tp = active_tape<T>();
  bool any = false;
  if (tp)
    for (const auto& p : parts) any = any || tp->recording(p);
  if (tp && any) {
    std::vector<int> ids(parts.size());
    std::vector<size_t> exts(parts.size());
    for (size_t i = 0; i < parts.size(); ++i) {
      ids[i] = tp->input_node(parts[i]);
      exts[i] = parts[i].shape()[axis];
    }
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      size_t o2 = 0;
      for (size_t i = 0; i < ids.size(); ++i) {
        const size_t pe = exts[i];
        if (T* dp = t.grad_slot(ids[i]))
          for (size_t o = 0; o < outer; ++o) {
            T* dst = dp + o * pe * inner;
            const T* src = g.data() + (o * ext + o2) * inner;
            for (size_t j = 0; j < pe * inner; ++j) dst[j] += src[j];
          }
        o2 += pe;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = 0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  Tape<T>* tp = active_tape<T>();
  if (tp && tp->recording(a)) {
    const int ia = tp->input_node(a);
    const size_t n = a.size();
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      if (T* da = t.grad_slot(ia))
        for (size_t i = 0; i < n; ++i) da[i] += g[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return mul_scalar(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& a, size_t axis) {
  if (axis >= a.rank())
    throw std::invalid_argument("sum_axis: axis out of range for " +
                                shape_str(a.shape()));
  size_t outer, inner;
  detail::axis_split(a.shape(), axis, outer, inner);
  const size_t ext = a.shape()[axis];
  Shape os;
  for (size_t i = 0; i < a.rank(); ++i)
    if (i != axis) os.push_back(a.shape()[i]);
  if (os.empty()) os.push_back(1);
  Tensor<T> out(os);
  for (size_t o = 0; o < outer; ++o)
    for (size_t e = 0; e < ext; ++e)
      for (size_t i = 0; i < inner; ++i)
        out[o * inner + i] += a[(o * ext + e) * inner + i];

  Tape<T>* tp = active_tape<T>();
  if (tp && tp->recording(a)) {
    const int ia = tp->input_node(a);
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      if (T* da = t.grad_slot(ia))
        for (size_t o = 0; o < outer; ++o)
          for (size_t e = 0; e < ext; ++e)
            for (size_t i = 0; i < inner; ++i)
              da[(o * ext + e) * inner + i] += g[o * inner + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& a, size_t axis) {
  return mul_scalar(sum_axis(a, axis), T(1) / static_cast<T>(a.shape()[axis]));
}

// ---------------------------------------------------------------------------
// nonlinearities
// ---------------------------------------------------------------------------

// Softmax along `axis`, stabilized by max subtraction; slices sum to 1.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, size_t axis) {
  if (axis >= a.rank())
    throw std::invalid_argument("softmax: axis out of range for " +
                                shape_str(a.shape()));
  size_t outer, inner;
  detail::axis_split(a.shape(), axis, outer, inner);
  const size_t ext = a.shape()[axis];
  Tensor<T> out(a.shape());
  for (size_t o = 0; o < outer; ++o)
    for (size_t i = 0; i < inner; ++i) {
      const size_t base = o * ext * inner + i;
      T mx = a[base];
      for (size_t e = 1; e < ext; ++e) mx = std::max(mx, a[base + e * inner]);
      T z = 0;
      for (size_t e = 0; e < ext; ++e) {
        const T v = std::exp(a[base + e * inner] - mx);
        out[base + e * inner] = v;
        z += v;
      }
      const T invz = T(1) / z;
      for (size_t e = 0; e < ext; ++e) out[base + e * inner] *= invz;
    }

  Tape<T>* tp = active_tape<T>();
  if (tp && tp->recording(a)) {
    const int ia = tp->input_node(a);
    auto ybuf = out.buffer();
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      T* da = t.grad_slot(ia);
      if (!da) return;
      const std::vector<T>& y = *ybuf;
      for (size_t o = 0; o < outer; ++o)
        for (size_t i = 0; i < inner; ++i) {
          const size_t base = o * ext * inner + i;
          T dot = 0;
          for (size_t e = 0; e < ext; ++e)
            dot += g[base + e * inner] * y[base + e * inner];
          for (size_t e = 0; e < ext; ++e) {
            const size_t ix = base + e * inner;
            da[ix] += y[ix] * (g[ix] - dot);
          }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_last(const Tensor<T>& a) {
  return softmax(a, a.rank() - 1);
}

namespace detail {

inline float std_normal_cdf(float x) {
  return 0.5f * (1.0f + ::erff(x * 0.70710678f));
}
inline double std_normal_cdf(double x) {
  return 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
}
inline float std_normal_pdf(float x) {
  return 0.39894228f * ::expf(-0.5f * x * x);
}
inline double std_normal_pdf(double x) {
  return 0.3989422804014326779 * std::exp(-0.5 * x * x);
}

}  // namespace detail

// Exact GELU, x * Phi(x) with the standard normal CDF. The same variant is
// used in forward and backward everywhere in the project.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  const size_t n = a.size();
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < n; ++i) out[i] = a[i] * detail::std_normal_cdf(a[i]);
  Tape<T>* tp = active_tape<T>();
  if (tp && tp->recording(a)) {
    const int ia = tp->input_node(a);
    auto abuf = a.buffer();
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      if (T* da = t.grad_slot(ia))
        for (size_t i = 0; i < n; ++i) {
          const T x = (*abuf)[i];
          da[i] += g[i] * (detail::std_normal_cdf(x) + x * detail::std_normal_pdf(x));
        }
    });
  }
  return out;
}

// Elementwise natural log. Caller guarantees strictly positive input.
template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  const size_t n = a.size();
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < n; ++i) out[i] = std::log(a[i]);
  Tape<T>* tp = active_tape<T>();
  if (tp && tp->recording(a)) {
    const int ia = tp->input_node(a);
    auto abuf = a.buffer();
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      if (T* da = t.grad_slot(ia))
        for (size_t i = 0; i < n; ++i) da[i] += g[i] / (*abuf)[i];
    });
  }
  return out;
}

// max(x, lo) elementwise; gradient passes only where x > lo.
template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T lo) {
  const size_t n = a.size();
  Tensor<T> out(a.shape());
  for (size_t i = 0; i < n; ++i) out[i] = std::max(a[i], lo);
  Tape<T>* tp = active_tape<T>();
  if (tp && tp->recording(a)) {
    const int ia = tp->input_node(a);
    auto abuf = a.buffer();
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      if (T* da = t.grad_slot(ia))
        for (size_t i = 0; i < n; ++i)
          if ((*abuf)[i] > lo) da[i] += g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// layer norm
// ---------------------------------------------------------------------------

// Per-row normalization over the last axis, then affine gain/bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps) {
  const size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d)
    throw_shape_mismatch("layer_norm", x.shape(), gain.shape());
  if (!(eps > T(0))) throw std::invalid_argument("layer_norm: eps must be > 0");
  const size_t rows = x.size() / d;
  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  for (size_t r = 0; r < rows; ++r) {
    const T* px = x.data() + r * d;
    T mu = 0;
    for (size_t j = 0; j < d; ++j) mu += px[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (size_t j = 0; j < d; ++j) {
      const T c = px[j] - mu;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = inv;
    for (size_t j = 0; j < d; ++j) {
      const T h = (px[j] - mu) * inv;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gain[j] + bias[j];
    }
  }

  Tape<T>* tp = active_tape<T>();
  if (tp && (tp->recording(x) || tp->recording(gain) || tp->recording(bias))) {
    const int ix = tp->input_node(x), ig = tp->input_node(gain),
              ib = tp->input_node(bias);
    auto gbuf = gain.buffer();
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      T* dgain = t.grad_slot(ig);
      T* dbias = t.grad_slot(ib);
      T* dx = t.grad_slot(ix);
      for (size_t r = 0; r < rows; ++r) {
        const T* gr = g.data() + r * d;
        const T* hr = xhat->data() + r * d;
        if (dgain)
          for (size_t j = 0; j < d; ++j) dgain[j] += gr[j] * hr[j];
        if (dbias)
          for (size_t j = 0; j < d; ++j) dbias[j] += gr[j];
        if (dx) {
          T m1 = 0, m2 = 0;
          for (size_t j = 0; j < d; ++j) {
            const T dh = gr[j] * (*gbuf)[j];
            m1 += dh;
            m2 += dh * hr[j];
          }
          m1 /= static_cast<T>(d);
          m2 /= static_cast<T>(d);
          const T inv = (*rstd)[r];
          for (size_t j = 0; j < d; ++j) {
            const T dh = gr[j] * (*gbuf)[j];
            dx[r * d + j] += (dh - m1 - hr[j] * m2) * inv;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// cross entropy
// ---------------------------------------------------------------------------

// Mean over the batch of -log softmax(logits)[label], log-sum-exp stabilized.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw std::invalid_argument("cross_entropy: logits must be [batch x classes], got " +
                                shape_str(logits.shape()));
  const size_t batch = logits.shape()[0], m = logits.shape()[1];
  if (labels.size() != batch)
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for batch " + std::to_string(batch));
  for (int y : labels)
    if (y < 0 || static_cast<size_t>(y) >= m)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) +
                                  " out of range [0," + std::to_string(m) + ")");
  T acc = 0;
  for (size_t b = 0; b < batch; ++b) {
    const T* row = logits.data() + b * m;
    T mx = row[0];
    for (size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    T z = 0;
    for (size_t j = 0; j < m; ++j) z += std::exp(row[j] - mx);
    acc += (std::log(z) + mx) - row[labels[b]];
  }
  Tensor<T> out = Tensor<T>::scalar(acc / static_cast<T>(batch));

  Tape<T>* tp = active_tape<T>();
  if (tp && tp->recording(logits)) {
    const int il = tp->input_node(logits);
    auto lbuf = logits.buffer();
    auto labs = labels;
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      T* dl = t.grad_slot(il);
      if (!dl) return;
      const T scale = g[0] / static_cast<T>(batch);
      for (size_t b = 0; b < batch; ++b) {
        const T* row = lbuf->data() + b * m;
        T mx = row[0];
        for (size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        T z = 0;
        for (size_t j = 0; j < m; ++j) z += std::exp(row[j] - mx);
        for (size_t j = 0; j < m; ++j)
          dl[b * m + j] += scale * (std::exp(row[j] - mx) / z -
                                    (static_cast<size_t>(labs[b]) == j ? T(1) : T(0)));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// embedding lookup
// ---------------------------------------------------------------------------

// Gathers rows of `table` by index; backward scatter-adds into the rows.
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<size_t>& idx) {
  if (table.rank() != 2)
    throw std::invalid_argument("embedding_lookup: table must be rank 2, got " +
                                shape_str(table.shape()));
  const size_t v = table.shape()[0], d = table.shape()[1];
  for (size_t i : idx)
    if (i >= v)
      throw std::invalid_argument("embedding_lookup: index " + std::to_string(i) +
                                  " out of range [0," + std::to_string(v) + ")");
  Tensor<T> out({idx.size(), d});
  for (size_t r = 0; r < idx.size(); ++r)
    std::memcpy(out.data() + r * d, table.data() + idx[r] * d, d * sizeof(T));

  Tape<T>* tp = active_tape<T>();
  if (tp && tp->recording(table)) {
    const int it = tp->input_node(table);
    auto ids = idx;
    tp->record(out, [=](Tape<T>& t, const std::vector<T>& g) {
      if (T* dt = t.grad_slot(it))
        for (size_t r = 0; r < ids.size(); ++r)
          for (size_t j = 0; j < d; ++j) dt[ids[r] * d + j] += g[r * d + j];
    });
  }
  return out;
}

}  // namespace mtvit
