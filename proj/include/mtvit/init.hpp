#pragma once

#include "mtvit/rng.hpp"
#include "mtvit/tensor.hpp"

namespace mtvit::detail {

template <typename T>
Tensor<T> trunc_normal_tensor(Shape shape, Rng& rng, double stddev = 0.02) {
  Tensor<T> t(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(rng.trunc_normal(stddev));
  return t;
}

}  // namespace mtvit::detail
