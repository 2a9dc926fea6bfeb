#pragma once

#include <cmath>

#include "mrc/rng.hpp"
#include "mrc/tensor.hpp"

namespace mrc::detail {

// Scaled-uniform (Xavier) matrix init; biases stay zero and norm gains one.
template <class S>
Tensor<S> xavier(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<S> v(fan_in * fan_out);
  for (auto& x : v) x = static_cast<S>(rng.uniform(-limit, limit));
  return Tensor<S>::from({fan_in, fan_out}, std::move(v));
}

}  // namespace mrc::detail
