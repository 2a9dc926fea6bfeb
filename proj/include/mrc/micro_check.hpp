#pragma once

#include <cstdint>

#include "mrc/gradcheck.hpp"

namespace mrc {

struct MicroCheckResult {
  double max_rel_err = 0.0;
  std::size_t scalars_checked = 0;
  std::string worst_param;
  double seconds = 0.0;
};

// 64-bit central-difference check of the full micro model (16-wide encoder,
// two layers, two co-attention heads of dimension 8, classifier) on a seeded
// three-option fixture, probing every parameter scalar.
MicroCheckResult micro_grad_check(std::uint64_t seed, double eps = 1e-5);

}  // namespace mrc
