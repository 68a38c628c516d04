#pragma once

#include "demure/ndcore/array.hpp"
#include "demure/rng.hpp"

namespace demure::testing {

inline nd::Array random_array(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  nd::Array a(rows, cols);
  for (auto& x : a.data()) x = scale * rng.normal();
  return a;
}

}  // namespace demure::testing
