#pragma once

#include <cstddef>

namespace palsyfuse::nn {

// C (m x n) = op(A) * op(B), or C += ... when `accumulate`. Row-major,
// contiguous. Each output element sums its k products in increasing k
// order, so results do not depend on vector width or blocking.
void matmul(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
            const double* b, double* c, bool accumulate = false);

}  // namespace palsyfuse::nn
