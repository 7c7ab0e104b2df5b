#include "palsyfuse/nn/linalg.hpp"

#include <algorithm>
#include <vector>

namespace palsyfuse::nn {

namespace {

void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst) {
    constexpr std::size_t kBlock = 32;
    for (std::size_t i0 = 0; i0 < rows; i0 += kBlock) {
        for (std::size_t j0 = 0; j0 < cols; j0 += kBlock) {
            const std::size_t i1 = std::min(rows, i0 + kBlock), j1 = std::min(cols, j0 + kBlock);
            for (std::size_t i = i0; i < i1; ++i) {
                for (std::size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
            }
        }
    }
}

constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 8;

// C tile (kMr x kNr) += Apanel * B, with Apanel packed as ap[kk * kMr + r].
// Every accumulator starts from C and adds its products in increasing kk.
void micro_full(std::size_t k, const double* ap, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    double acc[kMr][kNr];
    for (std::size_t r = 0; r < kMr; ++r) {
        for (std::size_t j = 0; j < kNr; ++j) acc[r][j] = c[r * ldc + j];
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double* brow = b + kk * ldb;
        const double* a = ap + kk * kMr;
        for (std::size_t r = 0; r < kMr; ++r) {
            for (std::size_t j = 0; j < kNr; ++j) acc[r][j] += a[r] * brow[j];
        }
    }
    for (std::size_t r = 0; r < kMr; ++r) {
        for (std::size_t j = 0; j < kNr; ++j) c[r * ldc + j] = acc[r][j];
    }
}

void micro_edge(std::size_t rows, std::size_t cols, std::size_t k, const double* ap, const double* b,
                std::size_t ldb, double* c, std::size_t ldc) {
    double acc[kMr][kNr] = {};
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) acc[r][j] = c[r * ldc + j];
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double* brow = b + kk * ldb;
        const double* a = ap + kk * kMr;
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < cols; ++j) acc[r][j] += a[r] * brow[j];
        }
    }
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) c[r * ldc + j] = acc[r][j];
    }
}

}  // namespace

void matmul(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
            const double* b, double* c, bool accumulate) {
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    if (m == 0 || n == 0 || k == 0) return;

    std::vector<double> bt;
    const double* bb = b;
    if (trans_b) {
        // B is stored (n x k); the kernel wants (k x n).
        bt.resize(n * k);
        transpose(n, k, b, bt.data());
        bb = bt.data();
    }
    // Pack A into row panels (ap[kk * kMr + r]) and each column block of B
    // into a contiguous (k x kNr) strip.
    const std::size_t panels = (m + kMr - 1) / kMr;
    std::vector<double> ap(panels * k * kMr, 0.0);
    for (std::size_t p = 0; p < panels; ++p) {
        const std::size_t i0 = p * kMr, rows = std::min(kMr, m - i0);
        double* dst = ap.data() + p * k * kMr;
        for (std::size_t kk = 0; kk < k; ++kk) {
            for (std::size_t r = 0; r < rows; ++r) {
                dst[kk * kMr + r] = trans_a ? a[kk * m + i0 + r] : a[(i0 + r) * k + kk];
            }
        }
    }
    std::vector<double> bp(k * kNr);
    for (std::size_t j0 = 0; j0 < n; j0 += kNr) {
        const std::size_t cols = std::min(kNr, n - j0);
        for (std::size_t kk = 0; kk < k; ++kk) {
            std::copy_n(bb + kk * n + j0, cols, bp.data() + kk * kNr);
        }
        for (std::size_t p = 0; p < panels; ++p) {
            const std::size_t i0 = p * kMr, rows = std::min(kMr, m - i0);
            double* ct = c + i0 * n + j0;
            const double* panel = ap.data() + p * k * kMr;
            if (rows == kMr && cols == kNr) {
                micro_full(k, panel, bp.data(), kNr, ct, n);
            } else {
                micro_edge(rows, cols, k, panel, bp.data(), kNr, ct, n);
            }
        }
    }
}

}  // namespace palsyfuse::nn
