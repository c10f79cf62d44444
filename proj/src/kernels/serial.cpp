#include <algorithm>
#include <vector>

#include "fedmark/kernels.hpp"

namespace fedmark::kernels::serial {

// Loop orders keep the inner dimension outermost per output row so the
// innermost loop runs over independent outputs and vectorizes without
// reassociating any sum.

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c.data() + i * n;
        std::fill(ci, ci + n, 0.0);
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            const double* bp = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
    std::fill(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(k * n), 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* bi = b.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            double* cp = c.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
        }
    }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t n, std::size_t k) {
    // Transposing B turns the dot products into row updates; each output still
    // sums over p in ascending order starting from zero.
    thread_local std::vector<double> bt;
    bt.resize(n * k);
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t p = 0; p < n; ++p) bt[p * k + j] = b[j * n + p];
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c.data() + i * k;
        std::fill(ci, ci + k, 0.0);
        for (std::size_t p = 0; p < n; ++p) {
            const double aip = a[i * n + p];
            const double* bp = bt.data() + p * k;
            for (std::size_t j = 0; j < k; ++j) ci[j] += aip * bp[j];
        }
    }
}

}  // namespace fedmark::kernels::serial
