#include <omp.h>

#include <algorithm>
#include <atomic>

#include "fedmark/kernels.hpp"

namespace fedmark::kernels {

namespace {
std::atomic<int> g_workers{1};
}

void set_worker_count(int workers) {
    g_workers = std::max(1, workers);
    omp_set_num_threads(g_workers);
}

int worker_count() { return g_workers; }

namespace {
// Small products skip the parallel region entirely; its setup costs more than the work.
bool stay_serial(std::size_t work) { return work < kParallelWorkThreshold || g_workers.load() == 1; }
}  // namespace

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
    if (stay_serial(m * k * n)) return serial::matmul(a, b, c, m, k, n);
    const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static)
    for (long ii = 0; ii < rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        double* ci = c.data() + i * n;
        std::fill(ci, ci + n, 0.0);
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            const double* bp = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

// Each thread owns whole output rows p and walks i in ascending order.
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
    if (stay_serial(m * k * n)) return serial::matmul_tn(a, b, c, m, k, n);
    const long inner = static_cast<long>(k);
#pragma omp parallel for schedule(static)
    for (long pp = 0; pp < inner; ++pp) {
        const auto p = static_cast<std::size_t>(pp);
        double* cp = c.data() + p * n;
        std::fill(cp, cp + n, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            const double aip = a[i * k + p];
            const double* bi = b.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
        }
    }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t n, std::size_t k) {
    if (stay_serial(m * k * n)) return serial::matmul_nt(a, b, c, m, n, k);
    const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static)
    for (long ii = 0; ii < rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        for (std::size_t j = 0; j < k; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < n; ++p) acc += a[i * n + p] * b[j * n + p];
            c[i * k + j] = acc;
        }
    }
}

}  // namespace parallel
}  // namespace fedmark::kernels
