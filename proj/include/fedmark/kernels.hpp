#pragma once

#include <cstddef>
#include <span>

// Dense matrix kernels. Every routine exists twice: a serial reference and an
// OpenMP version. Both accumulate each output entry over the inner dimension
// in the same ascending order, so their results are bit-identical for any
// thread count. Parallelism is only ever across independent output entries.
//
// All matrices are row-major; dimensions are passed explicitly.

namespace fedmark::kernels {

namespace serial {

// C[m,n] = A[m,k] * B[k,n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);

// C[k,n] = A[m,k]^T * B[m,n]
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);

// C[m,k] = A[m,n] * B[k,n]^T
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t n, std::size_t k);

}  // namespace serial

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t n, std::size_t k);

}  // namespace parallel

// Work (in multiply-adds) below which the parallel kernels stay on one thread.
inline constexpr std::size_t kParallelWorkThreshold = 1u << 15;

// Sets the OpenMP team size used by the parallel kernels and by the
// per-node training loop. Values < 1 are clamped to 1.
void set_worker_count(int workers);
int worker_count();

}  // namespace fedmark::kernels
