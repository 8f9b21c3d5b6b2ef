#ifndef PRDL_KERNELS_HPP
#define PRDL_KERNELS_HPP

#include <cstddef>
#include <functional>

namespace prdl::kernels {

// Global worker-thread cap. 1 disables OpenMP dispatch entirely so the
// serial reference path runs. Parallel kernels are only ever parallel over
// independent output elements; each element is computed with the same
// summation order as the serial kernel, so results are bit-identical for
// any thread count. Reductions are never parallelized.
void set_max_threads(int n);
int max_threads();

// y[i] = sum_j W[i*cols + j] * x[j]        (W row-major, rows x cols)
void matvec_serial(const double* w, const double* x, double* y,
                   std::size_t rows, std::size_t cols);
void matvec_omp(const double* w, const double* x, double* y,
                std::size_t rows, std::size_t cols);
void matvec(const double* w, const double* x, double* y, std::size_t rows,
            std::size_t cols);

// gx[j] += sum_i W[i*cols + j] * gy[i]     (matvec backward w.r.t. x)
void matvec_bwd_input_serial(const double* w, const double* gy, double* gx,
                             std::size_t rows, std::size_t cols);
void matvec_bwd_input_omp(const double* w, const double* gy, double* gx,
                          std::size_t rows, std::size_t cols);
void matvec_bwd_input(const double* w, const double* gy, double* gx,
                      std::size_t rows, std::size_t cols);

// gW[i*cols + j] += gy[i] * x[j]           (matvec backward w.r.t. W)
void matvec_bwd_weight_serial(const double* gy, const double* x, double* gw,
                              std::size_t rows, std::size_t cols);
void matvec_bwd_weight_omp(const double* gy, const double* x, double* gw,
                           std::size_t rows, std::size_t cols);
void matvec_bwd_weight(const double* gy, const double* x, double* gw,
                       std::size_t rows, std::size_t cols);

// C[i*n + j] = sum_k A[i*k_dim + k] * B[k*n + j]   (all row-major)
void matmul_serial(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k_dim, std::size_t n);
void matmul_omp(const double* a, const double* b, double* c, std::size_t m,
                std::size_t k_dim, std::size_t n);
void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k_dim, std::size_t n);

// Runs fn(i) for i in [0, n). Parallel when the thread cap allows; the
// caller guarantees iterations are independent.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace prdl::kernels

#endif  // PRDL_KERNELS_HPP
