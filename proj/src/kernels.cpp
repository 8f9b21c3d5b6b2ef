#include "prdl/kernels.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace prdl::kernels {

namespace {
std::atomic<int> g_max_threads{1};

inline bool use_omp(std::size_t work_items) {
#ifdef _OPENMP
  // Tiny loops are not worth the fork/join; below this the serial path is
  // used even when threads are enabled. Dispatch never changes results.
  constexpr std::size_t kMinItems = 64;
  return g_max_threads.load(std::memory_order_relaxed) > 1 &&
         work_items >= kMinItems && !omp_in_parallel();
#else
  (void)work_items;
  return false;
#endif
}
}  // namespace

void set_max_threads(int n) {
  if (n < 1) n = 1;
  g_max_threads.store(n, std::memory_order_relaxed);
#ifdef _OPENMP
  omp_set_num_threads(n);
#endif
}

int max_threads() { return g_max_threads.load(std::memory_order_relaxed); }

void matvec_serial(const double* w, const double* x, double* y,
                   std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* wr = w + i * cols;
    double acc = 0.0;
    for (std::size_t j = 0; j < cols; ++j) acc += wr[j] * x[j];
    y[i] = acc;
  }
}

void matvec_omp(const double* w, const double* x, double* y, std::size_t rows,
                std::size_t cols) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(rows); ++i) {
    const double* wr = w + static_cast<std::size_t>(i) * cols;
    double acc = 0.0;
    for (std::size_t j = 0; j < cols; ++j) acc += wr[j] * x[j];
    y[i] = acc;
  }
}

void matvec(const double* w, const double* x, double* y, std::size_t rows,
            std::size_t cols) {
  if (use_omp(rows)) {
    matvec_omp(w, x, y, rows, cols);
  } else {
    matvec_serial(w, x, y, rows, cols);
  }
}

void matvec_bwd_input_serial(const double* w, const double* gy, double* gx,
                             std::size_t rows, std::size_t cols) {
  for (std::size_t j = 0; j < cols; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < rows; ++i) acc += w[i * cols + j] * gy[i];
    gx[j] += acc;
  }
}

void matvec_bwd_input_omp(const double* w, const double* gy, double* gx,
                          std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(cols); ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < rows; ++i)
      acc += w[i * cols + static_cast<std::size_t>(j)] * gy[i];
    gx[j] += acc;
  }
}

void matvec_bwd_input(const double* w, const double* gy, double* gx,
                      std::size_t rows, std::size_t cols) {
  if (use_omp(cols)) {
    matvec_bwd_input_omp(w, gy, gx, rows, cols);
  } else {
    matvec_bwd_input_serial(w, gy, gx, rows, cols);
  }
}

void matvec_bwd_weight_serial(const double* gy, const double* x, double* gw,
                              std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    double* gr = gw + i * cols;
    const double g = gy[i];
    for (std::size_t j = 0; j < cols; ++j) gr[j] += g * x[j];
  }
}

void matvec_bwd_weight_omp(const double* gy, const double* x, double* gw,
                           std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(rows); ++i) {
    double* gr = gw + static_cast<std::size_t>(i) * cols;
    const double g = gy[i];
    for (std::size_t j = 0; j < cols; ++j) gr[j] += g * x[j];
  }
}

void matvec_bwd_weight(const double* gy, const double* x, double* gw,
                       std::size_t rows, std::size_t cols) {
  if (use_omp(rows)) {
    matvec_bwd_weight_omp(gy, x, gw, rows, cols);
  } else {
    matvec_bwd_weight_serial(gy, x, gw, rows, cols);
  }
}

void matmul_serial(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k_dim, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * k_dim;
    double* cr = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < k_dim; ++k) acc += ar[k] * b[k * n + j];
      cr[j] = acc;
    }
  }
}

void matmul_omp(const double* a, const double* b, double* c, std::size_t m,
                std::size_t k_dim, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    const double* ar = a + static_cast<std::size_t>(i) * k_dim;
    double* cr = c + static_cast<std::size_t>(i) * n;
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < k_dim; ++k) acc += ar[k] * b[k * n + j];
      cr[j] = acc;
    }
  }
}

void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k_dim, std::size_t n) {
  if (use_omp(m * n)) {
    matmul_omp(a, b, c, m, k_dim, n);
  } else {
    matmul_serial(a, b, c, m, k_dim, n);
  }
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
#ifdef _OPENMP
  // Coarse-grained tasks (per-image graphs, per-bag passes): any n >= 2 is
  // worth distributing.
  if (g_max_threads.load(std::memory_order_relaxed) > 1 && n >= 2 &&
      !omp_in_parallel()) {
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
      fn(static_cast<std::size_t>(i));
    return;
  }
#endif
  for (std::size_t i = 0; i < n; ++i) fn(i);
}

}  // namespace prdl::kernels
