#include "entlab/kernels.hpp"

namespace entlab::kern {

namespace {

template <typename T>
void matmul_impl(const T* a, const T* b, T* out, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* orow = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
}

template <typename T>
void grad_a_impl(const T* g, const T* b, T* ga, T* bt, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    T* garow = ga + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T gij = grow[j];
      const T* btrow = bt + j * k;
      for (std::size_t p = 0; p < k; ++p) garow[p] += gij * btrow[p];
    }
  }
}

template <typename T>
void grad_b_impl(const T* a, const T* g, T* gb, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * k + p];
      T* gbrow = gb + p * n;
      for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
    }
  }
}

}  // namespace

void matmul(const float* a, const float* b, float* out, std::size_t m, std::size_t k,
            std::size_t n) {
  matmul_impl(a, b, out, m, k, n);
}
void matmul(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
            std::size_t n) {
  matmul_impl(a, b, out, m, k, n);
}
void matmul_grad_a(const float* g, const float* b, float* ga, float* bt, std::size_t m,
                   std::size_t k, std::size_t n) {
  grad_a_impl(g, b, ga, bt, m, k, n);
}
void matmul_grad_a(const double* g, const double* b, double* ga, double* bt, std::size_t m,
                   std::size_t k, std::size_t n) {
  grad_a_impl(g, b, ga, bt, m, k, n);
}
void matmul_grad_b(const float* a, const float* g, float* gb, std::size_t m, std::size_t k,
                   std::size_t n) {
  grad_b_impl(a, g, gb, m, k, n);
}
void matmul_grad_b(const double* a, const double* g, double* gb, std::size_t m,
                   std::size_t k, std::size_t n) {
  grad_b_impl(a, g, gb, m, k, n);
}

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace entlab::kern
