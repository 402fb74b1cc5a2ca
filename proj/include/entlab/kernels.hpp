#pragma once

#include <cstddef>

// Hot inner loops, compiled separately with FP reassociation enabled so the
// reductions vectorize. Results stay bit-deterministic across runs of the
// same build; simplex transforms and loss math never go through these.
namespace entlab::kern {

// out[m x n] += a[m x k] * b[k x n]  (out must be zeroed by the caller)
void matmul(const float* a, const float* b, float* out, std::size_t m, std::size_t k,
            std::size_t n);
void matmul(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
            std::size_t n);

// ga[m x k] += g[m x n] * b^T;  uses a caller-provided k x n scratch for b^T
void matmul_grad_a(const float* g, const float* b, float* ga, float* scratch_bt,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_grad_a(const double* g, const double* b, double* ga, double* scratch_bt,
                   std::size_t m, std::size_t k, std::size_t n);

// gb[k x n] += a^T * g
void matmul_grad_b(const float* a, const float* g, float* gb, std::size_t m, std::size_t k,
                   std::size_t n);
void matmul_grad_b(const double* a, const double* g, double* gb, std::size_t m,
                   std::size_t k, std::size_t n);

double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);

}  // namespace entlab::kern
