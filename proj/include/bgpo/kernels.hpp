#pragma once

#include <cstddef>

// Dense row-major kernels used by the differentiable graph and the plain
// forward path. Every output element is produced by the same sequence of
// floating-point operations regardless of thread count, so the OpenMP
// variants agree bitwise with the serial reference variants.
namespace bgpo::kernels {

// c[m x n] = a[m x k] * b[k x n]
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n);
// da[m x k] += g[m x n] * b[k x n]^T
void matmul_grad_a(const double* g, const double* b, double* da, std::size_t m, std::size_t k,
                   std::size_t n);
// db[k x n] += a[m x k]^T * g[m x n]
void matmul_grad_b(const double* a, const double* g, double* db, std::size_t m, std::size_t k,
                   std::size_t n);

/// Single-head bidirectional attention over `len` positions of width `dim`.
/// `probs` receives the len x len softmax weights, needed by the backward.
void attention_forward(const double* q, const double* k, const double* v, double* out,
                       double* probs, std::size_t len, std::size_t dim);
void attention_backward(const double* q, const double* k, const double* v, const double* probs,
                        const double* dout, double* dq, double* dk, double* dv, std::size_t len,
                        std::size_t dim);

/// y = x / rms(x) * gain per row; inv_rms[m] saved for the backward.
void rms_norm_forward(const double* x, const double* gain, double* y, double* inv_rms,
                      std::size_t m, std::size_t n);
void rms_norm_backward(const double* x, const double* gain, const double* inv_rms,
                       const double* dy, double* dx, double* dgain, std::size_t m, std::size_t n);

void log_softmax_rows(const double* x, double* y, std::size_t m, std::size_t n);
// dx += dy - softmax(x) * rowsum(dy), with softmax recovered from y.
void log_softmax_backward(const double* y, const double* dy, double* dx, std::size_t m,
                          std::size_t n);

namespace reference {

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n);
void matmul_grad_a(const double* g, const double* b, double* da, std::size_t m, std::size_t k,
                   std::size_t n);
void matmul_grad_b(const double* a, const double* g, double* db, std::size_t m, std::size_t k,
                   std::size_t n);
void attention_forward(const double* q, const double* k, const double* v, double* out,
                       double* probs, std::size_t len, std::size_t dim);
void attention_backward(const double* q, const double* k, const double* v, const double* probs,
                        const double* dout, double* dq, double* dk, double* dv, std::size_t len,
                        std::size_t dim);
void rms_norm_forward(const double* x, const double* gain, double* y, double* inv_rms,
                      std::size_t m, std::size_t n);
void rms_norm_backward(const double* x, const double* gain, const double* inv_rms,
                       const double* dy, double* dx, double* dgain, std::size_t m, std::size_t n);
void log_softmax_rows(const double* x, double* y, std::size_t m, std::size_t n);
void log_softmax_backward(const double* y, const double* dy, double* dx, std::size_t m,
                          std::size_t n);

}  // namespace reference

inline constexpr double kRmsEps = 1e-6;

}  // namespace bgpo::kernels
