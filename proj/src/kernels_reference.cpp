// Serial textbook versions of the kernels. Kept for testing the OpenMP
// variants and as the baseline in the kernel benchmark.
#include <cmath>
#include <vector>

#include "bgpo/kernels.hpp"

namespace bgpo::kernels::reference {

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

void matmul_grad_a(const double* g, const double* b, double* da, std::size_t m, std::size_t k,
                   std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * b[p * n + j];
      da[i * k + p] += s;
    }
  }
}

void matmul_grad_b(const double* a, const double* g, double* db, std::size_t m, std::size_t k,
                   std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) s += a[i * k + p] * g[i * n + j];
      db[p * n + j] += s;
    }
  }
}

void attention_forward(const double* q, const double* k, const double* v, double* out,
                       double* probs, std::size_t len, std::size_t dim) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (std::size_t i = 0; i < len; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < len; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < dim; ++c) s += q[i * dim + c] * k[j * dim + c];
      probs[i * len + j] = s * scale;
      if (probs[i * len + j] > mx) mx = probs[i * len + j];
    }
    double total = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      probs[i * len + j] = std::exp(probs[i * len + j] - mx);
      total += probs[i * len + j];
    }
    for (std::size_t j = 0; j < len; ++j) probs[i * len + j] /= total;
    for (std::size_t c = 0; c < dim; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < len; ++j) s += probs[i * len + j] * v[j * dim + c];
      out[i * dim + c] = s;
    }
  }
}

void attention_backward(const double* q, const double* k, const double* v, const double* probs,
                        const double* dout, double* dq, double* dk, double* dv, std::size_t len,
                        std::size_t dim) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<double> dscore(len * len);
  for (std::size_t i = 0; i < len; ++i) {
    double weighted = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < dim; ++c) s += dout[i * dim + c] * v[j * dim + c];
      dscore[i * len + j] = s;
      weighted += probs[i * len + j] * s;
    }
    for (std::size_t j = 0; j < len; ++j) {
      dscore[i * len + j] = probs[i * len + j] * (dscore[i * len + j] - weighted);
    }
    for (std::size_t c = 0; c < dim; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < len; ++j) s += dscore[i * len + j] * k[j * dim + c];
      dq[i * dim + c] += s * scale;
    }
  }
  for (std::size_t j = 0; j < len; ++j) {
    for (std::size_t c = 0; c < dim; ++c) {
      double sv = 0.0;
      double sk = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        sv += probs[i * len + j] * dout[i * dim + c];
        sk += dscore[i * len + j] * q[i * dim + c];
      }
      dv[j * dim + c] += sv;
      dk[j * dim + c] += sk * scale;
    }
  }
}

void rms_norm_forward(const double* x, const double* gain, double* y, double* inv_rms,
                      std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += x[i * n + j] * x[i * n + j];
    inv_rms[i] = 1.0 / std::sqrt(ss / static_cast<double>(n) + kRmsEps);
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = x[i * n + j] * inv_rms[i] * gain[j];
  }
}

void rms_norm_backward(const double* x, const double* gain, const double* inv_rms,
                       const double* dy, double* dx, double* dgain, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double r = inv_rms[i];
    double dot = 0.0;
    for (std::size_t j = 0; j < n; ++j) dot += dy[i * n + j] * gain[j] * x[i * n + j];
    const double coef = r * r * r * dot / static_cast<double>(n);
    if (dx != nullptr) {
      for (std::size_t j = 0; j < n; ++j) {
        dx[i * n + j] += r * gain[j] * dy[i * n + j] - x[i * n + j] * coef;
      }
    }
  }
  if (dgain != nullptr) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) dgain[j] += dy[i * n + j] * x[i * n + j] * inv_rms[i];
    }
  }
}

void log_softmax_rows(const double* x, double* y, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      if (x[i * n + j] > mx) mx = x[i * n + j];
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(x[i * n + j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = x[i * n + j] - lse;
  }
}

void log_softmax_backward(const double* y, const double* dy, double* dx, std::size_t m,
                          std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += dy[i * n + j];
    for (std::size_t j = 0; j < n; ++j) {
      dx[i * n + j] += dy[i * n + j] - std::exp(y[i * n + j]) * total;
    }
  }
}

}  // namespace bgpo::kernels::reference
