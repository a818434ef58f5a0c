#include "bgpo/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace bgpo::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = std::size_t{1} << 15;

using Index = std::ptrdiff_t;

}  // namespace

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n) {
  const Index rows = static_cast<Index>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (Index i = 0; i < rows; ++i) {
    double* __restrict crow = c + i * n;
    std::fill(crow, crow + n, 0.0);
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = arow[p];
      const double* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
    }
  }
}

void matmul_grad_a(const double* g, const double* b, double* da, std::size_t m, std::size_t k,
                   std::size_t n) {
  const Index rows = static_cast<Index>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelWork)
  for (Index i = 0; i < rows; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
      da[i * k + p] += s;
    }
  }
}

void matmul_grad_b(const double* a, const double* g, double* db, std::size_t m, std::size_t k,
                   std::size_t n) {
  const Index inner = static_cast<Index>(k);
#pragma omp parallel if (m * k * n >= kParallelWork)
  {
    std::vector<double> acc(n);
#pragma omp for schedule(static)
    for (Index p = 0; p < inner; ++p) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        const double s = a[i * k + p];
        const double* __restrict grow = g + i * n;
        double* __restrict out = acc.data();
        for (std::size_t j = 0; j < n; ++j) out[j] += s * grow[j];
      }
      double* drow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) drow[j] += acc[j];
    }
  }
}

void attention_forward(const double* q, const double* k, const double* v, double* out,
                       double* probs, std::size_t len, std::size_t dim) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  const Index rows = static_cast<Index>(len);
#pragma omp parallel for schedule(static) if (len * len * dim >= kParallelWork)
  for (Index i = 0; i < rows; ++i) {
    double* prow = probs + i * len;
    const double* qrow = q + i * dim;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < len; ++j) {
      const double* krow = k + j * dim;
      double s = 0.0;
      for (std::size_t c = 0; c < dim; ++c) s += qrow[c] * krow[c];
      prow[j] = s * scale;
      mx = std::max(mx, prow[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      prow[j] = std::exp(prow[j] - mx);
      total += prow[j];
    }
    for (std::size_t j = 0; j < len; ++j) prow[j] /= total;
    double* orow = out + i * dim;
    std::fill(orow, orow + dim, 0.0);
    for (std::size_t j = 0; j < len; ++j) {
      const double pj = prow[j];
      const double* vrow = v + j * dim;
      for (std::size_t c = 0; c < dim; ++c) orow[c] += pj * vrow[c];
    }
  }
}

void attention_backward(const double* q, const double* k, const double* v, const double* probs,
                        const double* dout, double* dq, double* dk, double* dv, std::size_t len,
                        std::size_t dim) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  const Index rows = static_cast<Index>(len);
  std::vector<double> dscore(len * len);
  const bool parallel = len * len * dim >= kParallelWork;
#pragma omp parallel if (parallel)
  {
#pragma omp for schedule(static)
    for (Index i = 0; i < rows; ++i) {
      const double* prow = probs + i * len;
      const double* drow = dout + i * dim;
      double* srow = dscore.data() + i * len;
      double weighted = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double* vrow = v + j * dim;
        double s = 0.0;
        for (std::size_t c = 0; c < dim; ++c) s += drow[c] * vrow[c];
        srow[j] = s;
        weighted += prow[j] * s;
      }
      for (std::size_t j = 0; j < len; ++j) srow[j] = prow[j] * (srow[j] - weighted);
      double* dqrow = dq + i * dim;
      for (std::size_t c = 0; c < dim; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < len; ++j) s += srow[j] * k[j * dim + c];
        dqrow[c] += s * scale;
      }
    }
#pragma omp for schedule(static)
    for (Index j = 0; j < rows; ++j) {
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
}

void rms_norm_forward(const double* x, const double* gain, double* y, double* inv_rms,
                      std::size_t m, std::size_t n) {
  const Index rows = static_cast<Index>(m);
#pragma omp parallel for schedule(static) if (m * n >= kParallelWork)
  for (Index i = 0; i < rows; ++i) {
    const double* xrow = x + i * n;
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += xrow[j] * xrow[j];
    const double r = 1.0 / std::sqrt(ss / static_cast<double>(n) + kRmsEps);
    inv_rms[i] = r;
    double* yrow = y + i * n;
    for (std::size_t j = 0; j < n; ++j) yrow[j] = xrow[j] * r * gain[j];
  }
}

void rms_norm_backward(const double* x, const double* gain, const double* inv_rms,
                       const double* dy, double* dx, double* dgain, std::size_t m, std::size_t n) {
  const Index rows = static_cast<Index>(m);
  if (dx != nullptr) {
#pragma omp parallel for schedule(static) if (m * n >= kParallelWork)
    for (Index i = 0; i < rows; ++i) {
      const double* xrow = x + i * n;
      const double* dyrow = dy + i * n;
      const double r = inv_rms[i];
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += dyrow[j] * gain[j] * xrow[j];
      const double coef = r * r * r * dot / static_cast<double>(n);
      double* dxrow = dx + i * n;
      for (std::size_t j = 0; j < n; ++j) dxrow[j] += r * gain[j] * dyrow[j] - xrow[j] * coef;
    }
  }
  if (dgain != nullptr) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) dgain[j] += dy[i * n + j] * x[i * n + j] * inv_rms[i];
    }
  }
}

void log_softmax_rows(const double* x, double* y, std::size_t m, std::size_t n) {
  const Index rows = static_cast<Index>(m);
#pragma omp parallel for schedule(static) if (m * n >= kParallelWork)
  for (Index i = 0; i < rows; ++i) {
    const double* xrow = x + i * n;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xrow[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(xrow[j] - mx);
    const double lse = mx + std::log(total);
    double* yrow = y + i * n;
    for (std::size_t j = 0; j < n; ++j) yrow[j] = xrow[j] - lse;
  }
}

void log_softmax_backward(const double* y, const double* dy, double* dx, std::size_t m,
                          std::size_t n) {
  const Index rows = static_cast<Index>(m);
#pragma omp parallel for schedule(static) if (m * n >= kParallelWork)
  for (Index i = 0; i < rows; ++i) {
    const double* yrow = y + i * n;
    const double* dyrow = dy + i * n;
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += dyrow[j];
    double* dxrow = dx + i * n;
    for (std::size_t j = 0; j < n; ++j) dxrow[j] += dyrow[j] - std::exp(yrow[j]) * total;
  }
}

}  // namespace bgpo::kernels
