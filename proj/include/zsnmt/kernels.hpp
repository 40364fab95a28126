#pragma once

#include <cstddef>

// Raw dense kernels shared by forward ops and their adjoints. All matrices
// are row-major. The ikj ordering keeps the inner loops contiguous so the
// compiler can vectorize them; these sizes all fit in cache at desk scale.

namespace zsnmt::kernels {

// c[m x n] = a[m x k] * b[k x n]
template <typename S>
void mm_nn(const S* a, const S* b, S* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    S* ci = c + i * n;
    for (size_t j = 0; j < n; ++j) ci[j] = S(0);
    const S* ai = a + i * k;
    for (size_t p = 0; p < k; ++p) {
      const S av = ai[p];
      const S* bp = b + p * n;
      for (size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m x n] += a[m x k] * b[k x n]
template <typename S>
void mm_nn_acc(const S* a, const S* b, S* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    S* ci = c + i * n;
    const S* ai = a + i * k;
    for (size_t p = 0; p < k; ++p) {
      const S av = ai[p];
      const S* bp = b + p * n;
      for (size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m x n] = a[m x k] * b[n x k]^T
template <typename S>
void mm_nt(const S* a, const S* b, S* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const S* ai = a + i * k;
    S* ci = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const S* bj = b + j * k;
      S acc = S(0);
      for (size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] = acc;
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
template <typename S>
void mm_nt_acc(const S* a, const S* b, S* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const S* ai = a + i * k;
    S* ci = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const S* bj = b + j * k;
      S acc = S(0);
      for (size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// c[k x n] += a[k x m]^T(as stored: a is [m x k]) * b[m x n]
// i.e. c += a^T * b with a given row-major [m x k].
template <typename S>
void mm_tn_acc(const S* a, const S* b, S* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const S* ai = a + i * k;
    const S* bi = b + i * n;
    for (size_t p = 0; p < k; ++p) {
      const S av = ai[p];
      S* cp = c + p * n;
      for (size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

}  // namespace zsnmt::kernels
