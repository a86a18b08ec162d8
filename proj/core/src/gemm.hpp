#pragma once

#include <cstring>

// Small accumulating matrix products. The k-outer / n-inner loop order keeps
// the inner loop contiguous so the compiler vectorizes it; good enough for
// desk-scale training without pulling in a BLAS.
namespace rotlab::detail {

// C[M,N] += A[M,K] * B[K,N]
inline void mm_acc(const double* A, const double* B, double* C, int M, int K, int N) {
    for (int m = 0; m < M; ++m) {
        const double* a = A + static_cast<std::size_t>(m) * K;
        double* c = C + static_cast<std::size_t>(m) * N;
        for (int k = 0; k < K; ++k) {
            const double av = a[k];
            if (av == 0.0) continue;
            const double* b = B + static_cast<std::size_t>(k) * N;
            for (int n = 0; n < N; ++n) c[n] += av * b[n];
        }
    }
}

// C[M,N] += A^T[M,K] * B[K,N], with A stored as [K,M]
inline void mm_acc_at(const double* A, const double* B, double* C, int M, int K, int N) {
    for (int k = 0; k < K; ++k) {
        const double* a = A + static_cast<std::size_t>(k) * M;
        const double* b = B + static_cast<std::size_t>(k) * N;
        for (int m = 0; m < M; ++m) {
            const double av = a[m];
            if (av == 0.0) continue;
            double* c = C + static_cast<std::size_t>(m) * N;
            for (int n = 0; n < N; ++n) c[n] += av * b[n];
        }
    }
}

// C[M,N] += A[M,K] * B^T[K,N], with B stored as [N,K]
inline void mm_acc_bt(const double* A, const double* B, double* C, int M, int K, int N) {
    for (int m = 0; m < M; ++m) {
        const double* a = A + static_cast<std::size_t>(m) * K;
        double* c = C + static_cast<std::size_t>(m) * N;
        for (int n = 0; n < N; ++n) {
            const double* b = B + static_cast<std::size_t>(n) * K;
            double s = 0.0;
            for (int k = 0; k < K; ++k) s += a[k] * b[k];
            c[n] += s;
        }
    }
}

}  // namespace rotlab::detail
