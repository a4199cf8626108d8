#pragma once

// Small dense kernels shared by the conv and linear ops. Loop orders chosen so
// the innermost loop runs over contiguous memory and auto-vectorizes.

namespace chanmap::detail {

// C[M,N] += A[M,K] * B[K,N]
inline void mm(float* C, const float* A, const float* B, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        float* c = C + static_cast<long long>(i) * N;
        const float* a = A + static_cast<long long>(i) * K;
        for (int k = 0; k < K; ++k) {
            const float av = a[k];
            const float* b = B + static_cast<long long>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C[M,N] += A[M,K] * B^T, with B stored [N,K]
inline void mm_abt(float* C, const float* A, const float* B, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        const float* a = A + static_cast<long long>(i) * K;
        float* c = C + static_cast<long long>(i) * N;
        for (int j = 0; j < N; ++j) {
            const float* b = B + static_cast<long long>(j) * K;
            float acc = 0.0f;
            for (int k = 0; k < K; ++k) acc += a[k] * b[k];
            c[j] += acc;
        }
    }
}

// C[M,N] += A^T * B, with A stored [K,M], B stored [K,N]
inline void mm_at_b(float* C, const float* A, const float* B, int M, int K, int N) {
    for (int k = 0; k < K; ++k) {
        const float* a = A + static_cast<long long>(k) * M;
        const float* b = B + static_cast<long long>(k) * N;
        for (int i = 0; i < M; ++i) {
            const float av = a[i];
            float* c = C + static_cast<long long>(i) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

} // namespace chanmap::detail
