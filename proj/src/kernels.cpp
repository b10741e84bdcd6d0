/*
 * Copyright (c) 2026 the dasheng-cpp authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "dasheng/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dasheng::kernels {

namespace {

int env_thread_cap() {
#ifdef _OPENMP
    int cap = omp_get_max_threads();
#else
    int cap = 1;
#endif
    if (const char* env = std::getenv("DASHENG_THREADS")) {
        const int requested = std::atoi(env);
        if (requested > 0) {
            cap = std::min(cap, requested);
        }
    }
    return cap;
}

std::atomic<int> g_thread_override{0};

// Work below these sizes is not worth a parallel region. The cutoff only
// selects serial vs parallel dispatch; results are identical either way.
constexpr std::int64_t kMinParallelFlops = 1 << 15;
constexpr std::int64_t kMinParallelElems = 1 << 14;

template <class T>
inline T gelu_one(T x) {
    const T phi = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475244)));
    return x * phi;
}

template <class T>
inline T gelu_grad_one(T x) {
    const T phi = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475244)));
    const T pdf = T(0.3989422804014326779) * std::exp(T(-0.5) * x * x);
    return phi + x * pdf;
}

template <class T>
inline void softmax_row(const T* x, T* y, int d) {
    T mx = x[0];
    for (int j = 1; j < d; ++j) {
        mx = std::max(mx, x[j]);
    }
    T sum = 0;
    for (int j = 0; j < d; ++j) {
        y[j] = std::exp(x[j] - mx);
        sum += y[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < d; ++j) {
        y[j] *= inv;
    }
}

template <class T>
inline void softmax_row_backward(const T* y, const T* dy, T* dx, int d) {
    T dot = 0;
    for (int j = 0; j < d; ++j) {
        dot += dy[j] * y[j];
    }
    for (int j = 0; j < d; ++j) {
        dx[j] += y[j] * (dy[j] - dot);
    }
}

template <class T>
inline void layernorm_row(const T* x, const T* gamma, const T* beta, T* y,
                          int d, T eps) {
    T mean = 0;
    for (int j = 0; j < d; ++j) {
        mean += x[j];
    }
    mean /= T(d);
    T var = 0;
    for (int j = 0; j < d; ++j) {
        const T c = x[j] - mean;
        var += c * c;
    }
    var /= T(d);
    const T inv = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) {
        y[j] = (x[j] - mean) * inv * gamma[j] + beta[j];
    }
}

// dL/dx for one row: inv * (g - mean(g) - xhat * mean(g * xhat)),
// where g = gamma .* dy and xhat is the normalized input.
template <class T>
inline void layernorm_row_dx(const T* x, const T* gamma, const T* dy, T* dx,
                             int d, T eps) {
    T mean = 0;
    for (int j = 0; j < d; ++j) {
        mean += x[j];
    }
    mean /= T(d);
    T var = 0;
    for (int j = 0; j < d; ++j) {
        const T c = x[j] - mean;
        var += c * c;
    }
    var /= T(d);
    const T inv = T(1) / std::sqrt(var + eps);
    T g_mean = 0;
    T gx_mean = 0;
    for (int j = 0; j < d; ++j) {
        const T g = gamma[j] * dy[j];
        const T xhat = (x[j] - mean) * inv;
        g_mean += g;
        gx_mean += g * xhat;
    }
    g_mean /= T(d);
    gx_mean /= T(d);
    for (int j = 0; j < d; ++j) {
        const T g = gamma[j] * dy[j];
        const T xhat = (x[j] - mean) * inv;
        dx[j] += inv * (g - g_mean - xhat * gx_mean);
    }
}

// dgamma[j] / dbeta[j] summed over rows in ascending row order; one column
// per invocation so the column loop can be parallelized without races.
template <class T>
inline void layernorm_col_affine_grads(const T* x, const T* dy, T* dgamma,
                                       T* dbeta, int rows, int d, int j, T eps) {
    T dg = 0;
    T db = 0;
    for (int r = 0; r < rows; ++r) {
        const T* xr = x + static_cast<std::int64_t>(r) * d;
        T mean = 0;
        for (int c = 0; c < d; ++c) {
            mean += xr[c];
        }
        mean /= T(d);
        T var = 0;
        for (int c = 0; c < d; ++c) {
            const T t = xr[c] - mean;
            var += t * t;
        }
        var /= T(d);
        const T inv = T(1) / std::sqrt(var + eps);
        const T xhat = (xr[j] - mean) * inv;
        const T g = dy[static_cast<std::int64_t>(r) * d + j];
        dg += g * xhat;
        db += g;
    }
    dgamma[j] += dg;
    dbeta[j] += db;
}

}  // namespace

int thread_cap() {
    const int override = g_thread_override.load(std::memory_order_relaxed);
    if (override > 0) {
        return override;
    }
    static const int cap = env_thread_cap();
    return cap;
}

void set_thread_cap(int n) {
    g_thread_override.store(n, std::memory_order_relaxed);
}

template <class T>
void matmul_nn_serial(const T* a, const T* b, T* y, int m, int k, int n) {
    std::memset(y, 0, sizeof(T) * static_cast<std::size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        const T* ai = a + static_cast<std::int64_t>(i) * k;
        T* yi = y + static_cast<std::int64_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const T av = ai[p];
            const T* bp = b + static_cast<std::int64_t>(p) * n;
            for (int j = 0; j < n; ++j) {
                yi[j] += av * bp[j];
            }
        }
    }
}

template <class T>
void matmul_nn(const T* a, const T* b, T* y, int m, int k, int n) {
    const std::int64_t flops = static_cast<std::int64_t>(m) * k * n;
    if (flops < kMinParallelFlops || thread_cap() == 1) {
        matmul_nn_serial(a, b, y, m, k, n);
        return;
    }
#pragma omp parallel for num_threads(thread_cap()) schedule(static)
    for (int i = 0; i < m; ++i) {
        const T* ai = a + static_cast<std::int64_t>(i) * k;
        T* yi = y + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            yi[j] = 0;
        }
        for (int p = 0; p < k; ++p) {
            const T av = ai[p];
            const T* bp = b + static_cast<std::int64_t>(p) * n;
            for (int j = 0; j < n; ++j) {
                yi[j] += av * bp[j];
            }
        }
    }
}

template <class T>
void matmul_nt_serial(const T* a, const T* b, T* y, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* ai = a + static_cast<std::int64_t>(i) * k;
        T* yi = y + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* bj = b + static_cast<std::int64_t>(j) * k;
            T acc = 0;
            for (int p = 0; p < k; ++p) {
                acc += ai[p] * bj[p];
            }
            yi[j] = acc;
        }
    }
}

template <class T>
void matmul_nt(const T* a, const T* b, T* y, int m, int k, int n) {
    const std::int64_t flops = static_cast<std::int64_t>(m) * k * n;
    if (flops < kMinParallelFlops || thread_cap() == 1) {
        matmul_nt_serial(a, b, y, m, k, n);
        return;
    }
#pragma omp parallel for num_threads(thread_cap()) schedule(static)
    for (int i = 0; i < m; ++i) {
        const T* ai = a + static_cast<std::int64_t>(i) * k;
        T* yi = y + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const T* bj = b + static_cast<std::int64_t>(j) * k;
            T acc = 0;
            for (int p = 0; p < k; ++p) {
                acc += ai[p] * bj[p];
            }
            yi[j] = acc;
        }
    }
}

template <class T>
void matmul_tn_serial(const T* a, const T* b, T* y, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        T* yp = y + static_cast<std::int64_t>(p) * n;
        for (int j = 0; j < n; ++j) {
            yp[j] = 0;
        }
        for (int i = 0; i < m; ++i) {
            const T av = a[static_cast<std::int64_t>(i) * k + p];
            const T* bi = b + static_cast<std::int64_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                yp[j] += av * bi[j];
            }
        }
    }
}

template <class T>
void matmul_tn(const T* a, const T* b, T* y, int m, int k, int n) {
    const std::int64_t flops = static_cast<std::int64_t>(m) * k * n;
    if (flops < kMinParallelFlops || thread_cap() == 1) {
        matmul_tn_serial(a, b, y, m, k, n);
        return;
    }
#pragma omp parallel for num_threads(thread_cap()) schedule(static)
    for (int p = 0; p < k; ++p) {
        T* yp = y + static_cast<std::int64_t>(p) * n;
        for (int j = 0; j < n; ++j) {
            yp[j] = 0;
        }
        for (int i = 0; i < m; ++i) {
            const T av = a[static_cast<std::int64_t>(i) * k + p];
            const T* bi = b + static_cast<std::int64_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                yp[j] += av * bi[j];
            }
        }
    }
}

template <class T>
void gelu_serial(const T* x, T* y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) {
        y[i] = gelu_one(x[i]);
    }
}

template <class T>
void gelu(const T* x, T* y, std::int64_t n) {
    if (n < kMinParallelElems || thread_cap() == 1) {
        gelu_serial(x, y, n);
        return;
    }
#pragma omp parallel for num_threads(thread_cap()) schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        y[i] = gelu_one(x[i]);
    }
}

template <class T>
void gelu_backward_serial(const T* x, const T* dy, T* dx, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) {
        dx[i] += dy[i] * gelu_grad_one(x[i]);
    }
}

template <class T>
void gelu_backward(const T* x, const T* dy, T* dx, std::int64_t n) {
    if (n < kMinParallelElems || thread_cap() == 1) {
        gelu_backward_serial(x, dy, dx, n);
        return;
    }
#pragma omp parallel for num_threads(thread_cap()) schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        dx[i] += dy[i] * gelu_grad_one(x[i]);
    }
}

template <class T>
void softmax_rows_serial(const T* x, T* y, int rows, int d) {
    for (int r = 0; r < rows; ++r) {
        softmax_row(x + static_cast<std::int64_t>(r) * d,
                    y + static_cast<std::int64_t>(r) * d, d);
    }
}

template <class T>
void softmax_rows(const T* x, T* y, int rows, int d) {
    if (static_cast<std::int64_t>(rows) * d < kMinParallelElems || thread_cap() == 1) {
        softmax_rows_serial(x, y, rows, d);
        return;
    }
#pragma omp parallel for num_threads(thread_cap()) schedule(static)
    for (int r = 0; r < rows; ++r) {
        softmax_row(x + static_cast<std::int64_t>(r) * d,
                    y + static_cast<std::int64_t>(r) * d, d);
    }
}

template <class T>
void softmax_rows_backward_serial(const T* y, const T* dy, T* dx, int rows, int d) {
    for (int r = 0; r < rows; ++r) {
        const std::int64_t off = static_cast<std::int64_t>(r) * d;
        softmax_row_backward(y + off, dy + off, dx + off, d);
    }
}

template <class T>
void softmax_rows_backward(const T* y, const T* dy, T* dx, int rows, int d) {
    if (static_cast<std::int64_t>(rows) * d < kMinParallelElems || thread_cap() == 1) {
        softmax_rows_backward_serial(y, dy, dx, rows, d);
        return;
    }
#pragma omp parallel for num_threads(thread_cap()) schedule(static)
    for (int r = 0; r < rows; ++r) {
        const std::int64_t off = static_cast<std::int64_t>(r) * d;
        softmax_row_backward(y + off, dy + off, dx + off, d);
    }
}

template <class T>
void layernorm_rows_serial(const T* x, const T* gamma, const T* beta, T* y,
                           int rows, int d, T eps) {
    for (int r = 0; r < rows; ++r) {
        const std::int64_t off = static_cast<std::int64_t>(r) * d;
        layernorm_row(x + off, gamma, beta, y + off, d, eps);
    }
}

template <class T>
void layernorm_rows(const T* x, const T* gamma, const T* beta, T* y,
                    int rows, int d, T eps) {
    if (static_cast<std::int64_t>(rows) * d < kMinParallelElems || thread_cap() == 1) {
        layernorm_rows_serial(x, gamma, beta, y, rows, d, eps);
        return;
    }
#pragma omp parallel for num_threads(thread_cap()) schedule(static)
    for (int r = 0; r < rows; ++r) {
        const std::int64_t off = static_cast<std::int64_t>(r) * d;
        layernorm_row(x + off, gamma, beta, y + off, d, eps);
    }
}

template <class T>
void layernorm_rows_backward_serial(const T* x, const T* gamma, const T* dy,
                                    T* dx, T* dgamma, T* dbeta,
                                    int rows, int d, T eps) {
    for (int r = 0; r < rows; ++r) {
        const std::int64_t off = static_cast<std::int64_t>(r) * d;
        layernorm_row_dx(x + off, gamma, dy + off, dx + off, d, eps);
    }
    for (int j = 0; j < d; ++j) {
        layernorm_col_affine_grads(x, dy, dgamma, dbeta, rows, d, j, eps);
    }
}

template <class T>
void layernorm_rows_backward(const T* x, const T* gamma, const T* dy,
                             T* dx, T* dgamma, T* dbeta,
                             int rows, int d, T eps) {
    if (static_cast<std::int64_t>(rows) * d < kMinParallelElems || thread_cap() == 1) {
        layernorm_rows_backward_serial(x, gamma, dy, dx, dgamma, dbeta, rows, d, eps);
        return;
    }
#pragma omp parallel for num_threads(thread_cap()) schedule(static)
    for (int r = 0; r < rows; ++r) {
        const std::int64_t off = static_cast<std::int64_t>(r) * d;
        layernorm_row_dx(x + off, gamma, dy + off, dx + off, d, eps);
    }
#pragma omp parallel for num_threads(thread_cap()) schedule(static)
    for (int j = 0; j < d; ++j) {
        layernorm_col_affine_grads(x, dy, dgamma, dbeta, rows, d, j, eps);
    }
}

#define DASHENG_INSTANTIATE_KERNELS(T)                                                  \
    template void matmul_nn_serial<T>(const T*, const T*, T*, int, int, int);           \
    template void matmul_nn<T>(const T*, const T*, T*, int, int, int);                  \
    template void matmul_nt_serial<T>(const T*, const T*, T*, int, int, int);           \
    template void matmul_nt<T>(const T*, const T*, T*, int, int, int);                  \
    template void matmul_tn_serial<T>(const T*, const T*, T*, int, int, int);           \
    template void matmul_tn<T>(const T*, const T*, T*, int, int, int);                  \
    template void gelu_serial<T>(const T*, T*, std::int64_t);                           \
    template void gelu<T>(const T*, T*, std::int64_t);                                  \
    template void gelu_backward_serial<T>(const T*, const T*, T*, std::int64_t);        \
    template void gelu_backward<T>(const T*, const T*, T*, std::int64_t);               \
    template void softmax_rows_serial<T>(const T*, T*, int, int);                       \
    template void softmax_rows<T>(const T*, T*, int, int);                              \
    template void softmax_rows_backward_serial<T>(const T*, const T*, T*, int, int);    \
    template void softmax_rows_backward<T>(const T*, const T*, T*, int, int);           \
    template void layernorm_rows_serial<T>(const T*, const T*, const T*, T*, int, int, T); \
    template void layernorm_rows<T>(const T*, const T*, const T*, T*, int, int, T);     \
    template void layernorm_rows_backward_serial<T>(const T*, const T*, const T*, T*, T*, T*, int, int, T); \
    template void layernorm_rows_backward<T>(const T*, const T*, const T*, T*, T*, T*, int, int, T);

DASHENG_INSTANTIATE_KERNELS(float)
DASHENG_INSTANTIATE_KERNELS(double)

#undef DASHENG_INSTANTIATE_KERNELS

}  // namespace dasheng::kernels
