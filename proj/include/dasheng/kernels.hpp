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

#pragma once

#include <cstdint>

namespace dasheng::kernels {

// Effective thread count: min(OpenMP max, DASHENG_THREADS if set). The env
// variable is read once.
int thread_cap();

// Override the cap programmatically (tests, benchmarks). 0 restores default.
void set_thread_cap(int n);

// Every parallel kernel partitions work so that each output element is
// produced by exactly one thread with the same inner summation order as its
// serial reference. Parallel and serial variants are therefore bit-identical
// for any thread count; the *_serial variants stay as the test oracle.

// y[M x N] = a[M x K] * b[K x N]
template <class T>
void matmul_nn_serial(const T* a, const T* b, T* y, int m, int k, int n);
template <class T>
void matmul_nn(const T* a, const T* b, T* y, int m, int k, int n);

// y[M x N] = a[M x K] * b[N x K]^T
template <class T>
void matmul_nt_serial(const T* a, const T* b, T* y, int m, int k, int n);
template <class T>
void matmul_nt(const T* a, const T* b, T* y, int m, int k, int n);

// y[K x N] = a[M x K]^T * b[M x N]
template <class T>
void matmul_tn_serial(const T* a, const T* b, T* y, int m, int k, int n);
template <class T>
void matmul_tn(const T* a, const T* b, T* y, int m, int k, int n);

// Exact erf-based GeLU: y = x * Phi(x).
template <class T>
void gelu_serial(const T* x, T* y, std::int64_t n);
template <class T>
void gelu(const T* x, T* y, std::int64_t n);

// dx += dy * (Phi(x) + x * phi(x))
template <class T>
void gelu_backward_serial(const T* x, const T* dy, T* dx, std::int64_t n);
template <class T>
void gelu_backward(const T* x, const T* dy, T* dx, std::int64_t n);

// Row-wise max-subtracted softmax over the last axis of an [rows x d] matrix.
template <class T>
void softmax_rows_serial(const T* x, T* y, int rows, int d);
template <class T>
void softmax_rows(const T* x, T* y, int rows, int d);

// dx += softmax backward given the forward output y.
template <class T>
void softmax_rows_backward_serial(const T* y, const T* dy, T* dx, int rows, int d);
template <class T>
void softmax_rows_backward(const T* y, const T* dy, T* dx, int rows, int d);

// Row-wise layer norm: y = (x - mean) / sqrt(var + eps) * gamma + beta,
// population variance over the last axis.
template <class T>
void layernorm_rows_serial(const T* x, const T* gamma, const T* beta, T* y,
                           int rows, int d, T eps);
template <class T>
void layernorm_rows(const T* x, const T* gamma, const T* beta, T* y,
                    int rows, int d, T eps);

// Layer norm backward; accumulates into dx, dgamma, dbeta.
// dgamma/dbeta accumulation runs once per column, so parallelism is over
// rows for dx and over columns for the affine grads.
template <class T>
void layernorm_rows_backward_serial(const T* x, const T* gamma, const T* dy,
                                    T* dx, T* dgamma, T* dbeta,
                                    int rows, int d, T eps);
template <class T>
void layernorm_rows_backward(const T* x, const T* gamma, const T* dy,
                             T* dx, T* dgamma, T* dbeta,
                             int rows, int d, T eps);

}  // namespace dasheng::kernels
