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

#include <vector>

#include "dasheng/tensor.hpp"

namespace dasheng::ops {

// All ops record onto the tape when grad mode is on and any input requires
// grad. Backward passes accumulate into input grads; they never overwrite.

// [m,k] x [k,n] -> [m,n]
template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);

// a [m,k] x b[n,k]^T -> [m,n]; used for attention scores.
template <class T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b);

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);

template <class T>
TensorT<T> scale(const TensorT<T>& a, T c);

// x [m,n] + bias [n] broadcast over rows.
template <class T>
TensorT<T> add_bias_row(const TensorT<T>& x, const TensorT<T>& bias);

// x [m,d] + table[0..m) with table [n_max,d], m <= n_max. Unused table rows
// receive no gradient.
template <class T>
TensorT<T> add_positional(const TensorT<T>& x, const TensorT<T>& table);

// Columns [c0, c1) of x as a contiguous copy.
template <class T>
TensorT<T> slice_cols(const TensorT<T>& x, int c0, int c1);

// Horizontal concatenation; all parts share the row count.
template <class T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts);

// out[i,:] = x[indices[i],:]. Duplicate indices accumulate in backward.
template <class T>
TensorT<T> gather_rows(const TensorT<T>& x, std::vector<int> indices);

// Place rows[i] at position keep[i] of an [n_rows, d] output and broadcast
// fill (a [1,d] row) everywhere else. keep must be strictly increasing.
template <class T>
TensorT<T> assemble_rows(const TensorT<T>& rows, const TensorT<T>& fill,
                         std::vector<int> keep, int n_rows);

template <class T>
TensorT<T> layernorm(const TensorT<T>& x, const TensorT<T>& gamma,
                     const TensorT<T>& beta, T eps);

template <class T>
TensorT<T> gelu(const TensorT<T>& x);

template <class T>
TensorT<T> softmax_rows(const TensorT<T>& x);

template <class T>
TensorT<T> sum_all(const TensorT<T>& x);

template <class T>
TensorT<T> mean_all(const TensorT<T>& x);

// Mean softmax cross-entropy over rows of logits [b, c]; labels in [0, c).
template <class T>
TensorT<T> cross_entropy_mean(const TensorT<T>& logits, std::vector<int> labels);

}  // namespace dasheng::ops
