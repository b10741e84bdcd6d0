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
#include <functional>
#include <memory>
#include <vector>

#include "dasheng/common.hpp"
#include "dasheng/rng.hpp"

namespace dasheng {

template <class T>
struct TensorT;

// One step of the recorded graph: the tensors an op consumed and a closure
// that routes the output gradient into their grad buffers.
template <class T>
struct NodeT {
    std::vector<TensorT<T>> parents;
    std::function<void(const TensorT<T>& out)> backward;
};

// Dense row-major tensor. Handles share storage; copying a TensorT copies the
// handle, not the data. float is the training precision, double the
// verification mode used by the finite-difference oracles.
template <class T>
struct TensorT {
    std::vector<int> shape;
    std::shared_ptr<std::vector<T>> data;
    std::shared_ptr<std::vector<T>> grad;  // allocated when requires_grad
    bool requires_grad = false;
    std::shared_ptr<NodeT<T>> node;

    TensorT() = default;

    static TensorT zeros(std::vector<int> shape, bool requires_grad = false);
    static TensorT full(std::vector<int> shape, T value);
    static TensorT from_vector(std::vector<int> shape, std::vector<T> values,
                               bool requires_grad = false);
    static TensorT scalar(T value);
    static TensorT randn(std::vector<int> shape, Rng& rng, T stddev,
                         bool requires_grad = false);
    // Truncated normal (|z| <= 2 std), the parameter initializer.
    static TensorT trunc_normal(std::vector<int> shape, Rng& rng, T stddev,
                                bool requires_grad = false);

    std::int64_t numel() const;
    int rows() const;  // first dim (rank >= 1)
    int cols() const;  // last dim  (rank >= 1)
    bool same_shape(const TensorT& other) const;

    T* ptr() { return data->data(); }
    const T* ptr() const { return data->data(); }
    T* grad_ptr() { return grad->data(); }
    const T* grad_ptr() const { return grad->data(); }

    T& at(int i) { return (*data)[i]; }
    T at(int i) const { return (*data)[i]; }
    T& at(int i, int j) { return (*data)[static_cast<std::int64_t>(i) * cols() + j]; }
    T at(int i, int j) const { return (*data)[static_cast<std::int64_t>(i) * cols() + j]; }

    bool is_leaf() const { return node == nullptr; }

    // Allocates the grad buffer (zeros) if missing.
    void ensure_grad();
    void zero_grad();
};

// Scoped switch that disables graph recording (inference paths).
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

bool grad_enabled();

// Reverse-mode sweep from a scalar loss. Leaf grads accumulate across calls;
// interior grads are reset at the start of every sweep.
template <class T>
void backward(const TensorT<T>& loss);

using Tensor = TensorT<float>;

}  // namespace dasheng
