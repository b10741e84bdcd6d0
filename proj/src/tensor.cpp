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

#include "dasheng/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace dasheng {

namespace {

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) {
            throw dim_error("tensor shape must have positive dims");
        }
        n *= d;
    }
    return n;
}

thread_local bool g_grad_enabled = true;

}  // namespace

bool grad_enabled() {
    return g_grad_enabled;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
    g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() {
    g_grad_enabled = previous_;
}

template <class T>
TensorT<T> TensorT<T>::zeros(std::vector<int> shape, bool requires_grad) {
    TensorT t;
    const std::int64_t n = shape_numel(shape);
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n), T(0));
    t.requires_grad = requires_grad;
    if (requires_grad) {
        t.ensure_grad();
    }
    return t;
}

template <class T>
TensorT<T> TensorT<T>::full(std::vector<int> shape, T value) {
    TensorT t = zeros(std::move(shape), false);
    std::fill(t.data->begin(), t.data->end(), value);
    return t;
}

template <class T>
TensorT<T> TensorT<T>::from_vector(std::vector<int> shape, std::vector<T> values,
                                   bool requires_grad) {
    const std::int64_t n = shape_numel(shape);
    if (n != static_cast<std::int64_t>(values.size())) {
        throw dim_error("from_vector: value count does not match shape");
    }
    TensorT t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<T>>(std::move(values));
    t.requires_grad = requires_grad;
    if (requires_grad) {
        t.ensure_grad();
    }
    return t;
}

template <class T>
TensorT<T> TensorT<T>::scalar(T value) {
    return from_vector({1}, {value});
}

template <class T>
TensorT<T> TensorT<T>::randn(std::vector<int> shape, Rng& rng, T stddev,
                             bool requires_grad) {
    TensorT t = zeros(std::move(shape), requires_grad);
    for (auto& v : *t.data) {
        v = static_cast<T>(rng.normal()) * stddev;
    }
    return t;
}

template <class T>
TensorT<T> TensorT<T>::trunc_normal(std::vector<int> shape, Rng& rng, T stddev,
                                    bool requires_grad) {
    TensorT t = zeros(std::move(shape), requires_grad);
    for (auto& v : *t.data) {
        v = static_cast<T>(rng.truncated_normal(static_cast<double>(stddev)));
    }
    return t;
}

template <class T>
std::int64_t TensorT<T>::numel() const {
    return data ? static_cast<std::int64_t>(data->size()) : 0;
}

template <class T>
int TensorT<T>::rows() const {
    return shape.empty() ? 0 : shape.front();
}

template <class T>
int TensorT<T>::cols() const {
    return shape.empty() ? 0 : shape.back();
}

template <class T>
bool TensorT<T>::same_shape(const TensorT& other) const {
    return shape == other.shape;
}

template <class T>
void TensorT<T>::ensure_grad() {
    if (!grad) {
        grad = std::make_shared<std::vector<T>>(data->size(), T(0));
    }
}

template <class T>
void TensorT<T>::zero_grad() {
    if (grad) {
        std::fill(grad->begin(), grad->end(), T(0));
    }
}

template <class T>
void backward(const TensorT<T>& loss) {
    if (loss.numel() != 1) {
        throw dim_error("backward: loss must be a scalar tensor");
    }
    if (!loss.node) {
        return;  // constant or leaf loss: nothing to propagate
    }

    // Topological order over nodes (parents before consumers).
    std::vector<TensorT<T>> order;
    std::unordered_set<const NodeT<T>*> seen;
    std::vector<std::pair<TensorT<T>, std::size_t>> stack;
    stack.emplace_back(loss, 0);
    seen.insert(loss.node.get());
    while (!stack.empty()) {
        auto& [t, idx] = stack.back();
        const auto& parents = t.node->parents;
        bool descended = false;
        while (idx < parents.size()) {
            const TensorT<T>& p = parents[idx++];
            if (p.node && !seen.count(p.node.get())) {
                seen.insert(p.node.get());
                stack.emplace_back(p, 0);
                descended = true;
                break;
            }
        }
        if (!descended && stack.back().second >= stack.back().first.node->parents.size()) {
            order.push_back(stack.back().first);
            stack.pop_back();
        }
    }

    // Interior grads start from zero each sweep; leaf grads accumulate.
    // Grad buffers are allocated when a tensor is created (or recorded), so
    // every handle of the same tensor shares the same accumulator.
    for (auto& t : order) {
        if (!t.grad) {
            throw dim_error("backward: recorded tensor is missing its grad buffer");
        }
        t.zero_grad();
    }
    (*loss.grad)[0] = T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (it->node && it->node->backward) {
            it->node->backward(*it);
        }
    }
}

template struct TensorT<float>;
template struct TensorT<double>;
template void backward<float>(const TensorT<float>&);
template void backward<double>(const TensorT<double>&);

}  // namespace dasheng
