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

#include "dasheng/ops.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "dasheng/common.hpp"
#include "dasheng/kernels.hpp"

namespace dasheng::ops {

namespace {

template <class T>
void require_rank2(const TensorT<T>& t, const char* what) {
    if (t.shape.size() != 2) {
        throw dim_error(std::string(what) + ": expected a rank-2 tensor");
    }
}

template <class T>
void axpy(const T* src, T* dst, std::int64_t n, T c = T(1)) {
    for (std::int64_t i = 0; i < n; ++i) {
        dst[i] += c * src[i];
    }
}

// Attaches a tape node when grad mode is on and any parent requires grad.
template <class T>
void record(TensorT<T>& out, std::vector<TensorT<T>> parents,
            std::function<void(const TensorT<T>&)> fn) {
    if (!grad_enabled()) {
        return;
    }
    bool any = false;
    for (const auto& p : parents) {
        any = any || p.requires_grad;
    }
    if (!any) {
        return;
    }
    out.requires_grad = true;
    out.ensure_grad();
    out.node = std::make_shared<NodeT<T>>();
    out.node->parents = std::move(parents);
    out.node->backward = std::move(fn);
}

}  // namespace

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.shape[1] != b.shape[0]) {
        throw dim_error("matmul: inner dims disagree");
    }
    const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
    TensorT<T> y = TensorT<T>::zeros({m, n});
    kernels::matmul_nn(a.ptr(), b.ptr(), y.ptr(), m, k, n);
    record<T>(y, {a, b}, [a, b, m, k, n](const TensorT<T>& self) {
        const T* dy = self.grad->data();
        if (a.grad) {
            std::vector<T> tmp(static_cast<std::size_t>(m) * k);
            kernels::matmul_nt(dy, b.ptr(), tmp.data(), m, n, k);
            axpy(tmp.data(), a.grad->data(), a.numel());
        }
        if (b.grad) {
            std::vector<T> tmp(static_cast<std::size_t>(k) * n);
            kernels::matmul_tn(a.ptr(), dy, tmp.data(), m, k, n);
            axpy(tmp.data(), b.grad->data(), b.numel());
        }
    });
    return y;
}

template <class T>
TensorT<T> matmul_nt(const TensorT<T>& a, const TensorT<T>& b) {
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    if (a.shape[1] != b.shape[1]) {
        throw dim_error("matmul_nt: inner dims disagree");
    }
    const int m = a.shape[0], k = a.shape[1], n = b.shape[0];
    TensorT<T> y = TensorT<T>::zeros({m, n});
    kernels::matmul_nt(a.ptr(), b.ptr(), y.ptr(), m, k, n);
    record<T>(y, {a, b}, [a, b, m, k, n](const TensorT<T>& self) {
        const T* dy = self.grad->data();
        if (a.grad) {
            std::vector<T> tmp(static_cast<std::size_t>(m) * k);
            kernels::matmul_nn(dy, b.ptr(), tmp.data(), m, n, k);
            axpy(tmp.data(), a.grad->data(), a.numel());
        }
        if (b.grad) {
            std::vector<T> tmp(static_cast<std::size_t>(n) * k);
            kernels::matmul_tn(dy, a.ptr(), tmp.data(), m, n, k);
            axpy(tmp.data(), b.grad->data(), b.numel());
        }
    });
    return y;
}

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    if (!a.same_shape(b)) {
        throw dim_error("add: shape mismatch");
    }
    TensorT<T> y = TensorT<T>::zeros(a.shape);
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        (*y.data)[i] = (*a.data)[i] + (*b.data)[i];
    }
    record<T>(y, {a, b}, [a, b, n](const TensorT<T>& self) {
        if (a.grad) {
            axpy(self.grad->data(), a.grad->data(), n);
        }
        if (b.grad) {
            axpy(self.grad->data(), b.grad->data(), n);
        }
    });
    return y;
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    if (!a.same_shape(b)) {
        throw dim_error("sub: shape mismatch");
    }
    TensorT<T> y = TensorT<T>::zeros(a.shape);
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        (*y.data)[i] = (*a.data)[i] - (*b.data)[i];
    }
    record<T>(y, {a, b}, [a, b, n](const TensorT<T>& self) {
        if (a.grad) {
            axpy(self.grad->data(), a.grad->data(), n);
        }
        if (b.grad) {
            axpy(self.grad->data(), b.grad->data(), n, T(-1));
        }
    });
    return y;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    if (!a.same_shape(b)) {
        throw dim_error("mul: shape mismatch");
    }
    TensorT<T> y = TensorT<T>::zeros(a.shape);
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        (*y.data)[i] = (*a.data)[i] * (*b.data)[i];
    }
    record<T>(y, {a, b}, [a, b, n](const TensorT<T>& self) {
        const T* dy = self.grad->data();
        if (a.grad) {
            for (std::int64_t i = 0; i < n; ++i) {
                (*a.grad)[i] += dy[i] * (*b.data)[i];
            }
        }
        if (b.grad) {
            for (std::int64_t i = 0; i < n; ++i) {
                (*b.grad)[i] += dy[i] * (*a.data)[i];
            }
        }
    });
    return y;
}

template <class T>
TensorT<T> scale(const TensorT<T>& a, T c) {
    TensorT<T> y = TensorT<T>::zeros(a.shape);
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        (*y.data)[i] = (*a.data)[i] * c;
    }
    record<T>(y, {a}, [a, c, n](const TensorT<T>& self) {
        if (a.grad) {
            axpy(self.grad->data(), a.grad->data(), n, c);
        }
    });
    return y;
}

template <class T>
TensorT<T> add_bias_row(const TensorT<T>& x, const TensorT<T>& bias) {
    require_rank2(x, "add_bias_row");
    if (bias.shape.size() != 1 || bias.shape[0] != x.shape[1]) {
        throw dim_error("add_bias_row: bias must be rank 1 of width cols(x)");
    }
    const int m = x.shape[0], n = x.shape[1];
    TensorT<T> y = TensorT<T>::zeros(x.shape);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            (*y.data)[static_cast<std::size_t>(i) * n + j] =
                (*x.data)[static_cast<std::size_t>(i) * n + j] + (*bias.data)[j];
        }
    }
    record<T>(y, {x, bias}, [x, bias, m, n](const TensorT<T>& self) {
        const T* dy = self.grad->data();
        if (x.grad) {
            axpy(dy, x.grad->data(), x.numel());
        }
        if (bias.grad) {
            for (int j = 0; j < n; ++j) {
                T s = T(0);
                for (int i = 0; i < m; ++i) {
                    s += dy[static_cast<std::size_t>(i) * n + j];
                }
                (*bias.grad)[j] += s;
            }
        }
    });
    return y;
}

template <class T>
TensorT<T> add_positional(const TensorT<T>& x, const TensorT<T>& table) {
    require_rank2(x, "add_positional");
    require_rank2(table, "add_positional");
    if (table.shape[1] != x.shape[1]) {
        throw dim_error("add_positional: width mismatch");
    }
    if (x.shape[0] > table.shape[0]) {
        throw dim_error("add_positional: sequence longer than the table");
    }
    const int m = x.shape[0], d = x.shape[1];
    TensorT<T> y = TensorT<T>::zeros(x.shape);
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        (*y.data)[i] = (*x.data)[i] + (*table.data)[i];
    }
    record<T>(y, {x, table}, [x, table, m, d, n](const TensorT<T>& self) {
        const T* dy = self.grad->data();
        if (x.grad) {
            axpy(dy, x.grad->data(), n);
        }
        if (table.grad) {
            axpy(dy, table.grad->data(), static_cast<std::int64_t>(m) * d);
        }
    });
    return y;
}

template <class T>
TensorT<T> slice_cols(const TensorT<T>& x, int c0, int c1) {
    require_rank2(x, "slice_cols");
    if (c0 < 0 || c1 > x.shape[1] || c0 >= c1) {
        throw dim_error("slice_cols: bad column range");
    }
    const int m = x.shape[0], n = x.shape[1], w = c1 - c0;
    TensorT<T> y = TensorT<T>::zeros({m, w});
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < w; ++j) {
            (*y.data)[static_cast<std::size_t>(i) * w + j] =
                (*x.data)[static_cast<std::size_t>(i) * n + c0 + j];
        }
    }
    record<T>(y, {x}, [x, m, n, w, c0](const TensorT<T>& self) {
        if (!x.grad) {
            return;
        }
        const T* dy = self.grad->data();
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < w; ++j) {
                (*x.grad)[static_cast<std::size_t>(i) * n + c0 + j] +=
                    dy[static_cast<std::size_t>(i) * w + j];
            }
        }
    });
    return y;
}

template <class T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) {
        throw dim_error("concat_cols: no parts");
    }
    const int m = parts.front().shape.empty() ? 0 : parts.front().shape[0];
    int total = 0;
    std::vector<int> offsets;
    for (const auto& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.shape[0] != m) {
            throw dim_error("concat_cols: row counts disagree");
        }
        offsets.push_back(total);
        total += p.shape[1];
    }
    TensorT<T> y = TensorT<T>::zeros({m, total});
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const int w = parts[pi].shape[1];
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < w; ++j) {
                (*y.data)[static_cast<std::size_t>(i) * total + offsets[pi] + j] =
                    (*parts[pi].data)[static_cast<std::size_t>(i) * w + j];
            }
        }
    }
    record<T>(y, parts, [parts, offsets, m, total](const TensorT<T>& self) {
        const T* dy = self.grad->data();
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
            if (!parts[pi].grad) {
                continue;
            }
            const int w = parts[pi].shape[1];
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < w; ++j) {
                    (*parts[pi].grad)[static_cast<std::size_t>(i) * w + j] +=
                        dy[static_cast<std::size_t>(i) * total + offsets[pi] + j];
                }
            }
        }
    });
    return y;
}

template <class T>
TensorT<T> gather_rows(const TensorT<T>& x, std::vector<int> indices) {
    require_rank2(x, "gather_rows");
    if (indices.empty()) {
        throw dim_error("gather_rows: empty index list");
    }
    const int n = x.shape[0], d = x.shape[1];
    for (int idx : indices) {
        if (idx < 0 || idx >= n) {
            throw dim_error("gather_rows: index out of range");
        }
    }
    const int m = static_cast<int>(indices.size());
    TensorT<T> y = TensorT<T>::zeros({m, d});
    for (int i = 0; i < m; ++i) {
        std::copy_n(x.ptr() + static_cast<std::size_t>(indices[i]) * d, d,
                    y.ptr() + static_cast<std::size_t>(i) * d);
    }
    record<T>(y, {x}, [x, indices = std::move(indices), m, d](const TensorT<T>& self) {
        if (!x.grad) {
            return;
        }
        const T* dy = self.grad->data();
        for (int i = 0; i < m; ++i) {
            axpy(dy + static_cast<std::size_t>(i) * d,
                 x.grad->data() + static_cast<std::size_t>(indices[i]) * d, d);
        }
    });
    return y;
}

template <class T>
TensorT<T> assemble_rows(const TensorT<T>& rows, const TensorT<T>& fill,
                         std::vector<int> keep, int n_rows) {
    require_rank2(rows, "assemble_rows");
    require_rank2(fill, "assemble_rows");
    const int k = rows.shape[0], d = rows.shape[1];
    if (fill.shape[0] != 1 || fill.shape[1] != d) {
        throw dim_error("assemble_rows: fill must be [1, d]");
    }
    if (static_cast<int>(keep.size()) != k || k > n_rows) {
        throw dim_error("assemble_rows: keep size must match rows and fit n_rows");
    }
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (keep[i] < 0 || keep[i] >= n_rows ||
            (i > 0 && keep[i] <= keep[i - 1])) {
            throw dim_error("assemble_rows: keep must be strictly increasing in range");
        }
    }
    TensorT<T> y = TensorT<T>::zeros({n_rows, d});
    {
        std::size_t ki = 0;
        for (int r = 0; r < n_rows; ++r) {
            const T* src;
            if (ki < keep.size() && keep[ki] == r) {
                src = rows.ptr() + static_cast<std::size_t>(ki) * d;
                ++ki;
            } else {
                src = fill.ptr();
            }
            std::copy_n(src, d, y.ptr() + static_cast<std::size_t>(r) * d);
        }
    }
    record<T>(y, {rows, fill},
           [rows, fill, keep = std::move(keep), n_rows, d](const TensorT<T>& self) {
        const T* dy = self.grad->data();
        std::size_t ki = 0;
        for (int r = 0; r < n_rows; ++r) {
            const T* g = dy + static_cast<std::size_t>(r) * d;
            if (ki < keep.size() && keep[ki] == r) {
                if (rows.grad) {
                    axpy(g, rows.grad->data() + ki * d, d);
                }
                ++ki;
            } else if (fill.grad) {
                axpy(g, fill.grad->data(), d);
            }
        }
    });
    return y;
}

template <class T>
TensorT<T> layernorm(const TensorT<T>& x, const TensorT<T>& gamma,
                     const TensorT<T>& beta, T eps) {
    require_rank2(x, "layernorm");
    const int m = x.shape[0], d = x.shape[1];
    if (gamma.shape.size() != 1 || gamma.shape[0] != d ||
        beta.shape.size() != 1 || beta.shape[0] != d) {
        throw dim_error("layernorm: gamma/beta must be rank 1 of width cols(x)");
    }
    TensorT<T> y = TensorT<T>::zeros(x.shape);
    kernels::layernorm_rows(x.ptr(), gamma.ptr(), beta.ptr(), y.ptr(), m, d, eps);
    record<T>(y, {x, gamma, beta}, [x, gamma, beta, m, d, eps](const TensorT<T>& self) {
        const T* dy = self.grad->data();
        std::vector<T> dx_sink, dg_sink, db_sink;
        T* dx = x.grad ? x.grad->data()
                       : (dx_sink.assign(x.data->size(), T(0)), dx_sink.data());
        T* dg = gamma.grad ? gamma.grad->data()
                           : (dg_sink.assign(d, T(0)), dg_sink.data());
        T* db = beta.grad ? beta.grad->data()
                          : (db_sink.assign(d, T(0)), db_sink.data());
        kernels::layernorm_rows_backward(x.ptr(), gamma.ptr(), dy, dx, dg, db,
                                         m, d, eps);
    });
    return y;
}

template <class T>
TensorT<T> gelu(const TensorT<T>& x) {
    TensorT<T> y = TensorT<T>::zeros(x.shape);
    const std::int64_t n = x.numel();
    kernels::gelu(x.ptr(), y.ptr(), n);
    record<T>(y, {x}, [x, n](const TensorT<T>& self) {
        if (x.grad) {
            kernels::gelu_backward(x.ptr(), self.grad->data(), x.grad->data(), n);
        }
    });
    return y;
}

template <class T>
TensorT<T> softmax_rows(const TensorT<T>& x) {
    require_rank2(x, "softmax_rows");
    const int m = x.shape[0], d = x.shape[1];
    TensorT<T> y = TensorT<T>::zeros(x.shape);
    kernels::softmax_rows(x.ptr(), y.ptr(), m, d);
    record<T>(y, {x}, [x, m, d](const TensorT<T>& self) {
        if (x.grad) {
            kernels::softmax_rows_backward(self.data->data(), self.grad->data(),
                                           x.grad->data(), m, d);
        }
    });
    return y;
}

template <class T>
TensorT<T> sum_all(const TensorT<T>& x) {
    TensorT<T> y = TensorT<T>::zeros({1});
    const std::int64_t n = x.numel();
    T s = T(0);
    for (std::int64_t i = 0; i < n; ++i) {
        s += (*x.data)[i];
    }
    (*y.data)[0] = s;
    record<T>(y, {x}, [x, n](const TensorT<T>& self) {
        if (x.grad) {
            const T g = (*self.grad)[0];
            for (std::int64_t i = 0; i < n; ++i) {
                (*x.grad)[i] += g;
            }
        }
    });
    return y;
}

template <class T>
TensorT<T> mean_all(const TensorT<T>& x) {
    return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

template <class T>
TensorT<T> cross_entropy_mean(const TensorT<T>& logits, std::vector<int> labels) {
    require_rank2(logits, "cross_entropy_mean");
    const int b = logits.shape[0], c = logits.shape[1];
    if (static_cast<int>(labels.size()) != b) {
        throw dim_error("cross_entropy_mean: one label per row required");
    }
    for (int lbl : labels) {
        if (lbl < 0 || lbl >= c) {
            throw domain_error("cross_entropy_mean: label out of range");
        }
    }
    // loss_i = logsumexp(row_i) - row_i[label_i], max-subtracted for stability.
    TensorT<T> y = TensorT<T>::zeros({1});
    T total = T(0);
    for (int i = 0; i < b; ++i) {
        const T* row = logits.ptr() + static_cast<std::size_t>(i) * c;
        T mx = row[0];
        for (int j = 1; j < c; ++j) {
            mx = std::max(mx, row[j]);
        }
        T se = T(0);
        for (int j = 0; j < c; ++j) {
            se += std::exp(row[j] - mx);
        }
        total += std::log(se) + mx - row[labels[i]];
    }
    (*y.data)[0] = total / static_cast<T>(b);
    record<T>(y, {logits}, [logits, labels = std::move(labels), b, c](const TensorT<T>& self) {
        if (!logits.grad) {
            return;
        }
        const T g = (*self.grad)[0] / static_cast<T>(b);
        for (int i = 0; i < b; ++i) {
            const T* row = logits.ptr() + static_cast<std::size_t>(i) * c;
            T* drow = logits.grad->data() + static_cast<std::size_t>(i) * c;
            T mx = row[0];
            for (int j = 1; j < c; ++j) {
                mx = std::max(mx, row[j]);
            }
            T se = T(0);
            for (int j = 0; j < c; ++j) {
                se += std::exp(row[j] - mx);
            }
            for (int j = 0; j < c; ++j) {
                const T p = std::exp(row[j] - mx) / se;
                drow[j] += g * (p - (j == labels[i] ? T(1) : T(0)));
            }
        }
    });
    return y;
}

#define DASHENG_INSTANTIATE_OPS(T)                                              \
    template TensorT<T> matmul<T>(const TensorT<T>&, const TensorT<T>&);        \
    template TensorT<T> matmul_nt<T>(const TensorT<T>&, const TensorT<T>&);     \
    template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);           \
    template TensorT<T> sub<T>(const TensorT<T>&, const TensorT<T>&);           \
    template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&);           \
    template TensorT<T> scale<T>(const TensorT<T>&, T);                         \
    template TensorT<T> add_bias_row<T>(const TensorT<T>&, const TensorT<T>&);  \
    template TensorT<T> add_positional<T>(const TensorT<T>&, const TensorT<T>&);\
    template TensorT<T> slice_cols<T>(const TensorT<T>&, int, int);             \
    template TensorT<T> concat_cols<T>(const std::vector<TensorT<T>>&);         \
    template TensorT<T> gather_rows<T>(const TensorT<T>&, std::vector<int>);    \
    template TensorT<T> assemble_rows<T>(const TensorT<T>&, const TensorT<T>&,  \
                                         std::vector<int>, int);                \
    template TensorT<T> layernorm<T>(const TensorT<T>&, const TensorT<T>&,      \
                                     const TensorT<T>&, T);                     \
    template TensorT<T> gelu<T>(const TensorT<T>&);                             \
    template TensorT<T> softmax_rows<T>(const TensorT<T>&);                     \
    template TensorT<T> sum_all<T>(const TensorT<T>&);                          \
    template TensorT<T> mean_all<T>(const TensorT<T>&);                         \
    template TensorT<T> cross_entropy_mean<T>(const TensorT<T>&, std::vector<int>);

DASHENG_INSTANTIATE_OPS(float)
DASHENG_INSTANTIATE_OPS(double)

#undef DASHENG_INSTANTIATE_OPS

}  // namespace dasheng::ops
