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

// Compares the serial reference kernels against the OpenMP variants and
// verifies that both produce bit-identical outputs while timing them.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "dasheng/kernels.hpp"
#include "dasheng/rng.hpp"

namespace {

using dasheng::Rng;
namespace kernels = dasheng::kernels;

std::vector<float> random_vec(std::size_t n, Rng& rng) {
    std::vector<float> v(n);
    for (auto& x : v) {
        x = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    return v;
}

double time_best_of(const std::function<void()>& fn, int reps) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best,
                        std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

void report(const std::string& name, double serial_ms, double parallel_ms,
            bool identical) {
    std::printf("%-28s serial %8.3f ms   parallel %8.3f ms   speedup %5.2fx   %s\n",
                name.c_str(), serial_ms, parallel_ms, serial_ms / parallel_ms,
                identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
    Rng rng(1234);
    const int reps = 5;
    std::printf("threads: %d\n", kernels::thread_cap());
    bool all_ok = true;

    {
        const int m = 256, k = 512, n = 256;
        auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
        auto b = random_vec(static_cast<std::size_t>(k) * n, rng);
        std::vector<float> ys(static_cast<std::size_t>(m) * n);
        std::vector<float> yp(ys.size());
        const double ts = time_best_of(
            [&] { kernels::matmul_nn_serial(a.data(), b.data(), ys.data(), m, k, n); },
            reps);
        const double tp = time_best_of(
            [&] { kernels::matmul_nn(a.data(), b.data(), yp.data(), m, k, n); }, reps);
        const bool ok =
            std::memcmp(ys.data(), yp.data(), ys.size() * sizeof(float)) == 0;
        all_ok = all_ok && ok;
        report("matmul_nn 256x512x256", ts, tp, ok);
    }
    {
        const int m = 256, k = 512, n = 256;
        auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
        auto b = random_vec(static_cast<std::size_t>(n) * k, rng);
        std::vector<float> ys(static_cast<std::size_t>(m) * n);
        std::vector<float> yp(ys.size());
        const double ts = time_best_of(
            [&] { kernels::matmul_nt_serial(a.data(), b.data(), ys.data(), m, k, n); },
            reps);
        const double tp = time_best_of(
            [&] { kernels::matmul_nt(a.data(), b.data(), yp.data(), m, k, n); }, reps);
        const bool ok =
            std::memcmp(ys.data(), yp.data(), ys.size() * sizeof(float)) == 0;
        all_ok = all_ok && ok;
        report("matmul_nt 256x512x256", ts, tp, ok);
    }
    {
        const std::int64_t n = 1 << 22;
        auto x = random_vec(static_cast<std::size_t>(n), rng);
        std::vector<float> ys(x.size());
        std::vector<float> yp(x.size());
        const double ts =
            time_best_of([&] { kernels::gelu_serial(x.data(), ys.data(), n); }, reps);
        const double tp =
            time_best_of([&] { kernels::gelu(x.data(), yp.data(), n); }, reps);
        const bool ok =
            std::memcmp(ys.data(), yp.data(), ys.size() * sizeof(float)) == 0;
        all_ok = all_ok && ok;
        report("gelu 4M", ts, tp, ok);
    }
    {
        const int rows = 4096, d = 256;
        auto x = random_vec(static_cast<std::size_t>(rows) * d, rng);
        std::vector<float> ys(x.size());
        std::vector<float> yp(x.size());
        const double ts = time_best_of(
            [&] { kernels::softmax_rows_serial(x.data(), ys.data(), rows, d); }, reps);
        const double tp = time_best_of(
            [&] { kernels::softmax_rows(x.data(), yp.data(), rows, d); }, reps);
        const bool ok =
            std::memcmp(ys.data(), yp.data(), ys.size() * sizeof(float)) == 0;
        all_ok = all_ok && ok;
        report("softmax_rows 4096x256", ts, tp, ok);
    }
    {
        const int rows = 4096, d = 256;
        auto x = random_vec(static_cast<std::size_t>(rows) * d, rng);
        auto gamma = random_vec(d, rng);
        auto beta = random_vec(d, rng);
        std::vector<float> ys(x.size());
        std::vector<float> yp(x.size());
        const float eps = 1e-6f;
        const double ts = time_best_of(
            [&] {
                kernels::layernorm_rows_serial(x.data(), gamma.data(), beta.data(),
                                               ys.data(), rows, d, eps);
            },
            reps);
        const double tp = time_best_of(
            [&] {
                kernels::layernorm_rows(x.data(), gamma.data(), beta.data(),
                                        yp.data(), rows, d, eps);
            },
            reps);
        const bool ok =
            std::memcmp(ys.data(), yp.data(), ys.size() * sizeof(float)) == 0;
        all_ok = all_ok && ok;
        report("layernorm_rows 4096x256", ts, tp, ok);
    }

    if (!all_ok) {
        std::fprintf(stderr, "serial/parallel outputs diverged\n");
        return 1;
    }
    return 0;
}
