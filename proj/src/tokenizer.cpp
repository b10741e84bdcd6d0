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

#include "dasheng/tokenizer.hpp"

#include <algorithm>

#include "dasheng/common.hpp"
#include "dasheng/ops.hpp"

namespace dasheng::tokenizer {

int mask_target(int n) {
    // round_half_up(0.75 n) in exact integer arithmetic.
    return (3 * n + 2) / 4;
}

ChunkSequence chunkify(const audio::MelSpectrogram& mel) {
    if (mel.frames < kFramesPerChunk) {
        throw domain_error("chunkify: fewer than 4 frames");
    }
    ChunkSequence out;
    out.n = mel.frames / kFramesPerChunk;
    out.dropped_frames = mel.frames % kFramesPerChunk;
    out.values.resize(static_cast<std::size_t>(out.n) * kChunkDim);
    for (int i = 0; i < out.n; ++i) {
        // Row i = frames 4i..4i+3 back to back.
        std::copy_n(mel.values.data() +
                        static_cast<std::size_t>(i) * kFramesPerChunk * audio::kMelBins,
                    kChunkDim, out.values.data() + static_cast<std::size_t>(i) * kChunkDim);
    }
    return out;
}

MaskPlan sample_mask(int n, Rng& rng) {
    if (n < 4) {
        throw domain_error("sample_mask: need at least 4 tokens");
    }
    const int target = mask_target(n);
    if (target < kMinRun || target > n) {
        throw domain_error("sample_mask: degenerate mask target");
    }

    std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 0);
    int masked = 0;
    std::vector<int> starts;
    while (masked < target) {
        const int remaining = target - masked;
        int len = std::min(2 + static_cast<int>(rng.next_below(3)), remaining);
        for (; len >= 1; --len) {
            starts.clear();
            for (int s = 0; s + len <= n; ++s) {
                bool free = true;
                for (int j = 0; j < len && free; ++j) {
                    free = mask[static_cast<std::size_t>(s + j)] == 0;
                }
                if (!free) {
                    continue;
                }
                if (len == 1) {
                    // A single new cell is only valid when it extends a run.
                    const bool touches = (s > 0 && mask[static_cast<std::size_t>(s - 1)]) ||
                                         (s + 1 < n && mask[static_cast<std::size_t>(s + 1)]);
                    if (!touches) {
                        continue;
                    }
                }
                starts.push_back(s);
            }
            if (!starts.empty()) {
                const int s = starts[rng.next_below(starts.size())];
                std::fill_n(mask.begin() + s, len, std::uint8_t(1));
                masked += len;
                break;
            }
        }
        if (len == 0) {
            throw numeric_error("sample_mask: no valid placement found");
        }
    }

    MaskPlan plan;
    plan.mask = std::move(mask);
    for (int i = 0; i < n; ++i) {
        (plan.mask[static_cast<std::size_t>(i)] ? plan.masked_indices : plan.kept_indices)
            .push_back(i);
    }
    return plan;
}

template <class T>
TensorT<T> project_and_position(const ChunkSequence& chunks, const TensorT<T>& w,
                                const TensorT<T>& bias, const TensorT<T>& table) {
    if (w.shape.size() != 2 || w.shape[0] != chunks.chunk_dim) {
        throw dim_error("project_and_position: projection rows must equal chunk dim");
    }
    if (chunks.n > table.rows()) {
        throw dim_error("project_and_position: sequence longer than the positional table");
    }
    std::vector<T> vals(chunks.values.begin(), chunks.values.end());
    auto x = TensorT<T>::from_vector({chunks.n, chunks.chunk_dim}, std::move(vals));
    return ops::add_positional(ops::add_bias_row(ops::matmul(x, w), bias), table);
}

template <class T>
std::pair<TensorT<T>, std::vector<int>> gather_unmasked(const TensorT<T>& tokens,
                                                        const MaskPlan& plan) {
    if (tokens.rows() != plan.n()) {
        throw dim_error("gather_unmasked: plan length must match token count");
    }
    if (plan.kept_indices.empty()) {
        throw dim_error("gather_unmasked: plan keeps no tokens");
    }
    return {ops::gather_rows(tokens, plan.kept_indices), plan.kept_indices};
}

template TensorT<float> project_and_position<float>(const ChunkSequence&,
                                                    const TensorT<float>&,
                                                    const TensorT<float>&,
                                                    const TensorT<float>&);
template TensorT<double> project_and_position<double>(const ChunkSequence&,
                                                      const TensorT<double>&,
                                                      const TensorT<double>&,
                                                      const TensorT<double>&);
template std::pair<TensorT<float>, std::vector<int>> gather_unmasked<float>(
    const TensorT<float>&, const MaskPlan&);
template std::pair<TensorT<double>, std::vector<int>> gather_unmasked<double>(
    const TensorT<double>&, const MaskPlan&);

}  // namespace dasheng::tokenizer
