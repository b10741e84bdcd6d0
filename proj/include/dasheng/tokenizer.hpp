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
#include <utility>
#include <vector>

#include "dasheng/audio.hpp"
#include "dasheng/rng.hpp"
#include "dasheng/tensor.hpp"

namespace dasheng::tokenizer {

inline constexpr int kFramesPerChunk = 4;
inline constexpr int kChunkDim = kFramesPerChunk * audio::kMelBins;  // 256
inline constexpr int kMaxTokens = 250;  // 10 s at 25 tokens/s
inline constexpr double kMaskRatio = 0.75;
inline constexpr int kMinRun = 2;

// [n x 256] rows, each the concatenation of four consecutive Mel frames.
struct ChunkSequence {
    int n = 0;
    int chunk_dim = kChunkDim;
    std::vector<float> values;
    int dropped_frames = 0;

    float at(int i, int j) const {
        return values[static_cast<std::size_t>(i) * chunk_dim + j];
    }
};

// Grouped mask over n tokens: exactly round_half_up(0.75 n) masked positions
// and every maximal masked run at least kMinRun long.
struct MaskPlan {
    std::vector<std::uint8_t> mask;  // 1 = masked
    std::vector<int> kept_indices;
    std::vector<int> masked_indices;

    int n() const { return static_cast<int>(mask.size()); }
    int masked_count() const { return static_cast<int>(masked_indices.size()); }
};

// Number masked for a given token count: round_half_up(0.75 n).
int mask_target(int n);

// Drops the trailing T mod 4 frames.
ChunkSequence chunkify(const audio::MelSpectrogram& mel);

// Repeatedly draws a run length in {2,3,4} (clipped to the remaining count)
// and a uniform valid start; a clipped length-1 run must touch an existing
// run so every maximal run stays >= 2. Deterministic under the Rng.
MaskPlan sample_mask(int n, Rng& rng);

// chunks * W + bias, then the first n rows of the positional table are added.
// n must not exceed the table length.
template <class T>
TensorT<T> project_and_position(const ChunkSequence& chunks, const TensorT<T>& w,
                                const TensorT<T>& bias, const TensorT<T>& table);

// Kept tokens in time order plus their original positions.
template <class T>
std::pair<TensorT<T>, std::vector<int>> gather_unmasked(const TensorT<T>& tokens,
                                                        const MaskPlan& plan);

}  // namespace dasheng::tokenizer
