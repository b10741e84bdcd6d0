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

#include <iosfwd>
#include <string>
#include <vector>

#include "dasheng/audio.hpp"
#include "dasheng/model.hpp"
#include "dasheng/trainer.hpp"

namespace dasheng::embed {

inline constexpr int kSegmentSamples = 10 * audio::kSampleRate;
inline constexpr double kFrameRateHz = 25.0;
inline constexpr double kTokenSeconds = 1.0 / kFrameRateHz;

// Frame-level embeddings at 25 Hz. Row i starts at timestamps[i] seconds.
struct EmbeddingSequence {
    int dim = 0;
    std::vector<float> tokens;  // row-major n x dim
    std::vector<double> timestamps;
    double source_seconds = 0.0;

    int n() const { return static_cast<int>(timestamps.size()); }
    const float* row(int i) const {
        return tokens.data() + static_cast<std::size_t>(i) * dim;
    }
};

struct ClipEmbedding {
    std::vector<float> vec;
    double source_seconds = 0.0;
};

// Mask-free inference. Inputs longer than 10 s are split into consecutive
// 10 s segments (final partial segment at its natural length), each encoded
// independently, outputs concatenated in time order.
EmbeddingSequence embed(const audio::Waveform& w, model::MaeModel& m);

// Arithmetic mean over time.
ClipEmbedding pool(const EmbeddingSequence& seq);

// One record per archive entry: a JSON header line {dim, id, n_frames,
// pooled} followed by n_frames*dim raw f32 LE values.
struct ArchiveRecord {
    std::string id;
    int n_frames = 0;
    int dim = 0;
    bool pooled = false;
    std::vector<float> values;
};

struct BatchSummary {
    int written = 0;
    std::vector<std::string> skipped;  // paths of clips that failed to embed
};

// Embeds every manifest clip into out_path in manifest order. Failures are
// logged, skipped, and listed in the summary.
BatchSummary embed_batch(const train::Manifest& manifest, model::MaeModel& m,
                         const std::string& out_path, bool pooled);

// Appends one record: JSON header line, then raw little-endian f32 payload.
void append_record(std::ostream& out, const ArchiveRecord& rec);

std::vector<ArchiveRecord> read_archive(const std::string& path);

}  // namespace dasheng::embed
