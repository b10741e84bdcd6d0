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

#include "dasheng/embedder.hpp"

#include <fstream>
#include <iostream>

#include <json.hpp>

#include "dasheng/common.hpp"
#include "dasheng/tokenizer.hpp"

namespace dasheng::embed {

using nlohmann::json;

EmbeddingSequence embed(const audio::Waveform& w, model::MaeModel& m) {
    const auto wav = audio::resample(w);
    if (wav.samples.empty()) {
        throw domain_error("embed: empty waveform");
    }
    NoGradGuard guard;
    EmbeddingSequence seq;
    seq.dim = m.config().embed_dim;
    seq.source_seconds =
        static_cast<double>(wav.samples.size()) / audio::kSampleRate;

    const std::size_t total = wav.samples.size();
    for (std::size_t off = 0; off < total; off += kSegmentSamples) {
        const std::size_t len = std::min<std::size_t>(kSegmentSamples, total - off);
        audio::Waveform seg;
        seg.sample_rate_hz = audio::kSampleRate;
        seg.samples.assign(wav.samples.begin() + static_cast<std::ptrdiff_t>(off),
                           wav.samples.begin() + static_cast<std::ptrdiff_t>(off + len));
        auto chunks = tokenizer::chunkify(audio::logmel(seg));
        if (chunks.n == 0) {
            continue;  // a trailing sliver shorter than one chunk
        }
        auto e = m.embed_frames(chunks);
        seq.tokens.insert(seq.tokens.end(), e.data->begin(), e.data->end());
        const double start_s = static_cast<double>(off) / audio::kSampleRate;
        for (int i = 0; i < chunks.n; ++i) {
            seq.timestamps.push_back(start_s + i * kTokenSeconds);
        }
    }
    if (seq.timestamps.empty()) {
        throw domain_error("embed: input shorter than one 4-frame chunk");
    }
    return seq;
}

ClipEmbedding pool(const EmbeddingSequence& seq) {
    if (seq.n() == 0) {
        throw domain_error("pool: empty embedding sequence");
    }
    ClipEmbedding out;
    out.source_seconds = seq.source_seconds;
    out.vec.resize(static_cast<std::size_t>(seq.dim));
    for (int j = 0; j < seq.dim; ++j) {
        double sum = 0.0;
        for (int i = 0; i < seq.n(); ++i) {
            sum += seq.row(i)[j];
        }
        out.vec[static_cast<std::size_t>(j)] = static_cast<float>(sum / seq.n());
    }
    return out;
}

BatchSummary embed_batch(const train::Manifest& manifest, model::MaeModel& m,
                         const std::string& out_path, bool pooled) {
    std::ofstream f(out_path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw format_error("embed_batch: cannot open " + out_path);
    }
    BatchSummary summary;
    for (const auto& entry : manifest.entries) {
        std::vector<float> values;
        int n_frames = 0;
        int dim = 0;
        try {
            auto seq = embed(audio::load_wav(entry.path), m);
            dim = seq.dim;
            if (pooled) {
                values = pool(seq).vec;
                n_frames = 1;
            } else {
                values = seq.tokens;
                n_frames = seq.n();
            }
        } catch (const std::runtime_error& e) {
            std::cerr << "embed_batch: skipping " << entry.path << ": " << e.what()
                      << "\n";
            summary.skipped.push_back(entry.path);
            continue;
        }
        append_record(f, {entry.path, n_frames, dim, pooled, std::move(values)});
        ++summary.written;
    }
    f.flush();
    if (!f) {
        throw format_error("embed_batch: write failed for " + out_path);
    }
    return summary;
}

void append_record(std::ostream& out, const ArchiveRecord& rec) {
    json header;
    header["id"] = rec.id;
    header["n_frames"] = rec.n_frames;
    header["dim"] = rec.dim;
    header["pooled"] = rec.pooled;
    out << header.dump() << "\n";
    out.write(reinterpret_cast<const char*>(rec.values.data()),
              static_cast<std::streamsize>(rec.values.size() * sizeof(float)));
}

std::vector<ArchiveRecord> read_archive(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw format_error("archive: cannot open " + path);
    }
    std::vector<ArchiveRecord> records;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw format_error("archive: record " + std::to_string(records.size()) +
                               " has a bad header: " + e.what());
        }
        ArchiveRecord r;
        try {
            r.id = j.at("id").get<std::string>();
            r.n_frames = j.at("n_frames").get<int>();
            r.dim = j.at("dim").get<int>();
            r.pooled = j.at("pooled").get<bool>();
        } catch (const json::exception& e) {
            throw format_error("archive: record " + std::to_string(records.size()) +
                               " header is incomplete: " + e.what());
        }
        if (r.n_frames < 0 || r.dim <= 0) {
            throw format_error("archive: record " + std::to_string(records.size()) +
                               " has bad dimensions");
        }
        r.values.resize(static_cast<std::size_t>(r.n_frames) *
                        static_cast<std::size_t>(r.dim));
        f.read(reinterpret_cast<char*>(r.values.data()),
               static_cast<std::streamsize>(r.values.size() * sizeof(float)));
        if (f.gcount() !=
            static_cast<std::streamsize>(r.values.size() * sizeof(float))) {
            throw format_error("archive: record " + std::to_string(records.size()) +
                               " payload truncated");
        }
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace dasheng::embed
