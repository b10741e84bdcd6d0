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
#include <string>
#include <vector>

namespace dasheng::audio {

inline constexpr int kSampleRate = 16000;
inline constexpr int kMelBins = 64;
inline constexpr int kWinLength = 512;  // 32 ms at 16 kHz
inline constexpr int kHopLength = 160;  // 10 ms at 16 kHz
inline constexpr int kFftSize = 512;
inline constexpr double kFmin = 0.0;
inline constexpr double kFmax = 8000.0;
inline constexpr double kLogFloor = 1e-10;

struct Waveform {
    std::vector<float> samples;  // mono, in [-1, 1]
    int sample_rate_hz = 0;
};

// Row-major [frames x bins] natural-log Mel energies at 100 frames/s.
struct MelSpectrogram {
    int frames = 0;
    int bins = kMelBins;
    std::vector<float> values;

    float at(int t, int f) const {
        return values[static_cast<std::size_t>(t) * bins + f];
    }
};

// RIFF/WAVE decoding: 16-bit PCM or 32-bit float, any channel count averaged
// to mono. Malformed containers raise format_error naming the bad chunk.
Waveform decode_wav(const std::vector<std::uint8_t>& bytes);
Waveform load_wav(const std::string& path);

// Headerless s16le ingestion for fixtures.
Waveform load_raw_s16le(const std::string& path, int sample_rate_hz);

// Kaiser windowed-sinc polyphase resampling, 64 taps per phase, each phase
// normalized to unity DC gain. Equal rates pass the input through untouched.
std::vector<float> resample(const std::vector<float>& x, int src_hz, int dst_hz);
Waveform resample(const Waveform& w, int target_hz = kSampleRate);

// Centered STFT (reflect padding), Hann window, power spectrum through a
// 64-filter HTK Mel bank on [0, 8000] Hz with unit-peak triangles, then
// ln(max(e, 1e-10)). Requires a 16 kHz waveform.
MelSpectrogram logmel(const Waveform& w);

// Frame count the STFT produces for a given sample count: floor(len/hop) + 1.
std::int64_t logmel_frame_count(std::int64_t num_samples);

// The [bins x (fft/2+1)] Mel weight matrix used by logmel, exposed so tools
// can inspect the filterbank.
std::vector<double> mel_filterbank();

}  // namespace dasheng::audio
