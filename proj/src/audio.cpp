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

#include "dasheng/audio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <numeric>

#include "dasheng/common.hpp"

namespace dasheng::audio {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint32_t read_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

float clamp_unit(float v) {
    return v < -1.f ? -1.f : (v > 1.f ? 1.f : v);
}

// ---- resampler -------------------------------------------------------------

double bessel_i0(double x) {
    // Power series; converges quickly for the beta range used here.
    double sum = 1.0, term = 1.0;
    const double hx = 0.5 * x;
    for (int k = 1; k < 64; ++k) {
        term *= (hx / k) * (hx / k);
        sum += term;
        if (term < sum * 1e-14) {
            break;
        }
    }
    return sum;
}

double sinc(double t) {
    if (std::fabs(t) < 1e-12) {
        return 1.0;
    }
    return std::sin(kPi * t) / (kPi * t);
}

// ---- FFT -------------------------------------------------------------------

// Iterative radix-2 FFT, in place. n must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) {
            j ^= bit;
        }
        j ^= bit;
        if (i < j) {
            std::swap(a[i], a[j]);
        }
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const std::complex<double> u = a[i + j];
                const std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// Reflect padding without repeating the edge sample; folds for short inputs.
float sample_reflected(const std::vector<float>& x, std::int64_t idx) {
    const std::int64_t n = static_cast<std::int64_t>(x.size());
    if (n == 1) {
        return x[0];
    }
    const std::int64_t period = 2 * (n - 1);
    std::int64_t m = idx % period;
    if (m < 0) {
        m += period;
    }
    if (m >= n) {
        m = period - m;
    }
    return x[static_cast<std::size_t>(m)];
}

const std::vector<double>& mel_weights() {
    static const std::vector<double> weights = [] {
        const int n_bins = kFftSize / 2 + 1;
        auto hz_to_mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
        auto mel_to_hz = [](double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); };
        const double mel_lo = hz_to_mel(kFmin);
        const double mel_hi = hz_to_mel(kFmax);
        // 66 equally spaced Mel points: left edge, 64 centers, right edge.
        std::vector<double> edges(kMelBins + 2);
        for (int i = 0; i < kMelBins + 2; ++i) {
            edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (kMelBins + 1));
        }
        std::vector<double> w(static_cast<std::size_t>(kMelBins) * n_bins, 0.0);
        for (int m = 0; m < kMelBins; ++m) {
            const double lo = edges[m], c = edges[m + 1], hi = edges[m + 2];
            for (int k = 0; k < n_bins; ++k) {
                const double f = static_cast<double>(k) * kSampleRate / kFftSize;
                double v = 0.0;
                if (f > lo && f < hi) {
                    v = f <= c ? (f - lo) / (c - lo) : (hi - f) / (hi - c);
                }
                w[static_cast<std::size_t>(m) * n_bins + k] = v;
            }
        }
        return w;
    }();
    return weights;
}

}  // namespace

Waveform decode_wav(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw format_error("wav: missing RIFF/WAVE header");
    }
    bool have_fmt = false;
    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    const std::uint8_t* data_ptr = nullptr;
    std::uint32_t data_size = 0;

    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        char id[5] = {0};
        std::memcpy(id, bytes.data() + pos, 4);
        const std::uint32_t size = read_u32(bytes.data() + pos + 4);
        pos += 8;
        if (size > bytes.size() - pos) {
            throw format_error(std::string("wav: truncated '") + id + "' chunk");
        }
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (size < 16) {
                throw format_error("wav: short 'fmt ' chunk");
            }
            format = read_u16(bytes.data() + pos);
            channels = read_u16(bytes.data() + pos + 2);
            rate = read_u32(bytes.data() + pos + 4);
            bits = read_u16(bytes.data() + pos + 14);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data_ptr = bytes.data() + pos;
            data_size = size;
        }
        pos += size + (size & 1);  // chunks are word-aligned
    }
    if (!have_fmt) {
        throw format_error("wav: missing 'fmt ' chunk");
    }
    if (data_ptr == nullptr) {
        throw format_error("wav: missing 'data' chunk");
    }
    if (channels == 0 || rate == 0) {
        throw format_error("wav: 'fmt ' chunk has zero channels or rate");
    }
    const bool pcm16 = format == 1 && bits == 16;
    const bool f32 = format == 3 && bits == 32;
    if (!pcm16 && !f32) {
        throw format_error("wav: 'fmt ' codec unsupported (want PCM16 or float32)");
    }
    const std::uint32_t bytes_per_sample = pcm16 ? 2 : 4;
    const std::uint32_t frame_bytes = bytes_per_sample * channels;
    if (data_size % frame_bytes != 0) {
        throw format_error("wav: 'data' chunk is not a whole number of frames");
    }
    const std::uint32_t n_frames = data_size / frame_bytes;

    Waveform w;
    w.sample_rate_hz = static_cast<int>(rate);
    w.samples.resize(n_frames);
    for (std::uint32_t i = 0; i < n_frames; ++i) {
        double acc = 0.0;
        for (std::uint16_t c = 0; c < channels; ++c) {
            const std::uint8_t* p = data_ptr + (static_cast<std::size_t>(i) * channels + c) * bytes_per_sample;
            if (pcm16) {
                const auto v = static_cast<std::int16_t>(read_u16(p));
                acc += static_cast<double>(v) / 32768.0;
            } else {
                float v;
                std::memcpy(&v, p, 4);
                acc += v;
            }
        }
        w.samples[i] = clamp_unit(static_cast<float>(acc / channels));
    }
    return w;
}

Waveform load_wav(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw format_error("wav: cannot open " + path);
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return decode_wav(bytes);
}

Waveform load_raw_s16le(const std::string& path, int sample_rate_hz) {
    if (sample_rate_hz <= 0) {
        throw domain_error("raw: sample rate must be positive");
    }
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw format_error("raw: cannot open " + path);
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() % 2 != 0) {
        throw format_error("raw: odd byte count for s16le");
    }
    Waveform w;
    w.sample_rate_hz = sample_rate_hz;
    w.samples.resize(bytes.size() / 2);
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(read_u16(bytes.data() + 2 * i));
        w.samples[i] = clamp_unit(static_cast<float>(v) / 32768.f);
    }
    return w;
}

std::vector<float> resample(const std::vector<float>& x, int src_hz, int dst_hz) {
    if (src_hz <= 0 || dst_hz <= 0) {
        throw domain_error("resample: rates must be positive");
    }
    if (src_hz == dst_hz || x.empty()) {
        return x;
    }
    const int g = std::gcd(src_hz, dst_hz);
    const std::int64_t up = dst_hz / g;    // interpolation factor L
    const std::int64_t down = src_hz / g;  // decimation factor M

    constexpr int kTaps = 64;        // per phase
    constexpr double kBeta = 8.6;    // Kaiser shape, ~90 dB stopband
    constexpr double kHalf = kTaps / 2.0;
    const double cutoff = std::min(1.0, static_cast<double>(up) / down);

    // Phase p holds the kernel sampled at offsets j - kTaps/2 + 1 - p/up,
    // normalized to unit sum so DC passes exactly.
    std::vector<double> coef(static_cast<std::size_t>(up) * kTaps);
    const double i0b = bessel_i0(kBeta);
    for (std::int64_t p = 0; p < up; ++p) {
        double sum = 0.0;
        for (int j = 0; j < kTaps; ++j) {
            const double t = j - kHalf + 1 - static_cast<double>(p) / up;
            const double u = t / kHalf;
            double wnd = 0.0;
            if (u > -1.0 && u < 1.0) {
                wnd = bessel_i0(kBeta * std::sqrt(1.0 - u * u)) / i0b;
            }
            const double v = cutoff * sinc(cutoff * t) * wnd;
            coef[static_cast<std::size_t>(p) * kTaps + j] = v;
            sum += v;
        }
        for (int j = 0; j < kTaps; ++j) {
            coef[static_cast<std::size_t>(p) * kTaps + j] /= sum;
        }
    }

    const auto n_in = static_cast<std::int64_t>(x.size());
    const std::int64_t n_out = n_in * up / down;
    std::vector<float> y(static_cast<std::size_t>(n_out));
    auto at = [&](std::int64_t i) -> double {
        // Replicated edges keep DC level flat at the boundaries.
        if (i < 0) {
            return x.front();
        }
        if (i >= n_in) {
            return x.back();
        }
        return x[static_cast<std::size_t>(i)];
    };
    for (std::int64_t n = 0; n < n_out; ++n) {
        const std::int64_t num = n * down;
        const std::int64_t i0 = num / up;
        const std::int64_t phase = num % up;
        const double* c = coef.data() + static_cast<std::size_t>(phase) * kTaps;
        // Tap j multiplies x[i0 + j - kTaps/2 + 1]; offsets match the kernel.
        double acc = 0.0;
        for (int j = 0; j < kTaps; ++j) {
            acc += c[j] * at(i0 + j - kTaps / 2 + 1);
        }
        y[static_cast<std::size_t>(n)] = static_cast<float>(acc);
    }
    return y;
}

Waveform resample(const Waveform& w, int target_hz) {
    if (w.sample_rate_hz < 8000) {
        throw domain_error("resample: source rate below 8 kHz");
    }
    Waveform out;
    out.sample_rate_hz = target_hz;
    out.samples = resample(w.samples, w.sample_rate_hz, target_hz);
    return out;
}

std::int64_t logmel_frame_count(std::int64_t num_samples) {
    return num_samples / kHopLength + 1;
}

MelSpectrogram logmel(const Waveform& w) {
    if (w.samples.empty()) {
        throw domain_error("logmel: empty waveform");
    }
    if (w.sample_rate_hz != kSampleRate) {
        throw domain_error("logmel: waveform must be 16 kHz (resample first)");
    }
    const auto n = static_cast<std::int64_t>(w.samples.size());
    const auto frames = static_cast<int>(logmel_frame_count(n));
    const int n_bins = kFftSize / 2 + 1;

    // Periodic Hann window.
    static const std::vector<double> hann = [] {
        std::vector<double> h(kWinLength);
        for (int i = 0; i < kWinLength; ++i) {
            const double s = std::sin(kPi * i / kWinLength);
            h[i] = s * s;
        }
        return h;
    }();

    const std::vector<double>& mel = mel_weights();
    MelSpectrogram out;
    out.frames = frames;
    out.bins = kMelBins;
    out.values.resize(static_cast<std::size_t>(frames) * kMelBins);

    std::vector<std::complex<double>> buf(kFftSize);
    std::vector<double> power(n_bins);
    for (int t = 0; t < frames; ++t) {
        const std::int64_t center = static_cast<std::int64_t>(t) * kHopLength;
        for (int i = 0; i < kFftSize; ++i) {
            const std::int64_t idx = center - kWinLength / 2 + i;
            buf[i] = {sample_reflected(w.samples, idx) * hann[i], 0.0};
        }
        fft_radix2(buf);
        for (int k = 0; k < n_bins; ++k) {
            power[k] = std::norm(buf[k]);
        }
        for (int m = 0; m < kMelBins; ++m) {
            const double* wm = mel.data() + static_cast<std::size_t>(m) * n_bins;
            double e = 0.0;
            for (int k = 0; k < n_bins; ++k) {
                e += wm[k] * power[k];
            }
            out.values[static_cast<std::size_t>(t) * kMelBins + m] =
                static_cast<float>(std::log(std::max(e, kLogFloor)));
        }
    }
    return out;
}

std::vector<double> mel_filterbank() {
    return mel_weights();
}

}  // namespace dasheng::audio
