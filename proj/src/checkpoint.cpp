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

#include "dasheng/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "dasheng/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace dasheng::ckpt {

namespace {

constexpr std::uint32_t kMaxNameLen = 1u << 16;
constexpr std::uint32_t kMaxRank = 8;

void put_bytes(std::string& out, const void* p, std::size_t n) {
    out.append(static_cast<const char*>(p), n);
}

template <class T>
void put_le(std::string& out, T v) {
    put_bytes(out, &v, sizeof(T));
}

struct Cursor {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const std::string& what) const {
        if (buf.size() - pos < n) {
            throw format_error("checkpoint truncated at offset " + std::to_string(pos) +
                               " reading " + what + ": expected " + std::to_string(n) +
                               " bytes, " + std::to_string(buf.size() - pos) +
                               " available");
        }
    }

    template <class T>
    T take(const std::string& what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, buf.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }

    std::string take_str(std::size_t n, const std::string& what) {
        need(n, what);
        std::string s(buf.data() + pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

std::uint64_t TensorEntry::numel() const {
    std::uint64_t n = 1;
    for (auto d : dims) {
        if (d == 0 || n > std::numeric_limits<std::uint64_t>::max() / d) {
            throw format_error("checkpoint tensor '" + name + "' has bad dims");
        }
        n *= d;
    }
    return n;
}

const TensorEntry* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) {
            return &t;
        }
    }
    return nullptr;
}

namespace {

template <class T>
void add_impl(Checkpoint& c, const std::string& name, const TensorT<T>& t,
              std::uint8_t dtype) {
    if (!t.data) {
        throw dim_error("checkpoint add: tensor '" + name + "' has no data");
    }
    TensorEntry e;
    e.name = name;
    e.dtype = dtype;
    for (int d : t.shape) {
        e.dims.push_back(static_cast<std::uint64_t>(d));
    }
    if constexpr (sizeof(T) == 4) {
        e.f32 = *t.data;
    } else {
        e.f64 = *t.data;
    }
    c.tensors.push_back(std::move(e));
}

template <class T>
void read_impl(const Checkpoint& c, const std::string& name, TensorT<T>& out,
               std::uint8_t dtype) {
    const TensorEntry* e = c.find(name);
    if (e == nullptr) {
        throw format_error("checkpoint is missing tensor '" + name + "'");
    }
    if (e->dtype != dtype) {
        throw format_error("checkpoint tensor '" + name + "' has dtype " +
                           std::to_string(e->dtype) + ", wanted " +
                           std::to_string(dtype));
    }
    if (e->dims.size() != out.shape.size()) {
        throw dim_error("checkpoint tensor '" + name + "' rank mismatch");
    }
    for (std::size_t i = 0; i < e->dims.size(); ++i) {
        if (e->dims[i] != static_cast<std::uint64_t>(out.shape[i])) {
            throw dim_error("checkpoint tensor '" + name + "' shape mismatch");
        }
    }
    if constexpr (sizeof(T) == 4) {
        *out.data = e->f32;
    } else {
        *out.data = e->f64;
    }
}

}  // namespace

void Checkpoint::add(const std::string& name, const TensorT<float>& t) {
    add_impl(*this, name, t, kDtypeF32);
}

void Checkpoint::add(const std::string& name, const TensorT<double>& t) {
    add_impl(*this, name, t, kDtypeF64);
}

void Checkpoint::read_into(const std::string& name, TensorT<float>& out) const {
    read_impl(*this, name, out, kDtypeF32);
}

void Checkpoint::read_into(const std::string& name, TensorT<double>& out) const {
    read_impl(*this, name, out, kDtypeF64);
}

void save(const std::string& path, const Checkpoint& c) {
    std::string out;
    put_bytes(out, kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.meta_json.size()));
    out += c.meta_json;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& t : c.tensors) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        put_le<std::uint8_t>(out, t.dtype);
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
        for (auto d : t.dims) {
            put_le<std::uint64_t>(out, d);
        }
        const std::uint64_t n = t.numel();
        if (t.dtype == kDtypeF32) {
            if (t.f32.size() != n) {
                throw dim_error("checkpoint save: tensor '" + t.name +
                                "' value count disagrees with dims");
            }
            put_bytes(out, t.f32.data(), t.f32.size() * sizeof(float));
        } else if (t.dtype == kDtypeF64) {
            if (t.f64.size() != n) {
                throw dim_error("checkpoint save: tensor '" + t.name +
                                "' value count disagrees with dims");
            }
            put_bytes(out, t.f64.data(), t.f64.size() * sizeof(double));
        } else {
            throw format_error("checkpoint save: unknown dtype code " +
                               std::to_string(t.dtype));
        }
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw format_error("checkpoint save: cannot open " + path);
    }
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    f.flush();
    if (!f) {
        throw format_error("checkpoint save: write failed for " + path);
    }
}

Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw format_error("checkpoint load: cannot open " + path);
    }
    std::string buf((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());

    Cursor cur{buf};
    const std::string magic = cur.take_str(sizeof(kMagic), "magic");
    if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) {
        throw format_error("checkpoint load: bad magic in " + path);
    }

    Checkpoint c;
    const auto meta_len = cur.take<std::uint32_t>("metadata length");
    c.meta_json = cur.take_str(meta_len, "metadata");

    const auto count = cur.take<std::uint32_t>("tensor count");
    c.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        TensorEntry e;
        const auto name_len = cur.take<std::uint32_t>("name length");
        if (name_len == 0 || name_len > kMaxNameLen) {
            throw format_error("checkpoint load: bad name length at offset " +
                               std::to_string(cur.pos));
        }
        e.name = cur.take_str(name_len, "tensor name");
        e.dtype = cur.take<std::uint8_t>("dtype");
        if (e.dtype != kDtypeF32 && e.dtype != kDtypeF64) {
            throw format_error("checkpoint load: unknown dtype code " +
                               std::to_string(e.dtype) + " for '" + e.name +
                               "' at offset " + std::to_string(cur.pos - 1));
        }
        const auto rank = cur.take<std::uint32_t>("rank");
        if (rank > kMaxRank) {
            throw format_error("checkpoint load: rank " + std::to_string(rank) +
                               " too large for '" + e.name + "'");
        }
        for (std::uint32_t r = 0; r < rank; ++r) {
            e.dims.push_back(cur.take<std::uint64_t>("dim"));
        }
        const std::uint64_t n = e.numel();
        const std::size_t width = e.dtype == kDtypeF32 ? 4 : 8;
        cur.need(n * width, "values of '" + e.name + "'");
        if (e.dtype == kDtypeF32) {
            e.f32.resize(n);
            std::memcpy(e.f32.data(), buf.data() + cur.pos, n * width);
        } else {
            e.f64.resize(n);
            std::memcpy(e.f64.data(), buf.data() + cur.pos, n * width);
        }
        cur.pos += n * width;
        c.tensors.push_back(std::move(e));
    }
    if (cur.pos != buf.size()) {
        throw format_error("checkpoint load: " + std::to_string(buf.size() - cur.pos) +
                           " trailing bytes after tensor table");
    }
    return c;
}

}  // namespace dasheng::ckpt
