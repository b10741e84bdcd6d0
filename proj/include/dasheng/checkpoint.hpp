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

#include "dasheng/tensor.hpp"

namespace dasheng::ckpt {

// DSHG1 container: "DSHG1" magic, u32 metadata length + JSON, u32 tensor
// count, then per tensor u32 name length, name, u8 dtype (0 = f32, 1 = f64),
// u32 rank, u64 dims, raw little-endian values. Loads are bit-exact.
inline constexpr char kMagic[5] = {'D', 'S', 'H', 'G', '1'};
inline constexpr std::uint8_t kDtypeF32 = 0;
inline constexpr std::uint8_t kDtypeF64 = 1;

struct TensorEntry {
    std::string name;
    std::uint8_t dtype = kDtypeF32;
    std::vector<std::uint64_t> dims;
    std::vector<float> f32;
    std::vector<double> f64;

    std::uint64_t numel() const;
};

struct Checkpoint {
    std::string meta_json;
    std::vector<TensorEntry> tensors;

    const TensorEntry* find(const std::string& name) const;

    // Appends a tensor; float tensors store as f32, double as f64.
    void add(const std::string& name, const TensorT<float>& t);
    void add(const std::string& name, const TensorT<double>& t);

    // Copies a stored tensor into `out`, requiring matching dtype and shape.
    void read_into(const std::string& name, TensorT<float>& out) const;
    void read_into(const std::string& name, TensorT<double>& out) const;
};

void save(const std::string& path, const Checkpoint& c);
Checkpoint load(const std::string& path);

}  // namespace dasheng::ckpt
