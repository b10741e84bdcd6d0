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
#include <utility>
#include <vector>

#include "dasheng/audio.hpp"
#include "dasheng/rng.hpp"
#include "dasheng/tensor.hpp"
#include "dasheng/tokenizer.hpp"

namespace dasheng::model {

inline constexpr double kLayerNormEps = 1e-6;
inline constexpr double kTargetNormEps = 1e-6;
inline constexpr double kInitStd = 0.02;

struct ModelConfig {
    int depth = 12;
    int embed_dim = 768;
    int mlp_dim = 3072;
    int num_heads = 12;
    int chunk_size = 4;
    int mel_bins = 64;
    int n_max = 250;
    int dec_depth = 8;
    int dec_embed_dim = 512;
    int dec_mlp_dim = 2048;
    int dec_num_heads = 16;

    int chunk_dim() const { return chunk_size * mel_bins; }
    void validate() const;

    // base | 0.6b | 1.2b | tiny. The large encoders pair with the two stock
    // decoders; tiny is the desk-scale config used by the bundled tests.
    static ModelConfig preset(const std::string& name);

    // Closed-form parameter counts (match the constructed model exactly).
    std::int64_t encoder_param_count() const;
    std::int64_t decoder_param_count() const;
    std::int64_t param_count() const;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);

    bool operator==(const ModelConfig&) const = default;
};

template <class T>
struct BlockT {
    TensorT<T> ln1_g, ln1_b;
    TensorT<T> wq, bq, wk, bk, wv, bv, wo, bo;
    TensorT<T> ln2_g, ln2_b;
    TensorT<T> w1, b1, w2, b2;
};

// Masked autoencoder over chunked Mel tokens: pre-norm GeLU encoder on kept
// tokens only, a narrower decoder that restores sequence order with a
// learnable mask token, and a linear head back to chunk space.
template <class T>
class MaeModelT {
  public:
    MaeModelT(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    // Stable name -> tensor listing; the checkpoint format and the optimizer
    // both key off these names.
    std::vector<std::pair<std::string, TensorT<T>*>> named_params();
    std::int64_t param_count();
    void zero_grads();

    // Chunk rows projected to D with positions added (rows 0..n).
    TensorT<T> tokens(const tokenizer::ChunkSequence& chunks);

    // Encoder stack plus the closing LayerNorm; input is the kept tokens.
    TensorT<T> encode(const TensorT<T>& kept_tokens);

    // Width projection, scatter with mask tokens, decoder positions, decoder
    // stack, reconstruction head. Output is [n x chunk_dim].
    TensorT<T> decode(const TensorT<T>& encoder_out, const tokenizer::MaskPlan& plan);

    struct ForwardStats {
        int n_tokens = 0;
        int masked = 0;
        double loss = 0.0;
    };

    // Full masked-reconstruction pass over prepared chunks and plan.
    TensorT<T> forward_chunks(const tokenizer::ChunkSequence& chunks,
                              const tokenizer::MaskPlan& plan,
                              ForwardStats* stats = nullptr);

    // chunkify -> mask -> forward_chunks.
    TensorT<T> forward_train(const audio::MelSpectrogram& mel, Rng& rng,
                             ForwardStats* stats = nullptr);

    // Frame-level embeddings with no masking (callers wrap in NoGradGuard).
    TensorT<T> embed_frames(const tokenizer::ChunkSequence& chunks);

  private:
    TensorT<T> run_block(BlockT<T>& blk, const TensorT<T>& x, int heads);

    ModelConfig cfg_;
    TensorT<T> embed_w_, embed_b_, pos_enc_;
    std::vector<BlockT<T>> enc_blocks_;
    TensorT<T> enc_ln_g_, enc_ln_b_;
    TensorT<T> dec_proj_w_, dec_proj_b_, mask_token_, pos_dec_;
    std::vector<BlockT<T>> dec_blocks_;
    TensorT<T> dec_ln_g_, dec_ln_b_;
    TensorT<T> head_w_, head_b_;
};

// Masked positions only: targets standardized per chunk (population variance,
// eps 1e-6), mean squared error over masked chunks and dims.
template <class T>
TensorT<T> normalized_mse(const TensorT<T>& pred, const tokenizer::ChunkSequence& target,
                          const tokenizer::MaskPlan& plan);

using MaeModel = MaeModelT<float>;

}  // namespace dasheng::model
