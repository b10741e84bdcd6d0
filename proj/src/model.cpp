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

#include "dasheng/model.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "dasheng/common.hpp"
#include "dasheng/ops.hpp"

namespace dasheng::model {

using nlohmann::json;

void ModelConfig::validate() const {
    auto positive = [](int v, const char* what) {
        if (v <= 0) {
            throw domain_error(std::string("model config: ") + what + " must be positive");
        }
    };
    positive(embed_dim, "embed_dim");
    positive(mlp_dim, "mlp_dim");
    positive(num_heads, "num_heads");
    positive(chunk_size, "chunk_size");
    positive(mel_bins, "mel_bins");
    positive(n_max, "n_max");
    positive(dec_embed_dim, "dec_embed_dim");
    positive(dec_mlp_dim, "dec_mlp_dim");
    positive(dec_num_heads, "dec_num_heads");
    if (depth < 0 || dec_depth < 0) {
        throw domain_error("model config: depth must be nonnegative");
    }
    if (embed_dim % num_heads != 0) {
        throw domain_error("model config: embed_dim not divisible by num_heads");
    }
    if (dec_embed_dim % dec_num_heads != 0) {
        throw domain_error("model config: dec_embed_dim not divisible by dec_num_heads");
    }
}

ModelConfig ModelConfig::preset(const std::string& name) {
    ModelConfig c;
    if (name == "base") {
        c.depth = 12;
        c.embed_dim = 768;
        c.mlp_dim = 3072;
        c.num_heads = 12;
        c.dec_depth = 8;
        c.dec_embed_dim = 512;
        c.dec_mlp_dim = 2048;
        c.dec_num_heads = 16;
    } else if (name == "0.6b") {
        c.depth = 32;
        c.embed_dim = 1024;
        c.mlp_dim = 4096;
        c.num_heads = 16;
        c.dec_depth = 8;
        c.dec_embed_dim = 512;
        c.dec_mlp_dim = 2048;
        c.dec_num_heads = 16;
    } else if (name == "1.2b") {
        c.depth = 40;
        c.embed_dim = 1536;
        c.mlp_dim = 6144;
        c.num_heads = 24;
        c.dec_depth = 8;
        c.dec_embed_dim = 768;
        c.dec_mlp_dim = 3072;
        c.dec_num_heads = 24;
    } else if (name == "tiny") {
        c.depth = 2;
        c.embed_dim = 64;
        c.mlp_dim = 128;
        c.num_heads = 2;
        c.dec_depth = 1;
        c.dec_embed_dim = 64;
        c.dec_mlp_dim = 128;
        c.dec_num_heads = 2;
    } else {
        throw domain_error("unknown model preset: " + name);
    }
    c.validate();
    return c;
}

namespace {

std::int64_t block_param_count(std::int64_t d, std::int64_t mlp) {
    const std::int64_t ln = 2 * (2 * d);
    const std::int64_t attn = 4 * d * d + 4 * d;
    const std::int64_t ffn = d * mlp + mlp + mlp * d + d;
    return ln + attn + ffn;
}

}  // namespace

std::int64_t ModelConfig::encoder_param_count() const {
    const std::int64_t d = embed_dim;
    std::int64_t total = static_cast<std::int64_t>(chunk_dim()) * d + d;  // embed
    total += static_cast<std::int64_t>(n_max) * d;                        // positions
    total += depth * block_param_count(d, mlp_dim);
    total += 2 * d;  // closing LayerNorm
    return total;
}

std::int64_t ModelConfig::decoder_param_count() const {
    const std::int64_t d = dec_embed_dim;
    std::int64_t total = static_cast<std::int64_t>(embed_dim) * d + d;  // width projection
    total += d;                                                          // mask token
    total += static_cast<std::int64_t>(n_max) * d;                       // positions
    total += dec_depth * block_param_count(d, dec_mlp_dim);
    total += 2 * d;                                                      // closing LayerNorm
    total += d * static_cast<std::int64_t>(chunk_dim()) + chunk_dim();   // head
    return total;
}

std::int64_t ModelConfig::param_count() const {
    return encoder_param_count() + decoder_param_count();
}

std::string ModelConfig::to_json() const {
    json j;
    j["depth"] = depth;
    j["embed_dim"] = embed_dim;
    j["mlp_dim"] = mlp_dim;
    j["num_heads"] = num_heads;
    j["chunk_size"] = chunk_size;
    j["mel_bins"] = mel_bins;
    j["n_max"] = n_max;
    j["dec_depth"] = dec_depth;
    j["dec_embed_dim"] = dec_embed_dim;
    j["dec_mlp_dim"] = dec_mlp_dim;
    j["dec_num_heads"] = dec_num_heads;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw format_error(std::string("model config: bad JSON: ") + e.what());
    }
    if (!j.is_object()) {
        throw format_error("model config: expected a JSON object");
    }
    static const char* known[] = {"depth", "embed_dim", "mlp_dim", "num_heads",
                                  "chunk_size", "mel_bins", "n_max",
                                  "dec_depth", "dec_embed_dim", "dec_mlp_dim",
                                  "dec_num_heads"};
    for (const auto& [key, val] : j.items()) {
        if (std::find_if(std::begin(known), std::end(known),
                         [&](const char* k) { return key == k; }) == std::end(known)) {
            throw format_error("model config: unknown key '" + key + "'");
        }
        (void)val;
    }
    ModelConfig c;
    try {
        c.depth = j.value("depth", c.depth);
        c.embed_dim = j.value("embed_dim", c.embed_dim);
        c.mlp_dim = j.value("mlp_dim", c.mlp_dim);
        c.num_heads = j.value("num_heads", c.num_heads);
        c.chunk_size = j.value("chunk_size", c.chunk_size);
        c.mel_bins = j.value("mel_bins", c.mel_bins);
        c.n_max = j.value("n_max", c.n_max);
        c.dec_depth = j.value("dec_depth", c.dec_depth);
        c.dec_embed_dim = j.value("dec_embed_dim", c.dec_embed_dim);
        c.dec_mlp_dim = j.value("dec_mlp_dim", c.dec_mlp_dim);
        c.dec_num_heads = j.value("dec_num_heads", c.dec_num_heads);
    } catch (const json::exception& e) {
        throw format_error(std::string("model config: bad field type: ") + e.what());
    }
    c.validate();
    return c;
}

namespace {

template <class T>
TensorT<T> ones_param(std::vector<int> shape) {
    auto t = TensorT<T>::zeros(std::move(shape), true);
    std::fill(t.data->begin(), t.data->end(), T(1));
    return t;
}

template <class T>
BlockT<T> make_block(int d, int mlp, Rng& rng) {
    const T std = static_cast<T>(kInitStd);
    BlockT<T> b;
    b.ln1_g = ones_param<T>({d});
    b.ln1_b = TensorT<T>::zeros({d}, true);
    b.wq = TensorT<T>::trunc_normal({d, d}, rng, std, true);
    b.bq = TensorT<T>::zeros({d}, true);
    b.wk = TensorT<T>::trunc_normal({d, d}, rng, std, true);
    b.bk = TensorT<T>::zeros({d}, true);
    b.wv = TensorT<T>::trunc_normal({d, d}, rng, std, true);
    b.bv = TensorT<T>::zeros({d}, true);
    b.wo = TensorT<T>::trunc_normal({d, d}, rng, std, true);
    b.bo = TensorT<T>::zeros({d}, true);
    b.ln2_g = ones_param<T>({d});
    b.ln2_b = TensorT<T>::zeros({d}, true);
    b.w1 = TensorT<T>::trunc_normal({d, mlp}, rng, std, true);
    b.b1 = TensorT<T>::zeros({mlp}, true);
    b.w2 = TensorT<T>::trunc_normal({mlp, d}, rng, std, true);
    b.b2 = TensorT<T>::zeros({d}, true);
    return b;
}

template <class T>
void collect_block(std::vector<std::pair<std::string, TensorT<T>*>>& out,
                   const std::string& prefix, BlockT<T>& b) {
    out.emplace_back(prefix + ".ln1.g", &b.ln1_g);
    out.emplace_back(prefix + ".ln1.b", &b.ln1_b);
    out.emplace_back(prefix + ".attn.wq", &b.wq);
    out.emplace_back(prefix + ".attn.bq", &b.bq);
    out.emplace_back(prefix + ".attn.wk", &b.wk);
    out.emplace_back(prefix + ".attn.bk", &b.bk);
    out.emplace_back(prefix + ".attn.wv", &b.wv);
    out.emplace_back(prefix + ".attn.bv", &b.bv);
    out.emplace_back(prefix + ".attn.wo", &b.wo);
    out.emplace_back(prefix + ".attn.bo", &b.bo);
    out.emplace_back(prefix + ".ln2.g", &b.ln2_g);
    out.emplace_back(prefix + ".ln2.b", &b.ln2_b);
    out.emplace_back(prefix + ".mlp.w1", &b.w1);
    out.emplace_back(prefix + ".mlp.b1", &b.b1);
    out.emplace_back(prefix + ".mlp.w2", &b.w2);
    out.emplace_back(prefix + ".mlp.b2", &b.b2);
}

}  // namespace

template <class T>
MaeModelT<T>::MaeModelT(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng = Rng::derive(seed, {0x6d6f64656cULL});  // independent init stream
    const T std = static_cast<T>(kInitStd);
    const int d = cfg_.embed_dim;
    const int dd = cfg_.dec_embed_dim;

    embed_w_ = TensorT<T>::trunc_normal({cfg_.chunk_dim(), d}, rng, std, true);
    embed_b_ = TensorT<T>::zeros({d}, true);
    pos_enc_ = TensorT<T>::trunc_normal({cfg_.n_max, d}, rng, std, true);
    for (int i = 0; i < cfg_.depth; ++i) {
        enc_blocks_.push_back(make_block<T>(d, cfg_.mlp_dim, rng));
    }
    enc_ln_g_ = ones_param<T>({d});
    enc_ln_b_ = TensorT<T>::zeros({d}, true);

    dec_proj_w_ = TensorT<T>::trunc_normal({d, dd}, rng, std, true);
    dec_proj_b_ = TensorT<T>::zeros({dd}, true);
    mask_token_ = TensorT<T>::trunc_normal({1, dd}, rng, std, true);
    pos_dec_ = TensorT<T>::trunc_normal({cfg_.n_max, dd}, rng, std, true);
    for (int i = 0; i < cfg_.dec_depth; ++i) {
        dec_blocks_.push_back(make_block<T>(dd, cfg_.dec_mlp_dim, rng));
    }
    dec_ln_g_ = ones_param<T>({dd});
    dec_ln_b_ = TensorT<T>::zeros({dd}, true);
    head_w_ = TensorT<T>::trunc_normal({dd, cfg_.chunk_dim()}, rng, std, true);
    head_b_ = TensorT<T>::zeros({cfg_.chunk_dim()}, true);
}

template <class T>
std::vector<std::pair<std::string, TensorT<T>*>> MaeModelT<T>::named_params() {
    std::vector<std::pair<std::string, TensorT<T>*>> out;
    out.emplace_back("embed.w", &embed_w_);
    out.emplace_back("embed.b", &embed_b_);
    out.emplace_back("pos.enc", &pos_enc_);
    for (std::size_t i = 0; i < enc_blocks_.size(); ++i) {
        collect_block(out, "enc." + std::to_string(i), enc_blocks_[i]);
    }
    out.emplace_back("enc.ln.g", &enc_ln_g_);
    out.emplace_back("enc.ln.b", &enc_ln_b_);
    out.emplace_back("dec.proj.w", &dec_proj_w_);
    out.emplace_back("dec.proj.b", &dec_proj_b_);
    out.emplace_back("dec.mask_token", &mask_token_);
    out.emplace_back("pos.dec", &pos_dec_);
    for (std::size_t i = 0; i < dec_blocks_.size(); ++i) {
        collect_block(out, "dec." + std::to_string(i), dec_blocks_[i]);
    }
    out.emplace_back("dec.ln.g", &dec_ln_g_);
    out.emplace_back("dec.ln.b", &dec_ln_b_);
    out.emplace_back("head.w", &head_w_);
    out.emplace_back("head.b", &head_b_);
    return out;
}

template <class T>
std::int64_t MaeModelT<T>::param_count() {
    std::int64_t total = 0;
    for (auto& [name, t] : named_params()) {
        total += t->numel();
    }
    return total;
}

template <class T>
void MaeModelT<T>::zero_grads() {
    for (auto& [name, t] : named_params()) {
        t->zero_grad();
    }
}

template <class T>
TensorT<T> MaeModelT<T>::tokens(const tokenizer::ChunkSequence& chunks) {
    return tokenizer::project_and_position(chunks, embed_w_, embed_b_, pos_enc_);
}

template <class T>
TensorT<T> MaeModelT<T>::run_block(BlockT<T>& blk, const TensorT<T>& x, int heads) {
    const T eps = static_cast<T>(kLayerNormEps);
    const int d = x.cols();
    const int dh = d / heads;

    auto h = ops::layernorm(x, blk.ln1_g, blk.ln1_b, eps);
    auto q = ops::add_bias_row(ops::matmul(h, blk.wq), blk.bq);
    auto k = ops::add_bias_row(ops::matmul(h, blk.wk), blk.bk);
    auto v = ops::add_bias_row(ops::matmul(h, blk.wv), blk.bv);
    std::vector<TensorT<T>> ctx;
    ctx.reserve(static_cast<std::size_t>(heads));
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    for (int hd = 0; hd < heads; ++hd) {
        auto qh = ops::slice_cols(q, hd * dh, (hd + 1) * dh);
        auto kh = ops::slice_cols(k, hd * dh, (hd + 1) * dh);
        auto vh = ops::slice_cols(v, hd * dh, (hd + 1) * dh);
        auto scores = ops::scale(ops::matmul_nt(qh, kh), inv_sqrt);
        ctx.push_back(ops::matmul(ops::softmax_rows(scores), vh));
    }
    auto attn = ops::add_bias_row(ops::matmul(ops::concat_cols(ctx), blk.wo), blk.bo);
    auto x1 = ops::add(x, attn);

    auto h2 = ops::layernorm(x1, blk.ln2_g, blk.ln2_b, eps);
    auto inner = ops::gelu(ops::add_bias_row(ops::matmul(h2, blk.w1), blk.b1));
    auto m = ops::add_bias_row(ops::matmul(inner, blk.w2), blk.b2);
    return ops::add(x1, m);
}

template <class T>
TensorT<T> MaeModelT<T>::encode(const TensorT<T>& kept_tokens) {
    TensorT<T> x = kept_tokens;
    for (auto& blk : enc_blocks_) {
        x = run_block(blk, x, cfg_.num_heads);
    }
    return ops::layernorm(x, enc_ln_g_, enc_ln_b_, static_cast<T>(kLayerNormEps));
}

template <class T>
TensorT<T> MaeModelT<T>::decode(const TensorT<T>& encoder_out,
                                const tokenizer::MaskPlan& plan) {
    if (encoder_out.rows() != static_cast<int>(plan.kept_indices.size())) {
        throw dim_error("decode: encoder rows must match the plan's kept count");
    }
    if (plan.n() > cfg_.n_max) {
        throw dim_error("decode: plan longer than the positional table");
    }
    auto e = ops::add_bias_row(ops::matmul(encoder_out, dec_proj_w_), dec_proj_b_);
    auto full = ops::assemble_rows(e, mask_token_, plan.kept_indices, plan.n());
    auto x = ops::add_positional(full, pos_dec_);
    for (auto& blk : dec_blocks_) {
        x = run_block(blk, x, cfg_.dec_num_heads);
    }
    x = ops::layernorm(x, dec_ln_g_, dec_ln_b_, static_cast<T>(kLayerNormEps));
    return ops::add_bias_row(ops::matmul(x, head_w_), head_b_);
}

template <class T>
TensorT<T> normalized_mse(const TensorT<T>& pred, const tokenizer::ChunkSequence& target,
                          const tokenizer::MaskPlan& plan) {
    if (plan.masked_indices.empty()) {
        throw domain_error("normalized_mse: plan masks no chunks");
    }
    if (pred.rows() != target.n || pred.cols() != target.chunk_dim ||
        plan.n() != target.n) {
        throw dim_error("normalized_mse: prediction/target/plan shapes disagree");
    }
    const int c = target.chunk_dim;
    const int m = static_cast<int>(plan.masked_indices.size());

    // Standardized targets are constants; gradients flow through pred only.
    std::vector<T> norm(static_cast<std::size_t>(m) * c);
    for (int i = 0; i < m; ++i) {
        const int row = plan.masked_indices[static_cast<std::size_t>(i)];
        double mean = 0.0;
        for (int j = 0; j < c; ++j) {
            mean += target.at(row, j);
        }
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            const double d = target.at(row, j) - mean;
            var += d * d;
        }
        var /= c;  // population variance
        const double inv = 1.0 / std::sqrt(var + kTargetNormEps);
        for (int j = 0; j < c; ++j) {
            norm[static_cast<std::size_t>(i) * c + j] =
                static_cast<T>((target.at(row, j) - mean) * inv);
        }
    }
    auto t_hat = TensorT<T>::from_vector({m, c}, std::move(norm));
    auto diff = ops::sub(ops::gather_rows(pred, plan.masked_indices), t_hat);
    return ops::mean_all(ops::mul(diff, diff));
}

template <class T>
TensorT<T> MaeModelT<T>::forward_chunks(const tokenizer::ChunkSequence& chunks,
                                        const tokenizer::MaskPlan& plan,
                                        ForwardStats* stats) {
    auto all = tokens(chunks);
    auto [kept, index_map] = tokenizer::gather_unmasked(all, plan);
    auto enc = encode(kept);
    auto pred = decode(enc, plan);
    auto loss = normalized_mse(pred, chunks, plan);
    if (stats != nullptr) {
        stats->n_tokens = chunks.n;
        stats->masked = plan.masked_count();
        stats->loss = static_cast<double>((*loss.data)[0]);
    }
    return loss;
}

template <class T>
TensorT<T> MaeModelT<T>::forward_train(const audio::MelSpectrogram& mel, Rng& rng,
                                       ForwardStats* stats) {
    auto chunks = tokenizer::chunkify(mel);
    auto plan = tokenizer::sample_mask(chunks.n, rng);
    return forward_chunks(chunks, plan, stats);
}

template <class T>
TensorT<T> MaeModelT<T>::embed_frames(const tokenizer::ChunkSequence& chunks) {
    return encode(tokens(chunks));
}

template class MaeModelT<float>;
template class MaeModelT<double>;
template TensorT<float> normalized_mse<float>(const TensorT<float>&,
                                              const tokenizer::ChunkSequence&,
                                              const tokenizer::MaskPlan&);
template TensorT<double> normalized_mse<double>(const TensorT<double>&,
                                                const tokenizer::ChunkSequence&,
                                                const tokenizer::MaskPlan&);

}  // namespace dasheng::model
