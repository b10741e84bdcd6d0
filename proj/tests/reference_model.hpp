#pragma once

// Loop-based double-precision reference forward pass, written independently
// of the library's tensor/op machinery. Used as a second implementation to
// cross-check the model's encoder, decoder, and loss.

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dasheng/model.hpp"
#include "dasheng/tokenizer.hpp"

namespace refmodel {

struct Params {
    std::map<std::string, std::vector<double>> t;

    const std::vector<double>& at(const std::string& name) const {
        auto it = t.find(name);
        if (it == t.end()) {
            throw std::runtime_error("reference: missing param " + name);
        }
        return it->second;
    }
};

template <class T>
inline Params extract(dasheng::model::MaeModelT<T>& m) {
    Params p;
    for (auto& [name, tensor] : m.named_params()) {
        p.t[name] = std::vector<double>(tensor->data->begin(), tensor->data->end());
    }
    return p;
}

inline std::vector<double> ref_layernorm(const std::vector<double>& x,
                                         const std::vector<double>& g,
                                         const std::vector<double>& b, int rows, int d) {
    std::vector<double> y(x.size());
    for (int r = 0; r < rows; ++r) {
        double mean = 0.0;
        for (int j = 0; j < d; ++j) {
            mean += x[static_cast<std::size_t>(r) * d + j];
        }
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = x[static_cast<std::size_t>(r) * d + j] - mean;
            var += c * c;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + 1e-6);
        for (int j = 0; j < d; ++j) {
            y[static_cast<std::size_t>(r) * d + j] =
                (x[static_cast<std::size_t>(r) * d + j] - mean) * inv * g[j] + b[j];
        }
    }
    return y;
}

inline std::vector<double> ref_linear(const std::vector<double>& x,
                                      const std::vector<double>& w,
                                      const std::vector<double>& b, int rows, int din,
                                      int dout) {
    std::vector<double> y(static_cast<std::size_t>(rows) * dout);
    for (int r = 0; r < rows; ++r) {
        for (int o = 0; o < dout; ++o) {
            double s = b.empty() ? 0.0 : b[o];
            for (int i = 0; i < din; ++i) {
                s += x[static_cast<std::size_t>(r) * din + i] *
                     w[static_cast<std::size_t>(i) * dout + o];
            }
            y[static_cast<std::size_t>(r) * dout + o] = s;
        }
    }
    return y;
}

inline double ref_gelu(double v) {
    return v * 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
}

inline std::vector<double> ref_block(const Params& p, const std::string& prefix,
                                     const std::vector<double>& x, int rows, int d,
                                     int heads, int mlp) {
    const int dh = d / heads;
    auto h = ref_layernorm(x, p.at(prefix + ".ln1.g"), p.at(prefix + ".ln1.b"), rows, d);
    auto q = ref_linear(h, p.at(prefix + ".attn.wq"), p.at(prefix + ".attn.bq"), rows, d, d);
    auto k = ref_linear(h, p.at(prefix + ".attn.wk"), p.at(prefix + ".attn.bk"), rows, d, d);
    auto v = ref_linear(h, p.at(prefix + ".attn.wv"), p.at(prefix + ".attn.bv"), rows, d, d);

    std::vector<double> ctx(static_cast<std::size_t>(rows) * d, 0.0);
    std::vector<double> scores(static_cast<std::size_t>(rows));
    for (int hd = 0; hd < heads; ++hd) {
        const int off = hd * dh;
        for (int qi = 0; qi < rows; ++qi) {
            double mx = -1e300;
            for (int ki = 0; ki < rows; ++ki) {
                double s = 0.0;
                for (int j = 0; j < dh; ++j) {
                    s += q[static_cast<std::size_t>(qi) * d + off + j] *
                         k[static_cast<std::size_t>(ki) * d + off + j];
                }
                s /= std::sqrt(static_cast<double>(dh));
                scores[static_cast<std::size_t>(ki)] = s;
                mx = std::max(mx, s);
            }
            double denom = 0.0;
            for (int ki = 0; ki < rows; ++ki) {
                scores[static_cast<std::size_t>(ki)] =
                    std::exp(scores[static_cast<std::size_t>(ki)] - mx);
                denom += scores[static_cast<std::size_t>(ki)];
            }
            for (int ki = 0; ki < rows; ++ki) {
                const double a = scores[static_cast<std::size_t>(ki)] / denom;
                for (int j = 0; j < dh; ++j) {
                    ctx[static_cast<std::size_t>(qi) * d + off + j] +=
                        a * v[static_cast<std::size_t>(ki) * d + off + j];
                }
            }
        }
    }
    auto attn = ref_linear(ctx, p.at(prefix + ".attn.wo"), p.at(prefix + ".attn.bo"),
                           rows, d, d);
    std::vector<double> x1(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        x1[i] = x[i] + attn[i];
    }

    auto h2 = ref_layernorm(x1, p.at(prefix + ".ln2.g"), p.at(prefix + ".ln2.b"), rows, d);
    auto inner = ref_linear(h2, p.at(prefix + ".mlp.w1"), p.at(prefix + ".mlp.b1"),
                            rows, d, mlp);
    for (auto& val : inner) {
        val = ref_gelu(val);
    }
    auto out = ref_linear(inner, p.at(prefix + ".mlp.w2"), p.at(prefix + ".mlp.b2"),
                          rows, mlp, d);
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] += x1[i];
    }
    return out;
}

// chunks -> projected tokens with positions (rows 0..n of the table).
inline std::vector<double> ref_tokens(const Params& p,
                                      const dasheng::model::ModelConfig& cfg,
                                      const dasheng::tokenizer::ChunkSequence& chunks) {
    std::vector<double> x(chunks.values.begin(), chunks.values.end());
    auto y = ref_linear(x, p.at("embed.w"), p.at("embed.b"), chunks.n, cfg.chunk_dim(),
                        cfg.embed_dim);
    const auto& pos = p.at("pos.enc");
    for (int i = 0; i < chunks.n; ++i) {
        for (int j = 0; j < cfg.embed_dim; ++j) {
            y[static_cast<std::size_t>(i) * cfg.embed_dim + j] +=
                pos[static_cast<std::size_t>(i) * cfg.embed_dim + j];
        }
    }
    return y;
}

inline std::vector<double> ref_encode(const Params& p,
                                      const dasheng::model::ModelConfig& cfg,
                                      std::vector<double> x, int rows) {
    for (int i = 0; i < cfg.depth; ++i) {
        x = ref_block(p, "enc." + std::to_string(i), x, rows, cfg.embed_dim,
                      cfg.num_heads, cfg.mlp_dim);
    }
    return ref_layernorm(x, p.at("enc.ln.g"), p.at("enc.ln.b"), rows, cfg.embed_dim);
}

inline std::vector<double> ref_decode(const Params& p,
                                      const dasheng::model::ModelConfig& cfg,
                                      const std::vector<double>& enc_out,
                                      const dasheng::tokenizer::MaskPlan& plan) {
    const int n = plan.n();
    const int dd = cfg.dec_embed_dim;
    const int k = static_cast<int>(plan.kept_indices.size());
    auto e = ref_linear(enc_out, p.at("dec.proj.w"), p.at("dec.proj.b"), k,
                        cfg.embed_dim, dd);
    const auto& mask_tok = p.at("dec.mask_token");
    const auto& pos = p.at("pos.dec");
    std::vector<double> x(static_cast<std::size_t>(n) * dd);
    std::size_t ki = 0;
    for (int r = 0; r < n; ++r) {
        for (int j = 0; j < dd; ++j) {
            const double base = (ki < plan.kept_indices.size() &&
                                 plan.kept_indices[ki] == r)
                                    ? e[ki * static_cast<std::size_t>(dd) + j]
                                    : mask_tok[static_cast<std::size_t>(j)];
            x[static_cast<std::size_t>(r) * dd + j] =
                base + pos[static_cast<std::size_t>(r) * dd + j];
        }
        if (ki < plan.kept_indices.size() && plan.kept_indices[ki] == r) {
            ++ki;
        }
    }
    for (int i = 0; i < cfg.dec_depth; ++i) {
        x = ref_block(p, "dec." + std::to_string(i), x, n, dd, cfg.dec_num_heads,
                      cfg.dec_mlp_dim);
    }
    x = ref_layernorm(x, p.at("dec.ln.g"), p.at("dec.ln.b"), n, dd);
    return ref_linear(x, p.at("head.w"), p.at("head.b"), n, dd, cfg.chunk_dim());
}

inline double ref_loss(const Params& p, const dasheng::model::ModelConfig& cfg,
                       const dasheng::tokenizer::ChunkSequence& chunks,
                       const dasheng::tokenizer::MaskPlan& plan) {
    auto all = ref_tokens(p, cfg, chunks);
    const int k = static_cast<int>(plan.kept_indices.size());
    std::vector<double> kept(static_cast<std::size_t>(k) * cfg.embed_dim);
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < cfg.embed_dim; ++j) {
            kept[static_cast<std::size_t>(i) * cfg.embed_dim + j] =
                all[static_cast<std::size_t>(plan.kept_indices[static_cast<std::size_t>(i)]) *
                        cfg.embed_dim +
                    j];
        }
    }
    auto enc = ref_encode(p, cfg, std::move(kept), k);
    auto pred = ref_decode(p, cfg, enc, plan);

    const int c = cfg.chunk_dim();
    double total = 0.0;
    for (int row : plan.masked_indices) {
        double mean = 0.0;
        for (int j = 0; j < c; ++j) {
            mean += chunks.at(row, j);
        }
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            const double d = chunks.at(row, j) - mean;
            var += d * d;
        }
        var /= c;
        const double inv = 1.0 / std::sqrt(var + 1e-6);
        for (int j = 0; j < c; ++j) {
            const double t_hat = (chunks.at(row, j) - mean) * inv;
            const double d = pred[static_cast<std::size_t>(row) * c + j] - t_hat;
            total += d * d;
        }
    }
    return total / (static_cast<double>(plan.masked_indices.size()) * c);
}

}  // namespace refmodel
