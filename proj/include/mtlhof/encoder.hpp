#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mtlhof/common.hpp"
#include "mtlhof/tensor.hpp"

namespace mtlhof {

// ---------------------------------------------------------------------------
// Miniature post-layer-norm transformer encoder: token + position embeddings,
// multi-head self-attention with additive key masking, GELU feed-forward
// blocks, and a tanh-affine pooler over the first token.
// ---------------------------------------------------------------------------

struct EncoderConfig {
    int num_layers = 2;
    int hidden_dim = 64;
    int num_heads = 4;
    int ffn_dim = 128;
    int vocab_size = 0;
    int max_len = 64;
    float dropout_rate = 0.1f;
    std::uint64_t seed = 42;

    void validate() const {
        if (num_layers <= 0 || hidden_dim <= 0 || num_heads <= 0 || ffn_dim <= 0 ||
            vocab_size <= 0 || max_len <= 0)
            throw ConfigError("encoder config dimensions must be positive");
        if (hidden_dim % num_heads != 0)
            throw ConfigError("hidden_dim " + std::to_string(hidden_dim) +
                              " is not divisible by num_heads " + std::to_string(num_heads));
        if (dropout_rate < 0.0f || dropout_rate >= 1.0f)
            throw ConfigError("dropout_rate must be in [0,1)");
    }
};

struct EncoderParams {
    Tensor tok_emb;  // vocab_size x hidden
    Tensor pos_emb;  // max_len x hidden

    struct Layer {
        Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // hidden x hidden / hidden
        Tensor ln_attn_scale, ln_attn_shift;
        Tensor ffn_w1, ffn_b1;  // hidden x ffn / ffn
        Tensor ffn_w2, ffn_b2;  // ffn x hidden / hidden
        Tensor ln_ffn_scale, ln_ffn_shift;
    };
    std::vector<Layer> layers;

    Tensor pooler_w, pooler_b;  // hidden x hidden / hidden

    std::vector<std::pair<std::string, Tensor>> named() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.emplace_back("tok_emb", tok_emb);
        out.emplace_back("pos_emb", pos_emb);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& L = layers[l];
            std::string p = "layer" + std::to_string(l) + ".";
            out.emplace_back(p + "attn.wq", L.wq);
            out.emplace_back(p + "attn.bq", L.bq);
            out.emplace_back(p + "attn.wk", L.wk);
            out.emplace_back(p + "attn.bk", L.bk);
            out.emplace_back(p + "attn.wv", L.wv);
            out.emplace_back(p + "attn.bv", L.bv);
            out.emplace_back(p + "attn.wo", L.wo);
            out.emplace_back(p + "attn.bo", L.bo);
            out.emplace_back(p + "ln_attn.scale", L.ln_attn_scale);
            out.emplace_back(p + "ln_attn.shift", L.ln_attn_shift);
            out.emplace_back(p + "ffn.w1", L.ffn_w1);
            out.emplace_back(p + "ffn.b1", L.ffn_b1);
            out.emplace_back(p + "ffn.w2", L.ffn_w2);
            out.emplace_back(p + "ffn.b2", L.ffn_b2);
            out.emplace_back(p + "ln_ffn.scale", L.ln_ffn_scale);
            out.emplace_back(p + "ln_ffn.shift", L.ln_ffn_shift);
        }
        out.emplace_back("pooler.w", pooler_w);
        out.emplace_back("pooler.b", pooler_b);
        return out;
    }
};

// Weights ~ Normal(0, 0.02), layer-norm scales 1, biases and shifts 0;
// deterministic for a given config seed.
inline EncoderParams init_params(const EncoderConfig& cfg) {
    cfg.validate();
    constexpr double kInitStd = 0.02;
    Rng rng(mix_seed(cfg.seed, "encoder-init"));
    int h = cfg.hidden_dim, f = cfg.ffn_dim;

    EncoderParams p;
    p.tok_emb = Tensor::randn({cfg.vocab_size, h}, rng, kInitStd, true);
    p.pos_emb = Tensor::randn({cfg.max_len, h}, rng, kInitStd, true);
    for (int l = 0; l < cfg.num_layers; ++l) {
        EncoderParams::Layer L;
        L.wq = Tensor::randn({h, h}, rng, kInitStd, true);
        L.bq = Tensor::zeros({h}, true);
        L.wk = Tensor::randn({h, h}, rng, kInitStd, true);
        L.bk = Tensor::zeros({h}, true);
        L.wv = Tensor::randn({h, h}, rng, kInitStd, true);
        L.bv = Tensor::zeros({h}, true);
        L.wo = Tensor::randn({h, h}, rng, kInitStd, true);
        L.bo = Tensor::zeros({h}, true);
        L.ln_attn_scale = Tensor::full({h}, 1.0f, true);
        L.ln_attn_shift = Tensor::zeros({h}, true);
        L.ffn_w1 = Tensor::randn({h, f}, rng, kInitStd, true);
        L.ffn_b1 = Tensor::zeros({f}, true);
        L.ffn_w2 = Tensor::randn({f, h}, rng, kInitStd, true);
        L.ffn_b2 = Tensor::zeros({h}, true);
        L.ln_ffn_scale = Tensor::full({h}, 1.0f, true);
        L.ln_ffn_shift = Tensor::zeros({h}, true);
        p.layers.push_back(std::move(L));
    }
    p.pooler_w = Tensor::randn({h, h}, rng, kInitStd, true);
    p.pooler_b = Tensor::zeros({h}, true);
    return p;
}

struct TokenBatch {
    int batch_size = 0;
    int seq_len = 0;
    std::vector<int> ids;   // batch_size * seq_len, row-major
    std::vector<int> mask;  // same layout, 1 = real token
};

struct EncoderOutput {
    Tensor sequence;  // batch x seq_len x hidden
    Tensor pooled;    // batch x hidden
};

namespace enc_detail {

// Additive attention bias (batch*heads, L, L): 0 at real key positions,
// -1e9 at padded ones, replicated over heads and query positions.
inline Tensor attention_bias(const TokenBatch& batch, int num_heads) {
    int b = batch.batch_size, l = batch.seq_len;
    std::vector<float> bias(static_cast<std::size_t>(b) * num_heads * l * l);
    std::size_t pos = 0;
    for (int bi = 0; bi < b; ++bi) {
        for (int head = 0; head < num_heads; ++head) {
            for (int q = 0; q < l; ++q) {
                for (int key = 0; key < l; ++key) {
                    bias[pos++] =
                        batch.mask[static_cast<std::size_t>(bi) * l + key] ? 0.0f : -1e9f;
                }
            }
        }
    }
    return Tensor({b * num_heads, l, l}, std::move(bias), false);
}

}  // namespace enc_detail

// Runs the encoder over a token batch. In train mode, dropout sites draw
// deterministic masks from dropout_seed; in eval mode dropout is disabled and
// the output is a pure function of (params, batch).
inline EncoderOutput encode_batch(const EncoderConfig& cfg, const EncoderParams& params,
                                  const TokenBatch& batch, bool train_mode,
                                  Tape* tape = nullptr, std::uint64_t dropout_seed = 0) {
    int b = batch.batch_size, l = batch.seq_len, h = cfg.hidden_dim;
    int heads = cfg.num_heads, dh = h / heads;
    if (b <= 0 || l <= 0 ||
        batch.ids.size() != static_cast<std::size_t>(b) * l ||
        batch.mask.size() != batch.ids.size())
        throw ContractError("encode_batch: inconsistent batch dimensions");
    if (l > cfg.max_len)
        throw LengthError("encode_batch: sequence length " + std::to_string(l) +
                          " exceeds max_len " + std::to_string(cfg.max_len));
    for (int id : batch.ids)
        if (id < 0 || id >= cfg.vocab_size)
            throw VocabError("encode_batch: token id " + std::to_string(id) +
                             " outside vocabulary of size " + std::to_string(cfg.vocab_size));

    int drop_site = 0;
    auto drop = [&](const Tensor& t) {
        if (!train_mode || cfg.dropout_rate <= 0.0f) return t;
        return dropout(tape, t, cfg.dropout_rate,
                       mix_seed(dropout_seed, "dropout-site", static_cast<std::uint64_t>(drop_site++)));
    };

    // embeddings
    std::vector<int> positions(static_cast<std::size_t>(b) * l);
    for (int bi = 0; bi < b; ++bi)
        for (int t = 0; t < l; ++t) positions[static_cast<std::size_t>(bi) * l + t] = t;
    Tensor x = add(tape, embedding_lookup(tape, params.tok_emb, batch.ids, {b, l}),
                   embedding_lookup(tape, params.pos_emb, positions, {b, l}));
    x = drop(x);
    Tensor x2d = reshape(tape, x, {b * l, h});

    Tensor attn_bias = enc_detail::attention_bias(batch, heads);
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    auto split_heads = [&](const Tensor& proj) {
        // (b*l, h) -> (b, l, heads, dh) -> (b, heads, l, dh) -> (b*heads, l, dh)
        Tensor t4 = reshape(tape, proj, {b, l, heads, dh});
        Tensor tt = transpose(tape, t4, {0, 2, 1, 3});
        return reshape(tape, tt, {b * heads, l, dh});
    };

    for (const auto& layer : params.layers) {
        Tensor q = split_heads(add(tape, matmul(tape, x2d, layer.wq), layer.bq));
        Tensor k = split_heads(add(tape, matmul(tape, x2d, layer.wk), layer.bk));
        Tensor v = split_heads(add(tape, matmul(tape, x2d, layer.wv), layer.bv));

        Tensor scores = scalar_mul(tape, matmul(tape, q, transpose(tape, k, {0, 2, 1})), scale);
        Tensor probs = drop(softmax(tape, scores, &attn_bias));
        Tensor ctx = matmul(tape, probs, v);  // (b*heads, l, dh)
        Tensor merged = reshape(
            tape, transpose(tape, reshape(tape, ctx, {b, heads, l, dh}), {0, 2, 1, 3}),
            {b * l, h});
        Tensor attn_out = drop(add(tape, matmul(tape, merged, layer.wo), layer.bo));
        x2d = layer_norm(tape, add(tape, x2d, attn_out), layer.ln_attn_scale,
                         layer.ln_attn_shift);

        Tensor hidden = gelu(tape, add(tape, matmul(tape, x2d, layer.ffn_w1), layer.ffn_b1));
        Tensor ffn_out = drop(add(tape, matmul(tape, hidden, layer.ffn_w2), layer.ffn_b2));
        x2d = layer_norm(tape, add(tape, x2d, ffn_out), layer.ln_ffn_scale,
                         layer.ln_ffn_shift);
    }

    // pooled = tanh(pooler(first-token representation))
    std::vector<int> first_rows(static_cast<std::size_t>(b));
    for (int bi = 0; bi < b; ++bi) first_rows[static_cast<std::size_t>(bi)] = bi * l;
    Tensor first = embedding_lookup(tape, x2d, first_rows, {b});
    Tensor pooled = tanh(tape, add(tape, matmul(tape, first, params.pooler_w), params.pooler_b));

    EncoderOutput out;
    out.sequence = reshape(tape, x2d, {b, l, h});
    out.pooled = pooled;
    return out;
}

}  // namespace mtlhof
