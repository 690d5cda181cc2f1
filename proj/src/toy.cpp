#include "steer/toy.hpp"

#include <cmath>
#include <map>
#include <random>

namespace steer::toy {

namespace {

std::map<std::string, Tensor> zero_tensors(const ModelConfig & config) {
    std::map<std::string, Tensor> tensors;
    for (const auto & [name, shape] : required_tensors(config)) {
        size_t n = 1;
        for (size_t s : shape) {
            n *= s;
        }
        const bool is_norm = name.ends_with("norm.weight");
        tensors.emplace(name, Tensor{shape, std::vector<float>(n, is_norm ? 1.0f : 0.0f)});
    }
    return tensors;
}

} // namespace

Checkpoint random_checkpoint(const ModelConfig & config, uint64_t seed) {
    config.validate();
    auto tensors = zero_tensors(config);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    // walk in canonical order so the stream does not depend on map ordering
    for (const auto & [name, shape] : required_tensors(config)) {
        auto & t = tensors.at(name);
        if (name.ends_with("norm.weight")) {
            continue;
        }
        double scale = 1.0 / std::sqrt(static_cast<double>(shape.back()));
        if (name == "tok_emb.weight") {
            scale = 1.0;
        } else if (name == "pos_emb.weight") {
            scale = 0.1;
        }
        for (auto & v : t.values) {
            v = static_cast<float>(scale * normal(rng));
        }
    }
    return Checkpoint(config, std::move(tensors));
}

Checkpoint constant_logit_checkpoint(const ModelConfig & config) {
    config.validate();
    return Checkpoint(config, zero_tensors(config));
}

Checkpoint planted_letter_checkpoint(uint64_t seed) {
    ModelConfig cfg;
    cfg.n_layers = 4;
    cfg.d_model = 32;
    cfg.n_heads = 4;
    cfg.d_ff = 32;
    cfg.vocab_size = k_byte_vocab;
    cfg.max_seq = 1024;
    auto tensors = zero_tensors(cfg);
    const size_t d = cfg.d_model;

    enum : size_t { ans_a = 0, end_feat = 3, constant = 4, gate = 5, raw_a = 6, noise0 = 9, context = 31 };

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 0.3);
    auto & emb = tensors.at("tok_emb.weight").values;
    for (size_t tok = 0; tok < cfg.vocab_size; ++tok) {
        float * e = emb.data() + tok * d;
        e[constant] = 1.0f;
        const bool letter = tok == 'a' || tok == 'b' || tok == 'c';
        for (size_t i = noise0; i < context; ++i) {
            const double z = normal(rng);
            e[i] = letter ? 0.0f : static_cast<float>(z);
        }
        if (letter) {
            e[gate] = 1.0f;
            e[raw_a + (tok - 'a')] = 1.0f;
            e[end_feat] = 3.0f;
        }
    }
    // the answer cue leans towards 'b'
    float * colon = emb.data() + static_cast<size_t>(':') * d;
    colon[ans_a + 0] = 0.2f;
    colon[ans_a + 1] = 0.6f;
    colon[ans_a + 2] = 0.1f;

    // block 2 MLP: unit j fires only for letter tokens (raw_j + gate - 1.5 * const)
    // and copies the letter into its answer dimension
    auto & w1 = tensors.at("layers.2.ffn.w1.weight").values; // [d_ff, d]
    auto & w2 = tensors.at("layers.2.ffn.w2.weight").values; // [d, d_ff]
    for (size_t j = 0; j < 3; ++j) {
        float * row = w1.data() + j * d;
        row[raw_a + j] = 4.0f;
        row[gate] = 4.0f;
        row[constant] = -6.0f;
        w2[(ans_a + j) * cfg.d_ff + j] = 1.0f;
    }

    // block 2 attention: uniform over the prefix (zero queries and keys); head 0
    // averages the a-minus-b letter identity into the context dimension
    auto & wv = tensors.at("layers.2.attn.wv.weight").values;
    auto & wo = tensors.at("layers.2.attn.wo.weight").values;
    wv[0 * d + raw_a + 0] = 1.0f;
    wv[0 * d + raw_a + 1] = -1.0f;
    wo[context * d + 0] = 1.0f;

    auto & out = tensors.at("output.weight").values; // [vocab, d]
    for (size_t j = 0; j < 3; ++j) {
        out[('a' + j) * d + ans_a + j] = 5.0f;
    }
    out[static_cast<size_t>(k_eos) * d + end_feat] = 10.0f;

    return Checkpoint(cfg, std::move(tensors));
}

} // namespace steer::toy
