#pragma once

#include "steer/error.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace steer {

using token_id = int32_t;

constexpr token_id k_bos = 256;
constexpr token_id k_eos = 257;
constexpr size_t k_byte_vocab = 258;

// Byte-level tokenizer: ids 0-255 are raw bytes, BOS is prepended.
std::vector<token_id> tokenize(std::string_view text);
// Drops BOS/EOS and any id outside the byte range.
std::string detokenize(std::span<const token_id> ids);

struct ModelConfig {
    size_t n_layers   = 4;
    size_t d_model    = 64;
    size_t n_heads    = 4;
    size_t d_ff       = 128;
    size_t vocab_size = k_byte_vocab;
    size_t max_seq    = 1024;
    double norm_eps   = 1e-5;

    void validate() const;
    bool operator==(const ModelConfig &) const = default;
};

struct Tensor {
    std::vector<size_t> shape;
    std::vector<float> values;
};

// Immutable weights plus config. Not copyable: layer views point into the tensor map.
class Checkpoint {
public:
    // Validates that every tensor the config requires is present, shaped and finite.
    Checkpoint(ModelConfig config, std::map<std::string, Tensor> tensors);

    Checkpoint(const Checkpoint &) = delete;
    Checkpoint & operator=(const Checkpoint &) = delete;
    Checkpoint(Checkpoint &&) = default;
    Checkpoint & operator=(Checkpoint &&) = default;

    const ModelConfig & config() const noexcept { return config_; }
    const std::map<std::string, Tensor> & tensors() const noexcept { return tensors_; }
    const Tensor & tensor(const std::string & name) const;

    struct Layer {
        const float * attn_norm;
        const float * wq;
        const float * wk;
        const float * wv;
        const float * wo;
        const float * ffn_norm;
        const float * w1; // [d_ff, d_model]
        const float * w2; // [d_model, d_ff]
    };

    const float * tok_emb() const noexcept { return tok_emb_; }
    const float * pos_emb() const noexcept { return pos_emb_; }
    const float * final_norm() const noexcept { return final_norm_; }
    const float * output() const noexcept { return output_; }
    const Layer & layer(size_t i) const { return layers_.at(i); }

private:
    void bind();

    ModelConfig config_;
    std::map<std::string, Tensor> tensors_;
    std::vector<Layer> layers_;
    const float * tok_emb_ = nullptr;
    const float * pos_emb_ = nullptr;
    const float * final_norm_ = nullptr;
    const float * output_ = nullptr;
};

// (name, shape) of every tensor a config requires, in canonical file order.
std::vector<std::pair<std::string, std::vector<size_t>>> required_tensors(const ModelConfig & config);

Checkpoint load_checkpoint(const std::filesystem::path & path);
// `manifest_json`, when given, is stored under the header's "manifest" key.
void save_checkpoint(const Checkpoint & checkpoint, const std::filesystem::path & path,
                     std::string_view manifest_json = {});

// Residual-stream sites are numbered 0..n_layers: site l < n_layers is the output
// of block l (after its residual adds), site n_layers is the final-norm output
// that feeds the unembedding.
constexpr int k_last_position = -1;

struct TapRequest {
    size_t layer = 0;
    int position = k_last_position;
};

struct Tap {
    size_t layer = 0;
    size_t position = 0;
    std::vector<double> hidden;
};

// Adds lambda * direction to every position's hidden state at each listed site.
struct Injection {
    std::vector<double> direction;
    std::vector<size_t> layers;
    double lambda = 0.0;
};

struct ForwardResult {
    std::vector<std::vector<double>> logits; // one row per position
    std::vector<Tap> taps;                   // in request order
};

ForwardResult forward(const Checkpoint & ckpt,
                      std::span<const token_id> ids,
                      std::span<const TapRequest> taps = {},
                      std::span<const Injection> injections = {});

// Incremental decoder state: KV cache plus the current sequence. Copyable, so
// beam hypotheses can fork it. `forward` runs the same per-position path, which
// keeps cached and uncached results bit-identical.
class Session {
public:
    Session(const Checkpoint & ckpt, std::span<const Injection> injections);

    // Appends one token. Returns logits for it when `want_logits`, otherwise empty.
    std::vector<double> step(token_id token, bool want_logits = true);

    // Sites whose residual is kept after each step (see `hidden`).
    void capture_sites(std::vector<size_t> sites);
    // Hidden state at `site` for the most recent step; requires capture_sites.
    const std::vector<double> & hidden(size_t site) const;

    size_t length() const noexcept { return length_; }
    const Checkpoint & checkpoint() const noexcept { return *ckpt_; }

private:
    const Checkpoint * ckpt_;
    std::vector<Injection> injections_;
    std::vector<std::vector<std::vector<double>>> site_deltas_; // per site, list of lambda*w
    std::vector<std::vector<double>> k_cache_;                  // per layer, length x d_model
    std::vector<std::vector<double>> v_cache_;
    std::vector<size_t> sites_;
    std::map<size_t, std::vector<double>> captured_;
    size_t length_ = 0;
};

// Last-position residual at each requested site for one prompt.
std::vector<std::vector<double>> capture_last_hidden(const Checkpoint & ckpt,
                                                     std::span<const token_id> ids,
                                                     std::span<const size_t> sites,
                                                     std::span<const Injection> injections = {});

std::vector<double> log_softmax(std::span<const double> logits);

enum class DecodeMode { greedy, beam };

struct DecodeParams {
    DecodeMode mode = DecodeMode::greedy;
    size_t beam_k = 1;
    size_t max_new_tokens = 16;
    double temperature = 0.0;
};

struct Generation {
    std::vector<token_id> tokens; // continuation only; includes EOS when emitted
    double logprob = 0.0;
};

// Greedy returns one sequence; beam returns up to k sorted by logprob
// descending, ties broken by lexicographic token order.
std::vector<Generation> generate(const Checkpoint & ckpt,
                                 std::span<const token_id> prompt,
                                 const DecodeParams & params,
                                 std::span<const Injection> injections = {});

// Sum of log-probabilities of `continuation` given everything before it.
double sequence_logprob(const Checkpoint & ckpt,
                        std::span<const token_id> context,
                        std::span<const token_id> continuation,
                        std::span<const Injection> injections = {});

inline double perplexity(double logprob, size_t n_tokens) {
    return std::exp(-logprob / static_cast<double>(n_tokens));
}

} // namespace steer
