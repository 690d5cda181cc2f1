#include "steer/model.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace steer {

using json = nlohmann::json;

namespace {

constexpr char k_magic[8] = {'S', 'T', 'E', 'E', 'R', 'C', 'K', 'P'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

// out[rows] = W[rows, cols] * x[cols]
void matvec(const float * w, size_t rows, size_t cols, const double * x, double * out) {
    for (size_t r = 0; r < rows; ++r) {
        const float * wr = w + r * cols;
        double s = 0.0;
        for (size_t c = 0; c < cols; ++c) {
            s += static_cast<double>(wr[c]) * x[c];
        }
        out[r] = s;
    }
}

void rms_norm(const std::vector<double> & x, const float * weight, double eps, std::vector<double> & out) {
    double ss = 0.0;
    for (double v : x) {
        ss += v * v;
    }
    const double scale = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + eps);
    out.resize(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] * scale * static_cast<double>(weight[i]);
    }
}

double gelu(double x) {
    constexpr double k = 0.7978845608028654; // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

size_t product(const std::vector<size_t> & shape) {
    size_t n = 1;
    for (size_t s : shape) {
        n *= s;
    }
    return n;
}

std::string shape_str(const std::vector<size_t> & shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        s += (i ? "," : "") + std::to_string(shape[i]);
    }
    return s + "]";
}

json config_to_json(const ModelConfig & c) {
    return json{{"n_layers", c.n_layers}, {"d_model", c.d_model},       {"n_heads", c.n_heads},
                {"d_ff", c.d_ff},         {"vocab_size", c.vocab_size}, {"max_seq", c.max_seq},
                {"norm_eps", c.norm_eps}};
}

ModelConfig config_from_json(const json & j) {
    ModelConfig c;
    c.n_layers   = j.at("n_layers").get<size_t>();
    c.d_model    = j.at("d_model").get<size_t>();
    c.n_heads    = j.at("n_heads").get<size_t>();
    c.d_ff       = j.at("d_ff").get<size_t>();
    c.vocab_size = j.at("vocab_size").get<size_t>();
    c.max_seq    = j.at("max_seq").get<size_t>();
    c.norm_eps   = j.at("norm_eps").get<double>();
    return c;
}

void validate_injections(const ModelConfig & cfg, std::span<const Injection> injections) {
    for (const auto & inj : injections) {
        if (inj.direction.size() != cfg.d_model) {
            throw Error(ErrorCode::DimMismatch, "injection vector has dim " + std::to_string(inj.direction.size()) +
                                                    ", model d_model is " + std::to_string(cfg.d_model));
        }
        if (!std::isfinite(inj.lambda)) {
            throw Error(ErrorCode::InvalidArgument, "injection lambda must be finite");
        }
        if (inj.layers.empty()) {
            throw Error(ErrorCode::InvalidArgument, "injection needs at least one layer");
        }
        for (size_t l : inj.layers) {
            if (l > cfg.n_layers) {
                throw Error(ErrorCode::LayerOutOfRange, "injection layer " + std::to_string(l) + " outside [0, " +
                                                            std::to_string(cfg.n_layers) + "]");
            }
        }
    }
}

void check_tokens(const ModelConfig & cfg, std::span<const token_id> ids) {
    for (token_id t : ids) {
        if (t < 0 || static_cast<size_t>(t) >= cfg.vocab_size) {
            throw Error(ErrorCode::InvalidArgument, "token id " + std::to_string(t) + " outside vocabulary");
        }
    }
}

} // namespace

// ---------------------------------------------------------------------------
// Tokenizer

std::vector<token_id> tokenize(std::string_view text) {
    std::vector<token_id> ids;
    ids.reserve(text.size() + 1);
    ids.push_back(k_bos);
    for (char ch : text) {
        ids.push_back(static_cast<token_id>(static_cast<unsigned char>(ch)));
    }
    return ids;
}

std::string detokenize(std::span<const token_id> ids) {
    std::string out;
    out.reserve(ids.size());
    for (token_id t : ids) {
        if (t >= 0 && t < 256) {
            out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Config / checkpoint

void ModelConfig::validate() const {
    if (n_layers < 1 || d_model < 1 || n_heads < 1 || d_ff < 1 || vocab_size < 1 || max_seq < 1) {
        throw Error(ErrorCode::InvalidArgument, "model config counts must all be >= 1");
    }
    if (d_model % n_heads != 0) {
        throw Error(ErrorCode::InvalidArgument, "d_model must be divisible by n_heads");
    }
    if (!(norm_eps > 0) || !std::isfinite(norm_eps)) {
        throw Error(ErrorCode::InvalidArgument, "norm_eps must be positive");
    }
}

std::vector<std::pair<std::string, std::vector<size_t>>> required_tensors(const ModelConfig & c) {
    std::vector<std::pair<std::string, std::vector<size_t>>> out;
    out.push_back({"tok_emb.weight", {c.vocab_size, c.d_model}});
    out.push_back({"pos_emb.weight", {c.max_seq, c.d_model}});
    for (size_t l = 0; l < c.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        out.push_back({p + "attn_norm.weight", {c.d_model}});
        out.push_back({p + "attn.wq.weight", {c.d_model, c.d_model}});
        out.push_back({p + "attn.wk.weight", {c.d_model, c.d_model}});
        out.push_back({p + "attn.wv.weight", {c.d_model, c.d_model}});
        out.push_back({p + "attn.wo.weight", {c.d_model, c.d_model}});
        out.push_back({p + "ffn_norm.weight", {c.d_model}});
        out.push_back({p + "ffn.w1.weight", {c.d_ff, c.d_model}});
        out.push_back({p + "ffn.w2.weight", {c.d_model, c.d_ff}});
    }
    out.push_back({"final_norm.weight", {c.d_model}});
    out.push_back({"output.weight", {c.vocab_size, c.d_model}});
    return out;
}

Checkpoint::Checkpoint(ModelConfig config, std::map<std::string, Tensor> tensors)
    : config_(config), tensors_(std::move(tensors)) {
    config_.validate();
    for (const auto & [name, shape] : required_tensors(config_)) {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) {
            throw Error(ErrorCode::MissingTensor, name);
        }
        if (it->second.shape != shape || it->second.values.size() != product(shape)) {
            throw Error(ErrorCode::ShapeMismatch, name + ": expected " + shape_str(shape) + ", got " +
                                                      shape_str(it->second.shape));
        }
        for (float v : it->second.values) {
            if (!std::isfinite(v)) {
                throw Error(ErrorCode::NonFiniteWeight, name);
            }
        }
    }
    bind();
}

const Tensor & Checkpoint::tensor(const std::string & name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) {
        throw Error(ErrorCode::MissingTensor, name);
    }
    return it->second;
}

void Checkpoint::bind() {
    auto ptr = [&](const std::string & n) { return tensors_.at(n).values.data(); };
    tok_emb_ = ptr("tok_emb.weight");
    pos_emb_ = ptr("pos_emb.weight");
    final_norm_ = ptr("final_norm.weight");
    output_ = ptr("output.weight");
    layers_.clear();
    for (size_t l = 0; l < config_.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        layers_.push_back(Layer{
            ptr(p + "attn_norm.weight"), ptr(p + "attn.wq.weight"), ptr(p + "attn.wk.weight"),
            ptr(p + "attn.wv.weight"),   ptr(p + "attn.wo.weight"), ptr(p + "ffn_norm.weight"),
            ptr(p + "ffn.w1.weight"),    ptr(p + "ffn.w2.weight"),
        });
    }
}

Checkpoint load_checkpoint(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::Io, "checkpoint not found: " + path.string());
    }
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    auto parse_error = [&](size_t offset, const std::string & what) {
        return Error(ErrorCode::ParseError, path.string() + " at byte " + std::to_string(offset) + ": " + what);
    };

    if (bytes.size() < sizeof(k_magic) || std::memcmp(bytes.data(), k_magic, sizeof(k_magic)) != 0) {
        throw parse_error(0, "bad magic, expected STEERCKP");
    }
    if (bytes.size() < 16) {
        throw parse_error(8, "truncated header length");
    }
    uint64_t header_len = 0;
    std::memcpy(&header_len, bytes.data() + 8, sizeof(header_len));
    const size_t header_begin = 16;
    if (header_len > bytes.size() - header_begin) {
        throw parse_error(bytes.size(), "truncated header, need " + std::to_string(header_len) + " bytes from offset 16");
    }
    const size_t data_begin = header_begin + header_len;

    json header;
    try {
        header = json::parse(bytes.begin() + header_begin, bytes.begin() + static_cast<std::ptrdiff_t>(data_begin));
    } catch (const json::parse_error & e) {
        throw parse_error(header_begin + e.byte, std::string("header JSON: ") + e.what());
    }

    ModelConfig config;
    std::map<std::string, Tensor> tensors;
    try {
        config = config_from_json(header.at("config"));
        size_t expected_offset = 0;
        for (const auto & t : header.at("tensors")) {
            const auto name = t.at("name").get<std::string>();
            if (t.at("dtype").get<std::string>() != "f32") {
                throw parse_error(header_begin, name + ": only dtype f32 is supported");
            }
            Tensor tensor;
            tensor.shape = t.at("shape").get<std::vector<size_t>>();
            const auto offset = t.at("offset").get<size_t>();
            if (offset != expected_offset) {
                throw parse_error(data_begin + offset, name + ": tensors must be contiguous in header order");
            }
            const size_t n = product(tensor.shape);
            const size_t begin = data_begin + offset;
            if (n * sizeof(float) > bytes.size() - std::min(begin, bytes.size())) {
                throw parse_error(bytes.size(), "truncated data for tensor " + name + ", needs bytes [" +
                                                    std::to_string(begin) + ", " +
                                                    std::to_string(begin + n * sizeof(float)) + ")");
            }
            tensor.values.resize(n);
            std::memcpy(tensor.values.data(), bytes.data() + begin, n * sizeof(float));
            expected_offset += n * sizeof(float);
            tensors.emplace(name, std::move(tensor));
        }
    } catch (const json::exception & e) {
        throw parse_error(header_begin, std::string("header schema: ") + e.what());
    }
    return Checkpoint(config, std::move(tensors));
}

void save_checkpoint(const Checkpoint & ckpt, const std::filesystem::path & path, std::string_view manifest_json) {
    json header;
    header["config"] = config_to_json(ckpt.config());
    if (!manifest_json.empty()) {
        header["manifest"] = json::parse(manifest_json);
    }
    header["tensors"] = json::array();
    size_t offset = 0;
    const auto order = required_tensors(ckpt.config());
    for (const auto & [name, shape] : order) {
        header["tensors"].push_back({{"name", name}, {"shape", shape}, {"dtype", "f32"}, {"offset", offset}});
        offset += product(shape) * sizeof(float);
    }
    const std::string text = header.dump();
    const uint64_t len = text.size();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::Io, "cannot write " + path.string());
    }
    out.write(k_magic, sizeof(k_magic));
    out.write(reinterpret_cast<const char *>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto & [name, shape] : order) {
        const auto & v = ckpt.tensor(name).values;
        out.write(reinterpret_cast<const char *>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
    }
    if (!out) {
        throw Error(ErrorCode::Io, "write failed: " + path.string());
    }
}

// ---------------------------------------------------------------------------
// Session

Session::Session(const Checkpoint & ckpt, std::span<const Injection> injections)
    : ckpt_(&ckpt), injections_(injections.begin(), injections.end()) {
    const auto & cfg = ckpt.config();
    validate_injections(cfg, injections);
    site_deltas_.resize(cfg.n_layers + 1);
    for (const auto & inj : injections_) {
        if (inj.lambda == 0.0) {
            continue; // zero scaling leaves the pass untouched, bit for bit
        }
        std::vector<double> delta(inj.direction.size());
        for (size_t i = 0; i < delta.size(); ++i) {
            delta[i] = inj.lambda * inj.direction[i];
        }
        for (size_t l : inj.layers) {
            site_deltas_[l].push_back(delta);
        }
    }
    k_cache_.resize(cfg.n_layers);
    v_cache_.resize(cfg.n_layers);
}

void Session::capture_sites(std::vector<size_t> sites) {
    for (size_t s : sites) {
        if (s > ckpt_->config().n_layers) {
            throw Error(ErrorCode::LayerOutOfRange, "tap layer " + std::to_string(s) + " outside [0, " +
                                                        std::to_string(ckpt_->config().n_layers) + "]");
        }
    }
    sites_ = std::move(sites);
}

const std::vector<double> & Session::hidden(size_t site) const {
    auto it = captured_.find(site);
    if (it == captured_.end()) {
        throw Error(ErrorCode::InvalidArgument, "site " + std::to_string(site) + " was not captured");
    }
    return it->second;
}

std::vector<double> Session::step(token_id token, bool want_logits) {
    const auto & cfg = ckpt_->config();
    const size_t d = cfg.d_model;
    if (length_ >= cfg.max_seq) {
        throw Error(ErrorCode::SequenceTooLong, "sequence exceeds max_seq " + std::to_string(cfg.max_seq));
    }
    if (token < 0 || static_cast<size_t>(token) >= cfg.vocab_size) {
        throw Error(ErrorCode::InvalidArgument, "token id " + std::to_string(token) + " outside vocabulary");
    }
    const size_t pos = length_;

    auto apply_site = [&](size_t site, std::vector<double> & x) {
        for (const auto & delta : site_deltas_[site]) {
            for (size_t i = 0; i < d; ++i) {
                x[i] += delta[i];
            }
        }
        if (std::find(sites_.begin(), sites_.end(), site) != sites_.end()) {
            captured_[site] = x;
        }
    };

    std::vector<double> x(d);
    const float * te = ckpt_->tok_emb() + static_cast<size_t>(token) * d;
    const float * pe = ckpt_->pos_emb() + pos * d;
    for (size_t i = 0; i < d; ++i) {
        x[i] = static_cast<double>(te[i]) + static_cast<double>(pe[i]);
    }

    const size_t n_heads = cfg.n_heads;
    const size_t dh = d / n_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<double> h, q(d), k(d), v(d), att(d), proj(d), ff(cfg.d_ff), scores(pos + 1);

    for (size_t l = 0; l < cfg.n_layers; ++l) {
        const auto & w = ckpt_->layer(l);
        rms_norm(x, w.attn_norm, cfg.norm_eps, h);
        matvec(w.wq, d, d, h.data(), q.data());
        matvec(w.wk, d, d, h.data(), k.data());
        matvec(w.wv, d, d, h.data(), v.data());
        auto & kc = k_cache_[l];
        auto & vc = v_cache_[l];
        kc.insert(kc.end(), k.begin(), k.end());
        vc.insert(vc.end(), v.begin(), v.end());

        for (size_t head = 0; head < n_heads; ++head) {
            const size_t off = head * dh;
            double mx = -std::numeric_limits<double>::infinity();
            for (size_t t = 0; t <= pos; ++t) {
                double s = 0.0;
                for (size_t i = 0; i < dh; ++i) {
                    s += q[off + i] * kc[t * d + off + i];
                }
                scores[t] = s * inv_sqrt_dh;
                mx = std::max(mx, scores[t]);
            }
            double z = 0.0;
            for (size_t t = 0; t <= pos; ++t) {
                scores[t] = std::exp(scores[t] - mx);
                z += scores[t];
            }
            for (size_t i = 0; i < dh; ++i) {
                att[off + i] = 0.0;
            }
            for (size_t t = 0; t <= pos; ++t) {
                const double a = scores[t] / z;
                for (size_t i = 0; i < dh; ++i) {
                    att[off + i] += a * vc[t * d + off + i];
                }
            }
        }
        matvec(w.wo, d, d, att.data(), proj.data());
        for (size_t i = 0; i < d; ++i) {
            x[i] += proj[i];
        }

        rms_norm(x, w.ffn_norm, cfg.norm_eps, h);
        matvec(w.w1, cfg.d_ff, d, h.data(), ff.data());
        for (auto & f : ff) {
            f = gelu(f);
        }
        matvec(w.w2, d, cfg.d_ff, ff.data(), proj.data());
        for (size_t i = 0; i < d; ++i) {
            x[i] += proj[i];
        }
        apply_site(l, x);
    }

    std::vector<double> y;
    rms_norm(x, ckpt_->final_norm(), cfg.norm_eps, y);
    apply_site(cfg.n_layers, y);
    ++length_;

    if (!want_logits) {
        return {};
    }
    std::vector<double> logits(cfg.vocab_size);
    matvec(ckpt_->output(), cfg.vocab_size, d, y.data(), logits.data());
    return logits;
}

// ---------------------------------------------------------------------------
// Passes

ForwardResult forward(const Checkpoint & ckpt,
                      std::span<const token_id> ids,
                      std::span<const TapRequest> taps,
                      std::span<const Injection> injections) {
    const auto & cfg = ckpt.config();
    if (ids.size() > cfg.max_seq) {
        throw Error(ErrorCode::SequenceTooLong, std::to_string(ids.size()) + " tokens > max_seq " +
                                                    std::to_string(cfg.max_seq));
    }
    check_tokens(cfg, ids);
    std::vector<size_t> sites;
    for (const auto & t : taps) {
        if (t.layer > cfg.n_layers) {
            throw Error(ErrorCode::LayerOutOfRange, "tap layer " + std::to_string(t.layer));
        }
        if (t.position != k_last_position && (t.position < 0 || static_cast<size_t>(t.position) >= ids.size())) {
            throw Error(ErrorCode::InvalidArgument, "tap position " + std::to_string(t.position) + " out of range");
        }
        sites.push_back(t.layer);
    }

    Session session(ckpt, injections);
    session.capture_sites(sites);
    ForwardResult result;
    result.logits.reserve(ids.size());
    result.taps.resize(taps.size());
    for (size_t p = 0; p < ids.size(); ++p) {
        result.logits.push_back(session.step(ids[p], true));
        for (size_t i = 0; i < taps.size(); ++i) {
            const bool here = taps[i].position == k_last_position ? p + 1 == ids.size()
                                                                  : static_cast<size_t>(taps[i].position) == p;
            if (here) {
                result.taps[i] = Tap{taps[i].layer, p, session.hidden(taps[i].layer)};
            }
        }
    }
    return result;
}

std::vector<std::vector<double>> capture_last_hidden(const Checkpoint & ckpt,
                                                     std::span<const token_id> ids,
                                                     std::span<const size_t> sites,
                                                     std::span<const Injection> injections) {
    if (ids.empty()) {
        throw Error(ErrorCode::InvalidArgument, "cannot capture from an empty sequence");
    }
    if (ids.size() > ckpt.config().max_seq) {
        throw Error(ErrorCode::SequenceTooLong, std::to_string(ids.size()) + " tokens > max_seq " +
                                                    std::to_string(ckpt.config().max_seq));
    }
    Session session(ckpt, injections);
    session.capture_sites({sites.begin(), sites.end()});
    for (token_id t : ids) {
        session.step(t, false);
    }
    std::vector<std::vector<double>> out;
    out.reserve(sites.size());
    for (size_t s : sites) {
        out.push_back(session.hidden(s));
    }
    return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : logits) {
        mx = std::max(mx, v);
    }
    double z = 0.0;
    for (double v : logits) {
        z += std::exp(v - mx);
    }
    const double lse = mx + std::log(z);
    std::vector<double> out(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = logits[i] - lse;
    }
    return out;
}

namespace {

Session prime(const Checkpoint & ckpt, std::span<const token_id> prompt, std::span<const Injection> injections,
              size_t extra, std::vector<double> & last_logits) {
    const auto & cfg = ckpt.config();
    if (prompt.empty()) {
        throw Error(ErrorCode::InvalidArgument, "prompt must contain at least one token");
    }
    if (prompt.size() + extra > cfg.max_seq) {
        throw Error(ErrorCode::SequenceTooLong, std::to_string(prompt.size() + extra) + " tokens > max_seq " +
                                                    std::to_string(cfg.max_seq));
    }
    check_tokens(cfg, prompt);
    Session session(ckpt, injections);
    for (size_t i = 0; i < prompt.size(); ++i) {
        auto logits = session.step(prompt[i], i + 1 == prompt.size());
        if (i + 1 == prompt.size()) {
            last_logits = std::move(logits);
        }
    }
    return session;
}

bool is_stop(const Checkpoint & ckpt, token_id t) {
    return t == k_eos && static_cast<size_t>(k_eos) < ckpt.config().vocab_size;
}

struct Hypothesis {
    Session session;
    std::vector<token_id> tokens;
    double logprob = 0.0;
    bool done = false;
    std::vector<double> next; // log-probabilities for the next token
};

bool ranks_before(double lp_a, const std::vector<token_id> & a, double lp_b, const std::vector<token_id> & b) {
    if (lp_a != lp_b) {
        return lp_a > lp_b;
    }
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

std::vector<Generation> beam_search(const Checkpoint & ckpt, std::span<const token_id> prompt,
                                    const DecodeParams & params, std::span<const Injection> injections) {
    std::vector<double> logits;
    Session root = prime(ckpt, prompt, injections, params.max_new_tokens, logits);
    std::vector<Hypothesis> beams;
    beams.push_back(Hypothesis{std::move(root), {}, 0.0, false, log_softmax(logits)});

    for (size_t step = 0; step < params.max_new_tokens; ++step) {
        struct Candidate {
            size_t parent;
            token_id token; // -1 carries a finished hypothesis over unchanged
            double logprob;
            std::vector<token_id> tokens;
        };
        std::vector<Candidate> cands;
        for (size_t b = 0; b < beams.size(); ++b) {
            const auto & hyp = beams[b];
            if (hyp.done) {
                cands.push_back({b, -1, hyp.logprob, hyp.tokens});
                continue;
            }
            for (size_t t = 0; t < hyp.next.size(); ++t) {
                auto toks = hyp.tokens;
                toks.push_back(static_cast<token_id>(t));
                cands.push_back({b, static_cast<token_id>(t), hyp.logprob + hyp.next[t], std::move(toks)});
            }
        }
        const size_t keep = std::min(params.beam_k, cands.size());
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                          [](const Candidate & a, const Candidate & b) {
                              return ranks_before(a.logprob, a.tokens, b.logprob, b.tokens);
                          });
        cands.resize(keep);

        std::vector<Hypothesis> next_beams;
        next_beams.reserve(keep);
        for (auto & c : cands) {
            const auto & parent = beams[c.parent];
            if (c.token < 0) {
                next_beams.push_back(parent);
                continue;
            }
            Hypothesis h{parent.session, std::move(c.tokens), c.logprob, false, {}};
            const bool last = step + 1 == params.max_new_tokens;
            if (is_stop(ckpt, c.token)) {
                h.done = true;
            } else if (!last) {
                h.next = log_softmax(h.session.step(c.token, true));
            }
            next_beams.push_back(std::move(h));
        }
        beams = std::move(next_beams);
        if (std::all_of(beams.begin(), beams.end(), [](const Hypothesis & h) { return h.done; })) {
            break;
        }
    }

    std::vector<Generation> out;
    out.reserve(beams.size());
    for (auto & h : beams) {
        out.push_back(Generation{std::move(h.tokens), h.logprob});
    }
    std::stable_sort(out.begin(), out.end(), [](const Generation & a, const Generation & b) {
        return ranks_before(a.logprob, a.tokens, b.logprob, b.tokens);
    });
    return out;
}

} // namespace

std::vector<Generation> generate(const Checkpoint & ckpt,
                                 std::span<const token_id> prompt,
                                 const DecodeParams & params,
                                 std::span<const Injection> injections) {
    if (params.temperature != 0.0) {
        throw Error(ErrorCode::InvalidArgument, "only temperature 0 decoding is supported");
    }
    if (params.mode == DecodeMode::beam) {
        if (params.beam_k < 1) {
            throw Error(ErrorCode::InvalidArgument, "beam_k must be >= 1");
        }
        return beam_search(ckpt, prompt, params, injections);
    }

    std::vector<double> logits;
    Session session = prime(ckpt, prompt, injections, params.max_new_tokens, logits);
    Generation gen;
    for (size_t step = 0; step < params.max_new_tokens; ++step) {
        const auto lp = log_softmax(logits);
        // strict '>' keeps the lowest id on ties
        size_t best = 0;
        for (size_t t = 1; t < lp.size(); ++t) {
            if (lp[t] > lp[best]) {
                best = t;
            }
        }
        const auto tok = static_cast<token_id>(best);
        gen.tokens.push_back(tok);
        gen.logprob = gen.logprob + lp[best];
        if (is_stop(ckpt, tok) || step + 1 == params.max_new_tokens) {
            break;
        }
        logits = session.step(tok, true);
    }
    return {gen};
}

double sequence_logprob(const Checkpoint & ckpt,
                        std::span<const token_id> context,
                        std::span<const token_id> continuation,
                        std::span<const Injection> injections) {
    if (continuation.empty()) {
        throw Error(ErrorCode::EmptyContinuation, "continuation has no tokens");
    }
    check_tokens(ckpt.config(), continuation);
    std::vector<double> logits;
    Session session = prime(ckpt, context, injections, continuation.size(), logits);
    double total = 0.0;
    for (size_t i = 0; i < continuation.size(); ++i) {
        total = total + log_softmax(logits)[static_cast<size_t>(continuation[i])];
        if (i + 1 < continuation.size()) {
            logits = session.step(continuation[i], true);
        }
    }
    return total;
}

} // namespace steer
