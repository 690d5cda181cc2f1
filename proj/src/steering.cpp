#include "steer/steering.hpp"

#include "steer/manifest.hpp"
#include "steer/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace steer {

using json = nlohmann::json;

bool is_bias_axis(std::string_view axis) {
    return std::find(k_bias_axes.begin(), k_bias_axes.end(), axis) != k_bias_axes.end();
}

std::string stimulus_prefix(std::string_view axis) {
    return "Consider the bias related to " + std::string(axis) + " in the following.\n";
}

std::vector<ContrastivePair> load_pairs(const std::filesystem::path & path, bool stimulus) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open pairs file " + path.string());
    }
    std::vector<ContrastivePair> pairs;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        auto malformed = [&](const std::string & why) {
            return Error(ErrorCode::MalformedRecord, path.string() + ":" + std::to_string(line_no) + ": " + why);
        };
        ContrastivePair p;
        try {
            const auto j = json::parse(line);
            p.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
            p.axis = j.at("axis").get<std::string>();
            p.positive_text = j.at("positive").get<std::string>();
            p.negative_text = j.at("negative").get<std::string>();
        } catch (const json::exception & e) {
            throw malformed(e.what());
        }
        if (!is_bias_axis(p.axis)) {
            throw malformed("unknown axis '" + p.axis + "'");
        }
        if (p.positive_text == p.negative_text) {
            throw malformed("positive and negative texts are identical");
        }
        if (stimulus) {
            const auto prefix = stimulus_prefix(p.axis);
            p.positive_text = prefix + p.positive_text;
            p.negative_text = prefix + p.negative_text;
            p.stimulus_applied = true;
        }
        pairs.push_back(std::move(p));
    }
    if (pairs.empty()) {
        throw Error(ErrorCode::EmptyDataset, "no pairs in " + path.string());
    }
    return pairs;
}

std::string pairs_digest(const std::vector<ContrastivePair> & pairs) {
    json j = json::array();
    for (const auto & p : pairs) {
        j.push_back({p.id, p.axis, p.positive_text, p.negative_text});
    }
    return sha256_hex(j.dump());
}

// ---------------------------------------------------------------------------
// Capture

CaptureResult difference_matrix(size_t layer, const Matrix & positive, const Matrix & negative, bool normalize) {
    if (positive.rows() != negative.rows() || positive.cols() != negative.cols()) {
        throw Error(ErrorCode::DimMismatch, "positive and negative activations disagree in shape");
    }
    CaptureResult out{layer, Matrix(positive.rows(), positive.cols()), {}};
    for (size_t r = 0; r < positive.rows(); ++r) {
        const auto hp = positive.row(r);
        const auto hn = negative.row(r);
        const double np = normalize ? norm2(hp) : 1.0;
        const double nn = normalize ? norm2(hn) : 1.0;
        auto row = out.diffs.row(r);
        for (size_t c = 0; c < row.size(); ++c) {
            const double a = np > 0 ? hp[c] / np : 0.0;
            const double b = nn > 0 ? hn[c] / nn : 0.0;
            row[c] = a - b;
        }
        if (norm2(row) < 1e-12) {
            out.degenerate_rows.push_back(r);
        }
    }
    return out;
}

std::vector<CaptureResult> capture_differences(const Checkpoint & ckpt, const std::vector<ContrastivePair> & pairs,
                                               std::span<const size_t> layers, const CaptureOptions & opts) {
    if (pairs.empty()) {
        throw Error(ErrorCode::EmptyDataset, "no pairs to capture");
    }
    const size_t n_layers = ckpt.config().n_layers;
    for (size_t l : layers) {
        if (l > n_layers) {
            throw Error(ErrorCode::LayerOutOfRange, "layer " + std::to_string(l) + " outside [0, " +
                                                        std::to_string(n_layers) + "]");
        }
    }
    const size_t d = ckpt.config().d_model;
    // [layer][pair] hidden states, filled per pair index so order is fixed
    std::vector<Matrix> pos(layers.size(), Matrix(pairs.size(), d));
    std::vector<Matrix> neg(layers.size(), Matrix(pairs.size(), d));
    parallel_for(pairs.size(), opts.workers, [&](size_t i) {
        const auto hp = capture_last_hidden(ckpt, tokenize(pairs[i].positive_text), layers);
        const auto hn = capture_last_hidden(ckpt, tokenize(pairs[i].negative_text), layers);
        for (size_t k = 0; k < layers.size(); ++k) {
            std::copy(hp[k].begin(), hp[k].end(), pos[k].row(i).begin());
            std::copy(hn[k].begin(), hn[k].end(), neg[k].row(i).begin());
        }
    });
    std::vector<CaptureResult> out;
    out.reserve(layers.size());
    for (size_t k = 0; k < layers.size(); ++k) {
        out.push_back(difference_matrix(layers[k], pos[k], neg[k], opts.normalize));
    }
    return out;
}

CaptureResult capture_differences(const Checkpoint & ckpt, const std::vector<ContrastivePair> & pairs, size_t layer,
                                  const CaptureOptions & opts) {
    const size_t layers[] = {layer};
    return std::move(capture_differences(ckpt, pairs, std::span<const size_t>(layers), opts).front());
}

// ---------------------------------------------------------------------------
// Extraction

std::string_view method_name(ExtractionMethod m) {
    return m == ExtractionMethod::pca ? "pca" : "mean_diff";
}

ExtractionMethod parse_method(std::string_view name) {
    if (name == "pca") {
        return ExtractionMethod::pca;
    }
    if (name == "mean_diff") {
        return ExtractionMethod::mean_diff;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown extraction method '" + std::string(name) +
                                                "' (expected pca or mean_diff)");
}

std::optional<Matrix> drop_degenerate_rows(const Matrix & m, size_t * dropped) {
    std::vector<double> kept;
    size_t rows = 0;
    for (size_t r = 0; r < m.rows(); ++r) {
        if (norm2(m.row(r)) >= 1e-12) {
            kept.insert(kept.end(), m.row(r).begin(), m.row(r).end());
            ++rows;
        }
    }
    if (dropped) {
        *dropped = m.rows() - rows;
    }
    if (rows == 0) {
        return std::nullopt;
    }
    return Matrix(rows, m.cols(), std::move(kept));
}

SteeringVector extract_vector(const Matrix & diffs, ExtractionMethod method, std::string axis, size_t layer,
                              std::string source_hash, std::string created) {
    const auto context = " (axis " + axis + ", layer " + std::to_string(layer) + ")";
    const auto kept = drop_degenerate_rows(diffs);
    if (!kept) {
        throw Error(ErrorCode::AllZeroMatrix, "every difference row is zero" + context);
    }
    SteeringVector v;
    try {
        v.direction = method == ExtractionMethod::pca ? first_principal_component(*kept)
                                                      : mean_difference_vector(*kept);
    } catch (const DidNotConvergeError &) {
        throw;
    } catch (const Error & e) {
        throw Error(e.code(), std::string(e.what()) + context);
    }
    v.axis = std::move(axis);
    v.layer = layer;
    v.d_model = diffs.cols();
    v.method = method;
    v.source_hash = std::move(source_hash);
    v.created = std::move(created);
    return v;
}

// ---------------------------------------------------------------------------
// Persistence

json vector_to_json(const SteeringVector & v) {
    return json{
        {"axis", v.axis},
        {"layer", v.layer},
        {"d_model", v.d_model},
        {"method", method_name(v.method)},
        {"source_hash", v.source_hash},
        {"created", v.created},
        {"direction", std::vector<double>(v.direction.components().begin(), v.direction.components().end())},
    };
}

SteeringVector vector_from_json(const json & j) {
    SteeringVector v;
    try {
        v.axis = j.at("axis").get<std::string>();
        v.layer = j.at("layer").get<size_t>();
        v.d_model = j.at("d_model").get<size_t>();
        v.method = parse_method(j.at("method").get<std::string>());
        v.source_hash = j.at("source_hash").get<std::string>();
        v.created = j.at("created").get<std::string>();
        auto direction = j.at("direction").get<std::vector<double>>();
        if (direction.size() != v.d_model) {
            throw Error(ErrorCode::MalformedRecord, "direction has " + std::to_string(direction.size()) +
                                                        " components, d_model is " + std::to_string(v.d_model));
        }
        v.direction = UnitVector::from_normalized(std::move(direction));
    } catch (const json::exception & e) {
        throw Error(ErrorCode::MalformedRecord, std::string("vector record: ") + e.what());
    }
    return v;
}

void save_vector(const SteeringVector & v, const std::filesystem::path & path, const json & extra) {
    json j = vector_to_json(v);
    if (extra.is_object()) {
        for (const auto & [k, val] : extra.items()) {
            j[k] = val;
        }
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::Io, "cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

SteeringVector load_vector(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open vector file " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error & e) {
        throw Error(ErrorCode::MalformedRecord, path.string() + ": " + e.what());
    }
    return vector_from_json(j);
}

bool source_matches(const SteeringVector & v, const std::vector<ContrastivePair> & pairs) {
    return v.source_hash == pairs_digest(pairs);
}

// ---------------------------------------------------------------------------
// Injection

Injection InjectionSpec::to_injection() const {
    if (!vector) {
        throw Error(ErrorCode::MissingVector, "injection spec has no vector");
    }
    const auto c = vector->direction.components();
    return Injection{std::vector<double>(c.begin(), c.end()), layers, lambda};
}

InjectionSpec make_injection(std::shared_ptr<const SteeringVector> v, double lambda,
                             std::optional<std::vector<size_t>> layers) {
    if (!v) {
        throw Error(ErrorCode::MissingVector, "no steering vector given");
    }
    if (!std::isfinite(lambda)) {
        throw Error(ErrorCode::InvalidArgument, "lambda must be finite");
    }
    InjectionSpec spec;
    spec.layers = layers && !layers->empty() ? *layers : std::vector<size_t>{v->layer};
    spec.lambda = lambda;
    spec.vector = std::move(v);
    return spec;
}

std::vector<Injection> to_injections(std::span<const InjectionSpec> specs) {
    std::vector<Injection> out;
    out.reserve(specs.size());
    for (const auto & s : specs) {
        out.push_back(s.to_injection());
    }
    return out;
}

} // namespace steer
