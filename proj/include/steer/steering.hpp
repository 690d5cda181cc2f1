#pragma once

#include "steer/model.hpp"
#include "steer/numerics.hpp"

#include "json.hpp"

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace steer {

inline constexpr std::array<std::string_view, 8> k_bias_axes = {
    "age", "appearance", "disability", "gender", "nationality", "race", "religion", "socioeconomic",
};

bool is_bias_axis(std::string_view axis);

// "Consider the bias related to {axis} in the following.\n"
std::string stimulus_prefix(std::string_view axis);

struct ContrastivePair {
    std::string id;
    std::string axis;
    std::string positive_text; // the less stereotypical side
    std::string negative_text;
    bool stimulus_applied = false;
};

// JSONL with {id, axis, positive, negative}. With `stimulus`, both sides get the
// axis stimulus sentence prepended.
std::vector<ContrastivePair> load_pairs(const std::filesystem::path & path, bool stimulus = false);

// Digest of the pair texts as they will be fed to the model.
std::string pairs_digest(const std::vector<ContrastivePair> & pairs);

struct CaptureOptions {
    bool normalize = true; // L2-normalize each hidden state before differencing
    size_t workers = 1;
};

struct CaptureResult {
    size_t layer = 0;
    Matrix diffs;                       // one row per pair, input order
    std::vector<size_t> degenerate_rows; // rows with norm < 1e-12
};

// Rows h+_i - h-_i of last-token residuals at `layer`.
CaptureResult capture_differences(const Checkpoint & ckpt, const std::vector<ContrastivePair> & pairs, size_t layer,
                                  const CaptureOptions & opts = {});

// Same as above for several layers with one pass per prompt.
std::vector<CaptureResult> capture_differences(const Checkpoint & ckpt, const std::vector<ContrastivePair> & pairs,
                                               std::span<const size_t> layers, const CaptureOptions & opts = {});

// Builds rows from precomputed hidden states (h+ and h- row-aligned).
CaptureResult difference_matrix(size_t layer, const Matrix & positive, const Matrix & negative, bool normalize = true);

enum class ExtractionMethod { pca, mean_diff };

std::string_view method_name(ExtractionMethod m);
ExtractionMethod parse_method(std::string_view name);

struct SteeringVector {
    std::string axis;
    size_t layer = 0;
    size_t d_model = 0;
    UnitVector direction{std::vector<double>{1.0}};
    ExtractionMethod method = ExtractionMethod::pca;
    std::string source_hash;
    std::string created;

    bool operator==(const SteeringVector &) const = default;
};

// Removes rows with norm < 1e-12; returns nullopt when nothing is left.
std::optional<Matrix> drop_degenerate_rows(const Matrix & m, size_t * dropped = nullptr);

// Degenerate rows are dropped first. AllZeroMatrix carries axis/layer context.
SteeringVector extract_vector(const Matrix & diffs, ExtractionMethod method, std::string axis, size_t layer,
                              std::string source_hash = {}, std::string created = {});

nlohmann::json vector_to_json(const SteeringVector & v);
SteeringVector vector_from_json(const nlohmann::json & j);

// `extra` fields (e.g. a run manifest) are written alongside the vector fields.
void save_vector(const SteeringVector & v, const std::filesystem::path & path, const nlohmann::json & extra = {});
SteeringVector load_vector(const std::filesystem::path & path);

// False when the pairs no longer hash to the vector's source_hash.
bool source_matches(const SteeringVector & v, const std::vector<ContrastivePair> & pairs);

struct InjectionSpec {
    std::shared_ptr<const SteeringVector> vector;
    std::vector<size_t> layers;
    double lambda = 0.0;

    Injection to_injection() const;
};

// Layers default to the vector's own layer.
InjectionSpec make_injection(std::shared_ptr<const SteeringVector> v, double lambda,
                             std::optional<std::vector<size_t>> layers = std::nullopt);

std::vector<Injection> to_injections(std::span<const InjectionSpec> specs);

} // namespace steer
