#pragma once

#include "steer/eval.hpp"
#include "steer/numerics.hpp"
#include "steer/steering.hpp"

#include "json.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace steer {

struct ProbeOptions {
    bool full_dim = false; // classify raw hidden states instead of the 2-D projection
    bool holdout = false;  // train on even pairs, score odd pairs
    LogRegOptions logreg;
    size_t workers = 1;
};

struct ProbeFit {
    double accuracy = 0.0;
    Matrix projection{1, 2}; // one row per point
    bool degenerate = false;
};

// Projects `points` to 2-D and fits a logistic probe on `labels` (0/1).
ProbeFit fit_probe(const Matrix & points, std::span<const int> labels, const ProbeOptions & opts = {});

struct LayerProbe {
    size_t layer = 0;
    double accuracy = 0.0;
    Matrix projection{1, 2}; // 2n rows, positive/negative interleaved
    std::vector<int> labels;  // 1 = positive side
    bool degenerate = false;
};

// Rows of `positive` and `negative` are paired; points are interleaved p0, n0, p1, n1, ...
LayerProbe probe_points(size_t layer, const Matrix & positive, const Matrix & negative,
                        const ProbeOptions & opts = {});

struct SeparabilityReport {
    std::string axis;
    std::vector<LayerProbe> layers;

    // highest accuracy, ties to the lower layer
    size_t recommended_layer() const;
};

SeparabilityReport probe_separability(const Checkpoint & ckpt, const std::vector<ContrastivePair> & pairs,
                                      std::span<const size_t> layers, const ProbeOptions & opts = {});

nlohmann::json separability_to_json(const SeparabilityReport & r);
std::string projection_csv(const LayerProbe & p); // x,y,label

struct LayerSweepPoint {
    size_t layer = 0;
    double accuracy = 0.0;
};

struct LayerSweep {
    double baseline = 0.0;
    std::vector<LayerSweepPoint> curve; // one point per vector, in input order
    size_t recommended_layer = 0;
};

// MC accuracy with each vector injected at its own layer in turn.
LayerSweep sweep_layers(const Checkpoint & ckpt, const std::vector<std::shared_ptr<const SteeringVector>> & vectors,
                        const std::vector<McItem> & items, double lambda = 1.0, const EvalOptions & opts = {});

nlohmann::json layer_sweep_to_json(const LayerSweep & s);
std::string layer_sweep_csv(const LayerSweep & s); // layer,accuracy

struct SweepPoint {
    double lambda = 0.0;
    double task_accuracy = 0.0;
    double general_accuracy = 0.0;

    bool operator==(const SweepPoint &) const = default;
};

struct SweepResult {
    std::string axis;
    double baseline_task = 0.0;
    double baseline_general = 0.0;
    double max_cost = 5.0;
    std::vector<SweepPoint> grid; // ascending lambda
    double selected_lambda = 0.0;
    bool feasible = true; // false when no point met the general-accuracy bound
};

// -2.0, -1.8, ..., 2.0
std::vector<double> default_grid();

// Best task accuracy among points whose general accuracy stays within max_cost of the
// baseline; ties go to the smaller |lambda|, then to the positive one. With no feasible
// point the smallest |lambda| is returned and `feasible` is cleared.
double select_lambda(std::span<const SweepPoint> grid, double baseline_general, double max_cost,
                     bool * feasible = nullptr);

struct SweepOptions {
    double max_cost = 5.0;
    std::optional<std::vector<size_t>> layers;
    EvalOptions eval;
};

SweepResult sweep_coefficients(const Checkpoint & ckpt, std::shared_ptr<const SteeringVector> vector,
                               std::vector<double> grid, const std::vector<McItem> & task_items,
                               const std::vector<McItem> & general_items, const SweepOptions & opts = {});

nlohmann::json sweep_to_json(const SweepResult & s);
std::string sweep_csv(const SweepResult & s); // lambda,task_accuracy,general_accuracy

} // namespace steer
