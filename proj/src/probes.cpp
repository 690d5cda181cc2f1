#include "steer/probes.hpp"

#include "steer/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace steer {

using json = nlohmann::json;

namespace {

Matrix select_rows(const Matrix & m, std::span<const size_t> rows) {
    std::vector<double> data;
    data.reserve(rows.size() * m.cols());
    for (size_t r : rows) {
        data.insert(data.end(), m.row(r).begin(), m.row(r).end());
    }
    return Matrix(rows.size(), m.cols(), std::move(data));
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

} // namespace

// ---------------------------------------------------------------------------
// Separability

ProbeFit fit_probe(const Matrix & points, std::span<const int> labels, const ProbeOptions & opts) {
    if (labels.size() != points.rows()) {
        throw Error(ErrorCode::DimMismatch, "one label per point required");
    }
    auto proj = pca_project_2d(points);
    ProbeFit fit;
    fit.degenerate = proj.degenerate;
    fit.projection = proj.points;
    const Matrix & features = opts.full_dim ? points : fit.projection;

    if (!opts.holdout) {
        const auto model = train_logreg(features, labels, opts.logreg);
        fit.accuracy = logreg_accuracy(model, features, labels);
        return fit;
    }
    // split by pair: points 2i and 2i+1 belong to pair i
    std::vector<size_t> train;
    std::vector<size_t> test;
    for (size_t r = 0; r < points.rows(); ++r) {
        ((r / 2) % 2 == 0 ? train : test).push_back(r);
    }
    if (test.empty()) {
        throw Error(ErrorCode::InvalidArgument, "too few points for a held-out split");
    }
    std::vector<int> train_labels;
    std::vector<int> test_labels;
    for (size_t r : train) {
        train_labels.push_back(labels[r]);
    }
    for (size_t r : test) {
        test_labels.push_back(labels[r]);
    }
    const auto model = train_logreg(select_rows(features, train), train_labels, opts.logreg);
    fit.accuracy = logreg_accuracy(model, select_rows(features, test), test_labels);
    return fit;
}

LayerProbe probe_points(size_t layer, const Matrix & positive, const Matrix & negative, const ProbeOptions & opts) {
    if (positive.rows() != negative.rows() || positive.cols() != negative.cols()) {
        throw Error(ErrorCode::DimMismatch, "positive and negative activations disagree in shape");
    }
    if (positive.rows() < 4) {
        throw Error(ErrorCode::InvalidArgument, "probing needs at least 4 pairs");
    }
    const size_t n = positive.rows();
    Matrix points(2 * n, positive.cols());
    LayerProbe out;
    out.layer = layer;
    out.labels.resize(2 * n);
    for (size_t i = 0; i < n; ++i) {
        std::copy(positive.row(i).begin(), positive.row(i).end(), points.row(2 * i).begin());
        std::copy(negative.row(i).begin(), negative.row(i).end(), points.row(2 * i + 1).begin());
        out.labels[2 * i] = 1;
        out.labels[2 * i + 1] = 0;
    }
    auto fit = fit_probe(points, out.labels, opts);
    out.accuracy = fit.accuracy;
    out.projection = std::move(fit.projection);
    out.degenerate = fit.degenerate;
    return out;
}

size_t SeparabilityReport::recommended_layer() const {
    if (layers.empty()) {
        throw Error(ErrorCode::InvalidArgument, "no probed layers");
    }
    const LayerProbe * best = &layers.front();
    for (const auto & l : layers) {
        if (l.accuracy > best->accuracy || (l.accuracy == best->accuracy && l.layer < best->layer)) {
            best = &l;
        }
    }
    return best->layer;
}

SeparabilityReport probe_separability(const Checkpoint & ckpt, const std::vector<ContrastivePair> & pairs,
                                      std::span<const size_t> layers, const ProbeOptions & opts) {
    if (pairs.size() < 4) {
        throw Error(ErrorCode::InvalidArgument, "probing needs at least 4 pairs, got " + std::to_string(pairs.size()));
    }
    const size_t n_layers = ckpt.config().n_layers;
    for (size_t l : layers) {
        if (l > n_layers) {
            throw Error(ErrorCode::LayerOutOfRange,
                        "layer " + std::to_string(l) + " outside [0, " + std::to_string(n_layers) + "]");
        }
    }
    const size_t d = ckpt.config().d_model;
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

    SeparabilityReport report;
    report.axis = pairs.front().axis;
    report.layers.resize(layers.size());
    parallel_for(layers.size(), opts.workers, [&](size_t k) {
        report.layers[k] = probe_points(layers[k], pos[k], neg[k], opts);
    });
    return report;
}

json separability_to_json(const SeparabilityReport & r) {
    json layers = json::array();
    for (const auto & l : r.layers) {
        layers.push_back({{"layer", l.layer},
                          {"accuracy", l.accuracy},
                          {"degenerate", l.degenerate},
                          {"points", l.projection.rows()}});
    }
    return json{{"axis", r.axis}, {"layers", layers}, {"recommended_layer", r.recommended_layer()}};
}

std::string projection_csv(const LayerProbe & p) {
    std::string out = "x,y,label\n";
    for (size_t r = 0; r < p.projection.rows(); ++r) {
        out += fmt(p.projection(r, 0)) + "," + fmt(p.projection(r, 1)) + "," + std::to_string(p.labels[r]) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Layer sweep

LayerSweep sweep_layers(const Checkpoint & ckpt, const std::vector<std::shared_ptr<const SteeringVector>> & vectors,
                        const std::vector<McItem> & items, double lambda, const EvalOptions & opts) {
    if (vectors.empty()) {
        throw Error(ErrorCode::MissingVector, "layer sweep needs at least one vector");
    }
    LayerSweep out;
    out.baseline = eval_mc(ckpt, items, {}, Method::steering, opts).value;
    for (const auto & v : vectors) {
        const auto inj = make_injection(v, lambda).to_injection();
        const Injection injections[] = {inj};
        out.curve.push_back({v->layer, eval_mc(ckpt, items, injections, Method::steering, opts).value});
    }
    const LayerSweepPoint * best = &out.curve.front();
    for (const auto & p : out.curve) {
        if (p.accuracy > best->accuracy || (p.accuracy == best->accuracy && p.layer < best->layer)) {
            best = &p;
        }
    }
    out.recommended_layer = best->layer;
    return out;
}

json layer_sweep_to_json(const LayerSweep & s) {
    json curve = json::array();
    for (const auto & p : s.curve) {
        curve.push_back({{"layer", p.layer}, {"accuracy", p.accuracy}});
    }
    return json{{"baseline", s.baseline}, {"curve", curve}, {"recommended_layer", s.recommended_layer}};
}

std::string layer_sweep_csv(const LayerSweep & s) {
    std::string out = "layer,accuracy\n";
    for (const auto & p : s.curve) {
        out += std::to_string(p.layer) + "," + fmt(p.accuracy) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Coefficient sweep

std::vector<double> default_grid() {
    std::vector<double> grid;
    for (int i = -10; i <= 10; ++i) {
        grid.push_back(i / 5.0);
    }
    return grid;
}

double select_lambda(std::span<const SweepPoint> grid, double baseline_general, double max_cost, bool * feasible) {
    if (grid.empty()) {
        throw Error(ErrorCode::InvalidArgument, "empty coefficient grid");
    }
    // a precedes b when |a| < |b|, or equal magnitude and a positive
    auto preferred = [](double a, double b) {
        return std::abs(a) < std::abs(b) || (std::abs(a) == std::abs(b) && a > b);
    };
    const SweepPoint * best = nullptr;
    for (const auto & p : grid) {
        if (p.general_accuracy < baseline_general - max_cost) {
            continue;
        }
        if (!best || p.task_accuracy > best->task_accuracy ||
            (p.task_accuracy == best->task_accuracy && preferred(p.lambda, best->lambda))) {
            best = &p;
        }
    }
    if (feasible) {
        *feasible = best != nullptr;
    }
    if (best) {
        return best->lambda;
    }
    double pick = grid.front().lambda;
    for (const auto & p : grid) {
        if (preferred(p.lambda, pick)) {
            pick = p.lambda;
        }
    }
    return pick;
}

SweepResult sweep_coefficients(const Checkpoint & ckpt, std::shared_ptr<const SteeringVector> vector,
                               std::vector<double> grid, const std::vector<McItem> & task_items,
                               const std::vector<McItem> & general_items, const SweepOptions & opts) {
    if (grid.empty()) {
        throw Error(ErrorCode::InvalidArgument, "empty coefficient grid");
    }
    for (double l : grid) {
        if (!std::isfinite(l) || std::abs(l) > 1e6) {
            throw Error(ErrorCode::InvalidArgument, "grid values must be finite and within +-1e6");
        }
    }
    if (!vector) {
        throw Error(ErrorCode::MissingVector, "coefficient sweep needs a vector");
    }
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    SweepResult out;
    out.axis = vector->axis;
    out.max_cost = opts.max_cost;
    out.baseline_task = eval_mc(ckpt, task_items, {}, Method::steering, opts.eval).value;
    out.baseline_general = eval_mc(ckpt, general_items, {}, Method::steering, opts.eval).value;

    out.grid.resize(grid.size());
    EvalOptions inner = opts.eval;
    inner.workers = 1;
    parallel_for(grid.size(), opts.eval.workers, [&](size_t i) {
        const auto inj = make_injection(vector, grid[i], opts.layers).to_injection();
        const Injection injections[] = {inj};
        out.grid[i].lambda = grid[i];
        out.grid[i].task_accuracy = eval_mc(ckpt, task_items, injections, Method::steering, inner).value;
        out.grid[i].general_accuracy = eval_mc(ckpt, general_items, injections, Method::steering, inner).value;
    });
    out.selected_lambda = select_lambda(out.grid, out.baseline_general, out.max_cost, &out.feasible);
    return out;
}

json sweep_to_json(const SweepResult & s) {
    json grid = json::array();
    for (const auto & p : s.grid) {
        grid.push_back({{"lambda", p.lambda}, {"task_accuracy", p.task_accuracy},
                        {"general_accuracy", p.general_accuracy}});
    }
    return json{{"axis", s.axis},
                {"baseline_task", s.baseline_task},
                {"baseline_general", s.baseline_general},
                {"max_cost", s.max_cost},
                {"grid", grid},
                {"selected_lambda", s.selected_lambda},
                {"feasible", s.feasible}};
}

std::string sweep_csv(const SweepResult & s) {
    std::string out = "lambda,task_accuracy,general_accuracy\n";
    for (const auto & p : s.grid) {
        out += fmt(p.lambda) + "," + fmt(p.task_accuracy) + "," + fmt(p.general_accuracy) + "\n";
    }
    return out;
}

} // namespace steer
