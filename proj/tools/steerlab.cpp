// steerlab: extract, probe, sweep and evaluate steering vectors on small checkpoints.

#include "steer/eval.hpp"
#include "steer/manifest.hpp"
#include "steer/model.hpp"
#include "steer/parallel.hpp"
#include "steer/probes.hpp"
#include "steer/steering.hpp"
#include "steer/toy.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace steer;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    size_t workers = 1;
    bool json_errors = false;
};

void require_file(const std::string & path, const std::string & what) {
    if (!fs::is_regular_file(path)) {
        throw UsageError(what + " not found: " + path);
    }
}

Checkpoint open_model(const std::string & path) {
    require_file(path, "checkpoint");
    return load_checkpoint(path);
}

// "2", "0,1,3", "0-3"
std::vector<size_t> parse_layers(const std::string & text) {
    std::vector<size_t> out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (part.empty()) {
            continue;
        }
        try {
            const auto dash = part.find('-');
            if (dash == std::string::npos) {
                out.push_back(std::stoul(part));
                continue;
            }
            const size_t lo = std::stoul(part.substr(0, dash));
            const size_t hi = std::stoul(part.substr(dash + 1));
            if (hi < lo) {
                throw UsageError("bad layer range '" + part + "'");
            }
            for (size_t l = lo; l <= hi; ++l) {
                out.push_back(l);
            }
        } catch (const std::logic_error &) {
            throw UsageError("bad layer list '" + text + "'");
        }
    }
    if (out.empty()) {
        throw UsageError("empty layer list");
    }
    return out;
}

double round9(double x) {
    return std::round(x * 1e9) / 1e9;
}

// "lo:hi:step" or "a,b,c"
std::vector<double> parse_grid(const std::string & text) {
    std::vector<double> out;
    try {
        if (std::count(text.begin(), text.end(), ':') == 2) {
            const auto c1 = text.find(':');
            const auto c2 = text.find(':', c1 + 1);
            const double lo = std::stod(text.substr(0, c1));
            const double hi = std::stod(text.substr(c1 + 1, c2 - c1 - 1));
            const double step = std::stod(text.substr(c2 + 1));
            if (!(step > 0) || hi < lo) {
                throw UsageError("grid needs lo <= hi and a positive step");
            }
            const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
            for (long i = 0; i <= n; ++i) {
                out.push_back(round9(lo + static_cast<double>(i) * step));
            }
        } else {
            std::stringstream ss(text);
            std::string part;
            while (std::getline(ss, part, ',')) {
                if (!part.empty()) {
                    out.push_back(std::stod(part));
                }
            }
        }
    } catch (const std::logic_error &) {
        throw UsageError("bad grid '" + text + "'");
    }
    if (out.empty()) {
        throw UsageError("empty coefficient grid");
    }
    for (double v : out) {
        if (!std::isfinite(v)) {
            throw UsageError("grid values must be finite");
        }
    }
    return out;
}

struct ManifestInputs {
    std::string checkpoint;
    std::map<std::string, std::string> datasets; // role -> path
    std::map<std::string, std::string> vectors;  // name -> path
    uint64_t seed = 0;
};

RunManifest make_manifest(const std::string & command, const json & config, const ManifestInputs & in) {
    RunManifest m;
    m.command = command;
    m.config_digest = sha256_hex(config.dump());
    if (!in.checkpoint.empty()) {
        m.checkpoint_digest = sha256_file(in.checkpoint);
    }
    for (const auto & [role, path] : in.datasets) {
        m.dataset_digests[role] = sha256_file(path);
    }
    for (const auto & [name, path] : in.vectors) {
        m.vector_digests[name] = sha256_file(path);
    }
    m.seed = in.seed;
    m.timestamp = current_timestamp();
    return m;
}

json manifest_json(const RunManifest & m, const json & config) {
    json j = m.to_json();
    j["config"] = config;
    j["digest"] = m.digest();
    return j;
}

void write_file(const fs::path & path, const std::string & text) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::Io, "cannot write " + path.string());
    }
    out << text;
}

void write_json(const fs::path & path, json body, const json & manifest) {
    body["manifest"] = manifest;
    write_file(path, body.dump(2) + "\n");
}

// CSV files start with one comment line carrying the manifest.
void write_csv(const fs::path & path, const std::string & csv, const json & manifest) {
    write_file(path, "# manifest: " + manifest.dump() + "\n" + csv);
}

std::map<std::string, std::vector<ContrastivePair>> group_by_axis(const std::vector<ContrastivePair> & pairs) {
    std::map<std::string, std::vector<ContrastivePair>> out;
    for (const auto & p : pairs) {
        out[p.axis].push_back(p);
    }
    return out;
}

std::shared_ptr<const SteeringVector> open_vector(const std::string & path) {
    require_file(path, "vector file");
    return std::make_shared<const SteeringVector>(load_vector(path));
}

// ---------------------------------------------------------------------------
// init-toy-model

struct InitArgs {
    std::string kind = "random";
    std::string out;
    uint64_t seed = 0;
    ModelConfig config;
};

int run_init(const InitArgs & a) {
    json config = {{"kind", a.kind}};
    std::optional<Checkpoint> ckpt;
    if (a.kind == "planted") {
        ckpt.emplace(toy::planted_letter_checkpoint(a.seed));
    } else {
        ModelConfig cfg = a.config;
        try {
            cfg.validate();
        } catch (const Error & e) {
            throw UsageError(e.what());
        }
        ckpt.emplace(a.kind == "constant" ? toy::constant_logit_checkpoint(cfg) : toy::random_checkpoint(cfg, a.seed));
    }
    const auto & cfg = ckpt->config();
    config["n_layers"] = cfg.n_layers;
    config["d_model"] = cfg.d_model;
    config["n_heads"] = cfg.n_heads;
    config["d_ff"] = cfg.d_ff;
    config["vocab_size"] = cfg.vocab_size;
    config["max_seq"] = cfg.max_seq;
    const auto m = make_manifest("init-toy-model", config, {.seed = a.seed});
    if (fs::path(a.out).has_parent_path()) {
        fs::create_directories(fs::path(a.out).parent_path());
    }
    save_checkpoint(*ckpt, a.out, manifest_json(m, config).dump());
    std::printf("wrote %s (%s, n_layers=%zu, d_model=%zu, seed=%llu)\n", a.out.c_str(), a.kind.c_str(),
                cfg.n_layers, cfg.d_model, static_cast<unsigned long long>(a.seed));
    return 0;
}

// ---------------------------------------------------------------------------
// extract

struct ExtractArgs {
    std::string pairs;
    std::string model;
    std::string layers;
    std::string method = "pca";
    bool stimulus = false;
    bool raw = false;
    std::string out;
};

int run_extract(const ExtractArgs & a, const Common & c) {
    require_file(a.pairs, "pairs file");
    const auto ckpt = open_model(a.model);
    const auto layers = parse_layers(a.layers);
    const auto method = parse_method(a.method);
    const auto pairs = load_pairs(a.pairs, a.stimulus);

    const json config = {{"layers", layers}, {"method", a.method}, {"stimulus", a.stimulus}, {"normalize", !a.raw}};
    const auto m = make_manifest("extract", config, {.checkpoint = a.model, .datasets = {{"pairs", a.pairs}}});
    const auto mj = manifest_json(m, config);

    for (const auto & [axis, group] : group_by_axis(pairs)) {
        const auto captures = capture_differences(ckpt, group, layers, {.normalize = !a.raw, .workers = c.workers});
        const auto source = pairs_digest(group);
        for (const auto & cap : captures) {
            const auto v = extract_vector(cap.diffs, method, axis, cap.layer, source, m.timestamp);
            const auto path = fs::path(a.out) / (axis + "_layer" + std::to_string(cap.layer) + ".json");
            fs::create_directories(a.out);
            save_vector(v, path, json{{"manifest", mj}});
            std::printf("%s layer %zu: %zu rows used, %zu degenerate dropped -> %s\n", axis.c_str(), cap.layer,
                        cap.diffs.rows() - cap.degenerate_rows.size(), cap.degenerate_rows.size(),
                        path.string().c_str());
        }
    }
    return 0;
}

// ---------------------------------------------------------------------------
// probe

struct ProbeArgs {
    std::string pairs;
    std::string model;
    std::string layers;
    bool stimulus = false;
    bool full_dim = false;
    bool holdout = false;
    std::string out;
};

int run_probe(const ProbeArgs & a, const Common & c) {
    require_file(a.pairs, "pairs file");
    const auto ckpt = open_model(a.model);
    const auto layers = parse_layers(a.layers);
    const auto pairs = load_pairs(a.pairs, a.stimulus);

    const json config = {{"layers", layers}, {"stimulus", a.stimulus}, {"full_dim", a.full_dim},
                         {"holdout", a.holdout}};
    const auto m = make_manifest("probe", config, {.checkpoint = a.model, .datasets = {{"pairs", a.pairs}}});
    const auto mj = manifest_json(m, config);

    ProbeOptions opts;
    opts.full_dim = a.full_dim;
    opts.holdout = a.holdout;
    opts.workers = c.workers;
    for (const auto & [axis, group] : group_by_axis(pairs)) {
        const auto report = probe_separability(ckpt, group, layers, opts);
        write_json(fs::path(a.out) / ("probe_" + axis + ".json"), separability_to_json(report), mj);
        for (const auto & l : report.layers) {
            write_csv(fs::path(a.out) / ("probe_" + axis + "_layer" + std::to_string(l.layer) + ".csv"),
                      projection_csv(l), mj);
            std::printf("%s layer %zu: accuracy %.4f%s\n", axis.c_str(), l.layer, l.accuracy,
                        l.degenerate ? " (degenerate projection)" : "");
        }
        std::printf("%s recommended layer: %zu\n", axis.c_str(), report.recommended_layer());
    }
    return 0;
}

// ---------------------------------------------------------------------------
// sweep-layers

struct SweepLayersArgs {
    std::string model;
    std::vector<std::string> vectors;
    std::string dataset;
    double lambda = 1.0;
    size_t max_new_tokens = 16;
    std::string out;
};

int run_sweep_layers(const SweepLayersArgs & a, const Common & c) {
    require_file(a.dataset, "dataset");
    const auto ckpt = open_model(a.model);
    std::vector<std::shared_ptr<const SteeringVector>> vectors;
    ManifestInputs in{.checkpoint = a.model, .datasets = {{"dataset", a.dataset}}};
    for (size_t i = 0; i < a.vectors.size(); ++i) {
        vectors.push_back(open_vector(a.vectors[i]));
        in.vectors["vector" + std::to_string(i)] = a.vectors[i];
    }
    const auto items = load_mc_items(a.dataset);
    const json config = {{"lambda", a.lambda}, {"max_new_tokens", a.max_new_tokens}};
    const auto mj = manifest_json(make_manifest("sweep-layers", config, in), config);

    GenerationCache cache;
    EvalOptions opts{.max_new_tokens = a.max_new_tokens, .workers = c.workers, .cache = &cache};
    const auto sweep = sweep_layers(ckpt, vectors, items, a.lambda, opts);
    write_json(fs::path(a.out) / "sweep_layers.json", layer_sweep_to_json(sweep), mj);
    write_csv(fs::path(a.out) / "sweep_layers.csv", layer_sweep_csv(sweep), mj);
    std::printf("baseline accuracy %.2f\n", sweep.baseline);
    for (const auto & p : sweep.curve) {
        std::printf("layer %zu: accuracy %.2f\n", p.layer, p.accuracy);
    }
    std::printf("recommended layer: %zu\n", sweep.recommended_layer);
    return 0;
}

// ---------------------------------------------------------------------------
// sweep-coeff

struct SweepCoeffArgs {
    std::string model;
    std::string vector;
    std::string dataset;
    std::string general;
    std::string grid = "-2:2:0.2";
    double max_cost = 5.0;
    std::string layers;
    size_t max_new_tokens = 16;
    std::string out;
};

int run_sweep_coeff(const SweepCoeffArgs & a, const Common & c) {
    const auto grid = parse_grid(a.grid);
    require_file(a.dataset, "dataset");
    require_file(a.general, "general dataset");
    const auto ckpt = open_model(a.model);
    const auto vector = open_vector(a.vector);
    const auto task = load_mc_items(a.dataset);
    const auto general = load_mc_items(a.general);

    json config = {{"grid", grid}, {"max_cost", a.max_cost}, {"max_new_tokens", a.max_new_tokens}};
    SweepOptions opts;
    opts.max_cost = a.max_cost;
    if (!a.layers.empty()) {
        opts.layers = parse_layers(a.layers);
        config["layers"] = *opts.layers;
    }
    const ManifestInputs in{.checkpoint = a.model,
                            .datasets = {{"task", a.dataset}, {"general", a.general}},
                            .vectors = {{"vector", a.vector}}};
    const auto mj = manifest_json(make_manifest("sweep-coeff", config, in), config);

    GenerationCache cache;
    opts.eval = EvalOptions{.max_new_tokens = a.max_new_tokens, .workers = c.workers, .cache = &cache};
    const auto result = sweep_coefficients(ckpt, vector, grid, task, general, opts);
    write_json(fs::path(a.out) / "sweep_coeff.json", sweep_to_json(result), mj);
    write_csv(fs::path(a.out) / "sweep_coeff.csv", sweep_csv(result), mj);
    std::printf("baseline: task %.2f, general %.2f\n", result.baseline_task, result.baseline_general);
    for (const auto & p : result.grid) {
        std::printf("lambda %+.2f: task %.2f, general %.2f\n", p.lambda, p.task_accuracy, p.general_accuracy);
    }
    std::printf("selected lambda: %g%s\n", result.selected_lambda,
                result.feasible ? "" : " (no point within the general-accuracy bound)");
    return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string model;
    std::string dataset;
    std::string name;
    std::string protocol = "mc";
    std::string method = "baseline";
    std::string vector;
    double lambda = 1.0;
    std::string layers;
    size_t max_new_tokens = 16;
    size_t self_debias_k = 5;
    std::string matrix;
    std::string out;
};

std::string cell_status_name(CellStatus s) {
    switch (s) {
        case CellStatus::ok:             return "ok";
        case CellStatus::error:          return "error";
        case CellStatus::not_applicable: return "not_applicable";
    }
    return "?";
}

void print_report(const EvalReport & r) {
    std::printf("%s,%s,%s,%s,%.4f,%zu,%zu\n", std::string(method_name(r.method)).c_str(), r.dataset.c_str(),
                r.axis.c_str(), std::string(metric_name(r.metric)).c_str(), r.value, r.n, r.unparseable);
}

int run_matrix_cmd(const EvalArgs & a, const Common & c) {
    require_file(a.matrix, "matrix config");
    const auto ckpt = open_model(a.model);
    json cfg;
    try {
        std::ifstream in(a.matrix);
        cfg = json::parse(in);
    } catch (const json::exception & e) {
        throw UsageError("matrix config " + a.matrix + ": " + e.what());
    }
    const fs::path base = fs::path(a.matrix).parent_path();
    auto resolve = [&](const std::string & p) {
        const fs::path path(p);
        return (path.is_absolute() ? path : base / path).string();
    };

    MatrixSpec spec;
    ManifestInputs inputs{.checkpoint = a.model};
    json config;
    try {
        for (const auto & m : cfg.at("methods")) {
            spec.methods.push_back(parse_eval_method(m.get<std::string>()));
        }
        for (const auto & d : cfg.at("datasets")) {
            DatasetSpec ds;
            ds.name = d.at("name").get<std::string>();
            ds.protocol = parse_protocol(d.at("protocol").get<std::string>());
            const auto path = resolve(d.at("path").get<std::string>());
            require_file(path, "dataset");
            if (ds.protocol == Protocol::icat) {
                ds.triplets = load_triplets(path);
            } else {
                ds.mc_items = load_mc_items(path);
            }
            if (d.contains("vector_axis")) {
                ds.vector_axis = d.at("vector_axis").get<std::string>();
            }
            inputs.datasets[ds.name] = path;
            spec.datasets.push_back(std::move(ds));
        }
        if (cfg.contains("vectors")) {
            for (const auto & [axis, p] : cfg.at("vectors").items()) {
                const auto path = resolve(p.get<std::string>());
                spec.vectors[axis] = open_vector(path);
                inputs.vectors[axis] = path;
            }
        }
        spec.lambda = cfg.value("lambda", 1.0);
        if (cfg.contains("layers")) {
            spec.layers = cfg.at("layers").get<std::vector<size_t>>();
        }
        spec.options.max_new_tokens = cfg.value("max_new_tokens", a.max_new_tokens);
        spec.options.self_debias_k = cfg.value("self_debias_k", a.self_debias_k);
        config = {{"methods", cfg.at("methods")},
                  {"lambda", spec.lambda},
                  {"layers", spec.layers ? json(*spec.layers) : json()},
                  {"max_new_tokens", spec.options.max_new_tokens},
                  {"self_debias_k", spec.options.self_debias_k},
                  {"prompt_template", "question, blank line, (label) option lines, Answer:"}};
        json dsets = json::array();
        for (const auto & ds : spec.datasets) {
            dsets.push_back({{"name", ds.name}, {"protocol", protocol_name(ds.protocol)}});
        }
        config["datasets"] = dsets;
    } catch (const json::exception & e) {
        throw UsageError("matrix config " + a.matrix + ": " + e.what());
    } catch (const Error & e) {
        if (e.code() == ErrorCode::InvalidArgument) {
            throw UsageError(e.what());
        }
        throw;
    }
    spec.options.workers = c.workers;

    const auto manifest = make_manifest("eval --matrix", config, inputs);
    const auto mj = manifest_json(manifest, config);
    auto cells = run_matrix(ckpt, spec);

    json out_cells = json::array();
    std::string csv = "method,dataset,axis,metric,value,n,unparseable,status\n";
    for (auto & cell : cells) {
        json j = {{"method", method_name(cell.method)},
                  {"dataset", cell.dataset},
                  {"axis", cell.axis},
                  {"protocol", protocol_name(cell.protocol)},
                  {"status", cell_status_name(cell.status)}};
        if (cell.report) {
            cell.report->manifest_digest = manifest.digest();
            j["report"] = report_to_json(*cell.report);
            csv += report_csv_row(*cell.report) + ",ok\n";
            print_report(*cell.report);
        } else {
            if (!cell.error.empty()) {
                j["error"] = cell.error;
            }
            const auto metric = cell.protocol == Protocol::icat ? Metric::icat
                                : cell.protocol == Protocol::nonstereo ? Metric::nonstereo_rate
                                                                        : Metric::accuracy;
            csv += std::string(method_name(cell.method)) + "," + cell.dataset + "," + cell.axis + "," +
                   std::string(metric_name(metric)) + ",,,," + cell_status_name(cell.status) + "\n";
            std::printf("%s,%s,%s,%s\n", std::string(method_name(cell.method)).c_str(), cell.dataset.c_str(),
                        cell.axis.c_str(), cell.error.empty() ? cell_status_name(cell.status).c_str()
                                                              : cell.error.c_str());
        }
        out_cells.push_back(j);
    }
    if (!a.out.empty()) {
        write_json(fs::path(a.out) / "matrix.json", json{{"cells", out_cells}}, mj);
        write_csv(fs::path(a.out) / "matrix.csv", csv, mj);
    }
    return 0;
}

int run_eval(const EvalArgs & a, const Common & c) {
    if (!a.matrix.empty()) {
        return run_matrix_cmd(a, c);
    }
    if (a.dataset.empty()) {
        throw UsageError("eval needs --dataset or --matrix");
    }
    const auto protocol = parse_protocol(a.protocol);
    const auto method = parse_eval_method(a.method);
    if (method == Method::self_debias && protocol == Protocol::icat) {
        throw UsageError("self_debias does not apply to the icat protocol");
    }
    if (method == Method::steering && a.vector.empty()) {
        throw UsageError("--method steering needs --vector");
    }
    require_file(a.dataset, "dataset");
    const auto ckpt = open_model(a.model);

    json config = {{"protocol", a.protocol}, {"method", a.method}, {"max_new_tokens", a.max_new_tokens},
                   {"self_debias_k", a.self_debias_k}};
    ManifestInputs inputs{.checkpoint = a.model, .datasets = {{"dataset", a.dataset}}};
    std::vector<Injection> injections;
    if (method == Method::steering) {
        const auto v = open_vector(a.vector);
        inputs.vectors["vector"] = a.vector;
        std::optional<std::vector<size_t>> layers;
        if (!a.layers.empty()) {
            layers = parse_layers(a.layers);
        }
        const auto spec = make_injection(v, a.lambda, layers);
        injections.push_back(spec.to_injection());
        config["lambda"] = a.lambda;
        config["layers"] = spec.layers;
    }
    const auto manifest = make_manifest("eval", config, inputs);
    const auto mj = manifest_json(manifest, config);

    EvalOptions opts{.max_new_tokens = a.max_new_tokens, .self_debias_k = a.self_debias_k, .workers = c.workers};
    EvalReport r;
    switch (protocol) {
        case Protocol::mc:
            r = eval_mc(ckpt, load_mc_items(a.dataset), injections, method, opts);
            break;
        case Protocol::nonstereo:
            r = eval_nonstereo_rate(ckpt, load_mc_items(a.dataset), injections, method, opts);
            break;
        case Protocol::icat:
            r = eval_icat(ckpt, load_triplets(a.dataset), injections, method, opts);
            break;
    }
    r.dataset = a.name.empty() ? fs::path(a.dataset).stem().string() : a.name;
    r.manifest_digest = manifest.digest();
    print_report(r);
    for (const auto & [k, v] : r.details) {
        std::printf("  %s = %.4f\n", k.c_str(), v);
    }
    if (!a.out.empty()) {
        write_json(fs::path(a.out) / "eval.json", report_to_json(r), mj);
        write_csv(fs::path(a.out) / "eval.csv", reports_csv_header() + "\n" + report_csv_row(r) + "\n", mj);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
    std::string model;
    std::string prompt;
    std::string prompt_file;
    std::string vector;
    std::optional<double> lambda;
    std::string layers;
    size_t max_tokens = 32;
    size_t beam_k = 1;
    std::string out;
};

int run_generate(const GenerateArgs & a) {
    if (a.prompt.empty() == a.prompt_file.empty()) {
        throw UsageError("give exactly one of --prompt or --prompt-file");
    }
    if (a.vector.empty() && a.lambda && *a.lambda != 0.0) {
        throw UsageError("a nonzero --lambda needs --vector");
    }
    std::string prompt = a.prompt;
    ManifestInputs inputs{.checkpoint = a.model};
    if (!a.prompt_file.empty()) {
        require_file(a.prompt_file, "prompt file");
        std::ifstream in(a.prompt_file, std::ios::binary);
        prompt.assign(std::istreambuf_iterator<char>(in), {});
        inputs.datasets["prompt"] = a.prompt_file;
    }
    const auto ckpt = open_model(a.model);
    const double lambda = a.lambda.value_or(a.vector.empty() ? 0.0 : 1.0);

    std::vector<Injection> injections;
    json config = {{"lambda", lambda}, {"max_tokens", a.max_tokens}, {"beam_k", a.beam_k}};
    if (!a.vector.empty()) {
        const auto v = open_vector(a.vector);
        inputs.vectors["vector"] = a.vector;
        std::optional<std::vector<size_t>> layers;
        if (!a.layers.empty()) {
            layers = parse_layers(a.layers);
        }
        const auto spec = make_injection(v, lambda, layers);
        injections.push_back(spec.to_injection());
        config["layers"] = spec.layers;
    }
    DecodeParams params;
    params.max_new_tokens = a.max_tokens;
    if (a.beam_k > 1) {
        params.mode = DecodeMode::beam;
        params.beam_k = a.beam_k;
    }
    const auto ids = tokenize(prompt);
    const auto base = generate(ckpt, ids, params).front();
    const auto steered = generate(ckpt, ids, params, injections).front();
    const auto base_text = detokenize(base.tokens);
    const auto steered_text = detokenize(steered.tokens);
    std::printf("baseline (lambda=0): %s\n", json(base_text).dump().c_str());
    std::printf("steered  (lambda=%g): %s\n", lambda, json(steered_text).dump().c_str());
    if (!a.out.empty()) {
        const auto mj = manifest_json(make_manifest("generate", config, inputs), config);
        json body = {{"prompt", prompt},
                     {"baseline", {{"text", base_text}, {"logprob", base.logprob}}},
                     {"steered", {{"text", steered_text}, {"logprob", steered.logprob}, {"lambda", lambda}}}};
        write_json(a.out, body, mj);
    }
    return 0;
}

void report_error(const Common & c, const std::string & kind, const std::string & message, int exit_code) {
    if (c.json_errors) {
        std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", exit_code}}.dump() << "\n";
    } else {
        std::cerr << "steerlab: " << message << "\n";
    }
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"steerlab: steering-vector extraction, probing and evaluation"};
    app.fallthrough();
    app.require_subcommand(1);
    app.set_config("--config", "", "INI/TOML file with option defaults; [section] names match subcommands");

    Common common;
    common.workers = default_workers();
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--json") == 0) {
            common.json_errors = true;
        }
    }
    app.add_option("--workers", common.workers, "worker threads (default: STEERLAB_WORKERS or all cores)")
        ->check(CLI::PositiveNumber);
    app.add_flag("--json", common.json_errors, "print errors to stderr as JSON");

    InitArgs init;
    auto * init_cmd = app.add_subcommand("init-toy-model", "write a small seeded checkpoint");
    init_cmd->add_option("--kind", init.kind, "random, planted or constant")
        ->check(CLI::IsMember({"random", "planted", "constant"}));
    init_cmd->add_option("--out", init.out, "checkpoint path")->required();
    init_cmd->add_option("--seed", init.seed, "RNG seed");
    init_cmd->add_option("--layers", init.config.n_layers, "number of blocks");
    init_cmd->add_option("--d-model", init.config.d_model, "residual width");
    init_cmd->add_option("--heads", init.config.n_heads, "attention heads");
    init_cmd->add_option("--d-ff", init.config.d_ff, "MLP width");
    init_cmd->add_option("--max-seq", init.config.max_seq, "maximum sequence length");

    ExtractArgs ex;
    auto * ex_cmd = app.add_subcommand("extract", "extract one steering vector per (axis, layer)");
    ex_cmd->add_option("--pairs", ex.pairs, "contrastive pairs JSONL")->required();
    ex_cmd->add_option("--model", ex.model, "checkpoint")->required();
    ex_cmd->add_option("--layers,--layer", ex.layers, "layers, e.g. 2 or 0-3 or 0,2")->required();
    ex_cmd->add_option("--method", ex.method, "pca or mean_diff")->check(CLI::IsMember({"pca", "mean_diff"}));
    ex_cmd->add_flag("--stimulus", ex.stimulus, "prepend the axis stimulus sentence to both sides");
    ex_cmd->add_flag("--raw", ex.raw, "skip per-state L2 normalization before differencing");
    ex_cmd->add_option("--out", ex.out, "output directory")->required();

    ProbeArgs pr;
    auto * pr_cmd = app.add_subcommand("probe", "linear separability of positive vs negative states per layer");
    pr_cmd->add_option("--pairs", pr.pairs, "contrastive pairs JSONL")->required();
    pr_cmd->add_option("--model", pr.model, "checkpoint")->required();
    pr_cmd->add_option("--layers", pr.layers, "layers to probe")->required();
    pr_cmd->add_flag("--stimulus", pr.stimulus, "prepend the axis stimulus sentence");
    pr_cmd->add_flag("--full-dim", pr.full_dim, "classify raw hidden states instead of the 2-D projection");
    pr_cmd->add_flag("--holdout", pr.holdout, "score on held-out pairs");
    pr_cmd->add_option("--out", pr.out, "output directory")->required();

    SweepLayersArgs sl;
    auto * sl_cmd = app.add_subcommand("sweep-layers", "MC accuracy with a vector injected at each layer");
    sl_cmd->add_option("--model", sl.model, "checkpoint")->required();
    sl_cmd->add_option("--vector", sl.vectors, "vector files, one per layer")->required();
    sl_cmd->add_option("--dataset", sl.dataset, "validation MC JSONL")->required();
    sl_cmd->add_option("--lambda", sl.lambda, "coefficient");
    sl_cmd->add_option("--max-new-tokens", sl.max_new_tokens, "generation budget");
    sl_cmd->add_option("--out", sl.out, "output directory")->required();

    SweepCoeffArgs sc;
    auto * sc_cmd = app.add_subcommand("sweep-coeff", "task vs general accuracy over a coefficient grid");
    sc_cmd->add_option("--model", sc.model, "checkpoint")->required();
    sc_cmd->add_option("--vector", sc.vector, "vector file")->required();
    sc_cmd->add_option("--dataset", sc.dataset, "task MC JSONL")->required();
    sc_cmd->add_option("--general", sc.general, "general-capability MC JSONL")->required();
    sc_cmd->add_option("--grid", sc.grid, "lo:hi:step or comma list (default -2:2:0.2)");
    sc_cmd->add_option("--max-cost", sc.max_cost, "allowed general-accuracy drop in points");
    sc_cmd->add_option("--layers", sc.layers, "injection layers (default: the vector's layer)");
    sc_cmd->add_option("--max-new-tokens", sc.max_new_tokens, "generation budget");
    sc_cmd->add_option("--out", sc.out, "output directory")->required();

    EvalArgs ev;
    auto * ev_cmd = app.add_subcommand("eval", "evaluate one method on one dataset, or a --matrix");
    ev_cmd->add_option("--model", ev.model, "checkpoint")->required();
    ev_cmd->add_option("--dataset", ev.dataset, "MC or triplet JSONL");
    ev_cmd->add_option("--name", ev.name, "dataset name in reports (default: file stem)");
    ev_cmd->add_option("--protocol", ev.protocol, "mc, icat or nonstereo")
        ->check(CLI::IsMember({"mc", "icat", "nonstereo"}));
    ev_cmd->add_option("--method", ev.method, "baseline, prompting, steering or self_debias")
        ->check(CLI::IsMember({"baseline", "prompting", "steering", "self_debias", "self-debias"}));
    ev_cmd->add_option("--vector", ev.vector, "vector file for --method steering");
    ev_cmd->add_option("--lambda", ev.lambda, "coefficient");
    ev_cmd->add_option("--layers", ev.layers, "injection layers (default: the vector's layer)");
    ev_cmd->add_option("--max-new-tokens", ev.max_new_tokens, "generation budget");
    ev_cmd->add_option("--self-debias-k", ev.self_debias_k, "beam candidates for self_debias")
        ->check(CLI::PositiveNumber);
    ev_cmd->add_option("--matrix", ev.matrix, "JSON run-matrix config");
    ev_cmd->add_option("--out", ev.out, "output directory");

    GenerateArgs ge;
    auto * ge_cmd = app.add_subcommand("generate", "baseline and steered generations side by side");
    ge_cmd->add_option("--model", ge.model, "checkpoint")->required();
    ge_cmd->add_option("--prompt", ge.prompt, "prompt text");
    ge_cmd->add_option("--prompt-file", ge.prompt_file, "file holding the prompt");
    ge_cmd->add_option("--vector", ge.vector, "vector file");
    ge_cmd->add_option("--lambda", ge.lambda, "coefficient (default 1 with a vector)");
    ge_cmd->add_option("--layers", ge.layers, "injection layers");
    ge_cmd->add_option("--max-tokens", ge.max_tokens, "new tokens");
    ge_cmd->add_option("--beam-k", ge.beam_k, "beam width (1 = greedy)")->check(CLI::PositiveNumber);
    ge_cmd->add_option("--out", ge.out, "JSON output file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        if (e.get_exit_code() == 0) {
            return app.exit(e);
        }
        report_error(common, "UsageError", e.what(), 2);
        return 2;
    }

    try {
        if (*init_cmd) return run_init(init);
        if (*ex_cmd) return run_extract(ex, common);
        if (*pr_cmd) return run_probe(pr, common);
        if (*sl_cmd) return run_sweep_layers(sl, common);
        if (*sc_cmd) return run_sweep_coeff(sc, common);
        if (*ev_cmd) return run_eval(ev, common);
        if (*ge_cmd) return run_generate(ge);
    } catch (const UsageError & e) {
        report_error(common, "UsageError", e.what(), 2);
        return 2;
    } catch (const Error & e) {
        report_error(common, std::string(error_code_name(e.code())), e.what(), 1);
        return 1;
    } catch (const std::exception & e) {
        report_error(common, "RuntimeError", e.what(), 1);
        return 1;
    }
    return 2;
}
