// Acceptance checks A1-A11. Prints one PASS/FAIL line per criterion; exits 1 if any fail.

#include "cli_runner.hpp"

#include "steer/eval.hpp"
#include "steer/manifest.hpp"
#include "steer/probes.hpp"
#include "steer/steering.hpp"
#include "steer/toy.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>

using namespace steer;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path data_dir = STEER_DATA_DIR;

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char * f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

std::vector<double> random_unit(size_t d, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::vector<double> w(d);
    for (auto & x : w) {
        x = normal(rng);
    }
    const double n = norm2(w);
    for (auto & x : w) {
        x /= n;
    }
    return w;
}

std::vector<ContrastivePair> pairs_for(const std::string & axis) {
    auto pairs = load_pairs(data_dir / "pairs_mini.jsonl");
    std::erase_if(pairs, [&](const ContrastivePair & p) { return p.axis != axis; });
    return pairs;
}

std::shared_ptr<const SteeringVector> planted_vector(const Checkpoint & ckpt, const std::string & axis) {
    const auto cap = capture_differences(ckpt, pairs_for(axis), toy::k_planted_layer);
    return std::make_shared<const SteeringVector>(
        extract_vector(cap.diffs, ExtractionMethod::pca, axis, toy::k_planted_layer));
}

// --------------------------------------------------------------------------

Outcome a1_pc_oracle() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<size_t> rows_d(4, 64), cols_d(4, 32);
    double worst_cos = 1.0;
    double worst_rel = 0.0;
    for (int i = 0; i < 100; ++i) {
        const auto m = testsupport::gaussian_matrix(rows_d(rng), cols_d(rng), 1000 + i);
        const auto pc = first_principal_component(m);
        const auto oracle = testsupport::top_gram_eigen(m);
        worst_cos = std::min(worst_cos, testsupport::abs_cosine(pc.components(), oracle.vector));
        worst_rel = std::max(worst_rel, std::abs(testsupport::rayleigh(m, pc.components()) - oracle.value) / oracle.value);
    }
    const double t = seconds_since(t0);
    return {worst_cos >= 1 - 1e-6 && worst_rel <= 1e-9 && t < 10.0,
            fmt("min |cos| %.12f, max Rayleigh rel err %.2e, %.2f s", worst_cos, worst_rel, t)};
}

Outcome a2_planted_recovery() {
    const auto t0 = Clock::now();
    double worst = 1.0;
    for (uint64_t seed = 0; seed < 20; ++seed) {
        const size_t d = 32;
        const auto w = random_unit(d, 500 + seed);
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> scale(0.5, 2.0);
        const double c = scale(rng);
        std::normal_distribution<double> noise(0.0, 0.01 * c);
        Matrix m(64, d);
        for (size_t r = 0; r < 64; ++r) {
            for (size_t k = 0; k < d; ++k) {
                m(r, k) = c * w[k] + noise(rng);
            }
        }
        for (auto method : {ExtractionMethod::pca, ExtractionMethod::mean_diff}) {
            const auto v = extract_vector(m, method, "age", 0);
            worst = std::min(worst, dot(v.direction.components(), w));
        }
    }
    const double t = seconds_since(t0);
    return {worst >= 0.99 && t < 5.0, fmt("min recovery cosine %.6f over 20 seeds x {pca, mean_diff}, %.2f s", worst, t)};
}

Outcome a3_zero_identity() {
    const auto ckpt = toy::planted_letter_checkpoint();
    const auto age = planted_vector(ckpt, "age");
    const auto inj = make_injection(age, 0.0).to_injection();
    const std::span<const Injection> zero(&inj, 1);

    const auto bbq = load_mc_items(data_dir / "bbq_mini.jsonl");
    const auto general = load_mc_items(data_dir / "general_mini.jsonl");
    const auto triplets = load_triplets(data_dir / "triplets_mini.jsonl");

    size_t prompts = 0;
    bool logits_equal = true;
    for (const auto * set : {&bbq, &general}) {
        for (const auto & it : *set) {
            const auto ids = tokenize(render_mc_prompt(it));
            logits_equal = logits_equal && forward(ckpt, ids).logits == forward(ckpt, ids, {}, zero).logits;
            ++prompts;
        }
    }
    auto same = [](EvalReport a, EvalReport b) {
        b.method = a.method;
        return a == b;
    };
    bool reports_equal = true;
    for (auto method : {Method::baseline, Method::prompting}) {
        reports_equal = reports_equal && same(eval_mc(ckpt, bbq, {}, method), eval_mc(ckpt, bbq, zero, method));
        reports_equal = reports_equal && same(eval_mc(ckpt, general, {}, method), eval_mc(ckpt, general, zero, method));
        reports_equal = reports_equal &&
                        same(eval_nonstereo_rate(ckpt, bbq, {}, method), eval_nonstereo_rate(ckpt, bbq, zero, method));
        reports_equal = reports_equal && same(eval_icat(ckpt, triplets, {}, method), eval_icat(ckpt, triplets, zero, method));
    }
    return {logits_equal && reports_equal,
            fmt("logits %s over %zu prompts; mc/nonstereo/icat reports %s", logits_equal ? "identical" : "DIFFER",
                prompts, reports_equal ? "identical" : "DIFFER")};
}

Outcome a4_additivity() {
    const auto ckpt = toy::random_checkpoint(ModelConfig{}, 31);
    const auto & cfg = ckpt.config();
    const auto ids = tokenize("The quick brown fox");
    double worst = 0.0;
    for (size_t l = 0; l <= cfg.n_layers; ++l) {
        const auto w = random_unit(cfg.d_model, 70 + l);
        const TapRequest tap{l, k_last_position};
        const auto base = forward(ckpt, ids, std::span(&tap, 1)).taps[0].hidden;
        for (double lambda : {-2.0, -1.0, 0.5, 1.6}) {
            const Injection inj{w, {l}, lambda};
            const auto steered = forward(ckpt, ids, std::span(&tap, 1), std::span(&inj, 1)).taps[0].hidden;
            for (size_t k = 0; k < w.size(); ++k) {
                worst = std::max(worst, std::abs(steered[k] - base[k] - lambda * w[k]));
            }
        }
    }
    return {worst <= 1e-6, fmt("max |tap diff - lambda*w| %.2e over sites 0..%zu", worst, cfg.n_layers)};
}

Outcome a5_logit_monotonicity() {
    const auto ckpt = toy::random_checkpoint(ModelConfig{}, 41);
    const auto & cfg = ckpt.config();
    const auto & out = ckpt.tensor("output.weight").values;
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> len_d(1, 40), byte_d(32, 126), tok_d(0, 255);
    size_t violations = 0;
    double min_gain = 1e300;
    for (int p = 0; p < 50; ++p) {
        std::string prompt(static_cast<size_t>(len_d(rng)), ' ');
        for (auto & ch : prompt) {
            ch = static_cast<char>(byte_d(rng));
        }
        const auto a = static_cast<size_t>(tok_d(rng));
        std::vector<double> w(out.begin() + static_cast<long>(a * cfg.d_model),
                              out.begin() + static_cast<long>((a + 1) * cfg.d_model));
        const auto ids = tokenize(prompt);
        double prev = forward(ckpt, ids).logits.back()[a];
        for (double lambda : {0.5, 1.0, 2.0}) {
            const Injection inj{w, {cfg.n_layers}, lambda};
            const double cur = forward(ckpt, ids, {}, std::span(&inj, 1)).logits.back()[a];
            violations += cur > prev ? 0 : 1;
            min_gain = std::min(min_gain, cur - prev);
            prev = cur;
        }
    }
    return {violations == 0, fmt("50 fuzz prompts, %zu violations, smallest step gain %.4f", violations, min_gain)};
}

Outcome a6_behavioral_shift() {
    const auto ckpt = toy::planted_letter_checkpoint();
    const auto items = load_mc_items(data_dir / "bbq_mini.jsonl");
    double base_correct = 0.0;
    double steer_correct = 0.0;
    for (const std::string axis : {"age", "gender"}) {
        std::vector<McItem> subset;
        std::copy_if(items.begin(), items.end(), std::back_inserter(subset),
                     [&](const McItem & it) { return it.axis == axis; });
        const auto inj = make_injection(planted_vector(ckpt, axis), 1.0).to_injection();
        base_correct += eval_mc(ckpt, subset, {}, Method::baseline).details.at("correct");
        steer_correct += eval_mc(ckpt, subset, std::span(&inj, 1), Method::steering).details.at("correct");
    }
    const double n = static_cast<double>(items.size());
    const double base = 100.0 * base_correct / n;
    const double steered = 100.0 * steer_correct / n;
    return {steered - base >= 10.0, fmt("%zu items: baseline %.1f, steered %.1f (+%.1f points)", items.size(), base,
                                        steered, steered - base)};
}

Outcome a7_probe_controls() {
    const size_t n = 32;
    const size_t d = 16;
    Matrix pos = testsupport::gaussian_matrix(n, d, 7);
    Matrix neg = testsupport::gaussian_matrix(n, d, 8);
    for (size_t i = 0; i < n; ++i) {
        pos(i, 3) += 6.0;
        neg(i, 3) -= 6.0;
    }
    const double separable = probe_points(0, pos, neg).accuracy;

    const Matrix cloud = testsupport::gaussian_matrix(1000, 8, 9);
    std::vector<int> labels(1000);
    for (size_t i = 0; i < labels.size(); ++i) {
        labels[i] = static_cast<int>(i % 2);
    }
    std::mt19937_64 rng(12);
    std::shuffle(labels.begin(), labels.end(), rng);
    const double shuffled = fit_probe(cloud, labels).accuracy;
    return {separable == 1.0 && shuffled >= 0.4 && shuffled <= 0.6,
            fmt("separable clusters %.4f, shuffled labels (n=1000) %.4f", separable, shuffled)};
}

Outcome a8_icat() {
    bool ok = compute_icat(100, 50) == 100.0 && compute_icat(100, 0) == 0.0 && compute_icat(100, 100) == 0.0 &&
              compute_icat(37, 0) == 0.0 && compute_icat(37, 100) == 0.0 && std::abs(compute_icat(90, 60) - 72.0) < 1e-12;
    size_t grid = 0;
    for (double lms : {0.0, 42.0, 90.0, 100.0}) {
        for (int i = 0; i <= 20; ++i) {
            const double ss = 5.0 * i;
            ok = ok && compute_icat(lms, ss) == compute_icat(lms, 100.0 - ss);
            ok = ok && compute_icat(lms, ss) <= lms;
            ++grid;
        }
    }
    return {ok, fmt("fixed points and symmetry over %zu (lms, ss) grid points", grid)};
}

Outcome a9_self_debias() {
    const auto ckpt = toy::random_checkpoint(ModelConfig{}, 5);
    const std::string prompt = "Describe the new neighbour.";
    const size_t max_new = 6;
    const auto beams = generate(ckpt, tokenize(prompt), DecodeParams{DecodeMode::beam, 5, max_new, 0.0});
    const auto target = detokenize(beams[3].tokens);

    BiasClassifier fourth_ok = [&](std::string_view, std::string_view c) -> std::optional<bool> { return c != target; };
    const auto picked = self_debias(ckpt, prompt, 5, fourth_ok, max_new);
    BiasClassifier all_yes = [](std::string_view, std::string_view) -> std::optional<bool> { return true; };
    const auto fallback = self_debias(ckpt, prompt, 5, all_yes, max_new);
    BiasClassifier all_no = [](std::string_view, std::string_view) -> std::optional<bool> { return false; };
    const auto single = self_debias(ckpt, prompt, 1, all_no, max_new);
    const auto greedy = generate(ckpt, tokenize(prompt), DecodeParams{DecodeMode::greedy, 1, max_new, 0.0}).front();

    const bool first_no = picked.chosen == 3 && !picked.fell_back && picked.chosen_generation().tokens == beams[3].tokens;
    const bool fell_back = fallback.fell_back && fallback.chosen_generation().tokens == beams[0].tokens;
    const bool k1 = single.chosen_generation().tokens == greedy.tokens;
    return {first_no && fell_back && k1, fmt("first-no pick %s, all-yes fallback %s, k=1 vs greedy %s",
                                             first_no ? "ok" : "WRONG", fell_back ? "ok" : "WRONG", k1 ? "ok" : "WRONG")};
}

Outcome a10_beam_oracle() {
    size_t checked = 0;
    bool ok = true;
    for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        ModelConfig cfg;
        cfg.n_layers = 2;
        cfg.d_model = 16;
        cfg.n_heads = 2;
        cfg.d_ff = 32;
        cfg.vocab_size = 4;
        cfg.max_seq = 16;
        const auto ckpt = toy::random_checkpoint(cfg, seed);
        const std::vector<token_id> prompt = {1, 3, 0};
        std::vector<std::pair<double, std::vector<token_id>>> all;
        for (token_id a = 0; a < 4; ++a) {
            for (token_id b = 0; b < 4; ++b) {
                const std::vector<token_id> cont = {a, b};
                all.push_back({sequence_logprob(ckpt, prompt, cont), cont});
            }
        }
        std::sort(all.begin(), all.end(), [](const auto & x, const auto & y) {
            return x.first != y.first ? x.first > y.first : x.second < y.second;
        });
        // A beam at least as wide as the vocabulary never prunes a prefix, so it must match exactly.
        for (size_t k : {4u, 8u, 16u}) {
            const auto beams = generate(ckpt, prompt, DecodeParams{DecodeMode::beam, k, 2, 0.0});
            ok = ok && beams.size() == k;
            for (size_t i = 0; ok && i < k; ++i) {
                ok = beams[i].tokens == all[i].second && std::abs(beams[i].logprob - all[i].first) <= 1e-9;
            }
            ++checked;
        }
        // Narrower beams may prune; their scores are still exact and bounded by the optimum.
        for (size_t k : {1u, 2u, 3u}) {
            const auto beams = generate(ckpt, prompt, DecodeParams{DecodeMode::beam, k, 2, 0.0});
            for (size_t i = 0; ok && i < beams.size(); ++i) {
                const double exact = sequence_logprob(ckpt, prompt, beams[i].tokens);
                ok = std::abs(beams[i].logprob - exact) <= 1e-9 && beams[i].logprob <= all[i].first + 1e-12 &&
                     (i == 0 || beams[i - 1].logprob >= beams[i].logprob);
            }
        }
    }
    return {ok, fmt("%zu (seed, k >= vocab) runs equal exhaustive enumeration, vocab 4, 2 new tokens", checked)};
}

// --------------------------------------------------------------------------
// A11

struct PipelineRun {
    bool ok = true;
    std::string failure;
    std::vector<fs::path> outputs; // relative to the run directory
};

PipelineRun run_pipeline(const fs::path & dir) {
    PipelineRun run;
    const std::string env = "SOURCE_DATE_EPOCH=1700000000 STEERLAB_WORKERS=2";
    const auto data = [](const std::string & f) { return (data_dir / f).string(); };
    const auto p = [&](const std::string & f) { return (dir / f).string(); };

    const std::vector<std::vector<std::string>> steps = {
        {"init-toy-model", "--kind", "planted", "--out", p("model.ckpt")},
        {"extract", "--pairs", data("pairs_mini.jsonl"), "--model", p("model.ckpt"), "--layers", "0-4", "--out",
         p("vectors")},
        {"extract", "--pairs", data("pairs_mini.jsonl"), "--model", p("model.ckpt"), "--layers", "2", "--stimulus",
         "--out", p("vectors_stimulus")},
        {"probe", "--pairs", data("probe_pairs_planted.jsonl"), "--model", p("model.ckpt"), "--layers", "0-4", "--out",
         p("probe")},
        {"sweep-coeff", "--model", p("model.ckpt"), "--vector", p("vectors/age_layer2.json"), "--dataset",
         data("bbq_mini.jsonl"), "--general", data("general_mini.jsonl"), "--grid", "-2:2:0.2", "--out", p("sweep")},
        {"eval", "--model", p("model.ckpt"), "--matrix", p("matrix.json"), "--out", p("matrix")},
    };
    const json matrix = {
        {"methods", {"baseline", "prompting", "steering", "self_debias"}},
        {"datasets",
         {{{"name", "bbq_mini"}, {"protocol", "mc"}, {"path", data("bbq_mini.jsonl")}},
          {{"name", "bbq_mini_nonstereo"}, {"protocol", "nonstereo"}, {"path", data("bbq_mini.jsonl")}},
          {{"name", "triplets_mini"}, {"protocol", "icat"}, {"path", data("triplets_mini.jsonl")}}}},
        {"vectors", {{"age", "vectors/age_layer2.json"}, {"gender", "vectors/gender_layer2.json"}}},
        {"lambda", 1.0},
        {"layers", {2}},
    };
    testsupport::write_text(dir / "matrix.json", matrix.dump(2));
    for (const auto & args : steps) {
        const auto r = testsupport::run_steerlab(args, dir, env);
        if (r.exit_code != 0) {
            run.ok = false;
            run.failure = args[0] + " exited " + std::to_string(r.exit_code) + ": " + r.err;
            return run;
        }
    }
    for (const auto & e : fs::recursive_directory_iterator(dir)) {
        const auto rel = fs::relative(e.path(), dir);
        if (e.is_regular_file() && rel != "stdout.txt" && rel != "stderr.txt" && rel != "matrix.json") {
            run.outputs.push_back(rel);
        }
    }
    std::sort(run.outputs.begin(), run.outputs.end());
    return run;
}

// Checks the embedded manifest's shape and that its digests are self-consistent.
std::string check_manifest(const json & m) {
    for (const char * key : {"command", "config_digest", "checkpoint_digest", "dataset_digests", "vector_digests",
                             "seed", "tool_version", "timestamp", "config", "digest"}) {
        if (!m.contains(key)) {
            return std::string("manifest lacks ") + key;
        }
    }
    if (m.at("timestamp") != "2023-11-14T22:13:20Z") {
        return "manifest timestamp ignores SOURCE_DATE_EPOCH";
    }
    if (sha256_hex(m.at("config").dump()) != m.at("config_digest")) {
        return "config_digest mismatch";
    }
    json core = m;
    core.erase("timestamp");
    core.erase("config");
    core.erase("digest");
    if (sha256_hex(core.dump()) != m.at("digest")) {
        return "manifest digest mismatch";
    }
    return {};
}

std::vector<std::string> split(const std::string & s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, sep)) {
        out.push_back(part);
    }
    return out;
}

std::string check_csv(const std::string & text, const std::string & header, size_t min_rows) {
    const auto lines = split(text, '\n');
    if (lines.size() < 2 || lines[0].rfind("# manifest: ", 0) != 0) {
        return "missing manifest line";
    }
    if (auto err = check_manifest(json::parse(lines[0].substr(12))); !err.empty()) {
        return err;
    }
    if (lines[1] != header) {
        return "header '" + lines[1] + "'";
    }
    const size_t cols = split(header, ',').size();
    for (size_t i = 2; i < lines.size(); ++i) {
        if (split(lines[i], ',').size() != cols) {
            return "row " + std::to_string(i) + " has the wrong column count";
        }
    }
    if (lines.size() - 2 < min_rows) {
        return "only " + std::to_string(lines.size() - 2) + " rows";
    }
    return {};
}

std::string check_schema(const fs::path & dir, const std::vector<fs::path> & outputs) {
    size_t vectors = 0;
    for (const auto & rel : outputs) {
        const auto text = testsupport::read_text(dir / rel);
        const auto name = rel.filename().string();
        std::string err;
        if (rel.extension() == ".ckpt") {
            const auto ckpt = load_checkpoint(dir / rel);
            (void)ckpt;
            continue;
        }
        if (rel.extension() == ".json") {
            const auto j = json::parse(text);
            if (!j.contains("manifest")) {
                return rel.string() + ": no manifest";
            }
            err = check_manifest(j.at("manifest"));
            if (err.empty() && rel.parent_path().string().rfind("vectors", 0) == 0) {
                const auto v = load_vector(dir / rel);
                err = std::abs(norm2(v.direction.components()) - 1.0) < 1e-9 ? "" : "vector not unit length";
                ++vectors;
            } else if (err.empty() && name == "matrix.json" && j.at("cells").size() != 24) {
                err = "expected 24 matrix cells";
            } else if (err.empty() && name == "sweep_coeff.json" && j.at("grid").size() != 21) {
                err = "expected 21 grid points";
            }
        } else if (name == "matrix.csv") {
            err = check_csv(text, "method,dataset,axis,metric,value,n,unparseable,status", 24);
        } else if (name == "sweep_coeff.csv") {
            err = check_csv(text, "lambda,task_accuracy,general_accuracy", 21);
        } else if (rel.extension() == ".csv") {
            err = check_csv(text, "x,y,label", 2);
        } else {
            err = "unexpected file";
        }
        if (!err.empty()) {
            return rel.string() + ": " + err;
        }
    }
    if (vectors != 12) {
        return "expected 12 vector files, found " + std::to_string(vectors);
    }
    return {};
}

Outcome a11_pipeline() {
    const auto root = testsupport::temp_dir("acceptance_pipeline");
    const auto t0 = Clock::now();
    std::vector<PipelineRun> runs;
    for (const std::string name : {"run1", "run2"}) {
        fs::create_directories(root / name);
        runs.push_back(run_pipeline(root / name));
        if (!runs.back().ok) {
            return {false, name + ": " + runs.back().failure};
        }
    }
    const double t = seconds_since(t0) / 2.0;
    if (runs[0].outputs != runs[1].outputs) {
        return {false, "reruns produced different file sets"};
    }
    size_t differing = 0;
    for (const auto & rel : runs[0].outputs) {
        differing += testsupport::read_text(root / "run1" / rel) == testsupport::read_text(root / "run2" / rel) ? 0 : 1;
    }
    std::string schema;
    try {
        schema = check_schema(root / "run1", runs[0].outputs);
    } catch (const std::exception & e) {
        schema = e.what();
    }
    const bool ok = differing == 0 && schema.empty() && t < 300.0;
    return {ok, fmt("%zu files, %zu differ on rerun, schema %s, %.1f s per run", runs[0].outputs.size(), differing,
                    schema.empty() ? "ok" : schema.c_str(), t)};
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"A1", a1_pc_oracle},       {"A2", a2_planted_recovery}, {"A3", a3_zero_identity},
        {"A4", a4_additivity},      {"A5", a5_logit_monotonicity}, {"A6", a6_behavioral_shift},
        {"A7", a7_probe_controls},  {"A8", a8_icat},             {"A9", a9_self_debias},
        {"A10", a10_beam_oracle},   {"A11", a11_pipeline},
    };
    int failed = 0;
    for (const auto & [id, check] : criteria) {
        Outcome o;
        try {
            o = check();
        } catch (const std::exception & e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += o.pass ? 0 : 1;
        std::printf("%-3s %s  %s\n", id.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria failed\n", failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
