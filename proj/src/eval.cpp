#include "steer/eval.hpp"

#include "steer/manifest.hpp"
#include "steer/parallel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

namespace steer {

using json = nlohmann::json;

std::string_view method_name(Method m) {
    switch (m) {
        case Method::baseline:    return "baseline";
        case Method::prompting:   return "prompting";
        case Method::steering:    return "steering";
        case Method::self_debias: return "self_debias";
    }
    return "?";
}

std::string_view protocol_name(Protocol p) {
    switch (p) {
        case Protocol::mc:        return "mc";
        case Protocol::icat:      return "icat";
        case Protocol::nonstereo: return "nonstereo";
    }
    return "?";
}

std::string_view metric_name(Metric m) {
    switch (m) {
        case Metric::accuracy:       return "accuracy";
        case Metric::icat:           return "icat";
        case Metric::nonstereo_rate: return "nonstereo_rate";
    }
    return "?";
}

Method parse_eval_method(std::string_view name) {
    for (auto m : {Method::baseline, Method::prompting, Method::steering, Method::self_debias}) {
        if (method_name(m) == name || (m == Method::self_debias && name == "self-debias")) {
            return m;
        }
    }
    throw Error(ErrorCode::InvalidArgument,
                "unknown method '" + std::string(name) + "' (valid: baseline, prompting, steering, self_debias)");
}

Protocol parse_protocol(std::string_view name) {
    for (auto p : {Protocol::mc, Protocol::icat, Protocol::nonstereo}) {
        if (protocol_name(p) == name) {
            return p;
        }
    }
    throw Error(ErrorCode::InvalidArgument,
                "unknown protocol '" + std::string(name) + "' (valid: mc, icat, nonstereo)");
}

// ---------------------------------------------------------------------------
// Datasets

namespace {

template <typename Fn>
void for_each_jsonl(const std::filesystem::path & path, Fn && fn) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Io, "cannot open dataset " + path.string());
    }
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            fn(json::parse(line));
        } catch (const json::exception & e) {
            throw Error(ErrorCode::MalformedRecord, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const Error & e) {
            throw Error(ErrorCode::MalformedRecord, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto & c : out) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

bool is_alnum(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

std::string id_string(const json & j) {
    return j.is_string() ? j.get<std::string>() : j.dump();
}

} // namespace

std::vector<McItem> load_mc_items(const std::filesystem::path & path) {
    std::vector<McItem> items;
    for_each_jsonl(path, [&](const json & j) {
        McItem it;
        it.id = id_string(j.at("id"));
        it.axis = j.at("axis").get<std::string>();
        it.question = j.at("question").get<std::string>();
        it.options = j.at("options").get<std::vector<std::string>>();
        if (it.options.size() < 2 || it.options.size() > 4) {
            throw Error(ErrorCode::InvalidArgument, "items need 2 to 4 options");
        }
        if (j.contains("labels")) {
            it.labels = j.at("labels").get<std::vector<std::string>>();
        } else {
            for (size_t i = 0; i < it.options.size(); ++i) {
                it.labels.push_back(std::string(1, static_cast<char>('a' + i)));
            }
        }
        if (it.labels.size() != it.options.size()) {
            throw Error(ErrorCode::InvalidArgument, "labels and options differ in count");
        }
        std::set<std::string> unique;
        for (const auto & l : it.labels) {
            unique.insert(lower(l));
        }
        if (unique.size() != it.labels.size()) {
            throw Error(ErrorCode::InvalidArgument, "labels must be unique");
        }
        auto label_index = [&](const json & v) -> size_t {
            if (v.is_number_integer()) {
                const auto i = v.get<long long>();
                if (i < 0 || static_cast<size_t>(i) >= it.options.size()) {
                    throw Error(ErrorCode::InvalidArgument, "index out of range");
                }
                return static_cast<size_t>(i);
            }
            const auto s = lower(v.get<std::string>());
            for (size_t i = 0; i < it.labels.size(); ++i) {
                if (lower(it.labels[i]) == s) {
                    return i;
                }
            }
            throw Error(ErrorCode::InvalidArgument, "unknown label '" + s + "'");
        };
        it.gold_index = label_index(j.at("gold"));
        if (j.contains("roles") && !j.at("roles").is_null()) {
            OptionRoles roles;
            const auto & r = j.at("roles");
            if (r.contains("stereo")) {
                roles.stereo = label_index(r.at("stereo"));
            }
            if (r.contains("nonstereo")) {
                roles.nonstereo = label_index(r.at("nonstereo"));
            }
            if (r.contains("unknown")) {
                roles.unknown = label_index(r.at("unknown"));
            }
            it.roles = roles;
        }
        items.push_back(std::move(it));
    });
    if (items.empty()) {
        throw Error(ErrorCode::EmptyDataset, "no items in " + path.string());
    }
    return items;
}

std::vector<TripletItem> load_triplets(const std::filesystem::path & path) {
    std::vector<TripletItem> items;
    for_each_jsonl(path, [&](const json & j) {
        TripletItem t;
        t.id = id_string(j.at("id"));
        t.axis = j.at("axis").get<std::string>();
        t.context = j.at("context").get<std::string>();
        t.stereo = j.at("stereo").get<std::string>();
        t.anti = j.at("anti").get<std::string>();
        t.unrelated = j.at("unrelated").get<std::string>();
        t.task = j.value("task", std::string("intersentence"));
        if (t.task != "intrasentence" && t.task != "intersentence") {
            throw Error(ErrorCode::InvalidArgument, "task must be intrasentence or intersentence");
        }
        if (t.stereo == t.anti || t.stereo == t.unrelated || t.anti == t.unrelated) {
            throw Error(ErrorCode::InvalidArgument, "continuations must be distinct");
        }
        items.push_back(std::move(t));
    });
    if (items.empty()) {
        throw Error(ErrorCode::EmptyDataset, "no triplets in " + path.string());
    }
    return items;
}

// ---------------------------------------------------------------------------
// Prompting and parsing

std::string render_mc_prompt(const McItem & item) {
    std::string out = item.question;
    out += "\n\n";
    for (size_t i = 0; i < item.options.size(); ++i) {
        out += "(" + item.labels[i] + ") " + item.options[i] + "\n";
    }
    out += "Answer:";
    return out;
}

std::optional<size_t> parse_choice(std::string_view text, std::span<const std::string> labels) {
    const std::string s = lower(text);
    std::vector<std::string> ls;
    for (const auto & l : labels) {
        ls.push_back(lower(l));
    }

    size_t best_pos = std::string::npos;
    std::optional<size_t> best;
    auto consider = [&](size_t pos, size_t label) {
        if (pos < best_pos) {
            best_pos = pos;
            best = label;
        }
    };

    for (size_t li = 0; li < ls.size(); ++li) {
        const auto & l = ls[li];
        if (l.empty()) {
            continue;
        }
        for (size_t pos = s.find(l); pos != std::string::npos; pos = s.find(l, pos + 1)) {
            const size_t end = pos + l.size();
            if (pos > 0 && s[pos - 1] == '(' && end < s.size() && s[end] == ')') {
                consider(pos - 1, li); // (x)
                continue;
            }
            const bool boundary = pos == 0 || !is_alnum(s[pos - 1]);
            if (boundary && end < s.size() && (s[end] == ')' || s[end] == '.' || s[end] == ':')) {
                consider(pos, li); // x) x. x:
            }
        }
    }

    // standalone label as the first token, after an optional "answer:" / "answer is" cue
    size_t i = s.find_first_not_of(" \t\r\n");
    if (i != std::string::npos) {
        for (std::string_view cue : {"the answer is", "answer is", "answer:"}) {
            if (s.compare(i, cue.size(), cue) == 0) {
                i = s.find_first_not_of(" \t\r\n", i + cue.size());
                break;
            }
        }
    }
    if (i != std::string::npos) {
        size_t j = s.find_first_of(" \t\r\n", i);
        std::string token = s.substr(i, j == std::string::npos ? std::string::npos : j - i);
        while (!token.empty() && std::string_view(".,;:!?)").find(token.back()) != std::string_view::npos) {
            token.pop_back();
        }
        for (size_t li = 0; li < ls.size(); ++li) {
            if (!ls[li].empty() && token == ls[li]) {
                consider(i, li);
            }
        }
    }
    return best;
}

std::string decorate_prompting(std::string_view prompt) {
    if (prompt.starts_with(k_prompting_prefix)) {
        throw Error(ErrorCode::AlreadyDecorated, "prompt already carries the fairness instruction");
    }
    return std::string(k_prompting_prefix) + "\n" + std::string(prompt);
}

std::optional<bool> parse_yes_no(std::string_view text) {
    const std::string s = lower(text);
    size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && !std::isalpha(static_cast<unsigned char>(s[i]))) {
            ++i;
        }
        size_t j = i;
        while (j < s.size() && std::isalpha(static_cast<unsigned char>(s[j]))) {
            ++j;
        }
        const auto word = std::string_view(s).substr(i, j - i);
        if (word == "yes") {
            return true;
        }
        if (word == "no") {
            return false;
        }
        i = j;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Self-Debias

BiasClassifier model_classifier(const Checkpoint & ckpt, size_t max_new_tokens) {
    return [&ckpt, max_new_tokens](std::string_view prompt, std::string_view candidate) -> std::optional<bool> {
        const std::string query =
            std::string(prompt) + std::string(candidate) + "\n" + std::string(k_self_check_question);
        DecodeParams params;
        params.max_new_tokens = max_new_tokens;
        const auto reply = generate(ckpt, tokenize(query), params);
        return parse_yes_no(detokenize(reply.front().tokens));
    };
}

SelfDebiasResult self_debias(const Checkpoint & ckpt, std::string_view prompt, size_t k,
                             const BiasClassifier & classifier, size_t max_new_tokens) {
    if (k < 1) {
        throw Error(ErrorCode::InvalidArgument, "self_debias needs k >= 1");
    }
    DecodeParams params;
    params.mode = DecodeMode::beam;
    params.beam_k = k;
    params.max_new_tokens = max_new_tokens;

    SelfDebiasResult out;
    out.candidates = generate(ckpt, tokenize(prompt), params);
    const auto & judge = classifier ? classifier : model_classifier(ckpt);
    for (size_t i = 0; i < out.candidates.size(); ++i) {
        const auto verdict = judge(prompt, detokenize(out.candidates[i].tokens));
        out.verdicts.push_back(verdict);
        if (verdict.has_value() && !*verdict) {
            out.chosen = i;
            return out;
        }
    }
    out.chosen = 0;
    out.fell_back = true;
    return out;
}

// ---------------------------------------------------------------------------
// Generation cache

std::optional<std::string> GenerationCache::find(const std::string & key) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end()) {
        return std::nullopt;
    }
    ++hits_;
    return it->second;
}

void GenerationCache::store(const std::string & key, std::string value) {
    std::lock_guard lock(mu_);
    entries_.emplace(key, std::move(value));
}

size_t GenerationCache::size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
}

size_t GenerationCache::hits() const {
    std::lock_guard lock(mu_);
    return hits_;
}

// ---------------------------------------------------------------------------
// Generation-based protocols

namespace {

std::string injection_key(std::span<const Injection> injections) {
    json j = json::array();
    for (const auto & inj : injections) {
        if (inj.lambda == 0.0) {
            continue; // identical to no injection
        }
        j.push_back({inj.direction, inj.layers, inj.lambda});
    }
    return j.dump();
}

std::string respond(const Checkpoint & ckpt, const std::string & prompt, std::span<const Injection> injections,
                    Method method, const EvalOptions & opts, const std::string & inj_key) {
    std::string key;
    if (opts.cache) {
        const json k = {prompt, method == Method::self_debias ? opts.self_debias_k : 0, opts.max_new_tokens, inj_key};
        key = sha256_hex(k.dump());
        if (auto hit = opts.cache->find(key)) {
            return *hit;
        }
    }
    std::string response;
    if (method == Method::self_debias) {
        const auto r = self_debias(ckpt, prompt, opts.self_debias_k, opts.classifier, opts.max_new_tokens);
        response = detokenize(r.chosen_generation().tokens);
    } else {
        DecodeParams params;
        params.max_new_tokens = opts.max_new_tokens;
        response = detokenize(generate(ckpt, tokenize(prompt), params, injections).front().tokens);
    }
    if (opts.cache) {
        opts.cache->store(key, response);
    }
    return response;
}

std::vector<ItemOutcome> run_items(const Checkpoint & ckpt, const std::vector<McItem> & items,
                                   std::span<const Injection> injections, Method method, const EvalOptions & opts) {
    if (items.empty()) {
        throw Error(ErrorCode::EmptyDataset, "no items to evaluate");
    }
    const auto inj_key = injection_key(injections);
    std::vector<ItemOutcome> outcomes(items.size());
    parallel_for(items.size(), opts.workers, [&](size_t i) {
        std::string prompt = render_mc_prompt(items[i]);
        if (method == Method::prompting) {
            prompt = decorate_prompting(prompt);
        }
        outcomes[i].id = items[i].id;
        outcomes[i].response = respond(ckpt, prompt, injections, method, opts, inj_key);
        outcomes[i].choice = parse_choice(outcomes[i].response, items[i].labels);
    });
    return outcomes;
}

std::string common_axis(const std::vector<std::string> & axes) {
    if (axes.empty()) {
        return "";
    }
    for (const auto & a : axes) {
        if (a != axes.front()) {
            return "all";
        }
    }
    return axes.front();
}

template <typename Items>
std::string items_axis(const Items & items) {
    std::vector<std::string> axes;
    for (const auto & it : items) {
        axes.push_back(it.axis);
    }
    return common_axis(axes);
}

} // namespace

EvalReport eval_mc(const Checkpoint & ckpt, const std::vector<McItem> & items, std::span<const Injection> injections,
                   Method method, const EvalOptions & opts, std::vector<ItemOutcome> * outcomes) {
    auto results = run_items(ckpt, items, injections, method, opts);
    size_t correct = 0;
    size_t unparseable = 0;
    for (size_t i = 0; i < items.size(); ++i) {
        if (!results[i].choice) {
            ++unparseable;
        } else if (*results[i].choice == items[i].gold_index) {
            ++correct;
        }
    }
    EvalReport r;
    r.method = method;
    r.axis = items_axis(items);
    r.metric = Metric::accuracy;
    r.n = items.size();
    r.unparseable = unparseable;
    r.value = 100.0 * static_cast<double>(correct) / static_cast<double>(r.n);
    r.details["correct"] = static_cast<double>(correct);
    r.details["unparseable_rate"] = 100.0 * static_cast<double>(unparseable) / static_cast<double>(r.n);
    if (outcomes) {
        *outcomes = std::move(results);
    }
    return r;
}

EvalReport eval_nonstereo_rate(const Checkpoint & ckpt, const std::vector<McItem> & items,
                               std::span<const Injection> injections, Method method, const EvalOptions & opts,
                               std::vector<ItemOutcome> * outcomes) {
    for (const auto & it : items) {
        if (!it.roles || !it.roles->stereo) {
            throw Error(ErrorCode::MissingRoles, "item " + it.id + " has no stereo-tagged option");
        }
    }
    auto results = run_items(ckpt, items, injections, method, opts);
    size_t nonstereo = 0;
    size_t stereo = 0;
    size_t unparseable = 0;
    for (size_t i = 0; i < items.size(); ++i) {
        if (!results[i].choice) {
            ++unparseable;
        } else if (*results[i].choice == *items[i].roles->stereo) {
            ++stereo;
        } else {
            ++nonstereo;
        }
    }
    const double n = static_cast<double>(items.size());
    EvalReport r;
    r.method = method;
    r.axis = items_axis(items);
    r.metric = Metric::nonstereo_rate;
    r.n = items.size();
    r.unparseable = unparseable;
    r.value = 100.0 * static_cast<double>(nonstereo) / n;
    r.details["stereo_rate"] = 100.0 * static_cast<double>(stereo) / n;
    r.details["unparseable_rate"] = 100.0 * static_cast<double>(unparseable) / n;
    if (outcomes) {
        *outcomes = std::move(results);
    }
    return r;
}

// ---------------------------------------------------------------------------
// ICAT

double compute_icat(double lms, double ss) {
    return lms * std::min(ss, 100.0 - ss) / 50.0;
}

TripletScores score_triplet(const Checkpoint & ckpt, const TripletItem & item, std::span<const Injection> injections,
                            bool prompting) {
    const auto context = tokenize(prompting ? decorate_prompting(item.context) : item.context);
    auto score = [&](const std::string & text) {
        const std::string cont = " " + text;
        std::vector<token_id> ids;
        for (char ch : cont) {
            ids.push_back(static_cast<token_id>(static_cast<unsigned char>(ch)));
        }
        return sequence_logprob(ckpt, context, ids, injections) / static_cast<double>(ids.size());
    };
    return TripletScores{score(item.stereo), score(item.anti), score(item.unrelated)};
}

EvalReport eval_icat(const Checkpoint & ckpt, const std::vector<TripletItem> & items,
                     std::span<const Injection> injections, Method method, const EvalOptions & opts) {
    if (items.empty()) {
        throw Error(ErrorCode::EmptyDataset, "no triplets to evaluate");
    }
    if (method == Method::self_debias) {
        throw Error(ErrorCode::InvalidArgument, "self_debias does not apply to likelihood-based ICAT scoring");
    }
    std::vector<TripletScores> scores(items.size());
    parallel_for(items.size(), opts.workers, [&](size_t i) {
        scores[i] = score_triplet(ckpt, items[i], injections, method == Method::prompting);
    });
    // Per-token means over different lengths round differently, so near-equal scores are ties.
    auto wins = [](double a, double b) {
        if (std::abs(a - b) <= 1e-12 * std::max(std::abs(a), std::abs(b))) {
            return 0.5;
        }
        return a > b ? 1.0 : 0.0;
    };
    double ss_points = 0.0;
    double lms_points = 0.0;
    for (const auto & s : scores) {
        ss_points += wins(s.stereo, s.anti);
        lms_points += wins(std::max(s.stereo, s.anti), s.unrelated);
    }
    const double n = static_cast<double>(items.size());
    EvalReport r;
    r.method = method;
    r.axis = items_axis(items);
    r.metric = Metric::icat;
    r.n = items.size();
    const double ss = 100.0 * ss_points / n;
    const double lms = 100.0 * lms_points / n;
    r.value = compute_icat(lms, ss);
    r.details["ss"] = ss;
    r.details["lms"] = lms;
    return r;
}

// ---------------------------------------------------------------------------
// Run matrix

std::vector<MatrixCell> run_matrix(const Checkpoint & ckpt, const MatrixSpec & spec) {
    GenerationCache local_cache;
    EvalOptions opts = spec.options;
    if (!opts.cache) {
        opts.cache = &local_cache;
    }

    std::vector<MatrixCell> cells;
    for (const auto & ds : spec.datasets) {
        std::set<std::string> axes;
        if (ds.protocol == Protocol::icat) {
            for (const auto & t : ds.triplets) {
                axes.insert(t.axis);
            }
        } else {
            for (const auto & it : ds.mc_items) {
                axes.insert(it.axis);
            }
        }
        for (const auto & axis : axes) {
            std::vector<McItem> mc;
            std::vector<TripletItem> tri;
            for (const auto & it : ds.mc_items) {
                if (it.axis == axis) {
                    mc.push_back(it);
                }
            }
            for (const auto & t : ds.triplets) {
                if (t.axis == axis) {
                    tri.push_back(t);
                }
            }
            for (Method method : spec.methods) {
                MatrixCell cell;
                cell.method = method;
                cell.dataset = ds.name;
                cell.axis = axis;
                cell.protocol = ds.protocol;
                if (method == Method::self_debias && ds.protocol == Protocol::icat) {
                    cell.status = CellStatus::not_applicable;
                    cells.push_back(std::move(cell));
                    continue;
                }
                try {
                    std::vector<Injection> injections;
                    if (method == Method::steering) {
                        const auto & key = ds.vector_axis ? *ds.vector_axis : axis;
                        auto it = spec.vectors.find(key);
                        if (it == spec.vectors.end()) {
                            throw Error(ErrorCode::MissingVector, "no steering vector for axis " + key);
                        }
                        injections.push_back(make_injection(it->second, spec.lambda, spec.layers).to_injection());
                    }
                    EvalReport r;
                    switch (ds.protocol) {
                        case Protocol::mc:        r = eval_mc(ckpt, mc, injections, method, opts); break;
                        case Protocol::nonstereo: r = eval_nonstereo_rate(ckpt, mc, injections, method, opts); break;
                        case Protocol::icat:      r = eval_icat(ckpt, tri, injections, method, opts); break;
                    }
                    r.dataset = ds.name;
                    r.axis = axis;
                    cell.report = std::move(r);
                } catch (const Error & e) {
                    cell.status = CellStatus::error;
                    cell.error = e.what();
                }
                cells.push_back(std::move(cell));
            }
        }
    }
    return cells;
}

// ---------------------------------------------------------------------------
// Serialization

json report_to_json(const EvalReport & r) {
    return json{
        {"method", method_name(r.method)},
        {"dataset", r.dataset},
        {"axis", r.axis},
        {"metric", metric_name(r.metric)},
        {"value", r.value},
        {"n", r.n},
        {"unparseable", r.unparseable},
        {"manifest_digest", r.manifest_digest},
        {"details", r.details},
    };
}

std::string reports_csv_header() {
    return "method,dataset,axis,metric,value,n,unparseable";
}

std::string report_csv_row(const EvalReport & r) {
    char value[32];
    std::snprintf(value, sizeof(value), "%.4f", r.value);
    return std::string(method_name(r.method)) + "," + r.dataset + "," + r.axis + "," +
           std::string(metric_name(r.metric)) + "," + value + "," + std::to_string(r.n) + "," +
           std::to_string(r.unparseable);
}

} // namespace steer
