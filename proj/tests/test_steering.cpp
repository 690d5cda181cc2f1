#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "support.hpp"

#include "steer/steering.hpp"
#include "steer/toy.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>

using namespace steer;
using json = nlohmann::json;

namespace {

std::string pair_line(const std::string & id, const std::string & axis, const std::string & pos,
                      const std::string & neg) {
    return json{{"id", id}, {"axis", axis}, {"positive", pos}, {"negative", neg}}.dump() + "\n";
}

// rows c * w* + noise, sigma = 0.01 c
Matrix planted_rows(const std::vector<double> & w, size_t rows, double c, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.01 * c);
    Matrix m(rows, w.size());
    for (size_t r = 0; r < rows; ++r) {
        for (size_t i = 0; i < w.size(); ++i) {
            m(r, i) = c * w[i] + noise(rng);
        }
    }
    return m;
}

std::vector<double> unit_gaussian(size_t d, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(d);
    for (auto & x : v) {
        x = normal(rng);
    }
    const double n = norm2(v);
    for (auto & x : v) {
        x /= n;
    }
    return v;
}

} // namespace

TEST_CASE("load_pairs reads records and applies the stimulus sentence") {
    const auto dir = testsupport::temp_dir("pairs");
    std::string text;
    for (int i = 0; i < 300; ++i) {
        text += pair_line("p" + std::to_string(i), i % 2 ? "age" : "gender", "Q? a", "Q? b");
    }
    testsupport::write_text(dir / "pairs.jsonl", text + "\n");
    const auto plain = load_pairs(dir / "pairs.jsonl");
    CHECK(plain.size() == 300);
    CHECK_FALSE(plain[0].stimulus_applied);
    CHECK(plain[0].positive_text == "Q? a");

    const auto stim = load_pairs(dir / "pairs.jsonl", true);
    CHECK(stim.size() == 300);
    CHECK(std::all_of(stim.begin(), stim.end(), [](const auto & p) { return p.stimulus_applied; }));
    CHECK(stim[1].positive_text == "Consider the bias related to age in the following.\nQ? a");
    CHECK(stim[0].negative_text == "Consider the bias related to gender in the following.\nQ? b");
}

TEST_CASE("load_pairs errors") {
    const auto dir = testsupport::temp_dir("pairs_bad");
    testsupport::write_text(dir / "same.jsonl", pair_line("1", "age", "x a", "x b") + pair_line("2", "age", "y", "y"));
    CHECK_THROWS_WITH_AS(load_pairs(dir / "same.jsonl"), doctest::Contains("same.jsonl:2"), Error);
    try {
        (void)load_pairs(dir / "same.jsonl");
    } catch (const Error & e) {
        CHECK(e.code() == ErrorCode::MalformedRecord);
    }
    testsupport::write_text(dir / "axis.jsonl", pair_line("1", "height", "x a", "x b"));
    CHECK_THROWS_WITH_AS(load_pairs(dir / "axis.jsonl"), doctest::Contains("MalformedRecord"), Error);
    testsupport::write_text(dir / "json.jsonl", "{not json\n");
    CHECK_THROWS_WITH_AS(load_pairs(dir / "json.jsonl"), doctest::Contains("MalformedRecord"), Error);
    testsupport::write_text(dir / "empty.jsonl", "");
    CHECK_THROWS_WITH_AS(load_pairs(dir / "empty.jsonl"), doctest::Contains("EmptyDataset"), Error);
}

TEST_CASE("difference matrix normalizes each state before subtracting") {
    const auto pos = Matrix::from_rows({{3, 4}, {1, 0}, {2, 2}});
    const auto neg = Matrix::from_rows({{0, 2}, {2, 0}, {1, 1}});
    const auto normalized = difference_matrix(5, pos, neg);
    CHECK(normalized.layer == 5);
    CHECK(normalized.diffs(0, 0) == doctest::Approx(0.6));
    CHECK(normalized.diffs(0, 1) == doctest::Approx(-0.2));
    // (1,0) and (2,0) normalize to the same state
    CHECK(normalized.degenerate_rows == std::vector<size_t>{1, 2});
    const auto raw = difference_matrix(5, pos, neg, false);
    CHECK(raw.diffs(1, 0) == -1.0);
    CHECK(raw.degenerate_rows.empty());
}

TEST_CASE("planted capture: every row is proportional to w*") {
    const size_t d = 12;
    const auto w = unit_gaussian(d, 1);
    Matrix h = testsupport::gaussian_matrix(10, d, 2);
    Matrix plus = h;
    for (size_t r = 0; r < 10; ++r) {
        for (size_t i = 0; i < d; ++i) {
            plus(r, i) += 3.0 * w[i];
        }
    }
    const auto cap = difference_matrix(0, plus, h, false);
    for (size_t r = 0; r < 10; ++r) {
        const double cosine = dot(cap.diffs.row(r), w) / norm2(cap.diffs.row(r));
        CHECK(cosine == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("capture on a model: shape, identical pairs flagged, order and workers do not matter") {
    const auto ckpt = toy::random_checkpoint(testsupport::small_config(), 3);
    std::vector<ContrastivePair> pairs;
    for (int i = 0; i < 6; ++i) {
        pairs.push_back({std::to_string(i), "age", "prompt " + std::to_string(i) + " a",
                         "prompt " + std::to_string(i) + " b", false});
    }
    pairs.push_back({"same", "age", "twin", "twin", false});
    const auto cap = capture_differences(ckpt, pairs, 1);
    CHECK(cap.diffs.rows() == 7);
    CHECK(cap.diffs.cols() == 16);
    CHECK(cap.degenerate_rows == std::vector<size_t>{6});

    const auto parallel = capture_differences(ckpt, pairs, 1, {.normalize = true, .workers = 4});
    CHECK(parallel.diffs == cap.diffs);

    const size_t layers[] = {0, 1, 2};
    const auto multi = capture_differences(ckpt, pairs, layers);
    REQUIRE(multi.size() == 3);
    CHECK(multi[1].diffs == cap.diffs);

    CHECK_THROWS_WITH_AS(capture_differences(ckpt, pairs, 3), doctest::Contains("LayerOutOfRange"), Error);
    CHECK_THROWS_AS(capture_differences(ckpt, {}, 0), Error);

    // extraction drops the degenerate row; pca and mean_diff are order invariant
    const auto v = extract_vector(cap.diffs, ExtractionMethod::pca, "age", 1);
    auto shuffled = pairs;
    std::reverse(shuffled.begin(), shuffled.end());
    const auto v2 = extract_vector(capture_differences(ckpt, shuffled, 1).diffs, ExtractionMethod::pca, "age", 1);
    CHECK(dot(v.direction.components(), v2.direction.components()) >= 1 - 1e-9);
    const auto m1 = extract_vector(cap.diffs, ExtractionMethod::mean_diff, "age", 1);
    const auto m2 =
        extract_vector(capture_differences(ckpt, shuffled, 1).diffs, ExtractionMethod::mean_diff, "age", 1);
    for (size_t i = 0; i < 16; ++i) {
        CHECK(m1.direction[i] == doctest::Approx(m2.direction[i]).epsilon(1e-12));
    }
    // determinism
    CHECK(extract_vector(cap.diffs, ExtractionMethod::pca, "age", 1) == v);
}

TEST_CASE("planted direction recovery over 20 seeds") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        const auto w = unit_gaussian(24, 100 + seed);
        const auto m = planted_rows(w, 64, 2.0, 200 + seed);
        for (auto method : {ExtractionMethod::pca, ExtractionMethod::mean_diff}) {
            const auto v = extract_vector(m, method, "race", 3);
            CHECK(std::abs(dot(v.direction.components(), w)) >= 0.99);
        }
    }
}

TEST_CASE("extract_vector small cases and errors") {
    const auto md = extract_vector(Matrix::from_rows({{2, 0}, {4, 0}}), ExtractionMethod::mean_diff, "age", 0);
    CHECK(md.direction[0] == 1.0);
    CHECK(md.direction[1] == 0.0);
    CHECK(md.d_model == 2);

    const auto rank1 = Matrix::from_rows({{1, 2, 2}, {2, 4, 4}, {0.5, 1, 1}});
    const auto a = extract_vector(rank1, ExtractionMethod::pca, "age", 0);
    const auto b = extract_vector(rank1, ExtractionMethod::mean_diff, "age", 0);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(std::abs(a.direction[i] - b.direction[i]) <= 1e-6);
    }

    CHECK_THROWS_WITH_AS(extract_vector(Matrix(4, 3), ExtractionMethod::pca, "religion", 7),
                         doctest::Contains("axis religion, layer 7"), Error);
    CHECK_THROWS_WITH_AS(extract_vector(Matrix::from_rows({{1, 0}, {-1, 0}}), ExtractionMethod::mean_diff, "age", 2),
                         doctest::Contains("AllZeroMatrix"), Error);
    CHECK(parse_method("mean_diff") == ExtractionMethod::mean_diff);
    CHECK_THROWS_AS(parse_method("svd"), Error);
}

TEST_CASE("vector files round trip exactly") {
    const auto dir = testsupport::temp_dir("vectors");
    const auto m = planted_rows(unit_gaussian(9, 1), 16, 1.0, 2);
    const auto v = extract_vector(m, ExtractionMethod::pca, "gender", 2, "abc123", "2024-01-01T00:00:00Z");
    save_vector(v, dir / "v.json", json{{"manifest", {{"command", "test"}}}});
    const auto back = load_vector(dir / "v.json");
    CHECK(back == v);
    for (size_t i = 0; i < 9; ++i) {
        CHECK(back.direction[i] == v.direction[i]); // bit-exact
    }

    auto j = json::parse(testsupport::read_text(dir / "v.json"));
    j["direction"][0] = j["direction"][0].get<double>() * 1.5;
    testsupport::write_text(dir / "corrupt.json", j.dump());
    CHECK_THROWS_WITH_AS(load_vector(dir / "corrupt.json"), doctest::Contains("InvariantViolation"), Error);

    auto k = json::parse(testsupport::read_text(dir / "v.json"));
    k.erase("layer");
    testsupport::write_text(dir / "nolayer.json", k.dump());
    CHECK_THROWS_WITH_AS(load_vector(dir / "nolayer.json"), doctest::Contains("MalformedRecord"), Error);
}

TEST_CASE("source hash tracks the training pairs") {
    std::vector<ContrastivePair> pairs = {{"1", "age", "q a", "q b", false}, {"2", "age", "r a", "r b", false}};
    SteeringVector v;
    v.source_hash = pairs_digest(pairs);
    CHECK(source_matches(v, pairs));
    pairs[1].negative_text = "r c";
    CHECK_FALSE(source_matches(v, pairs));
}

TEST_CASE("make_injection defaults and validation") {
    auto v = std::make_shared<SteeringVector>();
    v->layer = 2;
    v->d_model = 32;
    std::vector<double> e(32, 0.0);
    e[0] = 1.0;
    v->direction = UnitVector(e);

    const auto spec = make_injection(v, 1.6);
    CHECK(spec.layers == std::vector<size_t>{2});
    CHECK(spec.lambda == 1.6);
    CHECK(make_injection(v, -1.0).lambda == -1.0);
    CHECK(make_injection(v, 1.0, std::vector<size_t>{1, 3}).layers == std::vector<size_t>{1, 3});
    CHECK_THROWS_AS(make_injection(v, NAN), Error);
    CHECK_THROWS_AS(make_injection(nullptr, 1.0), Error);

    const auto ckpt = toy::planted_letter_checkpoint();
    const auto ids = tokenize("zero");
    const auto zero = make_injection(v, 0.0).to_injection();
    CHECK(forward(ckpt, ids).logits == forward(ckpt, ids, {}, std::span<const Injection>(&zero, 1)).logits);

    const auto far = make_injection(v, 1.0, std::vector<size_t>{9}).to_injection();
    CHECK_THROWS_WITH_AS(forward(ckpt, ids, {}, std::span<const Injection>(&far, 1)),
                         doctest::Contains("LayerOutOfRange"), Error);

    const InjectionSpec specs[] = {make_injection(v, 1.0), make_injection(v, 0.5, std::vector<size_t>{0})};
    CHECK(to_injections(specs).size() == 2);
}
