#include <doctest.h>

#include "mcfe/error.hpp"
#include "mcfe/runconfig.hpp"

using namespace mcfe;
using nlohmann::json;

namespace {

ErrorKind kind_of(const json& doc) {
    try {
        (void)parse_run_config(doc);
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::invalid_argument;
}

}  // namespace

TEST_CASE("an empty document gives the defaults") {
    const RunConfig c = parse_run_config(json::object());
    CHECK(c.dataset.per_class_count == 400);
    CHECK(c.generator.lr == 2e-4);
    CHECK(c.generator.tri.alpha == 0.2);
    CHECK(c.eval.blur.size == 3);
    CHECK(c.classifier.num_classes == 4);
    CHECK(c.eval_pairs == std::vector<std::pair<int, int>>{{0, 1}});
}

TEST_CASE("sections override their fields") {
    const json doc = json::parse(R"({
        "dataset": {"per_class_count": 12, "classes": ["disk", "cross"], "seed": 3},
        "classifier": {"epochs": 2, "channels": [4, 8]},
        "generator": {"weights": {"tri": 2.0}, "alpha": 0.6, "k_rule": "endpoints+grid", "trajectory": "binary", "ssc": true},
        "eval": {"steps": 31, "blur_sigma": 0.5, "pairs": [[1, 0]]}
    })");
    const RunConfig c = parse_run_config(doc);
    CHECK(c.dataset.per_class_count == 12);
    CHECK(c.dataset.classes == std::vector<ShapeKind>{ShapeKind::disk, ShapeKind::cross});
    CHECK(c.dataset.seed == 3);
    CHECK(c.classifier.num_classes == 2);
    CHECK(c.classifier.channels == std::vector<std::size_t>{4, 8});
    CHECK(c.classifier_train.epochs == 2);
    CHECK(c.generator.weights.tri == 2.0);
    CHECK(c.generator.tri.alpha == 0.6);
    CHECK(c.generator.sampling.rule == KRule::endpoints_grid);
    CHECK(c.generator.sampling.mode == TrajectoryMode::binary);
    CHECK(c.generator.ssc);
    CHECK(c.eval.steps == 31);
    CHECK(c.eval.blur.sigma == 0.5);
    CHECK(c.eval_pairs == std::vector<std::pair<int, int>>{{1, 0}});
}

TEST_CASE("unknown keys and bad values are config errors") {
    CHECK(kind_of(json{{"extra", 1}}) == ErrorKind::config);
    CHECK(kind_of(json{{"dataset", {{"noise", 0.1}}}}) == ErrorKind::config);
    CHECK(kind_of(json{{"generator", {{"weights", {{"perceptual", 1.0}}}}}}) == ErrorKind::config);
    CHECK(kind_of(json{{"generator", {{"epochs", -1}}}}) == ErrorKind::config);
    CHECK(kind_of(json{{"generator", {{"lr", "fast"}}}}) == ErrorKind::config);
    CHECK(kind_of(json{{"generator", {{"alpha", 1.5}}}}) != ErrorKind::io);
    CHECK(kind_of(json{{"eval", {{"pairs", {{0, 0}}}}}}) == ErrorKind::config);
    CHECK(kind_of(json{{"eval", {{"pairs", {{0, 7}}}}}}) == ErrorKind::config);
    CHECK(kind_of(json{{"eval", {{"steps", 1}}}}) == ErrorKind::config);
    CHECK_THROWS_AS(parse_run_config(json{{"dataset", {{"classes", {"triangle"}}}}}), Error);
    CHECK_THROWS_AS(load_run_config("/nonexistent/cfg.json"), Error);
}

TEST_CASE("json round trip preserves the configuration") {
    RunConfig c = parse_run_config(json::parse(R"({"generator": {"hidden": 48, "rho_lower": 0.1}, "eval": {"pairs": [[2, 3], [0, 1]]}})"));
    const json once = to_json(c);
    const RunConfig back = parse_run_config(once);
    CHECK(to_json(back) == once);
    CHECK(back.generator.hidden == 48);
    CHECK(back.generator.rho_lower == 0.1);
    CHECK(back.eval_pairs.size() == 2);
}

TEST_CASE("seed overrides parse as plain integers") {
    CHECK(parse_seed("0") == 0);
    CHECK(parse_seed("18446744073709551615") == 18446744073709551615ull);
    CHECK_THROWS_AS(parse_seed(""), Error);
    CHECK_THROWS_AS(parse_seed("-3"), Error);
    CHECK_THROWS_AS(parse_seed("12x"), Error);
}
