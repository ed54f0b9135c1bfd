#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "mcfe/generator.hpp"
#include "mcfe/pgm.hpp"
#include "mcfe/synthdata.hpp"

namespace fs = std::filesystem;
using namespace mcfe;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path workdir() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "mcfe_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

Run run(const std::string& args, const std::string& env = "") {
    const fs::path out = workdir() / "stdout.txt", err = workdir() / "stderr.txt";
    const std::string cmd = env + " '" MCFE_CLI_PATH "' " + args + " >'" + out.string() + "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

// Untrained checkpoints are enough for the file contracts exercised here.
void write_models(const fs::path& dir) {
    fs::create_directories(dir);
    const auto clf = init_classifier(ClassifierConfig{}, 3);
    save_checkpoint((dir / "clf.mcfe").string(), to_checkpoint(clf));
    save_checkpoint((dir / "gen.mcfe").string(), to_checkpoint(init_generator(generator_config_for(clf.config, false, 8), 4)));
}

const fs::path& small_config() {
    static const fs::path p = [] {
        auto path = workdir() / "cfg.json";
        std::ofstream(path) << R"({"dataset": {"per_class_count": 5}})";
        return path;
    }();
    return p;
}

}  // namespace

TEST_CASE("make-dataset writes PGMs that read back to the quantized pixels") {
    const fs::path dir = workdir() / "data";
    const Run r = run("make-dataset --config '" + small_config().string() + "' --out '" + dir.string() + "'");
    REQUIRE(r.code == 0);
    DatasetConfig cfg;
    cfg.per_class_count = 5;
    const auto [train, test] = split(generate_dataset(cfg), cfg.train_fraction, cfg.seed);
    const auto [rtrain, rtest] = read_dataset_dir(dir.string());
    REQUIRE(rtrain.size() == train.size());
    REQUIRE(rtest.size() == test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
        CHECK(rtest.labels[i] == test.labels[i]);
        for (std::size_t j = 0; j < test.images[i].size(); ++j) CHECK(rtest.images[i][j] == quantize_pixel(test.images[i][j]));
    }
}

TEST_CASE("make-dataset is byte-identical across runs and honours MCFE_SEED") {
    const fs::path a = workdir() / "a", b = workdir() / "b", c = workdir() / "c";
    REQUIRE(run("make-dataset --config '" + small_config().string() + "' --out '" + a.string() + "'").code == 0);
    REQUIRE(run("make-dataset --config '" + small_config().string() + "' --out '" + b.string() + "'").code == 0);
    CHECK(slurp(a / "labels.csv") == slurp(b / "labels.csv"));
    CHECK(slurp(a / "img_00003.pgm") == slurp(b / "img_00003.pgm"));
    REQUIRE(run("make-dataset --config '" + small_config().string() + "' --out '" + c.string() + "'", "MCFE_SEED=99").code == 0);
    CHECK(slurp(a / "img_00003.pgm") != slurp(c / "img_00003.pgm"));
}

TEST_CASE("explain with two steps writes two frames and two rows") {
    const fs::path models = workdir() / "models", out = workdir() / "explain2";
    write_models(models);
    DatasetConfig cfg;
    cfg.per_class_count = 1;
    const auto data = generate_dataset(cfg);
    const fs::path image = workdir() / "probe.pgm";
    write_pgm(image.string(), data.images[0]);
    const auto clf = classifier_from_checkpoint(load_checkpoint((models / "clf.mcfe").string()));
    const int pred = predict(clf, read_pgm(image.string()));
    const int target = (pred + 1) % 4;

    const Run r = run("explain --classifier '" + (models / "clf.mcfe").string() + "' --generator '" + (models / "gen.mcfe").string() + "' --image '" +
                      image.string() + "' --target " + std::to_string(target) + " --steps 2 --out '" + out.string() + "'");
    REQUIRE(r.code == 0);
    CHECK(fs::exists(out / "frame_000.pgm"));
    CHECK(fs::exists(out / "frame_001.pgm"));
    CHECK_FALSE(fs::exists(out / "frame_002.pgm"));
    const auto rows = lines_of(slurp(out / "confidence.csv"));
    REQUIRE(rows.size() == 3);
    CHECK(rows[0] == "k,intended_q_source,intended_q_target,pred_p_source,pred_p_target,l1_to_source");
    CHECK(rows[1].rfind("0,", 0) == 0);
    CHECK(rows[2].rfind("1,", 0) == 0);
    // The source is the classifier's own prediction, whatever the label.
    CHECK(r.out.find("source " + std::to_string(pred) + " ") != std::string::npos);
}

TEST_CASE("binary explain has a monotone intended target confidence") {
    const fs::path models = workdir() / "models", out = workdir() / "explain_bin";
    write_models(models);
    DatasetConfig cfg;
    cfg.per_class_count = 1;
    const fs::path image = workdir() / "probe2.pgm";
    write_pgm(image.string(), generate_dataset(cfg).images[2]);
    const auto clf = classifier_from_checkpoint(load_checkpoint((models / "clf.mcfe").string()));
    const int target = (predict(clf, read_pgm(image.string())) + 2) % 4;
    const Run r = run("explain --classifier '" + (models / "clf.mcfe").string() + "' --generator '" + (models / "gen.mcfe").string() + "' --image '" +
                      image.string() + "' --target " + std::to_string(target) + " --steps 11 --mode binary --out '" + out.string() + "'");
    REQUIRE(r.code == 0);
    const auto rows = lines_of(slurp(out / "confidence.csv"));
    REQUIRE(rows.size() == 12);
    double prev = -1.0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        std::istringstream in(rows[i]);
        std::string k, qs, qt;
        std::getline(in, k, ',');
        std::getline(in, qs, ',');
        std::getline(in, qt, ',');
        const double q = std::stod(qt);
        CHECK(q >= prev);
        prev = q;
    }
}

TEST_CASE("failures exit 1 with a single machine-readable line") {
    const fs::path models = workdir() / "models";
    write_models(models);
    auto check_error = [](const Run& r, const std::string& kind) {
        CHECK(r.code == 1);
        const auto lines = lines_of(r.err);
        REQUIRE(lines.size() == 1);
        CHECK(lines[0].rfind("error: kind=" + kind + " message=", 0) == 0);
    };
    check_error(run("explain --classifier /nonexistent.mcfe --generator x --image y --target 1 --out z"), "io");
    const fs::path bad = workdir() / "bad.json";
    std::ofstream(bad) << R"({"dataset": {"colour": "red"}})";
    check_error(run("make-dataset --config '" + bad.string() + "' --out '" + (workdir() / "never").string() + "'"), "config");
    check_error(run("make-dataset --out '" + (workdir() / "never").string() + "'", "MCFE_SEED=twelve"), "config");
    check_error(run("train-generator --data x"), "usage");
    check_error(run("explain --classifier '" + (models / "clf.mcfe").string() + "' --generator '" + (models / "clf.mcfe").string() +
                    "' --image y --target 1 --out z"),
                "format");
}
