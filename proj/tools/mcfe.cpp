// Command-line front end: dataset generation, training, explanation frames
// and evaluation reports.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mcfe/error.hpp"
#include "mcfe/pgm.hpp"
#include "mcfe/runconfig.hpp"

namespace fs = std::filesystem;
using namespace mcfe;

namespace {

struct Flags {
    std::string config;
    std::string out;
    std::string data;
    std::string classifier;
    std::string generator;
    std::string image;
    int target = -1;
    std::size_t steps = 21;
    std::string mode = "multiclass";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<double> tri_weight;
    std::optional<double> alpha;
    std::optional<bool> ssc;
    std::optional<std::size_t> eval_steps;
    std::optional<std::size_t> max_samples;
    std::optional<std::size_t> blur_size;
    std::optional<double> blur_sigma;
    std::vector<std::string> pairs;
};

RunConfig load_config(const Flags& f) { return f.config.empty() ? parse_run_config(nlohmann::json::object()) : load_run_config(f.config); }

// Config < MCFE_SEED < --seed.
std::optional<std::uint64_t> seed_override(const Flags& f) {
    if (f.seed) return f.seed;
    if (const char* env = std::getenv("MCFE_SEED")) return parse_seed(env);
    return std::nullopt;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorKind::io, "short write to " + path.string());
}

fs::path side_file(const std::string& out, const std::string& suffix) {
    fs::path p(out);
    return p.parent_path() / (p.stem().string() + suffix);
}

void ensure_parent(const std::string& out) {
    const fs::path parent = fs::path(out).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

int make_dataset(const Flags& f) {
    RunConfig cfg = load_config(f);
    if (auto s = seed_override(f)) cfg.dataset.seed = *s;
    const auto [train, test] = split(generate_dataset(cfg.dataset), cfg.dataset.train_fraction, cfg.dataset.seed);
    write_dataset_dir(f.out, train, test);
    std::printf("wrote %zu train and %zu test images to %s\n", train.size(), test.size(), f.out.c_str());
    return 0;
}

int train_classifier_cmd(const Flags& f) {
    RunConfig cfg = load_config(f);
    if (auto s = seed_override(f)) cfg.classifier_train.seed = *s;
    if (f.epochs) cfg.classifier_train.epochs = *f.epochs;
    const auto [train, test] = read_dataset_dir(f.data);
    if (train.size() == 0) throw Error(ErrorKind::precondition, "dataset has no training images");
    cfg.classifier.image_size = train.images.front().dim(1);
    cfg.classifier.num_classes = train.num_classes;
    std::string log = "epoch,loss,train_accuracy,test_accuracy\n";
    const auto trained = train_classifier(train, test, cfg.classifier, cfg.classifier_train, [&](const ClassifierEpochLog& e) {
        char line[160];
        std::snprintf(line, sizeof line, "%zu,%.10g,%.10g,%.10g\n", e.epoch, e.loss, e.train_accuracy, e.test_accuracy);
        log += line;
        std::printf("epoch %zu loss %.4f train %.4f test %.4f\n", e.epoch, e.loss, e.train_accuracy, e.test_accuracy);
        std::fflush(stdout);
    });
    ensure_parent(f.out);
    save_checkpoint(f.out, to_checkpoint(trained.params));
    write_text(side_file(f.out, ".log.csv"), log);
    return 0;
}

int train_generator_cmd(const Flags& f) {
    RunConfig cfg = load_config(f);
    if (auto s = seed_override(f)) cfg.generator.seed = *s;
    if (f.epochs) cfg.generator.epochs = *f.epochs;
    if (f.tri_weight) cfg.generator.weights.tri = *f.tri_weight;
    if (f.alpha) cfg.generator.tri.alpha = *f.alpha;
    if (f.ssc) cfg.generator.ssc = *f.ssc;
    cfg.generator.validate();
    const auto classifier = classifier_from_checkpoint(load_checkpoint(f.classifier));
    const auto [train, test] = read_dataset_dir(f.data);
    const auto result = train_generator(classifier, train, cfg.generator, [](const LossRecord& r) {
        if (r.step == 0) {
            std::printf("epoch %zu total %.4f cls %.4f rec %.4f tri %.4f\n", r.epoch, r.losses.total, r.losses.cls, r.losses.rec, r.losses.tri);
            std::fflush(stdout);
        }
    });
    ensure_parent(f.out);
    save_checkpoint(f.out, to_checkpoint(result.generator));
    save_checkpoint(side_file(f.out, ".disc.mcfe").string(), to_checkpoint(result.discriminator));
    write_text(side_file(f.out, ".loss.csv"), loss_history_csv(result.history));
    if (result.aborted) throw Error(ErrorKind::numeric_overflow, "training stopped early, last finite checkpoint saved: " + *result.aborted);
    return 0;
}

int explain_cmd(const Flags& f) {
    const auto classifier = classifier_from_checkpoint(load_checkpoint(f.classifier));
    const auto generator = generator_from_checkpoint(load_checkpoint(f.generator));
    const TrajectoryMode mode = trajectory_mode_from_string(f.mode);
    const Tensor image = read_pgm(f.image);
    const auto stack = featurize(classifier, image);
    const LinearHead head = classifier.head();
    const int source = argmax(stack.probs);
    const int target = f.target;
    if (target < 0 || static_cast<std::size_t>(target) >= head.num_classes()) {
        throw Error(ErrorKind::invalid_argument, "target " + std::to_string(target) + " is not a class of this classifier");
    }
    if (target == source) throw Error(ErrorKind::invalid_argument, "target equals the predicted class " + std::to_string(source));
    if (f.steps < 2) throw Error(ErrorKind::invalid_argument, "steps must be at least 2");

    const Latent z_s = stack.z.values();
    const Mirror mirror = make_mirror(head, source, target);
    Trajectory traj;
    try {
        traj = sample_trajectory(z_s, head, mirror, f.steps, mode);
    } catch (const ReflectionUnreachableError& e) {
        std::fprintf(stderr, "note: %s; using the binary trajectory\n", e.what());
        traj = sample_trajectory(z_s, head, mirror, f.steps, TrajectoryMode::binary);
    }
    std::vector<Latent> zs;
    std::vector<double> ks;
    for (const auto& p : traj.points) {
        zs.push_back(p.z);
        ks.push_back(p.k);
    }
    const auto frames = render_kfe_batch(generator, head, stack, zs, source, target, ks);

    fs::create_directories(f.out);
    std::string csv = "k,intended_q_source,intended_q_target,pred_p_source,pred_p_target,l1_to_source\n";
    for (std::size_t i = 0; i < frames.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%03zu.pgm", i);
        write_pgm((fs::path(f.out) / name).string(), frames[i]);
        const auto pred = featurize(classifier, frames[i]).probs;
        double l1 = 0.0;
        for (std::size_t j = 0; j < image.size(); ++j) l1 += std::abs(frames[i][j] - image[j]);
        l1 /= static_cast<double>(image.size());
        const double q = traj.points[i].q_pair;
        char line[256];
        std::snprintf(line, sizeof line, "%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", ks[i], 1.0 - q, q, pred[static_cast<std::size_t>(source)],
                      pred[static_cast<std::size_t>(target)], l1);
        csv += line;
    }
    write_text(fs::path(f.out) / "confidence.csv", csv);
    std::printf("source %d target %d frames %zu\n", source, target, frames.size());
    return 0;
}

std::pair<int, int> parse_pair(const std::string& text) {
    const auto comma = text.find(',');
    try {
        if (comma == std::string::npos) throw std::invalid_argument(text);
        std::size_t used_a = 0, used_b = 0;
        const std::string a = text.substr(0, comma), b = text.substr(comma + 1);
        const int x = std::stoi(a, &used_a), y = std::stoi(b, &used_b);
        if (used_a != a.size() || used_b != b.size()) throw std::invalid_argument(text);
        return {x, y};
    } catch (const std::exception&) {
        throw Error(ErrorKind::config, "pair must look like A,B, got '" + text + "'");
    }
}

int evaluate_cmd(const Flags& f) {
    RunConfig cfg = load_config(f);
    if (f.eval_steps) cfg.eval.steps = *f.eval_steps;
    if (f.max_samples) cfg.eval.max_samples = *f.max_samples;
    if (f.blur_size) cfg.eval.blur.size = *f.blur_size;
    if (f.blur_sigma) cfg.eval.blur.sigma = *f.blur_sigma;
    if (!f.pairs.empty()) {
        cfg.eval_pairs.clear();
        for (const auto& p : f.pairs) cfg.eval_pairs.push_back(parse_pair(p));
    }
    cfg.validate();
    const auto classifier = classifier_from_checkpoint(load_checkpoint(f.classifier));
    const auto generator = generator_from_checkpoint(load_checkpoint(f.generator));
    const auto [train, test] = read_dataset_dir(f.data);
    const auto report = evaluate_suite(classifier, generator, test, cfg.eval_pairs, cfg.eval);

    fs::create_directories(f.out);
    write_text(fs::path(f.out) / "report.csv", report_csv(report.rows));
    write_text(fs::path(f.out) / "report_first_cfe.csv", report_csv(report.first_cfe_rows));
    auto agg = [](const EvalAggregate& a) {
        return nlohmann::json{{"count", a.count},       {"first_cfe_rate", a.first_cfe_rate}, {"validity", a.validity}, {"l1", a.l1},
                              {"d_validity", a.d_validity}, {"fea_dist", a.fea_dist},         {"conf_l1", a.conf_l1}};
    };
    const nlohmann::json summary{{"at_reflection", agg(report.at_reflection)}, {"at_first_cfe", agg(report.at_first_cfe)}, {"no_flip", report.no_flip}};
    write_text(fs::path(f.out) / "summary.json", summary.dump(2) + "\n");
    const auto& a = report.at_reflection;
    std::printf("samples %zu first_cfe_rate %.4f validity %.4f d_validity %.4f l1 %.4f fea %.4f conf_l1 %.4f no_flip %zu\n", a.count, a.first_cfe_rate,
                a.validity, a.d_validity, a.l1, a.fea_dist, a.conf_l1, report.no_flip);
    return 0;
}

std::string one_line(std::string s) {
    for (auto& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

int fail(std::string_view kind, const std::string& message) {
    std::cerr << "error: kind=" << kind << " message=" << one_line(message) << '\n';
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mirror counterfactual explanations for small image classifiers"};
    app.require_subcommand(1);
    Flags f;

    auto* mk = app.add_subcommand("make-dataset", "Render the synthetic dataset as PGM files plus labels.csv");
    mk->add_option("--config", f.config, "JSON run config");
    mk->add_option("--out", f.out, "Output directory")->required();
    mk->add_option("--seed", f.seed, "Overrides the dataset seed");

    auto* tc = app.add_subcommand("train-classifier", "Train the CNN classifier");
    tc->add_option("--data", f.data, "Dataset directory")->required();
    tc->add_option("--config", f.config, "JSON run config");
    tc->add_option("--out", f.out, "Checkpoint path")->required();
    tc->add_option("--seed", f.seed, "Overrides the classifier seed");
    tc->add_option("--epochs", f.epochs, "Overrides classifier epochs");

    auto* tg = app.add_subcommand("train-generator", "Train the generator against a frozen classifier");
    tg->add_option("--data", f.data, "Dataset directory")->required();
    tg->add_option("--classifier", f.classifier, "Classifier checkpoint")->required();
    tg->add_option("--config", f.config, "JSON run config");
    tg->add_option("--out", f.out, "Generator checkpoint path")->required();
    tg->add_option("--seed", f.seed, "Overrides the generator seed");
    tg->add_option("--epochs", f.epochs, "Overrides generator epochs");
    tg->add_option("--tri-weight", f.tri_weight, "Triangulation loss weight");
    tg->add_option("--alpha", f.alpha, "Triangulation band half-width");
    tg->add_option("--ssc", f.ssc, "Enable the skip connection controller (true/false)");

    auto* ex = app.add_subcommand("explain", "Write KFE frames and a confidence table for one image");
    ex->add_option("--classifier", f.classifier, "Classifier checkpoint")->required();
    ex->add_option("--generator", f.generator, "Generator checkpoint")->required();
    ex->add_option("--image", f.image, "Input PGM")->required();
    ex->add_option("--target", f.target, "Target class")->required();
    ex->add_option("--steps", f.steps, "Points on the k grid")->capture_default_str();
    ex->add_option("--mode", f.mode, "binary or multiclass")->capture_default_str();
    ex->add_option("--out", f.out, "Output directory")->required();

    auto* ev = app.add_subcommand("evaluate", "Score generated counterfactuals on the test split");
    ev->add_option("--classifier", f.classifier, "Classifier checkpoint")->required();
    ev->add_option("--generator", f.generator, "Generator checkpoint")->required();
    ev->add_option("--data", f.data, "Dataset directory")->required();
    ev->add_option("--config", f.config, "JSON run config");
    ev->add_option("--out", f.out, "Output directory")->required();
    ev->add_option("--steps", f.eval_steps, "Points on the k grid");
    ev->add_option("--max-samples", f.max_samples, "Samples per class pair (0 = all)");
    ev->add_option("--blur-size", f.blur_size, "Odd Gaussian kernel size");
    ev->add_option("--blur-sigma", f.blur_sigma, "Gaussian sigma");
    ev->add_option("--pair", f.pairs, "Class pair A,B (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what());
    }

    try {
        if (mk->parsed()) return make_dataset(f);
        if (tc->parsed()) return train_classifier_cmd(f);
        if (tg->parsed()) return train_generator_cmd(f);
        if (ex->parsed()) return explain_cmd(f);
        if (ev->parsed()) return evaluate_cmd(f);
    } catch (const Error& e) {
        return fail(to_string(e.kind()), e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
    return fail("usage", "no subcommand");
}
