#include "mcfe/runconfig.hpp"

#include <charconv>
#include <fstream>
#include <set>

#include "mcfe/error.hpp"

namespace mcfe {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw Error(ErrorKind::config, where + ": expected an object");
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.contains(key)) throw Error(ErrorKind::config, where + ": unknown key '" + key + "'");
    }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::config, where + "." + key + ": " + e.what());
    }
}

// Non-negative integers only; json would otherwise wrap -1 into a huge size_t.
void read_count(const json& obj, const char* key, std::size_t& out, const std::string& where) {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) throw Error(ErrorKind::config, where + "." + key + ": expected a non-negative integer");
    out = v.get<std::size_t>();
}

void read_seed(const json& obj, std::uint64_t& out, const std::string& where) {
    if (!obj.contains("seed")) return;
    const json& v = obj.at("seed");
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        throw Error(ErrorKind::config, where + ".seed: expected a non-negative integer");
    }
    out = v.get<std::uint64_t>();
}

void parse_dataset(const json& j, DatasetConfig& d) {
    const std::string w = "dataset";
    reject_unknown(j, w,
                   {"image_size", "classes", "per_class_count", "position_jitter", "thickness_min", "thickness_max", "intensity_min",
                    "intensity_max", "noise_sigma", "train_fraction", "seed"});
    read_count(j, "image_size", d.image_size, w);
    if (j.contains("classes")) {
        std::vector<std::string> names;
        read(j, "classes", names, w);
        d.classes.clear();
        for (const auto& n : names) d.classes.push_back(shape_kind_from_string(n));
    }
    read_count(j, "per_class_count", d.per_class_count, w);
    read(j, "position_jitter", d.position_jitter, w);
    read(j, "thickness_min", d.thickness_min, w);
    read(j, "thickness_max", d.thickness_max, w);
    read(j, "intensity_min", d.intensity_min, w);
    read(j, "intensity_max", d.intensity_max, w);
    read(j, "noise_sigma", d.noise_sigma, w);
    read(j, "train_fraction", d.train_fraction, w);
    read_seed(j, d.seed, w);
}

void parse_classifier(const json& j, ClassifierConfig& c, ClassifierTrainConfig& t) {
    const std::string w = "classifier";
    reject_unknown(j, w, {"channels", "kernel", "lr", "epochs", "batch", "seed"});
    read(j, "channels", c.channels, w);
    read_count(j, "kernel", c.kernel, w);
    read(j, "lr", t.lr, w);
    read_count(j, "epochs", t.epochs, w);
    read_count(j, "batch", t.batch, w);
    read_seed(j, t.seed, w);
}

void parse_generator(const json& j, TrainConfig& g) {
    const std::string w = "generator";
    reject_unknown(j, w,
                   {"epochs", "batch", "lr", "hidden", "ssc", "seed", "weights", "alpha", "k_rule", "grid_steps", "reconstruction_fraction",
                    "trajectory", "rho_lower", "rho_upper"});
    read_count(j, "epochs", g.epochs, w);
    read_count(j, "batch", g.batch, w);
    read(j, "lr", g.lr, w);
    read_count(j, "hidden", g.hidden, w);
    read(j, "ssc", g.ssc, w);
    read_seed(j, g.seed, w);
    if (j.contains("weights")) {
        const json& ws = j.at("weights");
        const std::string ww = w + ".weights";
        reject_unknown(ws, ww, {"cls", "adv", "rec", "fea", "tri", "prox"});
        read(ws, "cls", g.weights.cls, ww);
        read(ws, "adv", g.weights.adv, ww);
        read(ws, "rec", g.weights.rec, ww);
        read(ws, "fea", g.weights.fea, ww);
        read(ws, "tri", g.weights.tri, ww);
        read(ws, "prox", g.weights.prox, ww);
    }
    read(j, "alpha", g.tri.alpha, w);
    if (j.contains("k_rule")) {
        std::string rule;
        read(j, "k_rule", rule, w);
        g.sampling.rule = k_rule_from_string(rule);
    }
    read_count(j, "grid_steps", g.sampling.grid_steps, w);
    read(j, "reconstruction_fraction", g.sampling.reconstruction_fraction, w);
    if (j.contains("trajectory")) {
        std::string mode;
        read(j, "trajectory", mode, w);
        g.sampling.mode = trajectory_mode_from_string(mode);
    }
    read(j, "rho_lower", g.rho_lower, w);
    read(j, "rho_upper", g.rho_upper, w);
}

void parse_eval(const json& j, EvalConfig& e, std::vector<std::pair<int, int>>& pairs) {
    const std::string w = "eval";
    reject_unknown(j, w, {"steps", "blur_size", "blur_sigma", "trajectory", "max_samples", "pairs"});
    read_count(j, "steps", e.steps, w);
    read_count(j, "blur_size", e.blur.size, w);
    read(j, "blur_sigma", e.blur.sigma, w);
    if (j.contains("trajectory")) {
        std::string mode;
        read(j, "trajectory", mode, w);
        e.mode = trajectory_mode_from_string(mode);
    }
    read_count(j, "max_samples", e.max_samples, w);
    if (j.contains("pairs")) {
        std::vector<std::vector<int>> raw;
        read(j, "pairs", raw, w);
        pairs.clear();
        for (const auto& p : raw) {
            if (p.size() != 2) throw Error(ErrorKind::config, "eval.pairs: each pair needs exactly two classes");
            pairs.emplace_back(p[0], p[1]);
        }
    }
}

}  // namespace

void RunConfig::validate() const {
    dataset.validate();
    classifier.validate();
    if (classifier.image_size != dataset.image_size || classifier.num_classes != dataset.classes.size()) {
        throw Error(ErrorKind::config, "classifier shape does not follow the dataset section");
    }
    if (classifier_train.epochs == 0 || classifier_train.batch == 0 || !(classifier_train.lr > 0.0)) {
        throw Error(ErrorKind::config, "classifier: epochs, batch and lr must be positive");
    }
    generator.validate();
    eval.blur.validate();
    if (eval.steps < 2) throw Error(ErrorKind::config, "eval.steps must be at least 2");
    if (eval_pairs.empty()) throw Error(ErrorKind::config, "eval.pairs must not be empty");
    const auto n = static_cast<int>(dataset.classes.size());
    for (const auto& [a, b] : eval_pairs) {
        if (a < 0 || b < 0 || a >= n || b >= n || a == b) {
            throw Error(ErrorKind::config, "eval.pairs: (" + std::to_string(a) + "," + std::to_string(b) + ") is not a pair of distinct classes");
        }
    }
}

RunConfig parse_run_config(const json& doc) {
    reject_unknown(doc, "config", {"dataset", "classifier", "generator", "eval"});
    RunConfig c;
    if (doc.contains("dataset")) parse_dataset(doc.at("dataset"), c.dataset);
    if (doc.contains("classifier")) parse_classifier(doc.at("classifier"), c.classifier, c.classifier_train);
    if (doc.contains("generator")) parse_generator(doc.at("generator"), c.generator);
    if (doc.contains("eval")) parse_eval(doc.at("eval"), c.eval, c.eval_pairs);
    c.classifier.image_size = c.dataset.image_size;
    c.classifier.num_classes = c.dataset.classes.size();
    c.validate();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open config " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::config, path + ": " + e.what());
    }
    return parse_run_config(doc);
}

json to_json(const RunConfig& c) {
    json classes = json::array();
    for (auto k : c.dataset.classes) classes.push_back(to_string(k));
    json pairs = json::array();
    for (const auto& [a, b] : c.eval_pairs) pairs.push_back({a, b});
    const auto& g = c.generator;
    return json{
        {"dataset",
         {{"image_size", c.dataset.image_size},
          {"classes", classes},
          {"per_class_count", c.dataset.per_class_count},
          {"position_jitter", c.dataset.position_jitter},
          {"thickness_min", c.dataset.thickness_min},
          {"thickness_max", c.dataset.thickness_max},
          {"intensity_min", c.dataset.intensity_min},
          {"intensity_max", c.dataset.intensity_max},
          {"noise_sigma", c.dataset.noise_sigma},
          {"train_fraction", c.dataset.train_fraction},
          {"seed", c.dataset.seed}}},
        {"classifier",
         {{"channels", c.classifier.channels},
          {"kernel", c.classifier.kernel},
          {"lr", c.classifier_train.lr},
          {"epochs", c.classifier_train.epochs},
          {"batch", c.classifier_train.batch},
          {"seed", c.classifier_train.seed}}},
        {"generator",
         {{"epochs", g.epochs},
          {"batch", g.batch},
          {"lr", g.lr},
          {"hidden", g.hidden},
          {"ssc", g.ssc},
          {"seed", g.seed},
          {"weights",
           {{"cls", g.weights.cls}, {"adv", g.weights.adv}, {"rec", g.weights.rec}, {"fea", g.weights.fea}, {"tri", g.weights.tri}, {"prox", g.weights.prox}}},
          {"alpha", g.tri.alpha},
          {"k_rule", to_string(g.sampling.rule)},
          {"grid_steps", g.sampling.grid_steps},
          {"reconstruction_fraction", g.sampling.reconstruction_fraction},
          {"trajectory", to_string(g.sampling.mode)},
          {"rho_lower", g.rho_lower},
          {"rho_upper", g.rho_upper}}},
        {"eval",
         {{"steps", c.eval.steps},
          {"blur_size", c.eval.blur.size},
          {"blur_sigma", c.eval.blur.sigma},
          {"trajectory", to_string(c.eval.mode)},
          {"max_samples", c.eval.max_samples},
          {"pairs", pairs}}},
    };
}

std::uint64_t parse_seed(const std::string& text) {
    std::uint64_t value = 0;
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (text.empty() || ec != std::errc{} || ptr != end) throw Error(ErrorKind::config, "MCFE_SEED must be a non-negative integer, got '" + text + "'");
    return value;
}

}  // namespace mcfe
