#include "mcfe/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mcfe/error.hpp"
#include "mcfe/layers.hpp"

namespace mcfe {

namespace {

std::string conv_name(std::size_t i) { return "conv" + std::to_string(i + 1); }

Tensor batch_of(std::span<const Tensor> images, std::span<const std::size_t> order) {
    std::vector<Tensor> picked;
    picked.reserve(order.size());
    for (auto i : order) picked.push_back(images[i]);
    return stack(picked);
}

}  // namespace

void ClassifierConfig::validate() const {
    if (channels.empty()) throw Error(ErrorKind::invalid_argument, "classifier: at least one conv stage required");
    if (num_classes < 2) throw Error(ErrorKind::invalid_argument, "classifier: at least two classes required");
    if (kernel % 2 == 0) throw Error(ErrorKind::invalid_argument, "classifier: kernel must be odd");
    if ((image_size >> channels.size()) == 0 || image_size % (std::size_t{1} << channels.size()) != 0) {
        throw Error(ErrorKind::invalid_argument, "classifier: image_size not divisible by 2^stages");
    }
}

ClassifierParams init_classifier(const ClassifierConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    ClassifierParams params;
    params.config = config;
    std::size_t in = config.in_channels;
    for (std::size_t i = 0; i < config.channels.size(); ++i) {
        add_conv(params.tensors, conv_name(i), in, config.channels[i], config.kernel, rng);
        in = config.channels[i];
    }
    add_linear(params.tensors, "head", config.latent_dim(), config.num_classes, rng);
    return params;
}

ClassifierNodes classifier_forward(Graph& graph, const ClassifierParams& params, Var images, bool trainable) {
    const auto& cfg = params.config;
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != cfg.in_channels || s[2] != cfg.image_size || s[3] != cfg.image_size) {
        throw Error(ErrorKind::shape_mismatch, "classifier: input " + shape_string(s) + " does not match [B," +
                                                   std::to_string(cfg.in_channels) + "," + std::to_string(cfg.image_size) + "," +
                                                   std::to_string(cfg.image_size) + "]");
    }
    ClassifierNodes out;
    Var h = images;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
        h = avg_pool(relu(conv_layer(graph, params.tensors, conv_name(i), h, trainable)), 2);
        out.features.push_back(h);
    }
    out.z = global_avg_pool(h);
    out.logits = linear_layer(graph, params.tensors, "head", out.z, trainable);
    out.probs = softmax(out.logits);
    return out;
}

std::vector<FeatureStack> featurize_batch(const ClassifierParams& params, std::span<const Tensor> images) {
    if (images.empty()) return {};
    Graph graph;
    std::vector<std::size_t> order(images.size());
    std::iota(order.begin(), order.end(), 0);
    Var x = graph.constant(batch_of(images, order));
    const auto nodes = classifier_forward(graph, params, x, false);
    std::vector<FeatureStack> out(images.size());
    for (std::size_t n = 0; n < images.size(); ++n) {
        for (const auto& f : nodes.features) out[n].features.push_back(f.value().slice(n));
        out[n].z = nodes.z.value().slice(n);
        out[n].logits = nodes.logits.value().slice(n);
        out[n].probs = nodes.probs.value().slice(n);
    }
    return out;
}

FeatureStack featurize(const ClassifierParams& params, const Tensor& image) {
    const auto& cfg = params.config;
    if (image.shape() != Shape{cfg.in_channels, cfg.image_size, cfg.image_size}) {
        throw Error(ErrorKind::shape_mismatch, "featurize: image shape " + shape_string(image.shape()));
    }
    return std::move(featurize_batch(params, std::span<const Tensor>(&image, 1)).front());
}

std::pair<Tensor, Tensor> classify(const ClassifierParams& params, const Tensor& z) {
    const std::size_t n = params.config.latent_dim();
    if (z.size() != n) throw Error(ErrorKind::shape_mismatch, "classify: latent has " + std::to_string(z.size()) + " entries, expected " + std::to_string(n));
    Graph graph;
    Var zv = graph.constant(z.reshaped({1, n}));
    Var logits = linear(zv, graph.constant(params.head_weight()), graph.constant(params.head_bias()));
    Var probs = softmax(logits);
    const std::size_t c = params.config.num_classes;
    return {logits.value().reshaped({c}), probs.value().reshaped({c})};
}

int argmax(const Tensor& values) {
    const auto d = values.data();
    return static_cast<int>(std::distance(d.begin(), std::max_element(d.begin(), d.end())));
}

int predict(const ClassifierParams& params, const Tensor& image) { return argmax(featurize(params, image).probs); }

double accuracy(const ClassifierParams& params, const LabeledDataset& data) {
    if (data.size() == 0) return 0.0;
    constexpr std::size_t kChunk = 64;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < data.size(); start += kChunk) {
        const std::size_t len = std::min(kChunk, data.size() - start);
        const auto stacks = featurize_batch(params, std::span<const Tensor>(data.images).subspan(start, len));
        for (std::size_t i = 0; i < len; ++i)
            if (argmax(stacks[i].probs) == data.labels[start + i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainedClassifier train_classifier(const LabeledDataset& train, const LabeledDataset& test, const ClassifierConfig& config,
                                   const ClassifierTrainConfig& hyper, const std::function<void(const ClassifierEpochLog&)>& on_epoch) {
    if (train.size() == 0) throw Error(ErrorKind::invalid_argument, "train_classifier: empty training split");
    if (hyper.epochs == 0 || hyper.batch == 0) throw Error(ErrorKind::invalid_argument, "train_classifier: epochs and batch must be positive");
    TrainedClassifier result;
    result.params = init_classifier(config, hyper.seed);
    AdamState adam(AdamConfig{.lr = hyper.lr});
    std::mt19937_64 rng(hyper.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= hyper.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_total = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
            const std::size_t len = std::min(hyper.batch, order.size() - start);
            const std::span<const std::size_t> idx(order.data() + start, len);
            Tensor onehot({len, config.num_classes}, 0.0);
            for (std::size_t i = 0; i < len; ++i) {
                const int label = train.labels[idx[i]];
                if (label < 0 || static_cast<std::size_t>(label) >= config.num_classes) {
                    throw Error(ErrorKind::invalid_argument, "train_classifier: label out of range");
                }
                onehot[i * config.num_classes + static_cast<std::size_t>(label)] = 1.0;
            }
            Graph graph;
            double loss_value = 0.0;
            try {
                Var x = graph.constant(batch_of(train.images, idx));
                const auto nodes = classifier_forward(graph, result.params, x, true);
                Var loss = kl_divergence(graph.constant(std::move(onehot)), nodes.probs);
                loss_value = loss.value().item();
                graph.backward(loss);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::numeric_overflow) throw;
                throw Error(ErrorKind::divergence, "train_classifier: non-finite value at epoch " + std::to_string(epoch) + ": " + e.what());
            }
            adam.step(result.params.tensors, graph.parameter_grads());
            loss_total += loss_value;
            ++batches;
        }
        ClassifierEpochLog entry;
        entry.epoch = epoch;
        entry.loss = loss_total / static_cast<double>(batches);
        entry.train_accuracy = accuracy(result.params, train);
        entry.test_accuracy = accuracy(result.params, test);
        result.log.push_back(entry);
        if (on_epoch) on_epoch(entry);
    }
    return result;
}

Checkpoint to_checkpoint(const ClassifierParams& params) {
    Checkpoint ck;
    ck.role = "classifier";
    ck.config = {{"image_size", params.config.image_size},
                 {"in_channels", params.config.in_channels},
                 {"channels", params.config.channels},
                 {"num_classes", params.config.num_classes},
                 {"kernel", params.config.kernel}};
    ck.tensors = params.tensors;
    return ck;
}

ClassifierParams classifier_from_checkpoint(const Checkpoint& checkpoint) {
    if (checkpoint.role != "classifier") throw Error(ErrorKind::format, "checkpoint role is '" + checkpoint.role + "', expected classifier");
    ClassifierParams params;
    try {
        const auto& c = checkpoint.config;
        params.config.image_size = c.at("image_size").get<std::size_t>();
        params.config.in_channels = c.at("in_channels").get<std::size_t>();
        params.config.channels = c.at("channels").get<std::vector<std::size_t>>();
        params.config.num_classes = c.at("num_classes").get<std::size_t>();
        params.config.kernel = c.at("kernel").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, std::string("classifier checkpoint config: ") + e.what());
    }
    params.config.validate();
    const ClassifierParams reference = init_classifier(params.config, 0);
    for (const auto& [name, t] : reference.tensors) {
        auto it = checkpoint.tensors.find(name);
        if (it == checkpoint.tensors.end() || it->second.shape() != t.shape()) {
            throw Error(ErrorKind::format, "classifier checkpoint: tensor '" + name + "' missing or mis-shaped");
        }
    }
    params.tensors = checkpoint.tensors;
    return params;
}

}  // namespace mcfe
