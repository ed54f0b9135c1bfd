#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "mcfe/adam.hpp"
#include "mcfe/autodiff.hpp"
#include "mcfe/checkpoint.hpp"
#include "mcfe/mirror.hpp"
#include "mcfe/synthdata.hpp"

namespace mcfe {

struct ClassifierConfig {
    std::size_t image_size = 16;
    std::size_t in_channels = 1;
    /// Output channels of each conv stage. Each stage halves the resolution.
    std::vector<std::size_t> channels{16, 32};
    std::size_t num_classes = 4;
    std::size_t kernel = 3;

    std::size_t latent_dim() const { return channels.back(); }
    /// Spatial extent of the feature map after stage `i` (0-based).
    std::size_t stage_extent(std::size_t i) const { return image_size >> (i + 1); }
    Shape feature_shape(std::size_t i) const { return {channels[i], stage_extent(i), stage_extent(i)}; }
    Shape last_feature_shape() const { return feature_shape(channels.size() - 1); }
    void validate() const;
};

/// Frozen classifier F. Tensors: conv{i}.w [Co,Ci,K,K], conv{i}.b [Co],
/// head.w [N,|C|] and head.b [|C|].
struct ClassifierParams {
    ClassifierConfig config;
    ParamSet tensors;

    const Tensor& head_weight() const { return tensors.at("head.w"); }
    const Tensor& head_bias() const { return tensors.at("head.b"); }
    LinearHead head() const { return {head_weight(), head_bias()}; }
};

ClassifierParams init_classifier(const ClassifierConfig& config, std::uint64_t seed);

/// Per-image features f^1..f^l, latent z = GAP(f^l), logits and probs.
struct FeatureStack {
    std::vector<Tensor> features;  // each [C_i,H_i,W_i]
    Tensor z;                      // [N]
    Tensor logits;                 // [|C|]
    Tensor probs;                  // [|C|]

    const Tensor& last() const { return features.back(); }
};

/// Graph nodes of one batched classifier pass over [B,C,H,W] images.
struct ClassifierNodes {
    std::vector<Var> features;
    Var z;
    Var logits;
    Var probs;
};

/// Records the classifier on `graph`. With `trainable` false the parameters
/// enter as constants, so gradients reach only the input.
ClassifierNodes classifier_forward(Graph& graph, const ClassifierParams& params, Var images, bool trainable);

FeatureStack featurize(const ClassifierParams& params, const Tensor& image);
std::vector<FeatureStack> featurize_batch(const ClassifierParams& params, std::span<const Tensor> images);

/// logits = W^T z + b, probs = softmax(logits).
std::pair<Tensor, Tensor> classify(const ClassifierParams& params, const Tensor& z);

int argmax(const Tensor& values);
int predict(const ClassifierParams& params, const Tensor& image);
double accuracy(const ClassifierParams& params, const LabeledDataset& data);

struct ClassifierTrainConfig {
    double lr = 2e-4;
    std::size_t epochs = 20;
    std::size_t batch = 4;
    std::uint64_t seed = 11;
};

struct ClassifierEpochLog {
    std::size_t epoch = 0;
    double loss = 0.0;
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
};

struct TrainedClassifier {
    ClassifierParams params;
    std::vector<ClassifierEpochLog> log;
};

/// Trains with cross-entropy (KL to one-hot labels) and Adam. Raises
/// divergence if a loss turns non-finite. `test` may be empty.
TrainedClassifier train_classifier(const LabeledDataset& train, const LabeledDataset& test, const ClassifierConfig& config,
                                   const ClassifierTrainConfig& hyper,
                                   const std::function<void(const ClassifierEpochLog&)>& on_epoch = {});

Checkpoint to_checkpoint(const ClassifierParams& params);
ClassifierParams classifier_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace mcfe
