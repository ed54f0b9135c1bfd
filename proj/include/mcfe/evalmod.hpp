#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mcfe/classifier.hpp"
#include "mcfe/generator.hpp"

namespace mcfe {

struct BlurConfig {
    std::size_t size = 3;
    double sigma = 1.0;
    void validate() const;
};

/// Normalized [size,size] Gaussian kernel.
Tensor gaussian_kernel(const BlurConfig& blur);
/// Per-channel blur of a [C,H,W] image with replicated borders.
Tensor gaussian_blur(const Tensor& image, const BlurConfig& blur);

/// argmax F(blur(x_cf)) == target.
bool denoised_validity(const ClassifierParams& classifier, const Tensor& x_cf, int target, const BlurConfig& blur);

struct Faithfulness {
    double fea_dist = 0.0;  // ||z_k - F(G(z_k))||
    double conf_l1 = 0.0;   // mean_c |softmax(z_k)_c - p_hat_c|
};

/// Faithfulness of an already generated image to the latent it came from.
Faithfulness faithfulness(const ClassifierParams& classifier, const Latent& z_k, const Tensor& generated);
/// Renders G at z_k from the source features first.
Faithfulness faithfulness(const ClassifierParams& classifier, const GeneratorParams& generator, const FeatureStack& source, const Latent& z_k,
                          int source_class, int target_class, double k);

struct EvalRow {
    std::size_t sample = 0;  // index into the evaluated dataset
    int source = 0;
    int target = 0;
    /// Smallest k whose generated image is classified as the target.
    std::optional<double> first_cfe_k;
    bool validity = false;
    double l1 = 0.0;
    bool d_validity = false;
    double fea_dist = 0.0;
    double conf_l1 = 0.0;
};

struct EvalAggregate {
    std::size_t count = 0;
    double first_cfe_rate = 0.0;
    double validity = 0.0;
    double l1 = 0.0;
    double d_validity = 0.0;
    double fea_dist = 0.0;
    double conf_l1 = 0.0;
};

EvalAggregate aggregate(std::span<const EvalRow> rows);

struct EvalConfig {
    std::size_t steps = 21;
    BlurConfig blur;
    TrajectoryMode mode = TrajectoryMode::multiclass;
    /// Samples per class pair; 0 keeps every eligible sample.
    std::size_t max_samples = 200;
};

struct EvalReport {
    /// Metrics of the k = 1 image for every evaluated sample.
    std::vector<EvalRow> rows;
    /// Metrics of the first-CFE image for samples where one was found.
    std::vector<EvalRow> first_cfe_rows;
    EvalAggregate at_reflection;
    EvalAggregate at_first_cfe;
    /// Samples whose generated trajectory never reached the target.
    std::size_t no_flip = 0;
};

/// For each pair (a,b), evaluates the samples the classifier assigns to a
/// (explained towards b) or to b (towards a), in dataset order.
EvalReport evaluate_suite(const ClassifierParams& classifier, const GeneratorParams& generator, const LabeledDataset& test,
                          std::span<const std::pair<int, int>> pairs, const EvalConfig& config);

/// CSV with header sample,source,target,first_cfe_k,validity,l1,d_validity,fea_dist,conf_l1.
std::string report_csv(std::span<const EvalRow> rows);

}  // namespace mcfe
