#pragma once

#include <cstdint>
#include <optional>

#include "mcfe/adam.hpp"
#include "mcfe/autodiff.hpp"
#include "mcfe/camprior.hpp"
#include "mcfe/checkpoint.hpp"
#include "mcfe/classifier.hpp"

namespace mcfe {

/// Decoder G from an f^l-shaped map to an image: two (upsample x2, 3x3 conv,
/// relu) stages, then a linear 3x3 conv to the image channels. The raw output
/// feeds the L1 terms; unit_range() gives the pixels everything else sees.
/// With `ssc` the mixed tap feature f'_1 is concatenated after the first stage.
struct GeneratorConfig {
    std::size_t latent_channels = 16;
    std::size_t latent_extent = 4;
    std::size_t image_channels = 1;
    std::size_t hidden = 32;
    bool ssc = false;
    std::size_t tap_channels = 8;
    std::size_t tap_extent = 8;
    double rho_lower = 0.2;
    double rho_upper = 0.8;

    std::size_t image_size() const { return latent_extent * 4; }
    SpeLayout tap_layout() const { return {tap_channels, tap_extent, latent_channels, latent_extent}; }
    void validate() const;
};

/// Generator shaped for a classifier: latent map from its last stage, tap
/// from its first.
GeneratorConfig generator_config_for(const ClassifierConfig& classifier, bool ssc, std::size_t hidden = 32);

struct GeneratorParams {
    GeneratorConfig config;
    ParamSet tensors;
};

GeneratorParams init_generator(const GeneratorConfig& config, std::uint64_t seed);

/// Discriminator D: two (3x3 conv, relu, avg_pool 2) stages, GAP, linear to
/// one logit, sigmoid.
struct DiscriminatorConfig {
    std::size_t image_channels = 1;
    std::size_t image_size = 16;
    std::vector<std::size_t> channels{8, 16};
    void validate() const;
};

struct DiscriminatorParams {
    DiscriminatorConfig config;
    ParamSet tensors;
};

DiscriminatorParams init_discriminator(const DiscriminatorConfig& config, std::uint64_t seed);

/// Skip-connection inputs of a batch: the source tap features f_s^1
/// [B,C_1,H_1,W_1] and binary masks M^1 [B,H_1,W_1].
struct SscBatch {
    Var source_feature;
    Tensor mask;
};

/// Records G on `graph`; `latent` is [B,C_l,H_l,W_l]. Returns the raw
/// [B,C,H,W] output.
Var generator_forward(Graph& graph, const GeneratorParams& params, Var latent, const std::optional<SscBatch>& ssc, bool trainable);

/// Clamp to [0,1]; the gradient passes only where the value is inside.
Var unit_range(Var x);

/// Records D on `graph`; returns probabilities [B,1].
Var discriminator_forward(Graph& graph, const DiscriminatorParams& params, Var images, bool trainable);

/// Prior mask M^1 at the tap extent for a KFE at step k, from the CAMs of
/// f_k^l for the source and target classes.
Tensor ssc_mask(const GeneratorConfig& config, const LinearHead& head, const Tensor& latent_feature, int source, int target, double k);

/// Image for one KFE: builds f_k^l from the source features, adds the SSC
/// inputs when enabled, and runs G. `k` only drives the mask threshold.
Tensor render_kfe(const GeneratorParams& generator, const LinearHead& head, const FeatureStack& source, const Latent& z_k, int source_class,
                  int target_class, double k);

/// Batched variant of render_kfe over identical source features.
std::vector<Tensor> render_kfe_batch(const GeneratorParams& generator, const LinearHead& head, const FeatureStack& source,
                                     std::span<const Latent> z_ks, int source_class, int target_class, std::span<const double> ks);

Checkpoint to_checkpoint(const GeneratorParams& params);
GeneratorParams generator_from_checkpoint(const Checkpoint& checkpoint);
Checkpoint to_checkpoint(const DiscriminatorParams& params);
DiscriminatorParams discriminator_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace mcfe
