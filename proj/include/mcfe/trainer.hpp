#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mcfe/classifier.hpp"
#include "mcfe/generator.hpp"
#include "mcfe/losses.hpp"

namespace mcfe {

enum class KRule { uniform, endpoints_grid };

const char* to_string(KRule rule);
KRule k_rule_from_string(const std::string& name);

struct KSampling {
    KRule rule = KRule::uniform;
    /// Grid size for endpoints_grid: k drawn from {0, 1/(n-1), ..., 1}.
    std::size_t grid_steps = 11;
    /// Probability that an element is a plain reconstruction of its source.
    double reconstruction_fraction = 0.25;
    TrajectoryMode mode = TrajectoryMode::multiclass;
};

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch = 8;
    double lr = 2e-4;
    LossWeights weights;
    TriConfig tri;
    KSampling sampling;
    double rho_lower = 0.2;
    double rho_upper = 0.8;
    std::size_t hidden = 32;
    bool ssc = false;
    std::uint64_t seed = 13;

    void validate() const;
};

/// Frozen classifier outputs over a dataset, computed once.
struct FeaturePool {
    const LabeledDataset* data = nullptr;
    LinearHead head;
    std::vector<FeatureStack> stacks;
    std::vector<int> predicted;
    /// Image indices per label.
    std::vector<std::vector<std::size_t>> by_class;
    /// Multiclass reflections keyed by (image, target).
    std::map<std::pair<std::size_t, int>, Latent> reflections;

    const Latent& reflection(std::size_t index, int target);
};

FeaturePool build_feature_pool(const ClassifierParams& classifier, const LabeledDataset& data);

struct KfeElement {
    std::size_t source_index = 0;
    int source = 0;
    int target = 0;
    /// Unset for reconstruction elements.
    std::optional<double> k;
    Latent z_s;
    Latent z_k;
    Tensor latent_feature;  // f_k^l (f_s^l for reconstructions)
    std::size_t reference_index = 0;
    Tensor intended_probs;
    bool reconstruction() const { return !k.has_value(); }
};

/// Draws `batch` elements: a random source image, a random target class other
/// than its predicted class, and k from the sampling rule. Reconstruction
/// elements keep target == source. Draw order is fixed, so the same rng state
/// yields the same batch.
std::vector<KfeElement> sample_kfe_batch(FeaturePool& pool, std::size_t batch, const KSampling& sampling, std::mt19937_64& rng);

/// Draws one k from the rule.
double sample_k(const KSampling& sampling, std::mt19937_64& rng);

struct LossRecord {
    std::size_t epoch = 0;
    std::size_t step = 0;
    LossReport losses;
};

struct TrainedGenerator {
    GeneratorParams generator;
    DiscriminatorParams discriminator;
    std::vector<LossRecord> history;
    /// Set when training stopped on a non-finite value; the parameters are
    /// the last ones that produced finite losses.
    std::optional<std::string> aborted;
};

/// Alternates one discriminator and one generator Adam step per batch with the
/// classifier held fixed. Throws frozen_violation if the classifier tensors
/// change.
TrainedGenerator train_generator(const ClassifierParams& classifier, const LabeledDataset& train, const TrainConfig& config,
                                 const std::function<void(const LossRecord&)>& on_step = {});

/// CSV with header epoch,step,cls,adv_g,adv_d,rec,fea,tri,total.
std::string loss_history_csv(const std::vector<LossRecord>& history);

}  // namespace mcfe
