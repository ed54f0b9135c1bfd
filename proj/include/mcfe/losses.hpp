#pragma once

#include <optional>
#include <span>

#include "mcfe/autodiff.hpp"
#include "mcfe/tensor.hpp"

namespace mcfe {

struct TriConfig {
    double alpha = 0.2;
    double weight = 1.0;
    /// Floor for the latent-distance denominators of the ratio.
    double ratio_floor = 1e-6;

    void validate() const;
};

struct LossWeights {
    double cls = 1.0;
    double adv = 1.0;
    double rec = 1.0;
    double fea = 1.0;
    double tri = 1.0;
    /// Proximity baseline; off unless running the ablation.
    double prox = 0.0;
};

struct LossReport {
    double cls = 0.0;
    double adv_g = 0.0;
    double adv_d = 0.0;
    double rec = 0.0;
    double fea = 0.0;
    double tri = 0.0;
    std::optional<double> prox;
    double total = 0.0;
    /// Set when a discriminator output had to be clamped into (0,1).
    bool adv_clamped = false;
};

/// Generator objective: weights applied to cls, adv_g, rec, fea, tri, prox.
double weighted_total(const LossReport& report, const LossWeights& weights);

// Value-level losses.

/// KL(p_intended || p_predicted) with the predicted side clamped to 1e-12.
/// Both inputs must sum to 1 within 1e-6.
double loss_cls(std::span<const double> p_intended, std::span<const double> p_predicted);

struct AdversarialTerms {
    double generator = 0.0;      // -log D(fake)
    double discriminator = 0.0;  // -[log D(real) + log(1 - D(fake))]
    bool clamped = false;
};
AdversarialTerms loss_adv(double d_real, double d_fake);

/// Mean absolute difference.
double loss_rec(const Tensor& x, const Tensor& regenerated);
/// Euclidean distance.
double loss_fea(std::span<const double> z_k, std::span<const double> z_roundtrip);
/// Proximity baseline |x_s - x_k| (mean absolute difference).
double loss_prox(const Tensor& x_source, const Tensor& x_k);

/// ||z_k - z_ref|| / max(||z_s - z_k||, floor).
double latent_ratio(std::span<const double> z_s, std::span<const double> z_k, std::span<const double> z_ref, double floor);

/// Distance of d_source to the band [(1-alpha)/ratio, (1+alpha)/ratio] * d_reference;
/// zero inside the band.
double triangulation_hinge(double d_source, double d_reference, double ratio, double alpha);

/// Triangulation loss for one KFE. The reference is a target-class image for
/// k >= 0.5 and a source-class image for k < 0.5. Pixel distances are mean
/// absolute differences, latent distances Euclidean.
double loss_tri(const Tensor& x_s, const Tensor& x_k, const Tensor& x_ref, std::span<const double> z_s, std::span<const double> z_k,
                std::span<const double> z_ref, double k, const TriConfig& config);

// Graph-level losses used during training.

Var adv_generator_term(Var d_fake);
Var adv_discriminator_term(Var d_real, Var d_fake);
/// Per-row hinge: relu(lower*d_ref - d_src) + relu(d_src - upper*d_ref), where
/// lower/upper are per-row constants [B].
Var triangulation_rows(Var d_source, Var d_reference, const Tensor& lower, const Tensor& upper);

}  // namespace mcfe
