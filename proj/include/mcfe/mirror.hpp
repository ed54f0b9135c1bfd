#pragma once

#include <optional>
#include <vector>

#include "mcfe/lbfgs.hpp"
#include "mcfe/tensor.hpp"

namespace mcfe {

using Latent = std::vector<double>;

/// Linear classification head: logits = W^T z + b with W [N,|C|].
struct LinearHead {
    Tensor weight;
    Tensor bias;

    std::size_t latent_dim() const { return weight.dim(0); }
    std::size_t num_classes() const { return weight.dim(1); }
    Latent logits(const Latent& z) const;
    Latent probs(const Latent& z) const;
};

/// Pairwise decision boundary between a source and a target class.
struct Mirror {
    int source = 0;
    int target = 1;
    Latent weight;  // W_t - W_s
    double bias = 0.0;  // b_t - b_s
    Latent unit;  // weight / |weight|
    double norm = 0.0;

    /// Signed pairwise logit W_m^T z + b_m (positive on the target side).
    double logit(const Latent& z) const;
};

Mirror make_mirror(const LinearHead& head, int source, int target);

/// Moves z_s along the mirror normal: k = 0.5 lands on the boundary
/// (projection) and k = 1 is the reflection. The travel uses the signed
/// distance (W_m^T z_s + b_m) / |W_m|, so the geometry holds for any |W_m|.
Latent position(const Latent& z_s, const Mirror& mirror, double k);

/// sigmoid(W_m^T z + b_m): confidence of the target over the source.
double pair_confidence(const Latent& z, const Mirror& mirror);

enum class KfeKind { sfe, projection, cfe, reflection };
KfeKind kfe_kind(double k);

struct KfePoint {
    double k = 0.0;
    Latent z;
    double q_pair = 0.0;
    Latent p_multi;
    KfeKind kind = KfeKind::sfe;
};

enum class TrajectoryMode { binary, multiclass };

const char* to_string(TrajectoryMode mode);
TrajectoryMode trajectory_mode_from_string(const std::string& name);

struct Trajectory {
    Latent source;
    Mirror mirror;
    TrajectoryMode mode = TrajectoryMode::binary;
    /// Estimated reflection z_r' (multiclass mode only).
    std::optional<Latent> reflection;
    std::vector<KfePoint> points;

    Latent latent_at(double k) const;
    KfePoint point_at(double k, const LinearHead& head) const;
};

/// Uniform k grid of `steps` points from 0 to 1. Multiclass mode interpolates
/// towards z_r' and computes it when `reflection` is not supplied.
Trajectory sample_trajectory(const Latent& z_s, const LinearHead& head, const Mirror& mirror, std::size_t steps, TrajectoryMode mode,
                             std::optional<Latent> reflection = std::nullopt);

/// Smallest-k trajectory point whose multi-class argmax is the target, refined
/// by bisection to |dk| <= 1e-3. Throws no_flip when the target never wins.
KfePoint first_cfe(const Trajectory& trajectory, const LinearHead& head);

struct ReflectionResult {
    Latent z;
    /// ||achieved - target logits||; for two classes, measured modulo a
    /// common shift.
    double residual = 0.0;
    /// Plain ||achieved - target logits||.
    double raw_residual = 0.0;
    std::size_t iterations = 0;
};

/// Latent point whose logits swap the source and target logits of z_s while
/// keeping all other logits, found by L-BFGS started from the binary
/// reflection. A two-class head returns the binary reflection itself.
/// Throws ReflectionUnreachableError if the residual exceeds `tolerance`.
ReflectionResult multiclass_reflection(const Latent& z_s, const Mirror& mirror, const LinearHead& head, double tolerance = 1e-3,
                                       const LbfgsOptions& options = {});

/// Latent at step k for either mode.
Latent kfe_latent(const Latent& z_s, const Mirror& mirror, double k, TrajectoryMode mode, const std::optional<Latent>& reflection);

/// f_k^l = f_s^l + z_delta broadcast over spatial cells, z_delta = z_k - z_s.
/// Requires GAP(f_s^l) == z_s within 1e-9.
Tensor kfe_feature(const Tensor& f_s, const Latent& z_s, const Latent& z_k);
Tensor kfe_feature(const Tensor& f_s, const Latent& z_s, double k, const Mirror& mirror);
Tensor kfe_feature(const Tensor& f_s, const Latent& z_s, double k, const Latent& reflection);

/// Spatial mean per channel of a [C,H,W] map.
Latent spatial_mean(const Tensor& feature);

}  // namespace mcfe
