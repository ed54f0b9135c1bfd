#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "mcfe/adam.hpp"
#include "mcfe/autodiff.hpp"

namespace mcfe {

/// Class activation maps of one feature map.
struct Cam {
    Tensor unnormalized;  // U: [|C|,H,W]
    Tensor normalized;    // N: [|C|,H,W] in [0,1]
};

/// U_c = sum_n W[n,c] f[n]; N_c = max(U_c,0)/max(U_c), all zeros when U_c has
/// no positive entry. W is [N,|C|], f is [N,H,W].
Cam cam(const Tensor& weight, const Tensor& feature);

/// Binarization threshold min(max(1-k, lower), upper).
double rho(double k, double lower, double upper);

struct PriorMask {
    Tensor mask;  // [H,W] in {0,1}
    double threshold = 0.0;
    /// Nearest-neighbour copies at each requested extent.
    std::vector<Tensor> per_layer;
};

/// (N_s > rho) OR (N_t > rho), then upsampled to every extent in `extents`
/// (each an integer multiple of the CAM extent).
PriorMask prior_mask(const Tensor& norm_source, const Tensor& norm_target, double threshold, std::span<const std::size_t> extents);

/// Nearest-neighbour upsampling of an [H,W] mask to [extent,extent].
Tensor upsample_mask(const Tensor& mask, std::size_t extent);

/// Shapes of one spatial pattern editor tap: layer i with C_i x H_i x H_i
/// features feeding a C_l x H_l x H_l latent map.
struct SpeLayout {
    std::size_t channels = 0;
    std::size_t extent = 0;
    std::size_t latent_channels = 0;
    std::size_t latent_extent = 0;
};

/// Adds `{prefix}.bottleneck` (1x1 conv C_i -> C_l) and `{prefix}.decoder`
/// (1x1 conv 2 C_l -> C_i) to `params`.
void add_spe_params(ParamSet& params, const std::string& prefix, const SpeLayout& layout, std::mt19937_64& rng);

/// u = D(concat(B(f_s^i), f_k^l)) over batches [B,C,H,W]. B pools down to the
/// latent extent and D upsamples back, so u has the shape of f_s^i.
Var spe_transform(Graph& graph, const ParamSet& params, const std::string& prefix, const SpeLayout& layout, Var source_feature,
                  Var latent_feature, bool trainable);

/// f' = (1 - M) f_s + M u with M broadcast over channels. `mask` is [H,W]
/// (shared) or [B,H,W]; entries must be exactly 0 or 1.
Var csp_mix(Var source_feature, Var edited, const Tensor& mask);
Tensor csp_mix(const Tensor& source_feature, const Tensor& edited, const Tensor& mask);

}  // namespace mcfe
