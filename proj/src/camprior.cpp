#include "mcfe/camprior.hpp"

#include <algorithm>

#include "mcfe/error.hpp"
#include "mcfe/layers.hpp"

namespace mcfe {

namespace {

void require_binary(const Tensor& mask) {
    for (double v : mask.data()) {
        if (v != 0.0 && v != 1.0) throw Error(ErrorKind::not_binary, "csp_mix: mask entries must be 0 or 1");
    }
}

// Expands an [H,W] or [B,H,W] mask to the [B,C,H,W] shape of `like`.
Tensor broadcast_mask(const Tensor& mask, const Shape& like) {
    if (like.size() != 4) throw Error(ErrorKind::shape_mismatch, "csp_mix: features must be [B,C,H,W], got " + shape_string(like));
    const std::size_t batch = like[0], channels = like[1], plane = like[2] * like[3];
    const bool shared = mask.rank() == 2;
    if ((shared && mask.shape() != Shape{like[2], like[3]}) || (!shared && mask.shape() != Shape{batch, like[2], like[3]})) {
        throw Error(ErrorKind::shape_mismatch, "csp_mix: mask " + shape_string(mask.shape()) + " does not fit " + shape_string(like));
    }
    Tensor out(like, 0.0);
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < plane; ++i) out[(n * channels + c) * plane + i] = mask[(shared ? 0 : n * plane) + i];
    return out;
}

}  // namespace

Cam cam(const Tensor& weight, const Tensor& feature) {
    if (weight.rank() != 2 || feature.rank() != 3 || feature.dim(0) != weight.dim(0)) {
        throw Error(ErrorKind::shape_mismatch, "cam: weight " + shape_string(weight.shape()) + " incompatible with feature " +
                                                   shape_string(feature.shape()));
    }
    const std::size_t n = weight.dim(0), classes = weight.dim(1), h = feature.dim(1), w = feature.dim(2), plane = h * w;
    Cam out{Tensor({classes, h, w}, 0.0), Tensor({classes, h, w}, 0.0)};
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t ch = 0; ch < n; ++ch) {
            const double wc = weight[ch * classes + c];
            for (std::size_t i = 0; i < plane; ++i) out.unnormalized[c * plane + i] += wc * feature[ch * plane + i];
        }
        double peak = 0.0;
        for (std::size_t i = 0; i < plane; ++i) peak = std::max(peak, out.unnormalized[c * plane + i]);
        if (peak > 0.0) {
            for (std::size_t i = 0; i < plane; ++i) out.normalized[c * plane + i] = std::max(out.unnormalized[c * plane + i], 0.0) / peak;
        }
    }
    return out;
}

double rho(double k, double lower, double upper) {
    if (!(0.0 <= lower && lower <= upper && upper <= 1.0)) {
        throw Error(ErrorKind::invalid_argument, "rho: bounds must satisfy 0 <= lower <= upper <= 1");
    }
    if (!(k >= 0.0 && k <= 1.0)) throw Error(ErrorKind::invalid_argument, "rho: k outside [0,1]");
    return std::min(std::max(1.0 - k, lower), upper);
}

Tensor upsample_mask(const Tensor& mask, std::size_t extent) {
    if (mask.rank() != 2 || mask.dim(0) != mask.dim(1) || extent % mask.dim(0) != 0) {
        throw Error(ErrorKind::shape_mismatch, "upsample_mask: cannot map " + shape_string(mask.shape()) + " to extent " + std::to_string(extent));
    }
    const std::size_t factor = extent / mask.dim(0), src = mask.dim(1);
    Tensor out({extent, extent}, 0.0);
    for (std::size_t y = 0; y < extent; ++y)
        for (std::size_t x = 0; x < extent; ++x) out[y * extent + x] = mask[(y / factor) * src + x / factor];
    return out;
}

PriorMask prior_mask(const Tensor& norm_source, const Tensor& norm_target, double threshold, std::span<const std::size_t> extents) {
    if (norm_source.shape() != norm_target.shape() || norm_source.rank() != 2) {
        throw Error(ErrorKind::shape_mismatch, "prior_mask: cams " + shape_string(norm_source.shape()) + " and " +
                                                   shape_string(norm_target.shape()) + " must share an [H,W] shape");
    }
    PriorMask out;
    out.threshold = threshold;
    out.mask = Tensor(norm_source.shape(), 0.0);
    for (std::size_t i = 0; i < out.mask.size(); ++i) {
        out.mask[i] = (norm_source[i] > threshold || norm_target[i] > threshold) ? 1.0 : 0.0;
    }
    for (auto extent : extents) out.per_layer.push_back(upsample_mask(out.mask, extent));
    return out;
}

void add_spe_params(ParamSet& params, const std::string& prefix, const SpeLayout& layout, std::mt19937_64& rng) {
    add_conv(params, prefix + ".bottleneck", layout.channels, layout.latent_channels, 1, rng);
    add_conv(params, prefix + ".decoder", 2 * layout.latent_channels, layout.channels, 1, rng);
}

Var spe_transform(Graph& graph, const ParamSet& params, const std::string& prefix, const SpeLayout& layout, Var source_feature,
                  Var latent_feature, bool trainable) {
    const Shape& fs = source_feature.shape();
    const Shape& fl = latent_feature.shape();
    if (fs.size() != 4 || fs[1] != layout.channels || fs[2] != layout.extent || fs[3] != layout.extent || fl.size() != 4 ||
        fl[0] != fs[0] || fl[1] != layout.latent_channels || fl[2] != layout.latent_extent || fl[3] != layout.latent_extent) {
        throw Error(ErrorKind::shape_mismatch, "spe_transform: features " + shape_string(fs) + " and " + shape_string(fl) +
                                                   " do not match the configured layout");
    }
    const std::size_t factor = layout.extent / layout.latent_extent;
    Var squeezed = conv_layer(graph, params, prefix + ".bottleneck", source_feature, trainable);
    if (factor > 1) squeezed = avg_pool(squeezed, factor);
    Var joined = concat_channels(squeezed, latent_feature);
    Var decoded = conv_layer(graph, params, prefix + ".decoder", joined, trainable);
    return factor > 1 ? upsample(decoded, factor) : decoded;
}

Var csp_mix(Var source_feature, Var edited, const Tensor& mask) {
    if (source_feature.shape() != edited.shape()) {
        throw Error(ErrorKind::shape_mismatch, "csp_mix: " + shape_string(source_feature.shape()) + " vs " + shape_string(edited.shape()));
    }
    require_binary(mask);
    Tensor full = broadcast_mask(mask, source_feature.shape());
    Tensor keep = full;
    for (auto& v : keep.data()) v = 1.0 - v;
    Graph& g = *source_feature.graph;
    return add(mul(g.constant(std::move(keep)), source_feature), mul(g.constant(std::move(full)), edited));
}

Tensor csp_mix(const Tensor& source_feature, const Tensor& edited, const Tensor& mask) {
    Graph g;
    const bool unbatched = source_feature.rank() == 3;
    auto lift = [&](const Tensor& t) {
        if (!unbatched) return t;
        Shape s{1};
        s.insert(s.end(), t.shape().begin(), t.shape().end());
        return t.reshaped(s);
    };
    Var out = csp_mix(g.constant(lift(source_feature)), g.constant(lift(edited)), mask);
    return out.value().reshaped(source_feature.shape());
}

}  // namespace mcfe
