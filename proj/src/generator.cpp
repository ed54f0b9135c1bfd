#include "mcfe/generator.hpp"

#include "mcfe/error.hpp"
#include "mcfe/layers.hpp"

namespace mcfe {

namespace {

constexpr const char* kTapPrefix = "spe1";

void require_tensors(const ParamSet& reference, const ParamSet& loaded, const std::string& role) {
    for (const auto& [name, t] : reference) {
        auto it = loaded.find(name);
        if (it == loaded.end() || it->second.shape() != t.shape()) {
            throw Error(ErrorKind::format, role + " checkpoint: tensor '" + name + "' missing or mis-shaped");
        }
    }
    if (loaded.size() != reference.size()) throw Error(ErrorKind::format, role + " checkpoint: unexpected extra tensors");
}

}  // namespace

void GeneratorConfig::validate() const {
    if (latent_channels == 0 || latent_extent == 0 || image_channels == 0 || hidden < 2) {
        throw Error(ErrorKind::invalid_argument, "generator: extents and channel counts must be positive");
    }
    if (ssc && (tap_channels == 0 || tap_extent != 2 * latent_extent)) {
        throw Error(ErrorKind::invalid_argument, "generator: the skip tap must sit at twice the latent extent");
    }
    if (!(0.0 <= rho_lower && rho_lower <= rho_upper && rho_upper <= 1.0)) {
        throw Error(ErrorKind::invalid_argument, "generator: rho bounds must satisfy 0 <= lower <= upper <= 1");
    }
}

GeneratorConfig generator_config_for(const ClassifierConfig& classifier, bool ssc, std::size_t hidden) {
    GeneratorConfig cfg;
    cfg.latent_channels = classifier.latent_dim();
    cfg.latent_extent = classifier.stage_extent(classifier.channels.size() - 1);
    cfg.image_channels = classifier.in_channels;
    cfg.hidden = hidden;
    cfg.ssc = ssc;
    cfg.tap_channels = classifier.channels.front();
    cfg.tap_extent = classifier.stage_extent(0);
    if (cfg.image_size() != classifier.image_size) {
        throw Error(ErrorKind::invalid_argument, "generator: classifier latent extent must be a quarter of the image size");
    }
    cfg.validate();
    return cfg;
}

GeneratorParams init_generator(const GeneratorConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    GeneratorParams params;
    params.config = config;
    const std::size_t second_in = config.hidden + (config.ssc ? config.tap_channels : 0);
    add_conv(params.tensors, "dec1", config.latent_channels, config.hidden, 3, rng);
    add_conv(params.tensors, "dec2", second_in, config.hidden / 2, 3, rng);
    add_conv(params.tensors, "out", config.hidden / 2, config.image_channels, 3, rng);
    if (config.ssc) add_spe_params(params.tensors, kTapPrefix, config.tap_layout(), rng);
    return params;
}

void DiscriminatorConfig::validate() const {
    if (channels.empty() || image_channels == 0) throw Error(ErrorKind::invalid_argument, "discriminator: needs at least one stage");
    if (image_size % (std::size_t{1} << channels.size()) != 0) {
        throw Error(ErrorKind::invalid_argument, "discriminator: image_size not divisible by 2^stages");
    }
}

DiscriminatorParams init_discriminator(const DiscriminatorConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    DiscriminatorParams params;
    params.config = config;
    std::size_t in = config.image_channels;
    for (std::size_t i = 0; i < config.channels.size(); ++i) {
        add_conv(params.tensors, "conv" + std::to_string(i + 1), in, config.channels[i], 3, rng);
        in = config.channels[i];
    }
    add_linear(params.tensors, "head", in, 1, rng);
    return params;
}

Var generator_forward(Graph& graph, const GeneratorParams& params, Var latent, const std::optional<SscBatch>& ssc, bool trainable) {
    const auto& cfg = params.config;
    const Shape& s = latent.shape();
    if (s.size() != 4 || s[1] != cfg.latent_channels || s[2] != cfg.latent_extent || s[3] != cfg.latent_extent) {
        throw Error(ErrorKind::shape_mismatch, "generator: latent map " + shape_string(s) + " does not match the configuration");
    }
    if (cfg.ssc != ssc.has_value()) {
        throw Error(ErrorKind::precondition, cfg.ssc ? "generator: skip inputs required" : "generator: skip inputs given without ssc");
    }
    Var h = relu(conv_layer(graph, params.tensors, "dec1", upsample(latent, 2), trainable));
    if (ssc) {
        Var edited = spe_transform(graph, params.tensors, kTapPrefix, cfg.tap_layout(), ssc->source_feature, latent, trainable);
        h = concat_channels(h, csp_mix(ssc->source_feature, edited, ssc->mask));
    }
    h = relu(conv_layer(graph, params.tensors, "dec2", upsample(h, 2), trainable));
    return conv_layer(graph, params.tensors, "out", h, trainable);
}

// A sigmoid head under L1 drifts to an all-background image on sparse data:
// every pixel's push is scaled by the same sigmoid slope, so the majority
// class wins at any logit. The linear head does not saturate.
Var unit_range(Var x) { return sub(relu(x), relu(add_scalar(x, -1.0))); }

Var discriminator_forward(Graph& graph, const DiscriminatorParams& params, Var images, bool trainable) {
    const auto& cfg = params.config;
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != cfg.image_channels || s[2] != cfg.image_size || s[3] != cfg.image_size) {
        throw Error(ErrorKind::shape_mismatch, "discriminator: input " + shape_string(s));
    }
    Var h = images;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
        h = avg_pool(relu(conv_layer(graph, params.tensors, "conv" + std::to_string(i + 1), h, trainable)), 2);
    }
    return sigmoid(linear_layer(graph, params.tensors, "head", global_avg_pool(h), trainable));
}

Tensor ssc_mask(const GeneratorConfig& config, const LinearHead& head, const Tensor& latent_feature, int source, int target, double k) {
    const Cam maps = cam(head.weight, latent_feature);
    const std::size_t h = latent_feature.dim(1), w = latent_feature.dim(2);
    const Tensor n_s = maps.normalized.slice(static_cast<std::size_t>(source)).reshaped({h, w});
    const Tensor n_t = maps.normalized.slice(static_cast<std::size_t>(target)).reshaped({h, w});
    const std::size_t extents[] = {config.tap_extent};
    return prior_mask(n_s, n_t, rho(k, config.rho_lower, config.rho_upper), extents).per_layer.front();
}

std::vector<Tensor> render_kfe_batch(const GeneratorParams& generator, const LinearHead& head, const FeatureStack& source,
                                     std::span<const Latent> z_ks, int source_class, int target_class, std::span<const double> ks) {
    if (z_ks.size() != ks.size()) throw Error(ErrorKind::shape_mismatch, "render_kfe_batch: latents and k values differ in count");
    if (z_ks.empty()) return {};
    const Latent z_s = source.z.values();
    std::vector<Tensor> latents, masks, taps;
    for (std::size_t i = 0; i < z_ks.size(); ++i) {
        latents.push_back(kfe_feature(source.last(), z_s, z_ks[i]));
        if (generator.config.ssc) {
            masks.push_back(ssc_mask(generator.config, head, latents.back(), source_class, target_class, ks[i]));
            taps.push_back(source.features.front());
        }
    }
    Graph graph;
    std::optional<SscBatch> ssc;
    if (generator.config.ssc) ssc = SscBatch{graph.constant(stack(taps)), stack(masks)};
    Var out = unit_range(generator_forward(graph, generator, graph.constant(stack(latents)), ssc, false));
    std::vector<Tensor> images;
    for (std::size_t i = 0; i < z_ks.size(); ++i) images.push_back(out.value().slice(i));
    return images;
}

Tensor render_kfe(const GeneratorParams& generator, const LinearHead& head, const FeatureStack& source, const Latent& z_k, int source_class,
                  int target_class, double k) {
    return std::move(render_kfe_batch(generator, head, source, std::span<const Latent>(&z_k, 1), source_class, target_class,
                                      std::span<const double>(&k, 1))
                         .front());
}

Checkpoint to_checkpoint(const GeneratorParams& params) {
    const auto& c = params.config;
    Checkpoint ck;
    ck.role = "generator";
    ck.config = {{"latent_channels", c.latent_channels}, {"latent_extent", c.latent_extent}, {"image_channels", c.image_channels},
                 {"hidden", c.hidden},
                 {"ssc", c.ssc},
                 {"tap_channels", c.tap_channels},
                 {"tap_extent", c.tap_extent},
                 {"rho_lower", c.rho_lower},
                 {"rho_upper", c.rho_upper}};
    ck.tensors = params.tensors;
    return ck;
}

GeneratorParams generator_from_checkpoint(const Checkpoint& checkpoint) {
    if (checkpoint.role != "generator") throw Error(ErrorKind::format, "checkpoint role is '" + checkpoint.role + "', expected generator");
    GeneratorParams params;
    try {
        const auto& c = checkpoint.config;
        auto& g = params.config;
        g.latent_channels = c.at("latent_channels").get<std::size_t>();
        g.latent_extent = c.at("latent_extent").get<std::size_t>();
        g.image_channels = c.at("image_channels").get<std::size_t>();
        g.hidden = c.at("hidden").get<std::size_t>();
        g.ssc = c.at("ssc").get<bool>();
        g.tap_channels = c.at("tap_channels").get<std::size_t>();
        g.tap_extent = c.at("tap_extent").get<std::size_t>();
        g.rho_lower = c.at("rho_lower").get<double>();
        g.rho_upper = c.at("rho_upper").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, std::string("generator checkpoint config: ") + e.what());
    }
    params.config.validate();
    require_tensors(init_generator(params.config, 0).tensors, checkpoint.tensors, "generator");
    params.tensors = checkpoint.tensors;
    return params;
}

Checkpoint to_checkpoint(const DiscriminatorParams& params) {
    Checkpoint ck;
    ck.role = "discriminator";
    ck.config = {{"image_channels", params.config.image_channels},
                 {"image_size", params.config.image_size},
                 {"channels", params.config.channels}};
    ck.tensors = params.tensors;
    return ck;
}

DiscriminatorParams discriminator_from_checkpoint(const Checkpoint& checkpoint) {
    if (checkpoint.role != "discriminator") {
        throw Error(ErrorKind::format, "checkpoint role is '" + checkpoint.role + "', expected discriminator");
    }
    DiscriminatorParams params;
    try {
        const auto& c = checkpoint.config;
        params.config.image_channels = c.at("image_channels").get<std::size_t>();
        params.config.image_size = c.at("image_size").get<std::size_t>();
        params.config.channels = c.at("channels").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::format, std::string("discriminator checkpoint config: ") + e.what());
    }
    params.config.validate();
    require_tensors(init_discriminator(params.config, 0).tensors, checkpoint.tensors, "discriminator");
    params.tensors = checkpoint.tensors;
    return params;
}

}  // namespace mcfe
