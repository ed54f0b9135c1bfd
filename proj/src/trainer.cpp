#include "mcfe/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mcfe/error.hpp"

namespace mcfe {

namespace {

constexpr double kProbFloor = 1e-12;

Tensor matrix_of(const std::vector<Latent>& rows) {
    const std::size_t n = rows.front().size();
    Tensor out({rows.size(), n}, 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * n));
    return out;
}

std::size_t pick(std::span<const std::size_t> pool, std::mt19937_64& rng) {
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
}

struct StepTensors {
    Tensor latent;     // [B,C_l,H_l,W_l]
    Tensor sources;    // [B,C,H,W]
    Tensor references;
    Tensor intended;   // [B,|C|]
    Tensor z_k;        // [B,N]
    Tensor rec_weight;  // [B], 1/n_rec on reconstruction rows
    Tensor tri_weight;  // [B], 1/n_kfe on KFE rows with k > 0
    Tensor prox_weight;  // [B], 1/n_kfe on KFE rows
    Tensor lower, upper;  // [B] triangulation band coefficients
    std::optional<Tensor> taps, masks;
    std::size_t n_rec = 0, n_kfe = 0;
};

StepTensors prepare(FeaturePool& pool, const std::vector<KfeElement>& batch, const GeneratorConfig& gen, const TriConfig& tri) {
    const std::size_t b = batch.size();
    StepTensors st;
    std::vector<Tensor> latents, sources, refs, probs, taps, masks;
    std::vector<Latent> zk;
    st.rec_weight = Tensor({b}, 0.0);
    st.tri_weight = Tensor({b}, 0.0);
    st.prox_weight = Tensor({b}, 0.0);
    st.lower = Tensor({b}, 0.0);
    st.upper = Tensor({b}, 0.0);
    for (const auto& e : batch) (e.reconstruction() ? st.n_rec : st.n_kfe) += 1;
    for (std::size_t i = 0; i < b; ++i) {
        const auto& e = batch[i];
        latents.push_back(e.latent_feature);
        sources.push_back(pool.data->images[e.source_index]);
        refs.push_back(pool.data->images[e.reference_index]);
        probs.push_back(e.intended_probs);
        zk.push_back(e.z_k);
        if (gen.ssc) {
            taps.push_back(pool.stacks[e.source_index].features.front());
            masks.push_back(ssc_mask(gen, pool.head, e.latent_feature, e.source, e.target, e.k.value_or(0.0)));
        }
        if (e.reconstruction()) {
            st.rec_weight[i] = 1.0 / static_cast<double>(st.n_rec);
            continue;
        }
        st.prox_weight[i] = 1.0 / static_cast<double>(st.n_kfe);
        // k == 0 uses x_s as its own reference, where the loss is defined as 0.
        if (*e.k > 0.0) {
            const Latent z_ref = pool.stacks[e.reference_index].z.values();
            const double r = std::max(latent_ratio(e.z_s, e.z_k, z_ref, tri.ratio_floor), tri.ratio_floor);
            st.tri_weight[i] = 1.0 / static_cast<double>(st.n_kfe);
            st.lower[i] = (1.0 - tri.alpha) / r;
            st.upper[i] = (1.0 + tri.alpha) / r;
        }
    }
    st.latent = stack(latents);
    st.sources = stack(sources);
    st.references = stack(refs);
    st.intended = stack(probs);
    st.z_k = matrix_of(zk);
    if (gen.ssc) {
        st.taps = stack(taps);
        st.masks = stack(masks);
    }
    return st;
}

Var weighted_rows(Var rows, const Tensor& weights) { return sum(mul(rows.graph->constant(weights), rows)); }

// One discriminator step on real sources against detached fakes. Returns the
// discriminator loss and whether any output sat outside the clamp range.
std::pair<double, bool> discriminator_step(DiscriminatorParams& disc, AdamState& adam, const Tensor& real, const Tensor& fake) {
    const std::size_t b = real.dim(0);
    Graph graph;
    Shape joint = real.shape();
    joint[0] = 2 * b;
    std::vector<double> joined(real.values());
    joined.insert(joined.end(), fake.values().begin(), fake.values().end());
    Var d = discriminator_forward(graph, disc, graph.constant(Tensor(joint, std::move(joined))), true);
    Tensor real_w({2 * b, 1}, 0.0), fake_w({2 * b, 1}, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        real_w[i] = 1.0 / static_cast<double>(b);
        fake_w[b + i] = 1.0 / static_cast<double>(b);
    }
    Var real_term = sum(mul(graph.constant(real_w), log(d)));
    Var fake_term = sum(mul(graph.constant(fake_w), log(add_scalar(scale(d, -1.0), 1.0))));
    Var loss = scale(add(real_term, fake_term), -1.0);
    bool clamped = false;
    for (double v : d.value().data()) clamped = clamped || v < kProbFloor || v > 1.0 - kProbFloor;
    graph.backward(loss);
    adam.step(disc.tensors, graph.parameter_grads());
    return {loss.value().item(), clamped};
}

LossReport train_step(FeaturePool& pool, const ClassifierParams& classifier, GeneratorParams& gen, DiscriminatorParams& disc,
                      AdamState& adam_g, AdamState& adam_d, const std::vector<KfeElement>& batch, const TrainConfig& cfg) {
    const StepTensors st = prepare(pool, batch, gen.config, cfg.tri);
    LossReport report;
    Graph graph;
    std::optional<SscBatch> ssc;
    if (st.taps) ssc = SscBatch{graph.constant(*st.taps), *st.masks};
    // L1 terms use the raw output; D and the classifier see rendered pixels.
    Var fake = generator_forward(graph, gen, graph.constant(st.latent), ssc, true);
    Var pixels = unit_range(fake);

    const auto [d_loss, d_clamped] = discriminator_step(disc, adam_d, st.sources, pixels.value());
    report.adv_d = d_loss;

    Var d_fake = discriminator_forward(graph, disc, pixels, false);
    for (double v : d_fake.value().data()) report.adv_clamped = report.adv_clamped || v < kProbFloor || v > 1.0 - kProbFloor;
    report.adv_clamped = report.adv_clamped || d_clamped;
    const auto nodes = classifier_forward(graph, classifier, pixels, false);
    Var sources = graph.constant(st.sources);

    std::vector<std::pair<Var, double>> terms;
    Var cls = kl_divergence(graph.constant(st.intended), nodes.probs);
    Var adv = adv_generator_term(d_fake);
    Var fea = mean(l2_rows(nodes.z, graph.constant(st.z_k)));
    report.cls = cls.value().item();
    report.adv_g = adv.value().item();
    report.fea = fea.value().item();
    terms = {{cls, cfg.weights.cls}, {adv, cfg.weights.adv}, {fea, cfg.weights.fea}};
    if (st.n_rec > 0) {
        Var rec = weighted_rows(l1_rows(fake, sources), st.rec_weight);
        report.rec = rec.value().item();
        terms.emplace_back(rec, cfg.weights.rec);
    }
    if (st.n_kfe > 0) {
        Var d_src = l1_rows(sources, fake);
        Var d_ref = l1_rows(fake, graph.constant(st.references));
        Var tri = weighted_rows(triangulation_rows(d_src, d_ref, st.lower, st.upper), st.tri_weight);
        report.tri = tri.value().item();
        terms.emplace_back(tri, cfg.weights.tri);
        if (cfg.weights.prox > 0.0) {
            Var prox = weighted_rows(d_src, st.prox_weight);
            report.prox = prox.value().item();
            terms.emplace_back(prox, cfg.weights.prox);
        }
    }
    Var total = scale(terms.front().first, terms.front().second);
    for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, scale(terms[i].first, terms[i].second));
    report.total = weighted_total(report, cfg.weights);
    graph.backward(total);
    adam_g.step(gen.tensors, graph.parameter_grads());
    return report;
}

}  // namespace

const char* to_string(KRule rule) { return rule == KRule::uniform ? "uniform" : "endpoints+grid"; }

KRule k_rule_from_string(const std::string& name) {
    if (name == "uniform") return KRule::uniform;
    if (name == "endpoints+grid") return KRule::endpoints_grid;
    throw Error(ErrorKind::config, "unknown k rule '" + name + "'");
}

void TrainConfig::validate() const {
    if (epochs == 0 || batch == 0) throw Error(ErrorKind::config, "train: epochs and batch must be positive");
    if (!(lr > 0.0)) throw Error(ErrorKind::config, "train: lr must be positive");
    const double w[] = {weights.cls, weights.adv, weights.rec, weights.fea, weights.tri, weights.prox};
    for (double v : w)
        if (!(v >= 0.0)) throw Error(ErrorKind::config, "train: loss weights must be >= 0");
    tri.validate();
    if (!(sampling.reconstruction_fraction >= 0.0 && sampling.reconstruction_fraction <= 1.0)) {
        throw Error(ErrorKind::config, "train: reconstruction fraction must be in [0,1]");
    }
    if (sampling.rule == KRule::endpoints_grid && sampling.grid_steps < 2) throw Error(ErrorKind::config, "train: grid needs >= 2 steps");
    if (!(0.0 <= rho_lower && rho_lower <= rho_upper && rho_upper <= 1.0)) {
        throw Error(ErrorKind::config, "train: rho bounds must satisfy 0 <= lower <= upper <= 1");
    }
}

const Latent& FeaturePool::reflection(std::size_t index, int target) {
    const auto key = std::make_pair(index, target);
    auto it = reflections.find(key);
    if (it != reflections.end()) return it->second;
    const Latent z_s = stacks[index].z.values();
    const Mirror mirror = make_mirror(head, predicted[index], target);
    Latent z_r;
    try {
        z_r = multiclass_reflection(z_s, mirror, head).z;
    } catch (const ReflectionUnreachableError&) {
        // Rare with full-rank heads; fall back to the pairwise reflection.
        z_r = position(z_s, mirror, 1.0);
    }
    return reflections.emplace(key, std::move(z_r)).first->second;
}

FeaturePool build_feature_pool(const ClassifierParams& classifier, const LabeledDataset& data) {
    FeaturePool pool;
    pool.data = &data;
    pool.head = classifier.head();
    constexpr std::size_t kChunk = 64;
    for (std::size_t start = 0; start < data.size(); start += kChunk) {
        const std::size_t len = std::min(kChunk, data.size() - start);
        auto chunk = featurize_batch(classifier, std::span<const Tensor>(data.images).subspan(start, len));
        for (auto& s : chunk) {
            pool.predicted.push_back(argmax(s.probs));
            pool.stacks.push_back(std::move(s));
        }
    }
    pool.by_class.resize(classifier.config.num_classes);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const int label = data.labels[i];
        if (label < 0 || static_cast<std::size_t>(label) >= pool.by_class.size()) throw Error(ErrorKind::invalid_argument, "feature pool: label out of range");
        pool.by_class[static_cast<std::size_t>(label)].push_back(i);
    }
    return pool;
}

double sample_k(const KSampling& sampling, std::mt19937_64& rng) {
    if (sampling.rule == KRule::uniform) return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, sampling.grid_steps - 1)(rng);
    return idx == sampling.grid_steps - 1 ? 1.0 : static_cast<double>(idx) / static_cast<double>(sampling.grid_steps - 1);
}

std::vector<KfeElement> sample_kfe_batch(FeaturePool& pool, std::size_t batch, const KSampling& sampling, std::mt19937_64& rng) {
    const auto present = std::count_if(pool.by_class.begin(), pool.by_class.end(), [](const auto& v) { return !v.empty(); });
    if (present < 2) throw Error(ErrorKind::precondition, "sample_kfe_batch: at least two classes must be present");
    std::vector<KfeElement> out;
    out.reserve(batch);
    std::uniform_int_distribution<std::size_t> any(0, pool.stacks.size() - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t n = 0; n < batch; ++n) {
        KfeElement e;
        e.source_index = any(rng);
        e.source = pool.predicted[e.source_index];
        e.z_s = pool.stacks[e.source_index].z.values();
        const bool reconstruction = unit(rng) < sampling.reconstruction_fraction;
        if (reconstruction) {
            e.target = e.source;
            e.z_k = e.z_s;
            e.latent_feature = pool.stacks[e.source_index].last();
            e.reference_index = e.source_index;
            e.intended_probs = pool.stacks[e.source_index].probs;
            out.push_back(std::move(e));
            continue;
        }
        std::vector<int> targets;
        for (std::size_t c = 0; c < pool.by_class.size(); ++c)
            if (static_cast<int>(c) != e.source && !pool.by_class[c].empty()) targets.push_back(static_cast<int>(c));
        e.target = targets[std::uniform_int_distribution<std::size_t>(0, targets.size() - 1)(rng)];
        const double k = sample_k(sampling, rng);
        e.k = k;
        if (sampling.mode == TrajectoryMode::multiclass) {
            const Latent& z_r = pool.reflection(e.source_index, e.target);
            e.z_k = kfe_latent(e.z_s, make_mirror(pool.head, e.source, e.target), k, TrajectoryMode::multiclass, z_r);
        } else {
            e.z_k = position(e.z_s, make_mirror(pool.head, e.source, e.target), k);
        }
        e.latent_feature = kfe_feature(pool.stacks[e.source_index].last(), e.z_s, e.z_k);
        const auto& own_pool = pool.by_class[static_cast<std::size_t>(e.source)];
        if (k >= 0.5) {
            e.reference_index = pick(pool.by_class[static_cast<std::size_t>(e.target)], rng);
        } else if (k == 0.0 || own_pool.empty()) {
            e.reference_index = e.source_index;
        } else {
            e.reference_index = pick(own_pool, rng);
        }
        e.intended_probs = Tensor::vector(pool.head.probs(e.z_k));
        out.push_back(std::move(e));
    }
    return out;
}

TrainedGenerator train_generator(const ClassifierParams& classifier, const LabeledDataset& train, const TrainConfig& config,
                                 const std::function<void(const LossRecord&)>& on_step) {
    config.validate();
    if (train.size() == 0) throw Error(ErrorKind::invalid_argument, "train_generator: empty training split");
    const std::uint64_t frozen = checksum(classifier.tensors);

    TrainedGenerator result;
    GeneratorConfig gen_cfg = generator_config_for(classifier.config, config.ssc, config.hidden);
    gen_cfg.rho_lower = config.rho_lower;
    gen_cfg.rho_upper = config.rho_upper;
    result.generator = init_generator(gen_cfg, config.seed);
    DiscriminatorConfig disc_cfg;
    disc_cfg.image_channels = classifier.config.in_channels;
    disc_cfg.image_size = classifier.config.image_size;
    result.discriminator = init_discriminator(disc_cfg, config.seed + 1);

    FeaturePool pool = build_feature_pool(classifier, train);
    AdamState adam_g(AdamConfig{.lr = config.lr});
    AdamState adam_d(AdamConfig{.lr = config.lr});
    std::mt19937_64 rng(config.seed ^ 0x5851f42d4c957f2dULL);
    const std::size_t steps_per_epoch = (train.size() + config.batch - 1) / config.batch;

    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= config.epochs && !result.aborted; ++epoch) {
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            ++step;
            const auto batch = sample_kfe_batch(pool, config.batch, config.sampling, rng);
            const ParamSet gen_before = result.generator.tensors;
            const ParamSet disc_before = result.discriminator.tensors;
            try {
                LossRecord record{epoch, step, train_step(pool, classifier, result.generator, result.discriminator, adam_g, adam_d, batch, config)};
                if (!std::isfinite(record.losses.total)) throw Error(ErrorKind::numeric_overflow, "non-finite generator loss");
                result.history.push_back(record);
                if (on_step) on_step(record);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::numeric_overflow) throw;
                result.generator.tensors = gen_before;
                result.discriminator.tensors = disc_before;
                result.aborted = "epoch " + std::to_string(epoch) + " step " + std::to_string(step) + ": " + e.what();
                break;
            }
        }
    }
    if (checksum(classifier.tensors) != frozen) throw Error(ErrorKind::frozen_violation, "classifier tensors changed during generator training");
    return result;
}

std::string loss_history_csv(const std::vector<LossRecord>& history) {
    std::string out = "epoch,step,cls,adv_g,adv_d,rec,fea,tri,total\n";
    char line[512];
    for (const auto& r : history) {
        const auto& l = r.losses;
        std::snprintf(line, sizeof line, "%zu,%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.epoch, r.step, l.cls, l.adv_g, l.adv_d, l.rec, l.fea,
                      l.tri, l.total);
        out += line;
    }
    return out;
}

}  // namespace mcfe
