#include <doctest.h>

#include <cmath>

#include "mcfe/error.hpp"
#include "mcfe/trainer.hpp"

using namespace mcfe;

namespace {

LabeledDataset small_dataset(std::size_t per_class) {
    DatasetConfig cfg;
    cfg.per_class_count = per_class;
    return generate_dataset(cfg);
}

TrainConfig smoke_config() {
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 4;
    cfg.hidden = 8;
    return cfg;
}

}  // namespace

TEST_CASE("uniform k has mean one half") {
    std::mt19937_64 rng(1);
    const KSampling s;
    double total = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const double k = sample_k(s, rng);
        REQUIRE(k >= 0.0);
        REQUIRE(k <= 1.0);
        total += k;
    }
    const double mean = total / 100000.0;
    CHECK(mean >= 0.48);
    CHECK(mean <= 0.52);
}

TEST_CASE("endpoints+grid draws only grid values and hits both ends") {
    std::mt19937_64 rng(2);
    KSampling s;
    s.rule = k_rule_from_string("endpoints+grid");
    s.grid_steps = 5;
    bool zero = false, one = false;
    for (int i = 0; i < 2000; ++i) {
        const double k = sample_k(s, rng);
        CHECK(std::abs(k * 4.0 - std::round(k * 4.0)) <= 1e-12);
        zero = zero || k == 0.0;
        one = one || k == 1.0;
    }
    CHECK(zero);
    CHECK(one);
    CHECK(std::string(to_string(KRule::uniform)) == "uniform");
    CHECK_THROWS_AS(k_rule_from_string("gaussian"), Error);
}

TEST_CASE("kfe batches follow the element contract") {
    const auto data = small_dataset(5);
    const auto clf = init_classifier(ClassifierConfig{}, 3);
    auto pool = build_feature_pool(clf, data);
    std::mt19937_64 rng(4);
    KSampling s;
    s.reconstruction_fraction = 0.5;
    s.mode = TrajectoryMode::binary;
    const auto batch = sample_kfe_batch(pool, 200, s, rng);
    REQUIRE(batch.size() == 200);
    std::size_t recon = 0;
    for (const auto& e : batch) {
        CHECK(e.source == pool.predicted[e.source_index]);
        CHECK(e.latent_feature.shape() == pool.stacks[e.source_index].last().shape());
        if (e.reconstruction()) {
            ++recon;
            CHECK(e.target == e.source);
            CHECK(e.z_k == e.z_s);
            CHECK(e.latent_feature == pool.stacks[e.source_index].last());
        } else {
            CHECK(e.target != e.source);
            CHECK(*e.k >= 0.0);
            CHECK(*e.k <= 1.0);
            const int ref_label = data.labels[e.reference_index];
            if (*e.k >= 0.5) CHECK(ref_label == e.target);
            else if (*e.k > 0.0) CHECK((ref_label == e.source || e.reference_index == e.source_index));
            else CHECK(e.reference_index == e.source_index);
        }
        double total = 0.0;
        for (double p : e.intended_probs.data()) total += p;
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(recon > 60);
    CHECK(recon < 140);
}

TEST_CASE("same seed gives the same batch") {
    const auto data = small_dataset(3);
    const auto clf = init_classifier(ClassifierConfig{}, 3);
    auto pool = build_feature_pool(clf, data);
    std::mt19937_64 a(9), b(9);
    const auto x = sample_kfe_batch(pool, 16, KSampling{}, a);
    const auto y = sample_kfe_batch(pool, 16, KSampling{}, b);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(x[i].source_index == y[i].source_index);
        CHECK(x[i].target == y[i].target);
        CHECK(x[i].k == y[i].k);
        CHECK(x[i].reference_index == y[i].reference_index);
        CHECK(x[i].z_k == y[i].z_k);
    }
}

TEST_CASE("a single-class dataset cannot be sampled") {
    auto data = small_dataset(3);
    const auto keep = data.indices_of_class(2);
    LabeledDataset one;
    one.num_classes = data.num_classes;
    for (auto i : keep) {
        one.images.push_back(data.images[i]);
        one.labels.push_back(2);
    }
    const auto clf = init_classifier(ClassifierConfig{}, 3);
    auto pool = build_feature_pool(clf, one);
    std::mt19937_64 rng(1);
    try {
        (void)sample_kfe_batch(pool, 4, KSampling{}, rng);
        FAIL("expected precondition");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::precondition);
    }
}

TEST_CASE("one-epoch smoke run keeps the classifier frozen and is reproducible") {
    const auto data = small_dataset(5);
    const auto clf = init_classifier(ClassifierConfig{}, 3);
    const auto before = checksum(clf.tensors);
    std::size_t steps = 0;
    const auto a = train_generator(clf, data, smoke_config(), [&](const LossRecord&) { ++steps; });
    CHECK(checksum(clf.tensors) == before);
    CHECK_FALSE(a.aborted.has_value());
    CHECK(steps == 5);
    REQUIRE(a.history.size() == 5);
    for (const auto& r : a.history) {
        CHECK(std::isfinite(r.losses.total));
        CHECK(r.losses.total == doctest::Approx(weighted_total(r.losses, LossWeights{})).epsilon(1e-12));
        CHECK_FALSE(r.losses.prox.has_value());
    }

    const auto bytes = serialize_checkpoint(to_checkpoint(a.generator));
    CHECK(generator_from_checkpoint(parse_checkpoint(bytes)).tensors == a.generator.tensors);
    CHECK(discriminator_from_checkpoint(to_checkpoint(a.discriminator)).tensors == a.discriminator.tensors);

    const auto b = train_generator(clf, data, smoke_config());
    CHECK(loss_history_csv(a.history) == loss_history_csv(b.history));
    CHECK(a.generator.tensors == b.generator.tensors);
}

TEST_CASE("training runs with the triangulation weight off and with ssc on") {
    const auto data = small_dataset(5);
    const auto clf = init_classifier(ClassifierConfig{}, 3);
    auto cfg = smoke_config();
    cfg.weights.tri = 0.0;
    cfg.weights.prox = 1.0;
    const auto a = train_generator(clf, data, cfg);
    CHECK_FALSE(a.aborted.has_value());
    CHECK(a.history.back().losses.prox.has_value());
    cfg = smoke_config();
    cfg.ssc = true;
    const auto b = train_generator(clf, data, cfg);
    CHECK_FALSE(b.aborted.has_value());
    CHECK(b.generator.config.ssc);
}

TEST_CASE("loss history csv layout") {
    LossRecord r;
    r.epoch = 1;
    r.step = 2;
    r.losses.cls = 0.5;
    r.losses.total = 1.25;
    const std::string csv = loss_history_csv({r});
    CHECK(csv.rfind("epoch,step,cls,adv_g,adv_d,rec,fea,tri,total\n", 0) == 0);
    CHECK(csv.find("1,2,0.5,0,0,0,0,0,1.25\n") != std::string::npos);
}

TEST_CASE("invalid training configs are rejected") {
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.weights.rec = -1.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.rho_lower = 0.9;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.sampling.reconstruction_fraction = 1.5;
    CHECK_THROWS_AS(cfg.validate(), Error);
}
