#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "mcfe/error.hpp"
#include "mcfe/evalmod.hpp"

using namespace mcfe;

namespace {

LabeledDataset small_dataset(std::size_t per_class) {
    DatasetConfig cfg;
    cfg.per_class_count = per_class;
    return generate_dataset(cfg);
}

}  // namespace

TEST_CASE("gaussian kernel is normalized and symmetric") {
    for (const BlurConfig b : {BlurConfig{3, 1.0}, BlurConfig{5, 0.7}, BlurConfig{7, 2.5}}) {
        const Tensor k = gaussian_kernel(b);
        REQUIRE(k.shape() == Shape{b.size, b.size});
        double total = 0.0;
        for (double v : k.data()) total += v;
        CHECK(std::abs(total - 1.0) <= 1e-12);
        for (std::size_t i = 0; i < b.size; ++i)
            for (std::size_t j = 0; j < b.size; ++j) {
                CHECK(k[i * b.size + j] == doctest::Approx(k[j * b.size + i]).epsilon(1e-15));
                CHECK(k[i * b.size + j] == doctest::Approx(k[(b.size - 1 - i) * b.size + j]).epsilon(1e-15));
            }
    }
    CHECK_THROWS_AS(gaussian_kernel(BlurConfig{4, 1.0}), Error);
    CHECK_THROWS_AS(gaussian_kernel(BlurConfig{3, 0.0}), Error);
}

TEST_CASE("blur leaves constant images alone and tiny sigma is a delta") {
    const Tensor flat({1, 16, 16}, 0.37);
    const Tensor blurred = gaussian_blur(flat, BlurConfig{});
    for (double v : blurred.data()) CHECK(std::abs(v - 0.37) <= 1e-12);

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor img({1, 16, 16}, 0.0);
    for (auto& v : img.data()) v = u(rng);
    CHECK(max_abs_diff(gaussian_blur(img, BlurConfig{3, 0.05}), img) <= 1e-12);
}

TEST_CASE("blur matches a loop oracle with replicated borders") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor img({1, 5, 6}, 0.0);
    for (auto& v : img.data()) v = u(rng);
    const BlurConfig b{3, 1.0};
    const Tensor k = gaussian_kernel(b);
    const Tensor got = gaussian_blur(img, b);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 6; ++x) {
            double acc = 0.0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = std::clamp(y + dy, 0, 4), xx = std::clamp(x + dx, 0, 5);
                    acc += k[static_cast<std::size_t>((dy + 1) * 3 + dx + 1)] * img[static_cast<std::size_t>(yy * 6 + xx)];
                }
            CHECK(std::abs(got[static_cast<std::size_t>(y * 6 + x)] - acc) <= 1e-12);
        }
}

TEST_CASE("denoised validity agrees with plain validity where blur is inert") {
    const auto clf = init_classifier(ClassifierConfig{}, 5);
    const Tensor flat({1, 16, 16}, 0.6);
    const int pred = predict(clf, flat);
    CHECK(denoised_validity(clf, flat, pred, BlurConfig{}));
    CHECK_FALSE(denoised_validity(clf, flat, (pred + 1) % 4, BlurConfig{}));
    const auto data = small_dataset(2);
    for (const auto& img : data.images) {
        const int p = predict(clf, img);
        CHECK(denoised_validity(clf, img, p, BlurConfig{3, 0.05}));
    }
}

TEST_CASE("faithfulness is zero for a perfect round trip") {
    const auto clf = init_classifier(ClassifierConfig{}, 6);
    const auto img = small_dataset(1).images[2];
    const auto st = featurize(clf, img);
    const Faithfulness f = faithfulness(clf, st.z.values(), img);
    CHECK(f.fea_dist == 0.0);
    CHECK(f.conf_l1 == 0.0);

    const Faithfulness g = faithfulness(clf, st.z.values(), Tensor({1, 16, 16}, 0.0));
    CHECK(g.fea_dist > 0.0);
    CHECK(g.conf_l1 >= 0.0);
    CHECK(g.conf_l1 <= 1.0);
}

TEST_CASE("aggregates are row means") {
    std::vector<EvalRow> rows(3);
    rows[0].first_cfe_k = 0.6;
    rows[0].validity = true;
    rows[0].l1 = 0.1;
    rows[0].d_validity = true;
    rows[0].fea_dist = 1.0;
    rows[0].conf_l1 = 0.03;
    rows[1].validity = true;
    rows[1].l1 = 0.2;
    rows[1].fea_dist = 2.0;
    rows[1].conf_l1 = 0.06;
    rows[2].first_cfe_k = 0.7;
    rows[2].l1 = 0.3;
    rows[2].fea_dist = 3.0;
    rows[2].conf_l1 = 0.09;
    const auto a = aggregate(rows);
    CHECK(a.count == 3);
    CHECK(std::abs(a.first_cfe_rate - 2.0 / 3.0) <= 1e-12);
    CHECK(std::abs(a.validity - 2.0 / 3.0) <= 1e-12);
    CHECK(std::abs(a.d_validity - 1.0 / 3.0) <= 1e-12);
    CHECK(std::abs(a.l1 - 0.2) <= 1e-12);
    CHECK(std::abs(a.fea_dist - 2.0) <= 1e-12);
    CHECK(std::abs(a.conf_l1 - 0.06) <= 1e-12);
    CHECK(aggregate(std::span<const EvalRow>{}).count == 0);
}

TEST_CASE("report csv has the fixed header and one line per row") {
    std::vector<EvalRow> rows(2);
    rows[0].sample = 4;
    rows[0].source = 1;
    rows[0].target = 2;
    rows[0].first_cfe_k = 0.5625;
    rows[0].validity = true;
    const std::string csv = report_csv(rows);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "sample,source,target,first_cfe_k,validity,l1,d_validity,fea_dist,conf_l1");
    std::getline(in, line);
    CHECK(line.rfind("4,1,2,0.5625,1,", 0) == 0);
    std::getline(in, line);
    CHECK(line.find(",nan,") != std::string::npos);
    CHECK_FALSE(std::getline(in, line));
}

TEST_CASE("suite run on an untrained pipeline accounts for every sample") {
    const auto data = small_dataset(3);
    const auto clf = init_classifier(ClassifierConfig{}, 7);
    const auto gen = init_generator(generator_config_for(clf.config, false, 8), 8);
    const std::vector<std::pair<int, int>> pairs{{0, 1}, {2, 3}};
    EvalConfig cfg;
    cfg.max_samples = 4;
    const auto report = evaluate_suite(clf, gen, data, pairs, cfg);
    std::size_t eligible = 0;
    for (const auto& [a, b] : pairs) {
        std::size_t n = 0;
        for (const auto& img : data.images) {
            const int p = predict(clf, img);
            if (p == a || p == b) ++n;
        }
        eligible += std::min<std::size_t>(n, cfg.max_samples);
    }
    CHECK(report.rows.size() == eligible);
    CHECK(report.first_cfe_rows.size() + report.no_flip == report.rows.size());
    for (const auto& r : report.first_cfe_rows) {
        CHECK(r.validity);
        REQUIRE(r.first_cfe_k.has_value());
        CHECK(*r.first_cfe_k >= 0.0);
        CHECK(*r.first_cfe_k <= 1.0);
    }
    for (const auto& r : report.rows) {
        CHECK(r.source != r.target);
        CHECK(r.l1 >= 0.0);
    }
    CHECK(report.at_reflection.count == report.rows.size());
}
