#include <doctest.h>

#include <cmath>
#include <random>

#include "mcfe/error.hpp"
#include "mcfe/mirror.hpp"

using namespace mcfe;

namespace {

LinearHead head_from(std::size_t n, std::size_t c, std::vector<double> w, std::vector<double> b) {
    return LinearHead{Tensor({n, c}, std::move(w)), Tensor({c}, std::move(b))};
}

LinearHead random_head(std::size_t n, std::size_t c, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    LinearHead h{Tensor({n, c}, 0.0), Tensor({c}, 0.0)};
    for (auto& v : h.weight.data()) v = g(rng);
    for (auto& v : h.bias.data()) v = g(rng);
    return h;
}

Latent random_latent(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Latent z(n);
    for (auto& v : z) v = g(rng);
    return z;
}

double distance(const Latent& a, const Latent& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(d);
}

int arg_max(const Latent& v) { return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin()); }

}  // namespace

TEST_CASE("mirror from opposite class weights") {
    const auto head = head_from(2, 2, {1, -1, 0, 0}, {0, 0});
    const Mirror m = make_mirror(head, 0, 1);
    CHECK(m.weight == Latent{-2.0, 0.0});
    CHECK(m.unit == Latent{-1.0, 0.0});
    CHECK(m.bias == 0.0);
    CHECK(m.norm == doctest::Approx(2.0));
}

TEST_CASE("swapping source and target negates the mirror") {
    std::mt19937_64 rng(1);
    const auto head = random_head(6, 3, rng);
    const Mirror a = make_mirror(head, 0, 2), b = make_mirror(head, 2, 0);
    for (std::size_t i = 0; i < 6; ++i) CHECK(a.weight[i] == -b.weight[i]);
    CHECK(a.bias == -b.bias);
}

TEST_CASE("identical class weights are a degenerate mirror") {
    const auto head = head_from(2, 2, {1, 1, 2, 2}, {0.5, 0.5});
    try {
        (void)make_mirror(head, 0, 1);
        FAIL("expected degenerate_mirror");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::degenerate_mirror);
    }
    CHECK_THROWS_AS(make_mirror(head, 0, 0), Error);
    CHECK_THROWS_AS(make_mirror(head, 0, 2), Error);
}

TEST_CASE("position on the unit-normal example") {
    Mirror m;
    m.weight = {1.0, 0.0};
    m.unit = {1.0, 0.0};
    m.norm = 1.0;
    const Latent z{2.0, 0.0};
    CHECK(position(z, m, 0.0) == z);
    CHECK(position(z, m, 0.5) == Latent{0.0, 0.0});
    CHECK(position(z, m, 1.0) == Latent{-2.0, 0.0});
    CHECK(pair_confidence(Latent{-2.0, 0.0}, m) == doctest::Approx(0.11920292202211755).epsilon(1e-14));
    CHECK_THROWS_AS(position(z, m, 1.01), Error);
    CHECK_THROWS_AS(position(z, m, -0.01), Error);
}

TEST_CASE("projection lands on the boundary for a non-unit normal") {
    const auto head = head_from(2, 2, {0, 0, 0, 2}, {0, -1});
    const Mirror m = make_mirror(head, 0, 1);
    const Latent zp = position({1.0, 1.0}, m, 0.5);
    CHECK(zp[0] == doctest::Approx(1.0));
    CHECK(zp[1] == doctest::Approx(0.5));
    CHECK(std::abs(m.logit(zp)) < 1e-12);
    CHECK(pair_confidence(zp, m) == doctest::Approx(0.5));
}

TEST_CASE("geometry invariants over random heads") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const auto head = random_head(64, 2, rng);
        const Mirror m = make_mirror(head, 0, 1);
        const Latent z = random_latent(64, rng);
        CHECK(position(z, m, 0.0) == z);
        CHECK(std::abs(pair_confidence(position(z, m, 0.5), m) - 0.5) < 1e-9);
        const Latent zr = position(z, m, 1.0);
        CHECK(std::abs(pair_confidence(zr, m) - (1.0 - pair_confidence(z, m))) < 1e-9);
        CHECK(distance(position(zr, m, 1.0), z) < 1e-9);
        double unit_norm = 0.0;
        for (double v : m.unit) unit_norm += v * v;
        CHECK(std::abs(std::sqrt(unit_norm) - 1.0) < 1e-12);
    }
}

TEST_CASE("kfe kinds follow k") {
    CHECK(kfe_kind(0.0) == KfeKind::sfe);
    CHECK(kfe_kind(0.49) == KfeKind::sfe);
    CHECK(kfe_kind(0.5) == KfeKind::projection);
    CHECK(kfe_kind(0.51) == KfeKind::cfe);
    CHECK(kfe_kind(1.0) == KfeKind::reflection);
}

TEST_CASE("binary trajectories have endpoints and monotone pair confidence") {
    std::mt19937_64 rng(3);
    const auto head = random_head(8, 3, rng);
    const Mirror m = make_mirror(head, 1, 2);
    const Latent z = random_latent(8, rng);
    const auto two = sample_trajectory(z, head, m, 2, TrajectoryMode::binary);
    REQUIRE(two.points.size() == 2);
    CHECK(two.points[0].z == z);
    CHECK(two.points[1].z == position(z, m, 1.0));
    CHECK(two.points[1].kind == KfeKind::reflection);

    const auto tr = sample_trajectory(z, head, m, 21, TrajectoryMode::binary);
    const bool rising = m.logit(z) < 0.0;
    for (std::size_t i = 1; i < tr.points.size(); ++i) {
        CHECK(tr.points[i].k > tr.points[i - 1].k);
        if (rising) CHECK(tr.points[i].q_pair > tr.points[i - 1].q_pair);
        else CHECK(tr.points[i].q_pair < tr.points[i - 1].q_pair);
    }
    CHECK(tr.points.back().k == 1.0);
    CHECK_THROWS_AS(sample_trajectory(z, head, m, 1, TrajectoryMode::binary), Error);
}

TEST_CASE("first CFE on a two-class head sits just past the projection") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const auto head = random_head(5, 2, rng);
        Latent z = random_latent(5, rng);
        const int s = arg_max(head.logits(z));
        const Mirror m = make_mirror(head, s, 1 - s);
        const auto tr = sample_trajectory(z, head, m, 21, TrajectoryMode::binary);
        const KfePoint p = first_cfe(tr, head);
        CHECK(p.k >= 0.5);
        CHECK(p.k - 0.5 <= 1e-3);
        CHECK(arg_max(p.p_multi) == 1 - s);
    }
}

TEST_CASE("first CFE is delayed when a third class dominates mid-trajectory") {
    // Constant class 2 wins for |z_0| < 1, so the target only takes over
    // at z_0 = -1, i.e. k = 0.75.
    const auto head = head_from(2, 3, {1, -1, 0, 0, 0, 0}, {0, 0, 1});
    const Latent z{2.0, 0.0};
    const Mirror m = make_mirror(head, 0, 1);
    const auto tr = sample_trajectory(z, head, m, 21, TrajectoryMode::binary);
    const KfePoint p = first_cfe(tr, head);
    // Dense scan oracle.
    double oracle = -1.0;
    for (int i = 0; i <= 10000; ++i) {
        const double k = i / 10000.0;
        if (arg_max(head.logits(position(z, m, k))) == 1) {
            oracle = k;
            break;
        }
    }
    REQUIRE(oracle == doctest::Approx(0.75));
    CHECK(p.k > 0.5);
    CHECK(std::abs(p.k - oracle) <= 1e-3);
}

TEST_CASE("first CFE errors when the target never wins or the grid is coarse") {
    // Class 2 stays above class 1 along the whole path.
    const auto head = head_from(2, 3, {1, -1, -0.5, 0, 0, 0}, {0, 0, 2});
    const Latent z{2.0, 0.0};
    const Mirror m = make_mirror(head, 0, 1);
    try {
        (void)first_cfe(sample_trajectory(z, head, m, 21, TrajectoryMode::binary), head);
        FAIL("expected no_flip");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::no_flip);
    }
    CHECK_THROWS_AS(first_cfe(sample_trajectory(z, head, m, 11, TrajectoryMode::binary), head), Error);
}

TEST_CASE("multiclass reflection swaps source and target logits on full-rank heads") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto head = random_head(16, 5, rng);
        const Latent z = random_latent(16, rng);
        const int s = arg_max(head.logits(z));
        const int t = (s + 1 + trial % 4) % 5;
        const Mirror m = make_mirror(head, s, t);
        const auto res = multiclass_reflection(z, m, head);
        CHECK(res.residual <= 1e-6);
        const Latent before = head.probs(z), after = head.probs(res.z);
        CHECK(after[static_cast<std::size_t>(t)] == doctest::Approx(before[static_cast<std::size_t>(s)]).epsilon(1e-6));
        CHECK(after[static_cast<std::size_t>(s)] == doctest::Approx(before[static_cast<std::size_t>(t)]).epsilon(1e-6));
        CHECK(arg_max(after) == t);
    }
}

TEST_CASE("two-class reflection degenerates to the pairwise reflection") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const auto head = random_head(8, 2, rng);
        const Latent z = random_latent(8, rng);
        const Mirror m = make_mirror(head, 0, 1);
        const auto res = multiclass_reflection(z, m, head);
        CHECK(distance(res.z, position(z, m, 1.0)) <= 1e-6);
    }
}

TEST_CASE("the multiclass projection balances source and target") {
    std::mt19937_64 rng(7);
    const auto head = random_head(16, 5, rng);
    const Latent z = random_latent(16, rng);
    const int s = arg_max(head.logits(z));
    const int t = (s + 2) % 5;
    const Mirror m = make_mirror(head, s, t);
    const auto tr = sample_trajectory(z, head, m, 21, TrajectoryMode::multiclass);
    const Latent zp = tr.latent_at(0.5);
    const Latent p = head.probs(zp);
    CHECK(std::abs(p[static_cast<std::size_t>(s)] - p[static_cast<std::size_t>(t)]) <= 1e-6);
    CHECK(arg_max(tr.points.front().p_multi) == s);
    CHECK(arg_max(tr.points.back().p_multi) == t);
}

TEST_CASE("rank-deficient heads make the reflection unreachable") {
    // Every class logit depends on z only through z_0 + z_1, and class 2 has
    // no weight at all, so swapping 0 and 1 while keeping 2 is infeasible.
    const auto head = head_from(2, 3, {1, 3, 0, 1, 3, 0}, {0, 0, 0.5});
    const Latent z{1.0, 0.0};
    const Mirror m = make_mirror(head, 1, 0);
    try {
        (void)multiclass_reflection(z, m, head);
        FAIL("expected reflection_unreachable");
    } catch (const ReflectionUnreachableError& e) {
        CHECK(e.kind() == ErrorKind::reflection_unreachable);
        CHECK(e.residual() > 1e-3);
    }
}

TEST_CASE("kfe features shift every spatial cell by the latent delta") {
    const Tensor f({1, 2, 2}, std::vector<double>{1, 3, 2, 2});
    const Tensor out = kfe_feature(f, Latent{2.0}, Latent{1.0});
    CHECK(out.values() == std::vector<double>{0, 2, 1, 1});
    CHECK(kfe_feature(f, Latent{2.0}, Latent{2.0}) == f);
    CHECK_THROWS_AS(kfe_feature(f, Latent{2.5}, Latent{1.0}), Error);
}

TEST_CASE("GAP of the kfe feature equals the trajectory latent") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    const auto head = random_head(4, 3, rng);
    Tensor f({4, 3, 3}, 0.0);
    for (auto& v : f.data()) v = u(rng);
    const Latent z_s = spatial_mean(f);
    const Mirror m = make_mirror(head, 0, 2);
    const auto refl = multiclass_reflection(z_s, m, head).z;
    for (double k : {0.0, 0.25, 0.5, 0.9, 1.0}) {
        const Latent g1 = spatial_mean(kfe_feature(f, z_s, k, m));
        const Latent p1 = position(z_s, m, k);
        const Latent g2 = spatial_mean(kfe_feature(f, z_s, k, refl));
        const Latent p2 = kfe_latent(z_s, m, k, TrajectoryMode::multiclass, refl);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(std::abs(g1[i] - p1[i]) <= 1e-12);
            CHECK(std::abs(g2[i] - p2[i]) <= 1e-12);
        }
    }
}

TEST_CASE("trajectory modes parse by name") {
    CHECK(trajectory_mode_from_string("binary") == TrajectoryMode::binary);
    CHECK(trajectory_mode_from_string(to_string(TrajectoryMode::multiclass)) == TrajectoryMode::multiclass);
    CHECK_THROWS_AS(trajectory_mode_from_string("both"), Error);
}
