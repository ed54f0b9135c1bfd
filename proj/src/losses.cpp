#include "mcfe/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mcfe/error.hpp"

namespace mcfe {

namespace {

constexpr double kProbFloor = 1e-12;

double mean_abs_diff(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw Error(ErrorKind::shape_mismatch, std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
    return total / static_cast<double>(a.size());
}

double euclidean(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error(ErrorKind::shape_mismatch, "latent lengths differ");
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(total);
}

void require_distribution(std::span<const double> p, const char* what) {
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-6) {
        throw Error(ErrorKind::not_normalized, std::string("loss_cls: ") + what + " sums to " + std::to_string(total));
    }
}

}  // namespace

void TriConfig::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::invalid_argument, "triangulation alpha must be in [0,1]");
    if (!(weight >= 0.0)) throw Error(ErrorKind::invalid_argument, "triangulation weight must be >= 0");
    if (!(ratio_floor > 0.0)) throw Error(ErrorKind::invalid_argument, "triangulation ratio floor must be > 0");
}

double weighted_total(const LossReport& r, const LossWeights& w) {
    return w.cls * r.cls + w.adv * r.adv_g + w.rec * r.rec + w.fea * r.fea + w.tri * r.tri + w.prox * r.prox.value_or(0.0);
}

double loss_cls(std::span<const double> p_intended, std::span<const double> p_predicted) {
    if (p_intended.size() != p_predicted.size()) throw Error(ErrorKind::shape_mismatch, "loss_cls: distributions differ in length");
    require_distribution(p_intended, "intended distribution");
    require_distribution(p_predicted, "predicted distribution");
    double total = 0.0;
    for (std::size_t i = 0; i < p_intended.size(); ++i) {
        if (p_intended[i] > 0.0) total += p_intended[i] * (std::log(p_intended[i]) - std::log(std::max(p_predicted[i], kProbFloor)));
    }
    return total;
}

AdversarialTerms loss_adv(double d_real, double d_fake) {
    AdversarialTerms out;
    auto clamp = [&out](double v) {
        const double c = std::clamp(v, kProbFloor, 1.0 - kProbFloor);
        if (c != v) out.clamped = true;
        return c;
    };
    const double real = clamp(d_real);
    const double fake = clamp(d_fake);
    out.generator = -std::log(fake);
    out.discriminator = -(std::log(real) + std::log(1.0 - fake));
    return out;
}

double loss_rec(const Tensor& x, const Tensor& regenerated) { return mean_abs_diff(x, regenerated, "loss_rec"); }

double loss_fea(std::span<const double> z_k, std::span<const double> z_roundtrip) { return euclidean(z_k, z_roundtrip); }

double loss_prox(const Tensor& x_source, const Tensor& x_k) { return mean_abs_diff(x_source, x_k, "loss_prox"); }

double latent_ratio(std::span<const double> z_s, std::span<const double> z_k, std::span<const double> z_ref, double floor) {
    return euclidean(z_k, z_ref) / std::max(euclidean(z_s, z_k), floor);
}

double triangulation_hinge(double d_source, double d_reference, double ratio, double alpha) {
    const double lower = (1.0 - alpha) / ratio * d_reference;
    const double upper = (1.0 + alpha) / ratio * d_reference;
    return std::max(lower - d_source, 0.0) + std::max(d_source - upper, 0.0);
}

double loss_tri(const Tensor& x_s, const Tensor& x_k, const Tensor& x_ref, std::span<const double> z_s, std::span<const double> z_k,
                std::span<const double> z_ref, double k, const TriConfig& config) {
    config.validate();
    if (!(k >= 0.0 && k <= 1.0)) throw Error(ErrorKind::invalid_argument, "loss_tri: k outside [0,1]");
    if (k < 0.5 && euclidean(z_s, z_k) == 0.0) {
        if (x_ref == x_s) return 0.0;
        throw Error(ErrorKind::ratio_degenerate, "loss_tri: z_k equals z_s on the semi-factual branch with a distinct reference");
    }
    const double ratio = latent_ratio(z_s, z_k, z_ref, config.ratio_floor);
    const double d_source = mean_abs_diff(x_s, x_k, "loss_tri");
    const double d_reference = mean_abs_diff(x_k, x_ref, "loss_tri");
    return triangulation_hinge(d_source, d_reference, std::max(ratio, config.ratio_floor), config.alpha);
}

Var adv_generator_term(Var d_fake) { return scale(mean(log(d_fake)), -1.0); }

Var adv_discriminator_term(Var d_real, Var d_fake) {
    Var real_term = mean(log(d_real));
    Var fake_term = mean(log(add_scalar(scale(d_fake, -1.0), 1.0)));
    return scale(add(real_term, fake_term), -1.0);
}

Var triangulation_rows(Var d_source, Var d_reference, const Tensor& lower, const Tensor& upper) {
    Graph& g = *d_source.graph;
    Var lo = mul(g.constant(lower), d_reference);
    Var hi = mul(g.constant(upper), d_reference);
    return add(relu(sub(lo, d_source)), relu(sub(d_source, hi)));
}

}  // namespace mcfe
