#include "mcfe/mirror.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mcfe/error.hpp"

namespace mcfe {

namespace {

constexpr double kDegenerateNorm = 1e-12;
constexpr double kBisectionWidth = 1e-3;
constexpr std::size_t kMinCfeSteps = 21;

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Strictly ahead of every other class; a tie (the projection itself) is not a flip.
bool wins(const Latent& v, int target) {
    const double top = v[static_cast<std::size_t>(target)];
    for (std::size_t c = 0; c < v.size(); ++c)
        if (static_cast<int>(c) != target && v[c] >= top) return false;
    return true;
}

void require_latent(const Latent& z, std::size_t n, const char* op) {
    if (z.size() != n) {
        throw Error(ErrorKind::shape_mismatch,
                    std::string(op) + ": latent has " + std::to_string(z.size()) + " entries, expected " + std::to_string(n));
    }
}

}  // namespace

Latent LinearHead::logits(const Latent& z) const {
    const std::size_t n = latent_dim(), c = num_classes();
    require_latent(z, n, "logits");
    Latent out(bias.values());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += weight[i * c + j] * z[i];
    return out;
}

Latent LinearHead::probs(const Latent& z) const {
    Latent l = logits(z);
    const double m = *std::max_element(l.begin(), l.end());
    double total = 0.0;
    for (auto& v : l) {
        v = std::exp(v - m);
        total += v;
    }
    for (auto& v : l) v /= total;
    return l;
}

double Mirror::logit(const Latent& z) const {
    require_latent(z, weight.size(), "mirror");
    return std::inner_product(weight.begin(), weight.end(), z.begin(), 0.0) + bias;
}

Mirror make_mirror(const LinearHead& head, int source, int target) {
    const auto c = static_cast<int>(head.num_classes());
    if (source == target) throw Error(ErrorKind::invalid_argument, "make_mirror: source and target must differ");
    if (source < 0 || target < 0 || source >= c || target >= c) throw Error(ErrorKind::invalid_argument, "make_mirror: class index out of range");
    Mirror m;
    m.source = source;
    m.target = target;
    const std::size_t n = head.latent_dim();
    const auto cols = static_cast<std::size_t>(c);
    m.weight.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        m.weight[i] = head.weight[i * cols + static_cast<std::size_t>(target)] - head.weight[i * cols + static_cast<std::size_t>(source)];
    }
    m.bias = head.bias[static_cast<std::size_t>(target)] - head.bias[static_cast<std::size_t>(source)];
    m.norm = std::sqrt(std::inner_product(m.weight.begin(), m.weight.end(), m.weight.begin(), 0.0));
    if (m.norm < kDegenerateNorm) {
        throw Error(ErrorKind::degenerate_mirror, "make_mirror: classes " + std::to_string(source) + " and " + std::to_string(target) +
                                                      " have identical weights");
    }
    m.unit.resize(n);
    for (std::size_t i = 0; i < n; ++i) m.unit[i] = m.weight[i] / m.norm;
    return m;
}

Latent position(const Latent& z_s, const Mirror& mirror, double k) {
    if (!(k >= 0.0 && k <= 1.0)) throw Error(ErrorKind::invalid_argument, "position: k=" + std::to_string(k) + " outside [0,1]");
    const double travel = 2.0 * k * mirror.logit(z_s) / mirror.norm;
    Latent out(z_s);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= travel * mirror.unit[i];
    return out;
}

double pair_confidence(const Latent& z, const Mirror& mirror) { return sigmoid(mirror.logit(z)); }

KfeKind kfe_kind(double k) {
    if (k == 1.0) return KfeKind::reflection;
    if (k == 0.5) return KfeKind::projection;
    return k > 0.5 ? KfeKind::cfe : KfeKind::sfe;
}

const char* to_string(TrajectoryMode mode) { return mode == TrajectoryMode::binary ? "binary" : "multiclass"; }

TrajectoryMode trajectory_mode_from_string(const std::string& name) {
    if (name == "binary") return TrajectoryMode::binary;
    if (name == "multiclass") return TrajectoryMode::multiclass;
    throw Error(ErrorKind::invalid_argument, "unknown trajectory mode '" + name + "'");
}

Latent kfe_latent(const Latent& z_s, const Mirror& mirror, double k, TrajectoryMode mode, const std::optional<Latent>& reflection) {
    if (mode == TrajectoryMode::binary) return position(z_s, mirror, k);
    if (!(k >= 0.0 && k <= 1.0)) throw Error(ErrorKind::invalid_argument, "kfe_latent: k outside [0,1]");
    if (!reflection) throw Error(ErrorKind::precondition, "kfe_latent: multiclass mode requires a reflection point");
    require_latent(*reflection, z_s.size(), "kfe_latent");
    Latent out(z_s);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += k * ((*reflection)[i] - z_s[i]);
    return out;
}

Latent Trajectory::latent_at(double k) const { return kfe_latent(source, mirror, k, mode, reflection); }

KfePoint Trajectory::point_at(double k, const LinearHead& head) const {
    KfePoint p;
    p.k = k;
    p.z = latent_at(k);
    p.q_pair = pair_confidence(p.z, mirror);
    p.p_multi = head.probs(p.z);
    p.kind = kfe_kind(k);
    return p;
}

Trajectory sample_trajectory(const Latent& z_s, const LinearHead& head, const Mirror& mirror, std::size_t steps, TrajectoryMode mode,
                             std::optional<Latent> reflection) {
    if (steps < 2) throw Error(ErrorKind::invalid_argument, "sample_trajectory: steps must be >= 2");
    require_latent(z_s, head.latent_dim(), "sample_trajectory");
    Trajectory tr;
    tr.source = z_s;
    tr.mirror = mirror;
    tr.mode = mode;
    if (mode == TrajectoryMode::multiclass) {
        tr.reflection = reflection ? std::move(reflection) : std::optional<Latent>(multiclass_reflection(z_s, mirror, head).z);
    }
    tr.points.reserve(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        const double k = i + 1 == steps ? 1.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        tr.points.push_back(tr.point_at(k, head));
    }
    return tr;
}

KfePoint first_cfe(const Trajectory& trajectory, const LinearHead& head) {
    if (trajectory.points.size() < kMinCfeSteps) {
        throw Error(ErrorKind::precondition, "first_cfe: trajectory needs at least " + std::to_string(kMinCfeSteps) + " steps");
    }
    const int target = trajectory.mirror.target;
    const auto& pts = trajectory.points;
    std::size_t hit = pts.size();
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (wins(pts[i].p_multi, target)) {
            hit = i;
            break;
        }
    }
    if (hit == pts.size()) {
        throw Error(ErrorKind::no_flip, "first_cfe: decision never flips to class " + std::to_string(target) + " by k=1");
    }
    if (hit == 0) return pts[0];
    double lo = pts[hit - 1].k;
    double hi = pts[hit].k;
    while (hi - lo > kBisectionWidth) {
        const double mid = 0.5 * (lo + hi);
        if (wins(head.probs(trajectory.latent_at(mid)), target)) hi = mid;
        else lo = mid;
    }
    return trajectory.point_at(hi, head);
}

ReflectionResult multiclass_reflection(const Latent& z_s, const Mirror& mirror, const LinearHead& head, double tolerance,
                                       const LbfgsOptions& options) {
    const std::size_t n = head.latent_dim(), c = head.num_classes();
    require_latent(z_s, n, "multiclass_reflection");
    if (mirror.source == mirror.target) throw Error(ErrorKind::invalid_argument, "multiclass_reflection: source equals target");
    const auto s = static_cast<std::size_t>(mirror.source);
    const auto t = static_cast<std::size_t>(mirror.target);

    Latent target = head.logits(z_s);
    std::swap(target[s], target[t]);
    auto residual_of = [&](const Latent& z) {
        Latent r = head.logits(z);
        for (std::size_t j = 0; j < c; ++j) r[j] -= target[j];
        return r;
    };
    auto norm = [](const Latent& r) { return std::sqrt(std::inner_product(r.begin(), r.end(), r.begin(), 0.0)); };

    ReflectionResult result;
    result.z = position(z_s, mirror, 1.0);
    if (c == 2) {
        // Two classes: the pairwise reflection is exact in the only quantity
        // softmax sees, the logit difference. Swapping the raw logits would
        // also need |W_s| == |W_t|.
        Latent r = residual_of(result.z);
        const double m = 0.5 * (r[0] + r[1]);
        result.residual = std::hypot(r[0] - m, r[1] - m);
        result.raw_residual = norm(r);
        return result;
    }
    const Objective objective = [&](std::span<const double> z, std::span<double> grad) {
        const Latent r = residual_of(Latent(z.begin(), z.end()));
        double f = 0.0;
        for (double v : r) f += 0.5 * v * v;
        for (std::size_t i = 0; i < n; ++i) {
            double g = 0.0;
            for (std::size_t j = 0; j < c; ++j) g += head.weight[i * c + j] * r[j];
            grad[i] = g;
        }
        return f;
    };
    try {
        const auto opt = lbfgs_minimize(objective, result.z, options);
        result.z = opt.x;
        result.iterations = opt.iterations;
    } catch (const StalledError& e) {
        result.z = e.best_x();
        result.iterations = options.max_iter;
    }
    result.residual = result.raw_residual = norm(residual_of(result.z));
    if (!(result.residual <= tolerance)) {
        throw ReflectionUnreachableError("multiclass_reflection: best logit residual " + std::to_string(result.residual) +
                                             " exceeds tolerance " + std::to_string(tolerance),
                                         result.residual);
    }
    return result;
}

Latent spatial_mean(const Tensor& feature) {
    if (feature.rank() != 3) throw Error(ErrorKind::shape_mismatch, "spatial_mean: expected [C,H,W], got " + shape_string(feature.shape()));
    const std::size_t channels = feature.dim(0), plane = feature.dim(1) * feature.dim(2);
    Latent out(channels, 0.0);
    for (std::size_t ch = 0; ch < channels; ++ch) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) acc += feature[ch * plane + i];
        out[ch] = acc / static_cast<double>(plane);
    }
    return out;
}

Tensor kfe_feature(const Tensor& f_s, const Latent& z_s, const Latent& z_k) {
    const Latent gap = spatial_mean(f_s);
    require_latent(z_s, gap.size(), "kfe_feature");
    require_latent(z_k, gap.size(), "kfe_feature");
    for (std::size_t i = 0; i < gap.size(); ++i) {
        if (std::abs(gap[i] - z_s[i]) > 1e-9) {
            throw Error(ErrorKind::precondition, "kfe_feature: GAP(f_s) differs from z_s at channel " + std::to_string(i));
        }
    }
    Tensor out = f_s;
    const std::size_t plane = f_s.dim(1) * f_s.dim(2);
    for (std::size_t ch = 0; ch < gap.size(); ++ch) {
        const double delta = z_k[ch] - z_s[ch];
        for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] += delta;
    }
    return out;
}

Tensor kfe_feature(const Tensor& f_s, const Latent& z_s, double k, const Mirror& mirror) {
    return kfe_feature(f_s, z_s, position(z_s, mirror, k));
}

Tensor kfe_feature(const Tensor& f_s, const Latent& z_s, double k, const Latent& reflection) {
    if (!(k >= 0.0 && k <= 1.0)) throw Error(ErrorKind::invalid_argument, "kfe_feature: k outside [0,1]");
    require_latent(reflection, z_s.size(), "kfe_feature");
    Latent z_k(z_s);
    for (std::size_t i = 0; i < z_k.size(); ++i) z_k[i] += k * (reflection[i] - z_s[i]);
    return kfe_feature(f_s, z_s, z_k);
}

}  // namespace mcfe
