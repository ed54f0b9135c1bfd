#include "mcfe/evalmod.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mcfe/error.hpp"

namespace mcfe {

namespace {

constexpr double kBisectionWidth = 1e-3;

double mean_abs_diff(const Tensor& a, const Tensor& b) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
    return total / static_cast<double>(a.size());
}

std::vector<FeatureStack> featurize_all(const ClassifierParams& classifier, std::span<const Tensor> images) {
    constexpr std::size_t kChunk = 64;
    std::vector<FeatureStack> out;
    for (std::size_t start = 0; start < images.size(); start += kChunk) {
        auto chunk = featurize_batch(classifier, images.subspan(start, std::min(kChunk, images.size() - start)));
        for (auto& s : chunk) out.push_back(std::move(s));
    }
    return out;
}

Faithfulness faithfulness_of(const LinearHead& head, const Latent& z_k, const FeatureStack& image_stack) {
    const Latent intended = head.probs(z_k);
    double fea = 0.0, conf = 0.0;
    for (std::size_t i = 0; i < z_k.size(); ++i) fea += (z_k[i] - image_stack.z[i]) * (z_k[i] - image_stack.z[i]);
    for (std::size_t c = 0; c < intended.size(); ++c) conf += std::abs(intended[c] - image_stack.probs[c]);
    return {std::sqrt(fea), conf / static_cast<double>(intended.size())};
}

EvalRow score(const ClassifierParams& classifier, const BlurConfig& blur, const Tensor& source_image, const Latent& z_k, const Tensor& image,
              const FeatureStack& image_stack, EvalRow row) {
    row.validity = argmax(image_stack.probs) == row.target;
    row.l1 = mean_abs_diff(image, source_image);
    row.d_validity = denoised_validity(classifier, image, row.target, blur);
    const Faithfulness f = faithfulness_of(classifier.head(), z_k, image_stack);
    row.fea_dist = f.fea_dist;
    row.conf_l1 = f.conf_l1;
    return row;
}

}  // namespace

void BlurConfig::validate() const {
    if (size % 2 == 0) throw Error(ErrorKind::invalid_argument, "blur: kernel size must be odd");
    if (!(sigma > 0.0)) throw Error(ErrorKind::invalid_argument, "blur: sigma must be positive");
}

Tensor gaussian_kernel(const BlurConfig& blur) {
    blur.validate();
    const int r = static_cast<int>(blur.size / 2);
    Tensor k({blur.size, blur.size}, 0.0);
    double total = 0.0;
    for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x) {
            const double v = std::exp(-(x * x + y * y) / (2.0 * blur.sigma * blur.sigma));
            k[static_cast<std::size_t>((y + r) * static_cast<int>(blur.size) + (x + r))] = v;
            total += v;
        }
    for (auto& v : k.data()) v /= total;
    return k;
}

Tensor gaussian_blur(const Tensor& image, const BlurConfig& blur) {
    if (image.rank() != 3) throw Error(ErrorKind::shape_mismatch, "gaussian_blur: expected [C,H,W], got " + shape_string(image.shape()));
    const Tensor kernel = gaussian_kernel(blur);
    const int r = static_cast<int>(blur.size / 2), ks = static_cast<int>(blur.size);
    const int h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
    Tensor out(image.shape(), 0.0);
    for (std::size_t c = 0; c < image.dim(0); ++c) {
        const std::size_t base = c * static_cast<std::size_t>(h * w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0.0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        const int yy = std::clamp(y + dy, 0, h - 1), xx = std::clamp(x + dx, 0, w - 1);
                        acc += kernel[static_cast<std::size_t>((dy + r) * ks + (dx + r))] * image[base + static_cast<std::size_t>(yy * w + xx)];
                    }
                out[base + static_cast<std::size_t>(y * w + x)] = acc;
            }
    }
    return out;
}

bool denoised_validity(const ClassifierParams& classifier, const Tensor& x_cf, int target, const BlurConfig& blur) {
    return predict(classifier, gaussian_blur(x_cf, blur)) == target;
}

Faithfulness faithfulness(const ClassifierParams& classifier, const Latent& z_k, const Tensor& generated) {
    return faithfulness_of(classifier.head(), z_k, featurize(classifier, generated));
}

Faithfulness faithfulness(const ClassifierParams& classifier, const GeneratorParams& generator, const FeatureStack& source, const Latent& z_k,
                          int source_class, int target_class, double k) {
    return faithfulness(classifier, z_k, render_kfe(generator, classifier.head(), source, z_k, source_class, target_class, k));
}

EvalAggregate aggregate(std::span<const EvalRow> rows) {
    EvalAggregate a;
    a.count = rows.size();
    if (rows.empty()) return a;
    for (const auto& r : rows) {
        a.first_cfe_rate += r.first_cfe_k ? 1.0 : 0.0;
        a.validity += r.validity ? 1.0 : 0.0;
        a.l1 += r.l1;
        a.d_validity += r.d_validity ? 1.0 : 0.0;
        a.fea_dist += r.fea_dist;
        a.conf_l1 += r.conf_l1;
    }
    const double n = static_cast<double>(rows.size());
    a.first_cfe_rate /= n;
    a.validity /= n;
    a.l1 /= n;
    a.d_validity /= n;
    a.fea_dist /= n;
    a.conf_l1 /= n;
    return a;
}

EvalReport evaluate_suite(const ClassifierParams& classifier, const GeneratorParams& generator, const LabeledDataset& test,
                          std::span<const std::pair<int, int>> pairs, const EvalConfig& config) {
    config.blur.validate();
    if (config.steps < 21) throw Error(ErrorKind::precondition, "evaluate: at least 21 trajectory steps required");
    const LinearHead head = classifier.head();
    const auto stacks = featurize_all(classifier, test.images);
    EvalReport report;

    for (const auto& [a, b] : pairs) {
        if (a == b) throw Error(ErrorKind::invalid_argument, "evaluate: a class pair needs two distinct classes");
        std::size_t taken = 0;
        for (std::size_t idx = 0; idx < test.size(); ++idx) {
            if (config.max_samples != 0 && taken == config.max_samples) break;
            const int s = argmax(stacks[idx].probs);
            if (s != a && s != b) continue;
            ++taken;
            const int t = s == a ? b : a;
            const Latent z_s = stacks[idx].z.values();
            const Mirror mirror = make_mirror(head, s, t);
            Trajectory traj;
            try {
                traj = sample_trajectory(z_s, head, mirror, config.steps, config.mode);
            } catch (const ReflectionUnreachableError&) {
                traj = sample_trajectory(z_s, head, mirror, config.steps, TrajectoryMode::binary);
            }
            std::vector<Latent> zs;
            std::vector<double> ks;
            for (const auto& p : traj.points) {
                zs.push_back(p.z);
                ks.push_back(p.k);
            }
            const auto images = render_kfe_batch(generator, head, stacks[idx], zs, s, t, ks);
            const auto image_stacks = featurize_all(classifier, images);

            EvalRow base;
            base.sample = idx;
            base.source = s;
            base.target = t;
            std::size_t hit = images.size();
            for (std::size_t i = 0; i < images.size(); ++i)
                if (argmax(image_stacks[i].probs) == t) {
                    hit = i;
                    break;
                }
            if (hit < images.size()) {
                double lo = hit == 0 ? 0.0 : ks[hit - 1], hi = ks[hit];
                Latent z_hi = zs[hit];
                Tensor img_hi = images[hit];
                FeatureStack st_hi = image_stacks[hit];
                while (hit > 0 && hi - lo > kBisectionWidth) {
                    const double mid = 0.5 * (lo + hi);
                    const Latent z_mid = traj.latent_at(mid);
                    Tensor img = render_kfe(generator, head, stacks[idx], z_mid, s, t, mid);
                    FeatureStack st = featurize(classifier, img);
                    if (argmax(st.probs) == t) {
                        hi = mid;
                        z_hi = z_mid;
                        img_hi = std::move(img);
                        st_hi = std::move(st);
                    } else {
                        lo = mid;
                    }
                }
                base.first_cfe_k = hi;
                EvalRow first = score(classifier, config.blur, test.images[idx], z_hi, img_hi, st_hi, base);
                if (!first.validity) throw Error(ErrorKind::precondition, "evaluate: first-CFE image is not classified as the target");
                report.first_cfe_rows.push_back(first);
            } else {
                ++report.no_flip;
            }
            report.rows.push_back(score(classifier, config.blur, test.images[idx], zs.back(), images.back(), image_stacks.back(), base));
        }
    }
    report.at_reflection = aggregate(report.rows);
    report.at_first_cfe = aggregate(report.first_cfe_rows);
    return report;
}

std::string report_csv(std::span<const EvalRow> rows) {
    std::string out = "sample,source,target,first_cfe_k,validity,l1,d_validity,fea_dist,conf_l1\n";
    char line[512];
    for (const auto& r : rows) {
        char k[32] = "nan";
        if (r.first_cfe_k) std::snprintf(k, sizeof k, "%.10g", *r.first_cfe_k);
        std::snprintf(line, sizeof line, "%zu,%d,%d,%s,%d,%.10g,%d,%.10g,%.10g\n", r.sample, r.source, r.target, k, r.validity ? 1 : 0, r.l1,
                      r.d_validity ? 1 : 0, r.fea_dist, r.conf_l1);
        out += line;
    }
    return out;
}

}  // namespace mcfe
