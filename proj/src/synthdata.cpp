#include "mcfe/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "mcfe/error.hpp"
#include "mcfe/pgm.hpp"

namespace mcfe {

namespace {

constexpr std::size_t kSupportedKinds = 4;
constexpr int kBarHalfLength = 6;

void draw_rect(Tensor& img, std::size_t size, int x0, int y0, int x1, int y1, double value) {
    const int n = static_cast<int>(size);
    for (int y = std::max(0, y0); y < std::min(n, y1); ++y)
        for (int x = std::max(0, x0); x < std::min(n, x1); ++x) img[static_cast<std::size_t>(y) * size + static_cast<std::size_t>(x)] = value;
}

void render(Tensor& img, std::size_t size, ShapeKind kind, int cx, int cy, int thickness, double intensity) {
    const int half = thickness / 2;
    switch (kind) {
        case ShapeKind::horizontal_bar:
            draw_rect(img, size, cx - kBarHalfLength, cy - half, cx + kBarHalfLength, cy - half + thickness, intensity);
            break;
        case ShapeKind::vertical_bar:
            draw_rect(img, size, cx - half, cy - kBarHalfLength, cx - half + thickness, cy + kBarHalfLength, intensity);
            break;
        case ShapeKind::cross:
            draw_rect(img, size, cx - kBarHalfLength, cy - half, cx + kBarHalfLength, cy - half + thickness, intensity);
            draw_rect(img, size, cx - half, cy - kBarHalfLength, cx - half + thickness, cy + kBarHalfLength, intensity);
            break;
        case ShapeKind::disk: {
            const double r = 2.0 + thickness;
            for (std::size_t y = 0; y < size; ++y)
                for (std::size_t x = 0; x < size; ++x) {
                    const double dx = static_cast<double>(x) + 0.5 - cx;
                    const double dy = static_cast<double>(y) + 0.5 - cy;
                    if (dx * dx + dy * dy <= r * r) img[y * size + x] = intensity;
                }
            break;
        }
    }
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    return fields;
}

// Integer shift that moves the intensity centre of mass to the image centre,
// zero-filling what shifts in. Removes position jitter from symmetric shapes.
std::vector<double> centre_of_mass_aligned(const Tensor& image) {
    const std::size_t h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
    double total = 0.0, my = 0.0, mx = 0.0;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double v = image[y * w + x];
            total += v;
            my += v * (static_cast<double>(y) + 0.5);
            mx += v * (static_cast<double>(x) + 0.5);
        }
    std::vector<double> out(h * w, 0.0);
    if (total <= 0.0) return out;
    const auto sy = static_cast<long>(std::lround(my / total - static_cast<double>(h) / 2.0));
    const auto sx = static_cast<long>(std::lround(mx / total - static_cast<double>(w) / 2.0));
    for (long y = 0; y < static_cast<long>(h); ++y)
        for (long x = 0; x < static_cast<long>(w); ++x) {
            const long src_y = y + sy, src_x = x + sx;
            if (src_y < 0 || src_x < 0 || src_y >= static_cast<long>(h) || src_x >= static_cast<long>(w)) continue;
            out[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] =
                image[static_cast<std::size_t>(src_y) * w + static_cast<std::size_t>(src_x)];
        }
    return out;
}

}  // namespace

std::string to_string(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::horizontal_bar: return "horizontal-bar";
        case ShapeKind::vertical_bar: return "vertical-bar";
        case ShapeKind::cross: return "cross";
        case ShapeKind::disk: return "disk";
    }
    return "unknown";
}

ShapeKind shape_kind_from_string(const std::string& name) {
    for (auto kind : {ShapeKind::horizontal_bar, ShapeKind::vertical_bar, ShapeKind::cross, ShapeKind::disk}) {
        if (to_string(kind) == name) return kind;
    }
    throw Error(ErrorKind::invalid_argument, "unknown shape kind '" + name + "'");
}

std::string to_string(SplitTag tag) {
    switch (tag) {
        case SplitTag::all: return "all";
        case SplitTag::train: return "train";
        case SplitTag::test: return "test";
    }
    return "unknown";
}

void DatasetConfig::validate() const {
    if (classes.empty()) throw Error(ErrorKind::invalid_argument, "dataset: no classes configured");
    if (classes.size() > kSupportedKinds) {
        throw Error(ErrorKind::invalid_argument, "dataset: " + std::to_string(classes.size()) + " classes requested, only " +
                                                     std::to_string(kSupportedKinds) + " shape kinds supported");
    }
    for (std::size_t i = 0; i < classes.size(); ++i)
        for (std::size_t j = i + 1; j < classes.size(); ++j)
            if (classes[i] == classes[j]) throw Error(ErrorKind::invalid_argument, "dataset: duplicate shape kind " + to_string(classes[i]));
    if (per_class_count == 0) throw Error(ErrorKind::invalid_argument, "dataset: per_class_count must be > 0");
    if (image_size < 16) throw Error(ErrorKind::invalid_argument, "dataset: image_size must be >= 16");
    if (position_jitter < 0 || thickness_min < 1 || thickness_max < thickness_min) {
        throw Error(ErrorKind::invalid_argument, "dataset: invalid jitter or thickness range");
    }
    if (intensity_min < 0.0 || intensity_max > 1.0 || intensity_max < intensity_min) {
        throw Error(ErrorKind::invalid_argument, "dataset: intensity range must lie within [0,1]");
    }
    if (noise_sigma < 0.0) throw Error(ErrorKind::invalid_argument, "dataset: noise_sigma must be >= 0");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw Error(ErrorKind::invalid_argument, "dataset: train_fraction must be in (0,1)");
}

std::vector<std::size_t> LabeledDataset::indices_of_class(int label) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == label) out.push_back(i);
    return out;
}

LabeledDataset generate_dataset(const DatasetConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    std::uniform_int_distribution<int> jitter(-config.position_jitter, config.position_jitter);
    std::uniform_int_distribution<int> thickness(config.thickness_min, config.thickness_max);
    std::uniform_real_distribution<double> intensity(config.intensity_min, config.intensity_max);
    std::normal_distribution<double> noise(0.0, 1.0);

    const std::size_t size = config.image_size;
    const int centre = static_cast<int>(size / 2);
    LabeledDataset out;
    out.num_classes = config.classes.size();
    for (std::size_t c = 0; c < config.classes.size(); ++c) {
        for (std::size_t i = 0; i < config.per_class_count; ++i) {
            const int cx = centre + jitter(rng);
            const int cy = centre + jitter(rng);
            const int t = thickness(rng);
            const double level = intensity(rng);
            Tensor img({1, size, size}, 0.0);
            render(img, size, config.classes[c], cx, cy, t, level);
            if (config.noise_sigma > 0.0) {
                for (auto& v : img.data()) v += config.noise_sigma * noise(rng);
            }
            for (auto& v : img.data()) v = std::clamp(v, 0.0, 1.0);
            out.origin.push_back(out.images.size());
            out.images.push_back(std::move(img));
            out.labels.push_back(static_cast<int>(c));
        }
    }
    return out;
}

std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& dataset, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw Error(ErrorKind::invalid_argument, "split: fraction must be in (0,1)");
    std::mt19937_64 rng(seed);
    std::vector<bool> to_train(dataset.size(), false);
    for (std::size_t c = 0; c < dataset.num_classes; ++c) {
        auto members = dataset.indices_of_class(static_cast<int>(c));
        std::shuffle(members.begin(), members.end(), rng);
        const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(members.size())));
        for (std::size_t i = 0; i < n_train; ++i) to_train[members[i]] = true;
    }
    LabeledDataset train, test;
    train.num_classes = test.num_classes = dataset.num_classes;
    train.split = SplitTag::train;
    test.split = SplitTag::test;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        LabeledDataset& dst = to_train[i] ? train : test;
        dst.images.push_back(dataset.images[i]);
        dst.labels.push_back(dataset.labels[i]);
        dst.origin.push_back(dataset.origin.empty() ? i : dataset.origin[i]);
    }
    return {std::move(train), std::move(test)};
}

double nearest_centroid_accuracy(const LabeledDataset& train, const LabeledDataset& test) {
    if (train.size() == 0 || test.size() == 0) throw Error(ErrorKind::invalid_argument, "nearest_centroid: empty split");
    std::vector<std::vector<double>> centroids(train.num_classes);
    std::vector<std::size_t> counts(train.num_classes, 0);
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto label = static_cast<std::size_t>(train.labels[i]);
        const auto aligned = centre_of_mass_aligned(train.images[i]);
        auto& c = centroids[label];
        if (c.empty()) c.assign(aligned.size(), 0.0);
        for (std::size_t j = 0; j < aligned.size(); ++j) c[j] += aligned[j];
        ++counts[label];
    }
    for (std::size_t c = 0; c < centroids.size(); ++c)
        for (auto& v : centroids[c]) v /= static_cast<double>(std::max<std::size_t>(counts[c], 1));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto aligned = centre_of_mass_aligned(test.images[i]);
        double best = std::numeric_limits<double>::infinity();
        int arg = -1;
        for (std::size_t c = 0; c < centroids.size(); ++c) {
            if (centroids[c].empty()) continue;
            double d = 0.0;
            for (std::size_t j = 0; j < aligned.size(); ++j) {
                const double diff = aligned[j] - centroids[c][j];
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                arg = static_cast<int>(c);
            }
        }
        if (arg == test.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

void write_dataset_dir(const std::string& dir, const LabeledDataset& train, const LabeledDataset& test) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    struct Entry {
        std::size_t index;
        const Tensor* image;
        int label;
        SplitTag tag;
    };
    std::vector<Entry> entries;
    for (const auto* part : {&train, &test})
        for (std::size_t i = 0; i < part->size(); ++i)
            entries.push_back({part->origin.empty() ? entries.size() : part->origin[i], &part->images[i], part->labels[i], part->split});
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.index < b.index; });

    std::ofstream csv(fs::path(dir) / "labels.csv");
    if (!csv) throw Error(ErrorKind::io, "cannot write labels.csv in " + dir);
    csv << "filename,label,split\n";
    char name[32];
    for (const auto& e : entries) {
        std::snprintf(name, sizeof(name), "img_%05zu.pgm", e.index);
        write_pgm((fs::path(dir) / name).string(), *e.image);
        csv << name << ',' << e.label << ',' << to_string(e.tag) << '\n';
    }
}

std::pair<LabeledDataset, LabeledDataset> read_dataset_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream csv(fs::path(dir) / "labels.csv");
    if (!csv) throw Error(ErrorKind::io, "cannot read labels.csv in " + dir);
    std::string line;
    std::getline(csv, line);
    if (line != "filename,label,split") throw Error(ErrorKind::format, "labels.csv: unexpected header '" + line + "'");
    LabeledDataset train, test;
    train.split = SplitTag::train;
    test.split = SplitTag::test;
    int max_label = -1;
    std::size_t row = 0;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 3) throw Error(ErrorKind::format, "labels.csv: malformed row '" + line + "'");
        int label = 0;
        try {
            label = std::stoi(fields[1]);
        } catch (const std::exception&) {
            throw Error(ErrorKind::format, "labels.csv: bad label in '" + line + "'");
        }
        if (label < 0) throw Error(ErrorKind::format, "labels.csv: negative label");
        LabeledDataset* dst = nullptr;
        if (fields[2] == "train") dst = &train;
        else if (fields[2] == "test") dst = &test;
        else throw Error(ErrorKind::format, "labels.csv: unknown split '" + fields[2] + "'");
        dst->images.push_back(read_pgm((fs::path(dir) / fields[0]).string()));
        dst->labels.push_back(label);
        dst->origin.push_back(row++);
        max_label = std::max(max_label, label);
    }
    train.num_classes = test.num_classes = static_cast<std::size_t>(max_label + 1);
    return {std::move(train), std::move(test)};
}

}  // namespace mcfe
