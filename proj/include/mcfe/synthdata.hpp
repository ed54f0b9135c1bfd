#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mcfe/tensor.hpp"

namespace mcfe {

enum class ShapeKind { horizontal_bar, vertical_bar, cross, disk };

std::string to_string(ShapeKind kind);
ShapeKind shape_kind_from_string(const std::string& name);

struct DatasetConfig {
    std::size_t image_size = 16;
    std::vector<ShapeKind> classes{ShapeKind::horizontal_bar, ShapeKind::vertical_bar, ShapeKind::cross, ShapeKind::disk};
    std::size_t per_class_count = 400;
    int position_jitter = 2;
    int thickness_min = 1;
    int thickness_max = 3;
    double intensity_min = 0.6;
    double intensity_max = 1.0;
    double noise_sigma = 0.05;
    double train_fraction = 0.75;
    std::uint64_t seed = 7;

    /// Throws invalid_argument on any violated constraint.
    void validate() const;
};

enum class SplitTag { all, train, test };

std::string to_string(SplitTag tag);

struct LabeledDataset {
    std::vector<Tensor> images;  // each [1,H,W], values in [0,1]
    std::vector<int> labels;
    std::size_t num_classes = 0;
    SplitTag split = SplitTag::all;
    /// Index of each image in the dataset it was split from.
    std::vector<std::size_t> origin;

    std::size_t size() const noexcept { return images.size(); }
    std::vector<std::size_t> indices_of_class(int label) const;
};

/// Renders `per_class_count` images for every configured class, class-major.
LabeledDataset generate_dataset(const DatasetConfig& config);

/// Class-stratified seeded split. Per class, round(fraction * count) images
/// go to train; both halves keep the original relative order.
std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& dataset, double train_fraction, std::uint64_t seed);

/// Nearest-centroid baseline on centre-of-mass aligned pixels; returns test
/// accuracy.
double nearest_centroid_accuracy(const LabeledDataset& train, const LabeledDataset& test);

// On-disk layout: img_{index:05}.pgm plus labels.csv (filename,label,split).
void write_dataset_dir(const std::string& dir, const LabeledDataset& train, const LabeledDataset& test);
/// Reads a dataset directory back as (train, test).
std::pair<LabeledDataset, LabeledDataset> read_dataset_dir(const std::string& dir);

}  // namespace mcfe
