#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedsim/errors.hpp"

namespace fedsim {

/// Labeled examples with a shared feature dimension. Features are stored
/// row-major in one flat buffer; labels are class indices in [0, num_classes).
class LabeledDataset {
public:
    LabeledDataset(std::size_t feature_dim, int num_classes)
        : feature_dim_(feature_dim), num_classes_(num_classes) {}

    void add(std::span<const double> x, int label);
    void reserve(std::size_t n);

    std::size_t size() const { return labels_.size(); }
    std::size_t feature_dim() const { return feature_dim_; }
    int num_classes() const { return num_classes_; }

    std::span<const double> features_of(std::size_t i) const {
        return {features_.data() + i * feature_dim_, feature_dim_};
    }
    int label(std::size_t i) const { return labels_[i]; }

    const std::vector<double>& raw_features() const { return features_; }
    const std::vector<int>& labels() const { return labels_; }
    void set_label(std::size_t i, int label);

    bool operator==(const LabeledDataset&) const = default;

private:
    std::size_t feature_dim_;
    int num_classes_;
    std::vector<double> features_;
    std::vector<int> labels_;
};

/// Disjoint equal-sized index lists into a parent dataset, one per agent.
/// Remainder examples (|D| mod N) are dropped.
struct ShardPlan {
    int num_agents = 0;
    std::vector<std::vector<std::size_t>> agent_indices;
};

/// Reads an IDX image/label file pair. Pixels are scaled to [0,1] (byte / 255).
/// Throws ParseError naming the offending field on bad magic, truncation, or
/// image/label count mismatch; IoError if a file cannot be opened.
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path);

/// Writes a dataset as an IDX pair with the given image geometry
/// (rows*cols must equal the feature dimension). Values are clamped to [0,1]
/// and quantized to bytes (round(v*255)).
void write_idx(const LabeledDataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path, int rows, int cols);

/// i.i.d. synthetic dataset: class c's examples are a fixed unit-norm mean
/// vector plus Gaussian noise with the given sd. Deterministic given seed.
LabeledDataset synth_dataset(int classes, int per_class, int dim, double noise_sd,
                             std::uint64_t seed);

/// Synthetic image dataset shaped like a digit corpus: per-class blurred
/// templates in [0,1], amplitude jitter, pixel noise. Suitable for writing
/// through write_idx and training at desk scale.
LabeledDataset synth_image_dataset(int classes, int per_class, int rows, int cols,
                                   double noise_sd, std::uint64_t seed);

struct TrainTestSplit {
    LabeledDataset train;
    LabeledDataset test;
};

/// Train/test pair drawn from one synthetic image distribution (shared class
/// templates, disjoint examples). Equivalent to generating train_per_class +
/// test_per_class examples per class and splitting each class block.
TrainTestSplit synth_image_split(int classes, int train_per_class, int test_per_class, int rows,
                                 int cols, double noise_sd, std::uint64_t seed);

/// Uniformly random permutation of [0, dataset_size) split into N equal
/// contiguous blocks; remainder indices dropped. Deterministic given seed.
ShardPlan partition(std::size_t dataset_size, int num_agents, std::uint64_t seed);

/// Materializes the examples at the given indices.
LabeledDataset subset(const LabeledDataset& data, std::span<const std::size_t> indices);

/// Picks `count` indices balanced across labels (count/num_classes each,
/// remainder spread over the lowest class indices), shuffled. Deterministic
/// given seed. Throws ConfigError if a class has too few examples.
std::vector<std::size_t> stratified_subsample(const LabeledDataset& data, std::size_t count,
                                              std::uint64_t seed);

}  // namespace fedsim
