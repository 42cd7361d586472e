#include "fedsim/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "fedsim/rng.hpp"

namespace fedsim {

void LabeledDataset::add(std::span<const double> x, int label) {
    if (x.size() != feature_dim_)
        throw InputError("LabeledDataset::add: feature dim " + std::to_string(x.size()) +
                         " != " + std::to_string(feature_dim_));
    if (label < 0 || label >= num_classes_)
        throw InputError("LabeledDataset::add: label " + std::to_string(label) +
                         " outside [0," + std::to_string(num_classes_) + ")");
    features_.insert(features_.end(), x.begin(), x.end());
    labels_.push_back(label);
}

void LabeledDataset::reserve(std::size_t n) {
    features_.reserve(n * feature_dim_);
    labels_.reserve(n);
}

void LabeledDataset::set_label(std::size_t i, int label) {
    if (label < 0 || label >= num_classes_)
        throw InputError("LabeledDataset::set_label: label " + std::to_string(label) +
                         " outside [0," + std::to_string(num_classes_) + ")");
    labels_[i] = label;
}

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;  // 2051
constexpr std::uint32_t kLabelsMagic = 0x00000801;  // 2049

std::uint32_t read_be32(std::istream& in, const std::string& field) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ParseError("truncated file while reading " + field);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw IoError("cannot open images file: " + images_path.string());
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw IoError("cannot open labels file: " + labels_path.string());

    std::uint32_t img_magic = read_be32(img, "images magic");
    if (img_magic != kImagesMagic)
        throw ParseError("bad magic in images file (got " + std::to_string(img_magic) +
                         ", want 2051)");
    std::uint32_t n_images = read_be32(img, "image count");
    std::uint32_t rows = read_be32(img, "image rows");
    std::uint32_t cols = read_be32(img, "image cols");

    std::uint32_t lab_magic = read_be32(lab, "labels magic");
    if (lab_magic != kLabelsMagic)
        throw ParseError("bad magic in labels file (got " + std::to_string(lab_magic) +
                         ", want 2049)");
    std::uint32_t n_labels = read_be32(lab, "label count");

    if (n_images != n_labels)
        throw ParseError("image count " + std::to_string(n_images) + " != label count " +
                         std::to_string(n_labels));

    const std::size_t dim = std::size_t(rows) * cols;
    LabeledDataset data(dim, 10);
    data.reserve(n_images);

    std::vector<unsigned char> pix(dim);
    std::vector<double> x(dim);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        img.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(dim));
        if (!img) throw ParseError("truncated file while reading image " + std::to_string(i));
        int label = lab.get();
        if (label == EOF) throw ParseError("truncated file while reading label " + std::to_string(i));
        if (label > 9) throw ParseError("label " + std::to_string(label) + " outside [0,9]");
        for (std::size_t k = 0; k < dim; ++k) x[k] = pix[k] / 255.0;
        data.add(x, label);
    }
    return data;
}

void write_idx(const LabeledDataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path, int rows, int cols) {
    if (std::size_t(rows) * cols != data.feature_dim())
        throw InputError("write_idx: rows*cols " + std::to_string(rows * cols) +
                         " != feature dim " + std::to_string(data.feature_dim()));
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw IoError("cannot write images file: " + images_path.string());
    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw IoError("cannot write labels file: " + labels_path.string());

    write_be32(img, kImagesMagic);
    write_be32(img, static_cast<std::uint32_t>(data.size()));
    write_be32(img, static_cast<std::uint32_t>(rows));
    write_be32(img, static_cast<std::uint32_t>(cols));
    write_be32(lab, kLabelsMagic);
    write_be32(lab, static_cast<std::uint32_t>(data.size()));

    std::vector<unsigned char> pix(data.feature_dim());
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto x = data.features_of(i);
        for (std::size_t k = 0; k < x.size(); ++k) {
            double v = std::clamp(x[k], 0.0, 1.0);
            pix[k] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        img.write(reinterpret_cast<const char*>(pix.data()),
                  static_cast<std::streamsize>(pix.size()));
        lab.put(static_cast<char>(data.label(i)));
    }
    if (!img || !lab) throw IoError("write failed under " + images_path.parent_path().string());
}

LabeledDataset synth_dataset(int classes, int per_class, int dim, double noise_sd,
                             std::uint64_t seed) {
    if (classes < 1 || per_class < 1 || dim < 1)
        throw ConfigError("synth_dataset: classes, per_class and dim must be positive");
    if (noise_sd < 0) throw ConfigError("synth_dataset: noise_sd must be >= 0");

    // Fixed unit-norm class means, then per-class example streams.
    std::vector<std::vector<double>> means(classes, std::vector<double>(dim));
    Rng mean_rng(derive_seed(seed, {kTagSynthData, 0}));
    for (int c = 0; c < classes; ++c) {
        double norm2 = 0.0;
        for (int k = 0; k < dim; ++k) {
            means[c][k] = mean_rng.gaussian();
            norm2 += means[c][k] * means[c][k];
        }
        double inv = 1.0 / std::sqrt(norm2);
        for (int k = 0; k < dim; ++k) means[c][k] *= inv;
    }

    LabeledDataset data(dim, classes);
    data.reserve(std::size_t(classes) * per_class);
    std::vector<double> x(dim);
    for (int c = 0; c < classes; ++c) {
        Rng rng(derive_seed(seed, {kTagSynthData, 1, static_cast<std::uint64_t>(c)}));
        for (int i = 0; i < per_class; ++i) {
            for (int k = 0; k < dim; ++k) x[k] = means[c][k] + noise_sd * rng.gaussian();
            data.add(x, c);
        }
    }
    return data;
}

namespace {

// 3x3 box blur with clamped borders; two passes give smooth class templates.
void box_blur(std::vector<double>& img, int rows, int cols) {
    std::vector<double> out(img.size());
    for (int y = 0; y < rows; ++y) {
        for (int x = 0; x < cols; ++x) {
            double s = 0.0;
            int n = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= rows || xx < 0 || xx >= cols) continue;
                    s += img[yy * cols + xx];
                    ++n;
                }
            }
            out[y * cols + x] = s / n;
        }
    }
    img = std::move(out);
}

}  // namespace

LabeledDataset synth_image_dataset(int classes, int per_class, int rows, int cols,
                                   double noise_sd, std::uint64_t seed) {
    if (classes < 1 || per_class < 1 || rows < 1 || cols < 1)
        throw ConfigError("synth_image_dataset: counts must be positive");
    const int dim = rows * cols;

    std::vector<std::vector<double>> templates(classes, std::vector<double>(dim));
    Rng trng(derive_seed(seed, {kTagSynthData, 2}));
    for (int c = 0; c < classes; ++c) {
        auto& t = templates[c];
        for (int k = 0; k < dim; ++k) t[k] = trng.uniform();
        box_blur(t, rows, cols);
        box_blur(t, rows, cols);
        auto [lo, hi] = std::minmax_element(t.begin(), t.end());
        double span = *hi - *lo;
        for (int k = 0; k < dim; ++k) t[k] = 0.85 * (t[k] - *lo) / span;
    }

    LabeledDataset data(dim, classes);
    data.reserve(std::size_t(classes) * per_class);
    std::vector<double> x(dim);
    for (int c = 0; c < classes; ++c) {
        Rng rng(derive_seed(seed, {kTagSynthData, 3, static_cast<std::uint64_t>(c)}));
        for (int i = 0; i < per_class; ++i) {
            double amp = rng.uniform(0.7, 1.3);
            for (int k = 0; k < dim; ++k)
                x[k] = std::clamp(amp * templates[c][k] + noise_sd * rng.gaussian(), 0.0, 1.0);
            data.add(x, c);
        }
    }
    return data;
}

TrainTestSplit synth_image_split(int classes, int train_per_class, int test_per_class, int rows,
                                 int cols, double noise_sd, std::uint64_t seed) {
    if (train_per_class < 1 || test_per_class < 1)
        throw ConfigError("synth_image_split: per-class counts must be positive");
    const int per_class = train_per_class + test_per_class;
    const LabeledDataset pool = synth_image_dataset(classes, per_class, rows, cols, noise_sd, seed);

    TrainTestSplit split{LabeledDataset(pool.feature_dim(), classes),
                         LabeledDataset(pool.feature_dim(), classes)};
    split.train.reserve(std::size_t(classes) * train_per_class);
    split.test.reserve(std::size_t(classes) * test_per_class);
    // The pool is class-contiguous: example i of class c sits at c*per_class+i.
    for (int c = 0; c < classes; ++c) {
        const std::size_t base = std::size_t(c) * per_class;
        for (int i = 0; i < per_class; ++i) {
            const std::size_t idx = base + i;
            auto& dst = i < train_per_class ? split.train : split.test;
            dst.add(pool.features_of(idx), pool.label(idx));
        }
    }
    return split;
}

ShardPlan partition(std::size_t dataset_size, int num_agents, std::uint64_t seed) {
    if (num_agents < 1) throw ConfigError("partition: need at least one agent");
    if (dataset_size < std::size_t(num_agents))
        throw ConfigError("partition: dataset size " + std::to_string(dataset_size) +
                          " < agent count " + std::to_string(num_agents));

    std::vector<std::size_t> perm(dataset_size);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(perm);

    const std::size_t shard = dataset_size / num_agents;
    ShardPlan plan;
    plan.num_agents = num_agents;
    plan.agent_indices.resize(num_agents);
    for (int j = 0; j < num_agents; ++j)
        plan.agent_indices[j].assign(perm.begin() + j * shard, perm.begin() + (j + 1) * shard);
    return plan;
}

LabeledDataset subset(const LabeledDataset& data, std::span<const std::size_t> indices) {
    LabeledDataset out(data.feature_dim(), data.num_classes());
    out.reserve(indices.size());
    for (std::size_t i : indices) out.add(data.features_of(i), data.label(i));
    return out;
}

std::vector<std::size_t> stratified_subsample(const LabeledDataset& data, std::size_t count,
                                              std::uint64_t seed) {
    const int classes = data.num_classes();
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data.label(i)].push_back(i);

    Rng rng(seed);
    std::vector<std::size_t> picked;
    picked.reserve(count);
    for (int c = 0; c < classes; ++c) {
        std::size_t want = count / classes + (std::size_t(c) < count % classes ? 1 : 0);
        if (by_class[c].size() < want)
            throw ConfigError("stratified_subsample: class " + std::to_string(c) + " has " +
                              std::to_string(by_class[c].size()) + " examples, need " +
                              std::to_string(want));
        rng.shuffle(by_class[c]);
        picked.insert(picked.end(), by_class[c].begin(), by_class[c].begin() + want);
    }
    rng.shuffle(picked);
    return picked;
}

}  // namespace fedsim
