#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedsim/dataset.hpp"
#include "fedsim/param_vector.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

enum class LayerKind { kDense, kRelu, kSoftmaxOutput, kConv, kMaxPool, kDropout, kFlatten };

/// One layer of a model architecture. Only the fields relevant to `kind` are
/// meaningful; the named constructors set them.
struct LayerSpec {
    LayerKind kind = LayerKind::kDense;
    int units = 0;         // dense: output width
    int out_channels = 0;  // conv
    int kernel = 0;        // conv: square kernel side
    int stride = 1;        // conv
    int pool = 0;          // maxpool: square window, stride == window
    double rate = 0.0;     // dropout probability

    static LayerSpec dense(int units);
    static LayerSpec relu();
    static LayerSpec softmax_output();
    static LayerSpec conv(int out_channels, int kernel, int stride = 1);
    static LayerSpec maxpool(int window);
    static LayerSpec dropout(double rate);
    static LayerSpec flatten();

    bool operator==(const LayerSpec&) const = default;
};

/// Architecture description. Input is either flat (input_dim) or spatial
/// (input_shape = channels,rows,cols; input_dim ignored). Dense layers require
/// a flat shape; insert an explicit flatten after spatial layers.
struct ModelSpec {
    int input_dim = 0;
    std::array<int, 3> input_shape = {0, 0, 0};
    int num_classes = 0;
    std::vector<LayerSpec> layers;
    // Dropout layers are identity unless this is set; masks are then drawn from
    // the training stream. Inference is always mask-free.
    bool dropout_active = false;

    bool spatial_input() const { return input_shape[0] > 0; }
    std::size_t param_count() const;  // throws ConfigError if shapes do not compose
    void validate() const;

    static ModelSpec mlp(int input_dim, std::span<const int> hidden, int classes);

    bool operator==(const ModelSpec&) const = default;
};

struct ModelState {
    ModelSpec spec;
    ParamVector params;
};

/// Fresh parameters, each layer uniform in [-s, s] with s = 1/sqrt(fan_in),
/// drawn from `rng` in storage order.
ModelState init_model(const ModelSpec& spec, Rng& rng);

/// Class scores for one input (softmax probabilities if the spec ends in a
/// softmax-output layer, raw scores otherwise). Deterministic; dropout is
/// disabled at inference.
std::vector<double> forward(const ModelState& m, std::span<const double> x);

/// Argmax of forward scores; ties broken to the lowest class index.
int predict(const ModelState& m, std::span<const double> x);

struct LossGrad {
    double loss = 0.0;
    ParamVector grad;
};

/// Mean cross-entropy over the batch and its exact analytic gradient.
LossGrad loss_and_gradient(const ModelState& m, const LabeledDataset& data);
LossGrad loss_and_gradient(const ModelState& m, const LabeledDataset& data,
                           std::span<const std::size_t> batch);

/// Mini-batch SGD for `steps` steps. Batches are consecutive slices of a
/// deck reshuffled once per pass; if batch_size >= |shard| every step uses the
/// whole shard in storage order. lr = 0 returns the input parameters exactly;
/// lr < 0 is a config error. Deterministic given `rng`.
ParamVector local_train(const ModelState& m, const LabeledDataset& shard, int steps, double lr,
                        int batch_size, Rng& rng);

/// Predicted label per example (argmax, lowest index on ties).
std::vector<int> predictions(const ModelState& m, const LabeledDataset& data);

/// Fraction of examples with predicted label != true label.
double evaluate(const ModelState& m, const LabeledDataset& test);

/// Per-layer parameter blocks (weights then bias, storage order); layers
/// without parameters yield empty blocks. pack_layers is the inverse.
std::vector<std::vector<double>> unpack_layers(const ModelSpec& spec, const ParamVector& params);
ParamVector pack_layers(const ModelSpec& spec, const std::vector<std::vector<double>>& blocks);

/// Parameter-count-weighted mean of the per-layer init scales 1/sqrt(fan_in).
double default_init_scale(const ModelSpec& spec);

}  // namespace fedsim
