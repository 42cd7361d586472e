#include "fedsim/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "fedsim/errors.hpp"

namespace fedsim {

LayerSpec LayerSpec::dense(int units) {
    LayerSpec s;
    s.kind = LayerKind::kDense;
    s.units = units;
    return s;
}

LayerSpec LayerSpec::relu() {
    LayerSpec s;
    s.kind = LayerKind::kRelu;
    return s;
}

LayerSpec LayerSpec::softmax_output() {
    LayerSpec s;
    s.kind = LayerKind::kSoftmaxOutput;
    return s;
}

LayerSpec LayerSpec::conv(int out_channels, int kernel, int stride) {
    LayerSpec s;
    s.kind = LayerKind::kConv;
    s.out_channels = out_channels;
    s.kernel = kernel;
    s.stride = stride;
    return s;
}

LayerSpec LayerSpec::maxpool(int window) {
    LayerSpec s;
    s.kind = LayerKind::kMaxPool;
    s.pool = window;
    return s;
}

LayerSpec LayerSpec::dropout(double rate) {
    LayerSpec s;
    s.kind = LayerKind::kDropout;
    s.rate = rate;
    return s;
}

LayerSpec LayerSpec::flatten() {
    LayerSpec s;
    s.kind = LayerKind::kFlatten;
    return s;
}

namespace {

/// Activation shape between layers: either flat (width c) or spatial
/// (c channels of r x s).
struct Shape {
    bool spatial = false;
    int c = 0;
    int r = 0;
    int s = 0;

    int flat() const { return spatial ? c * r * s : c; }
};

struct CompiledLayer {
    LayerSpec spec;
    Shape in;
    Shape out;
    std::size_t offset = 0;  // first parameter index in the flat vector
    std::size_t count = 0;   // number of parameters (weights + bias)
    int fan_in = 0;          // inputs feeding each unit, for the init scale
};

struct Net {
    Shape input;
    int classes = 0;
    bool softmax_out = false;
    std::size_t total_params = 0;
    std::vector<CompiledLayer> layers;
};

[[noreturn]] void layer_error(std::size_t index, const std::string& what) {
    throw ConfigError("model: layer " + std::to_string(index) + ": " + what);
}

Net compile(const ModelSpec& spec) {
    Net net;
    if (spec.num_classes < 2) {
        throw ConfigError("model: num_classes must be >= 2, got " +
                          std::to_string(spec.num_classes));
    }
    if (spec.spatial_input()) {
        const auto& s = spec.input_shape;
        if (s[1] <= 0 || s[2] <= 0) {
            throw ConfigError("model: spatial input_shape must be positive, got [" +
                              std::to_string(s[0]) + "," + std::to_string(s[1]) + "," +
                              std::to_string(s[2]) + "]");
        }
        net.input = Shape{true, s[0], s[1], s[2]};
    } else {
        if (spec.input_dim <= 0) {
            throw ConfigError("model: input_dim must be positive, got " +
                              std::to_string(spec.input_dim));
        }
        net.input = Shape{false, spec.input_dim, 0, 0};
    }
    net.classes = spec.num_classes;
    if (spec.layers.empty()) throw ConfigError("model: layer list is empty");

    Shape cur = net.input;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& ls = spec.layers[i];
        CompiledLayer cl;
        cl.spec = ls;
        cl.in = cur;
        switch (ls.kind) {
            case LayerKind::kDense: {
                if (cur.spatial) layer_error(i, "dense after spatial output; insert flatten");
                if (ls.units <= 0) layer_error(i, "dense units must be positive");
                cl.fan_in = cur.c;
                cl.count = static_cast<std::size_t>(ls.units) * cur.c + ls.units;
                cur = Shape{false, ls.units, 0, 0};
                break;
            }
            case LayerKind::kRelu:
                break;
            case LayerKind::kSoftmaxOutput: {
                if (i + 1 != spec.layers.size()) {
                    layer_error(i, "softmax-output must be the final layer");
                }
                if (cur.spatial) layer_error(i, "softmax-output requires a flat input");
                net.softmax_out = true;
                break;
            }
            case LayerKind::kConv: {
                if (!cur.spatial) layer_error(i, "conv requires a spatial input");
                if (ls.out_channels <= 0) layer_error(i, "conv out_channels must be positive");
                if (ls.kernel <= 0) layer_error(i, "conv kernel must be positive");
                if (ls.stride <= 0) layer_error(i, "conv stride must be positive");
                if (ls.kernel > cur.r || ls.kernel > cur.s) {
                    layer_error(i, "conv kernel " + std::to_string(ls.kernel) +
                                       " exceeds input " + std::to_string(cur.r) + "x" +
                                       std::to_string(cur.s));
                }
                const int out_r = (cur.r - ls.kernel) / ls.stride + 1;
                const int out_s = (cur.s - ls.kernel) / ls.stride + 1;
                cl.fan_in = cur.c * ls.kernel * ls.kernel;
                cl.count = static_cast<std::size_t>(ls.out_channels) * cl.fan_in + ls.out_channels;
                cur = Shape{true, ls.out_channels, out_r, out_s};
                break;
            }
            case LayerKind::kMaxPool: {
                if (!cur.spatial) layer_error(i, "maxpool requires a spatial input");
                if (ls.pool <= 0) layer_error(i, "maxpool window must be positive");
                if (ls.pool > cur.r || ls.pool > cur.s) {
                    layer_error(i, "maxpool window exceeds input");
                }
                cur = Shape{true, cur.c, cur.r / ls.pool, cur.s / ls.pool};
                break;
            }
            case LayerKind::kDropout: {
                if (ls.rate < 0.0 || ls.rate >= 1.0) {
                    layer_error(i, "dropout rate must be in [0, 1)");
                }
                break;
            }
            case LayerKind::kFlatten: {
                if (!cur.spatial) layer_error(i, "flatten requires a spatial input");
                cur = Shape{false, cur.c * cur.r * cur.s, 0, 0};
                break;
            }
        }
        cl.out = cur;
        cl.offset = offset;
        offset += cl.count;
        net.layers.push_back(cl);
    }
    if (cur.spatial || cur.c != spec.num_classes) {
        throw ConfigError("model: output width " + std::to_string(cur.flat()) +
                          " != num_classes " + std::to_string(spec.num_classes));
    }
    net.total_params = offset;
    return net;
}

using Matrix = Eigen::MatrixXd;
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using RowMajorMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// Per-call scratch. acts[i] is the input to layer i (features x batch);
/// acts.back() holds the output scores.
struct Workspace {
    std::vector<Matrix> acts;
    std::vector<Matrix> drop_masks;            // per layer; empty when unused
    std::vector<std::vector<int>> pool_argmax;  // per layer; flat input index per output cell
};

void conv_forward(const CompiledLayer& cl, const double* params, const Matrix& in, Matrix& out) {
    const int in_c = cl.in.c, in_r = cl.in.r, in_s = cl.in.s;
    const int out_c = cl.out.c, out_r = cl.out.r, out_s = cl.out.s;
    const int k = cl.spec.kernel, stride = cl.spec.stride;
    const double* w = params + cl.offset;
    const double* b = w + static_cast<std::size_t>(out_c) * cl.fan_in;
    for (Eigen::Index col = 0; col < in.cols(); ++col) {
        const double* x = in.col(col).data();
        double* y = out.col(col).data();
        for (int oc = 0; oc < out_c; ++oc) {
            const double* wc = w + static_cast<std::size_t>(oc) * cl.fan_in;
            for (int oy = 0; oy < out_r; ++oy) {
                for (int ox = 0; ox < out_s; ++ox) {
                    double acc = b[oc];
                    for (int ic = 0; ic < in_c; ++ic) {
                        for (int ky = 0; ky < k; ++ky) {
                            const double* xrow =
                                x + (static_cast<std::size_t>(ic) * in_r + oy * stride + ky) * in_s +
                                ox * stride;
                            const double* wrow = wc + (static_cast<std::size_t>(ic) * k + ky) * k;
                            for (int kx = 0; kx < k; ++kx) acc += xrow[kx] * wrow[kx];
                        }
                    }
                    y[(static_cast<std::size_t>(oc) * out_r + oy) * out_s + ox] = acc;
                }
            }
        }
    }
}

void conv_backward(const CompiledLayer& cl, const double* params, const Matrix& in,
                   const Matrix& d_out, double* grad, Matrix& d_in) {
    const int in_c = cl.in.c, in_r = cl.in.r, in_s = cl.in.s;
    const int out_c = cl.out.c, out_r = cl.out.r, out_s = cl.out.s;
    const int k = cl.spec.kernel, stride = cl.spec.stride;
    const double* w = params + cl.offset;
    double* gw = grad + cl.offset;
    double* gb = gw + static_cast<std::size_t>(out_c) * cl.fan_in;
    d_in.setZero();
    for (Eigen::Index col = 0; col < in.cols(); ++col) {
        const double* x = in.col(col).data();
        const double* dy = d_out.col(col).data();
        double* dx = d_in.col(col).data();
        for (int oc = 0; oc < out_c; ++oc) {
            const double* wc = w + static_cast<std::size_t>(oc) * cl.fan_in;
            double* gwc = gw + static_cast<std::size_t>(oc) * cl.fan_in;
            for (int oy = 0; oy < out_r; ++oy) {
                for (int ox = 0; ox < out_s; ++ox) {
                    const double g = dy[(static_cast<std::size_t>(oc) * out_r + oy) * out_s + ox];
                    if (g == 0.0) continue;
                    gb[oc] += g;
                    for (int ic = 0; ic < in_c; ++ic) {
                        for (int ky = 0; ky < k; ++ky) {
                            const std::size_t xoff =
                                (static_cast<std::size_t>(ic) * in_r + oy * stride + ky) * in_s +
                                ox * stride;
                            const std::size_t woff = (static_cast<std::size_t>(ic) * k + ky) * k;
                            for (int kx = 0; kx < k; ++kx) {
                                gwc[woff + kx] += g * x[xoff + kx];
                                dx[xoff + kx] += g * wc[woff + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

void maxpool_forward(const CompiledLayer& cl, const Matrix& in, Matrix& out,
                     std::vector<int>& argmax) {
    const int c = cl.in.c, in_r = cl.in.r, in_s = cl.in.s;
    const int out_r = cl.out.r, out_s = cl.out.s;
    const int p = cl.spec.pool;
    argmax.assign(static_cast<std::size_t>(out.rows()) * out.cols(), 0);
    for (Eigen::Index col = 0; col < in.cols(); ++col) {
        const double* x = in.col(col).data();
        double* y = out.col(col).data();
        int* am = argmax.data() + static_cast<std::size_t>(col) * out.rows();
        for (int ch = 0; ch < c; ++ch) {
            for (int oy = 0; oy < out_r; ++oy) {
                for (int ox = 0; ox < out_s; ++ox) {
                    int best = (ch * in_r + oy * p) * in_s + ox * p;
                    double best_v = x[best];
                    for (int py = 0; py < p; ++py) {
                        for (int px = 0; px < p; ++px) {
                            const int idx = (ch * in_r + oy * p + py) * in_s + ox * p + px;
                            if (x[idx] > best_v) {
                                best_v = x[idx];
                                best = idx;
                            }
                        }
                    }
                    const int o = (ch * out_r + oy) * out_s + ox;
                    y[o] = best_v;
                    am[o] = best;
                }
            }
        }
    }
}

/// Runs the net over a batch (features x batch columns), filling ws.acts.
/// Dropout masks are drawn from `rng` only when train_mode and the spec has
/// dropout_active; otherwise dropout is identity.
void batch_forward(const Net& net, const ModelSpec& spec, const double* params, Workspace& ws,
                   bool train_mode, Rng* rng) {
    const std::size_t n_layers = net.layers.size();
    ws.acts.resize(n_layers + 1);
    ws.drop_masks.assign(n_layers, Matrix());
    ws.pool_argmax.assign(n_layers, {});
    for (std::size_t i = 0; i < n_layers; ++i) {
        const CompiledLayer& cl = net.layers[i];
        const Matrix& a = ws.acts[i];
        Matrix& out = ws.acts[i + 1];
        switch (cl.spec.kind) {
            case LayerKind::kDense: {
                ConstRowMajorMap w(params + cl.offset, cl.spec.units, cl.in.c);
                Eigen::Map<const Eigen::VectorXd> b(
                    params + cl.offset + static_cast<std::size_t>(cl.spec.units) * cl.in.c,
                    cl.spec.units);
                out.noalias() = w * a;
                out.colwise() += b;
                break;
            }
            case LayerKind::kRelu:
                out = a.cwiseMax(0.0);
                break;
            case LayerKind::kSoftmaxOutput:
                // Scores stay as raw inputs here; the loss and the probability
                // outputs both apply the stabilised softmax themselves.
                out = a;
                break;
            case LayerKind::kConv:
                out.resize(cl.out.flat(), a.cols());
                conv_forward(cl, params, a, out);
                break;
            case LayerKind::kMaxPool:
                out.resize(cl.out.flat(), a.cols());
                maxpool_forward(cl, a, out, ws.pool_argmax[i]);
                break;
            case LayerKind::kDropout: {
                if (train_mode && spec.dropout_active && cl.spec.rate > 0.0) {
                    if (rng == nullptr) {
                        throw ProtocolError("model: dropout is active but no rng was supplied");
                    }
                    Matrix& mask = ws.drop_masks[i];
                    mask.resize(a.rows(), a.cols());
                    const double keep = 1.0 - cl.spec.rate;
                    for (Eigen::Index col = 0; col < a.cols(); ++col) {
                        for (Eigen::Index row = 0; row < a.rows(); ++row) {
                            mask(row, col) = rng->uniform() < cl.spec.rate ? 0.0 : 1.0 / keep;
                        }
                    }
                    out = a.cwiseProduct(mask);
                } else {
                    out = a;
                }
                break;
            }
            case LayerKind::kFlatten:
                out = a;  // same flat buffer, only the logical shape changes
                break;
        }
    }
}

/// Mean cross-entropy from raw scores via log-sum-exp; d_scores receives the
/// softmax-minus-onehot gradient divided by the batch size.
double ce_loss_and_dscores(const Matrix& scores, std::span<const int> labels, Matrix& d_scores) {
    const Eigen::Index batch = scores.cols();
    const Eigen::Index classes = scores.rows();
    d_scores.resize(classes, batch);
    double loss = 0.0;
    // Scalar loops on purpose: Eigen's vectorised exp/sum split each column
    // between packet and scalar code at a buffer-alignment-dependent boundary,
    // so repeated calls can differ in the last bit.  Bitwise run replay relies
    // on this function being exactly reproducible.
    for (Eigen::Index col = 0; col < batch; ++col) {
        const double* z = scores.col(col).data();
        double* d = d_scores.col(col).data();
        double zmax = z[0];
        for (Eigen::Index c = 1; c < classes; ++c) zmax = std::max(zmax, z[c]);
        double sum = 0.0;
        for (Eigen::Index c = 0; c < classes; ++c) sum += std::exp(z[c] - zmax);
        const double lse = zmax + std::log(sum);
        const int y = labels[static_cast<std::size_t>(col)];
        loss += lse - z[y];
        for (Eigen::Index c = 0; c < classes; ++c) d[c] = std::exp(z[c] - lse);
        d[y] -= 1.0;
    }
    loss /= static_cast<double>(batch);
    d_scores /= static_cast<double>(batch);
    return loss;
}

void batch_backward(const Net& net, const double* params, Workspace& ws, Matrix& delta,
                    double* grad) {
    for (std::size_t i = net.layers.size(); i-- > 0;) {
        const CompiledLayer& cl = net.layers[i];
        const Matrix& a = ws.acts[i];
        switch (cl.spec.kind) {
            case LayerKind::kDense: {
                ConstRowMajorMap w(params + cl.offset, cl.spec.units, cl.in.c);
                RowMajorMap gw(grad + cl.offset, cl.spec.units, cl.in.c);
                Eigen::Map<Eigen::VectorXd> gb(
                    grad + cl.offset + static_cast<std::size_t>(cl.spec.units) * cl.in.c,
                    cl.spec.units);
                gw.noalias() = delta * a.transpose();
                // Column-by-column accumulation instead of rowwise().sum():
                // Eigen's partial-redux kernel reassociates the sum depending
                // on the destination's alignment, which breaks bitwise replay.
                gb.setZero();
                for (Eigen::Index col = 0; col < delta.cols(); ++col) gb += delta.col(col);
                if (i > 0) {
                    Matrix d_in;
                    d_in.noalias() = w.transpose() * delta;
                    delta = std::move(d_in);
                }
                break;
            }
            case LayerKind::kRelu:
                delta = delta.cwiseProduct((a.array() > 0.0).cast<double>().matrix());
                break;
            case LayerKind::kSoftmaxOutput:
                break;  // folded into ce_loss_and_dscores
            case LayerKind::kConv: {
                Matrix d_in(cl.in.flat(), a.cols());
                conv_backward(cl, params, a, delta, grad, d_in);
                delta = std::move(d_in);
                break;
            }
            case LayerKind::kMaxPool: {
                Matrix d_in = Matrix::Zero(cl.in.flat(), a.cols());
                const std::vector<int>& am = ws.pool_argmax[i];
                for (Eigen::Index col = 0; col < delta.cols(); ++col) {
                    const int* idx = am.data() + static_cast<std::size_t>(col) * delta.rows();
                    for (Eigen::Index row = 0; row < delta.rows(); ++row) {
                        d_in(idx[row], col) += delta(row, col);
                    }
                }
                delta = std::move(d_in);
                break;
            }
            case LayerKind::kDropout:
                if (ws.drop_masks[i].size() > 0) {
                    delta = delta.cwiseProduct(ws.drop_masks[i]);
                }
                break;
            case LayerKind::kFlatten:
                break;
        }
    }
}

void gather_columns(const LabeledDataset& data, std::span<const std::size_t> batch, Matrix& x,
                    std::vector<int>& labels) {
    x.resize(data.feature_dim(), static_cast<Eigen::Index>(batch.size()));
    labels.resize(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        if (batch[b] >= data.size()) {
            throw InputError("model: batch index " + std::to_string(batch[b]) +
                             " out of range for dataset of size " + std::to_string(data.size()));
        }
        const auto f = data.features_of(batch[b]);
        std::copy(f.begin(), f.end(), x.col(static_cast<Eigen::Index>(b)).data());
        labels[b] = data.label(batch[b]);
    }
}

void check_model(const Net& net, const ModelState& m, const LabeledDataset& data) {
    if (m.params.dim() != net.total_params) {
        throw InputError("model: parameter vector has " + std::to_string(m.params.dim()) +
                         " entries, spec needs " + std::to_string(net.total_params));
    }
    if (static_cast<int>(data.feature_dim()) != net.input.flat()) {
        throw InputError("model: dataset feature_dim " + std::to_string(data.feature_dim()) +
                         " != model input " + std::to_string(net.input.flat()));
    }
    if (data.num_classes() > net.classes) {
        throw InputError("model: dataset has " + std::to_string(data.num_classes()) +
                         " classes, model outputs " + std::to_string(net.classes));
    }
}

LossGrad batched_loss_grad(const Net& net, const ModelSpec& spec, const ModelState& m,
                           const LabeledDataset& data, std::span<const std::size_t> batch,
                           bool train_mode, Rng* rng) {
    if (batch.empty()) throw InputError("model: loss_and_gradient over an empty batch");
    Workspace ws;
    ws.acts.assign(net.layers.size() + 1, Matrix());
    std::vector<int> labels;
    gather_columns(data, batch, ws.acts[0], labels);
    batch_forward(net, spec, m.params.data(), ws, train_mode, rng);
    LossGrad out;
    out.grad = ParamVector(std::vector<double>(net.total_params, 0.0));
    Matrix delta;
    out.loss = ce_loss_and_dscores(ws.acts.back(), labels, delta);
    batch_backward(net, m.params.data(), ws, delta, out.grad.data());
    return out;
}

}  // namespace

std::size_t ModelSpec::param_count() const { return compile(*this).total_params; }

void ModelSpec::validate() const { (void)compile(*this); }

ModelSpec ModelSpec::mlp(int input_dim, std::span<const int> hidden, int classes) {
    ModelSpec spec;
    spec.input_dim = input_dim;
    spec.num_classes = classes;
    for (int h : hidden) {
        spec.layers.push_back(LayerSpec::dense(h));
        spec.layers.push_back(LayerSpec::relu());
    }
    spec.layers.push_back(LayerSpec::dense(classes));
    return spec;
}

ModelState init_model(const ModelSpec& spec, Rng& rng) {
    const Net net = compile(spec);
    std::vector<double> params(net.total_params);
    for (const CompiledLayer& cl : net.layers) {
        if (cl.count == 0) continue;
        const double s = 1.0 / std::sqrt(static_cast<double>(cl.fan_in));
        for (std::size_t i = 0; i < cl.count; ++i) {
            params[cl.offset + i] = rng.uniform(-s, s);
        }
    }
    return ModelState{spec, ParamVector(std::move(params))};
}

std::vector<double> forward(const ModelState& m, std::span<const double> x) {
    const Net net = compile(m.spec);
    if (m.params.dim() != net.total_params) {
        throw InputError("model: parameter vector has " + std::to_string(m.params.dim()) +
                         " entries, spec needs " + std::to_string(net.total_params));
    }
    if (static_cast<int>(x.size()) != net.input.flat()) {
        throw InputError("model: input has " + std::to_string(x.size()) + " features, expected " +
                         std::to_string(net.input.flat()));
    }
    Workspace ws;
    ws.acts.assign(net.layers.size() + 1, Matrix());
    ws.acts[0] = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    batch_forward(net, m.spec, m.params.data(), ws, /*train_mode=*/false, nullptr);
    Eigen::VectorXd scores = ws.acts.back().col(0);
    if (net.softmax_out) {
        // Scalar exp/sum, same reasoning as in ce_loss_and_dscores.
        const double zmax = scores.maxCoeff();
        double sum = 0.0;
        for (Eigen::Index c = 0; c < scores.size(); ++c) {
            scores(c) = std::exp(scores(c) - zmax);
            sum += scores(c);
        }
        scores /= sum;
    }
    return std::vector<double>(scores.data(), scores.data() + scores.size());
}

int predict(const ModelState& m, std::span<const double> x) {
    const std::vector<double> scores = forward(m, x);
    int best = 0;
    for (int c = 1; c < static_cast<int>(scores.size()); ++c) {
        if (scores[c] > scores[best]) best = c;
    }
    return best;
}

LossGrad loss_and_gradient(const ModelState& m, const LabeledDataset& data) {
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return loss_and_gradient(m, data, all);
}

LossGrad loss_and_gradient(const ModelState& m, const LabeledDataset& data,
                           std::span<const std::size_t> batch) {
    const Net net = compile(m.spec);
    check_model(net, m, data);
    return batched_loss_grad(net, m.spec, m, data, batch, /*train_mode=*/false, nullptr);
}

ParamVector local_train(const ModelState& m, const LabeledDataset& shard, int steps, double lr,
                        int batch_size, Rng& rng) {
    if (steps < 1) throw InputError("local_train: steps must be >= 1, got " + std::to_string(steps));
    if (lr < 0.0) throw ConfigError("local_train: learning rate must be >= 0, got " + std::to_string(lr));
    if (batch_size < 1) {
        throw ConfigError("local_train: batch_size must be >= 1, got " + std::to_string(batch_size));
    }
    if (shard.size() == 0) throw InputError("local_train: shard is empty");
    const Net net = compile(m.spec);
    check_model(net, m, shard);

    const std::size_t n = shard.size();
    const bool full_batch = static_cast<std::size_t>(batch_size) >= n;
    std::vector<std::size_t> deck(n);
    std::iota(deck.begin(), deck.end(), std::size_t{0});
    std::size_t pos = n;  // forces a shuffle before the first mini-batch

    ModelState cur{m.spec, m.params};
    for (int step = 0; step < steps; ++step) {
        std::span<const std::size_t> batch;
        if (full_batch) {
            batch = deck;  // natural storage order, never shuffled
        } else {
            if (pos >= n) {
                rng.shuffle(deck);
                pos = 0;
            }
            const std::size_t take = std::min(static_cast<std::size_t>(batch_size), n - pos);
            batch = std::span<const std::size_t>(deck).subspan(pos, take);
            pos += take;
        }
        const LossGrad lg =
            batched_loss_grad(net, m.spec, cur, shard, batch, /*train_mode=*/true, &rng);
        double* p = cur.params.data();
        const double* g = lg.grad.values().data();
        for (std::size_t i = 0; i < net.total_params; ++i) {
            p[i] -= lr * g[i];
        }
    }
    if (!cur.params.all_finite()) {
        throw InputError("local_train: parameters became non-finite (diverged)");
    }
    return cur.params;
}

std::vector<int> predictions(const ModelState& m, const LabeledDataset& data) {
    const Net net = compile(m.spec);
    check_model(net, m, data);
    if (data.size() == 0) throw InputError("model: predictions over an empty dataset");

    constexpr std::size_t kChunk = 512;
    std::vector<int> out(data.size());
    std::vector<std::size_t> idx(kChunk);
    std::vector<int> labels;
    Workspace ws;
    for (std::size_t start = 0; start < data.size(); start += kChunk) {
        const std::size_t count = std::min(kChunk, data.size() - start);
        idx.resize(count);
        std::iota(idx.begin(), idx.end(), start);
        ws.acts.assign(net.layers.size() + 1, Matrix());
        gather_columns(data, idx, ws.acts[0], labels);
        batch_forward(net, m.spec, m.params.data(), ws, /*train_mode=*/false, nullptr);
        const Matrix& scores = ws.acts.back();
        for (std::size_t b = 0; b < count; ++b) {
            Eigen::Index best = 0;
            for (Eigen::Index c = 1; c < scores.rows(); ++c) {
                if (scores(c, static_cast<Eigen::Index>(b)) >
                    scores(best, static_cast<Eigen::Index>(b))) {
                    best = c;
                }
            }
            out[start + b] = static_cast<int>(best);
        }
    }
    return out;
}

double evaluate(const ModelState& m, const LabeledDataset& test) {
    const std::vector<int> pred = predictions(m, test);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] != test.label(i)) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(pred.size());
}

std::vector<std::vector<double>> unpack_layers(const ModelSpec& spec, const ParamVector& params) {
    const Net net = compile(spec);
    if (params.dim() != net.total_params) {
        throw InputError("unpack_layers: parameter vector has " + std::to_string(params.dim()) +
                         " entries, spec needs " + std::to_string(net.total_params));
    }
    std::vector<std::vector<double>> blocks;
    blocks.reserve(net.layers.size());
    const double* p = params.values().data();
    for (const CompiledLayer& cl : net.layers) {
        blocks.emplace_back(p + cl.offset, p + cl.offset + cl.count);
    }
    return blocks;
}

ParamVector pack_layers(const ModelSpec& spec, const std::vector<std::vector<double>>& blocks) {
    const Net net = compile(spec);
    if (blocks.size() != net.layers.size()) {
        throw InputError("pack_layers: got " + std::to_string(blocks.size()) +
                         " blocks for a spec with " + std::to_string(net.layers.size()) +
                         " layers");
    }
    std::vector<double> params(net.total_params);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const CompiledLayer& cl = net.layers[i];
        if (blocks[i].size() != cl.count) {
            throw InputError("pack_layers: block " + std::to_string(i) + " has " +
                             std::to_string(blocks[i].size()) + " entries, layer needs " +
                             std::to_string(cl.count));
        }
        std::copy(blocks[i].begin(), blocks[i].end(), params.begin() + cl.offset);
    }
    return ParamVector(std::move(params));
}

double default_init_scale(const ModelSpec& spec) {
    const Net net = compile(spec);
    double weighted = 0.0;
    std::size_t total = 0;
    for (const CompiledLayer& cl : net.layers) {
        if (cl.count == 0) continue;
        weighted += static_cast<double>(cl.count) / std::sqrt(static_cast<double>(cl.fan_in));
        total += cl.count;
    }
    if (total == 0) throw ConfigError("model: spec has no parameters");
    return weighted / static_cast<double>(total);
}

}  // namespace fedsim
