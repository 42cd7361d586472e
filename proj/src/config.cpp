#include "fedsim/config.hpp"

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "fedsim/attack.hpp"
#include "fedsim/errors.hpp"

namespace fedsim {

namespace {

using Json = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& where, const std::string& what) {
    throw ConfigError("config: " + where + ": " + what);
}

void check_keys(const Json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) fail(where, "expected an object");
    for (const auto& [key, value] : obj.items()) {
        bool known = false;
        for (const char* a : allowed) {
            if (key == a) {
                known = true;
                break;
            }
        }
        if (!known) fail(where, "unknown key \"" + key + "\"");
    }
}

template <typename T>
T require(const Json& obj, const std::string& where, const char* key) {
    if (!obj.contains(key)) fail(where, std::string("missing required key \"") + key + "\"");
    try {
        return obj.at(key).get<T>();
    } catch (const Json::exception&) {
        fail(where, std::string("key \"") + key + "\" has the wrong type");
    }
}

template <typename T>
T get_or(const Json& obj, const std::string& where, const char* key, T fallback) {
    if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const Json::exception&) {
        fail(where, std::string("key \"") + key + "\" has the wrong type");
    }
}

LayerSpec parse_layer(const Json& j, const std::string& where) {
    check_keys(j, where, {"kind", "units", "out_channels", "kernel", "stride", "window", "rate"});
    const std::string kind = require<std::string>(j, where, "kind");
    if (kind == "dense") return LayerSpec::dense(require<int>(j, where, "units"));
    if (kind == "relu") return LayerSpec::relu();
    if (kind == "softmax-output") return LayerSpec::softmax_output();
    if (kind == "conv") {
        return LayerSpec::conv(require<int>(j, where, "out_channels"),
                               require<int>(j, where, "kernel"), get_or(j, where, "stride", 1));
    }
    if (kind == "maxpool") return LayerSpec::maxpool(require<int>(j, where, "window"));
    if (kind == "dropout") return LayerSpec::dropout(require<double>(j, where, "rate"));
    if (kind == "flatten") return LayerSpec::flatten();
    fail(where, "unknown layer kind \"" + kind + "\"");
}

Json layer_to_json(const LayerSpec& l) {
    Json j;
    switch (l.kind) {
        case LayerKind::kDense:
            j["kind"] = "dense";
            j["units"] = l.units;
            break;
        case LayerKind::kRelu:
            j["kind"] = "relu";
            break;
        case LayerKind::kSoftmaxOutput:
            j["kind"] = "softmax-output";
            break;
        case LayerKind::kConv:
            j["kind"] = "conv";
            j["out_channels"] = l.out_channels;
            j["kernel"] = l.kernel;
            j["stride"] = l.stride;
            break;
        case LayerKind::kMaxPool:
            j["kind"] = "maxpool";
            j["window"] = l.pool;
            break;
        case LayerKind::kDropout:
            j["kind"] = "dropout";
            j["rate"] = l.rate;
            break;
        case LayerKind::kFlatten:
            j["kind"] = "flatten";
            break;
    }
    return j;
}

ModelSpec parse_model(const Json& j) {
    const std::string where = "model";
    check_keys(j, where, {"input", "input_shape", "classes", "hidden", "layers", "dropout_active"});
    ModelSpec spec;
    spec.num_classes = get_or(j, where, "classes", 10);
    if (j.contains("input_shape")) {
        const auto shape = require<std::vector<int>>(j, where, "input_shape");
        if (shape.size() != 3) fail(where, "input_shape must be [channels, rows, cols]");
        spec.input_shape = {shape[0], shape[1], shape[2]};
    } else {
        spec.input_dim = get_or(j, where, "input", 784);
    }
    if (j.contains("layers")) {
        if (j.contains("hidden")) fail(where, "give either \"hidden\" or \"layers\", not both");
        const Json& layers = j.at("layers");
        if (!layers.is_array()) fail(where, "\"layers\" must be an array");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            spec.layers.push_back(parse_layer(layers[i], where + ".layers[" + std::to_string(i) + "]"));
        }
    } else {
        if (j.contains("input_shape")) fail(where, "the \"hidden\" shortcut needs a flat input");
        const auto hidden = get_or(j, where, "hidden", std::vector<int>{64});
        spec = ModelSpec::mlp(spec.input_dim, hidden, spec.num_classes);
    }
    spec.dropout_active = get_or(j, where, "dropout_active", false);
    return spec;
}

DataConfig parse_data(const Json& j) {
    const std::string where = "data";
    check_keys(j, where,
               {"source", "train_images", "train_labels", "test_images", "test_labels", "classes",
                "rows", "cols", "train_per_class", "test_per_class", "noise", "train_size",
                "test_size"});
    DataConfig data;
    const std::string source = get_or<std::string>(j, where, "source", "synthetic");
    if (source == "synthetic") {
        data.synthetic = true;
    } else if (source == "idx") {
        data.synthetic = false;
        data.train_images = require<std::string>(j, where, "train_images");
        data.train_labels = require<std::string>(j, where, "train_labels");
        data.test_images = require<std::string>(j, where, "test_images");
        data.test_labels = require<std::string>(j, where, "test_labels");
    } else {
        fail(where, "source must be \"synthetic\" or \"idx\", got \"" + source + "\"");
    }
    data.synth_classes = get_or(j, where, "classes", data.synth_classes);
    data.synth_rows = get_or(j, where, "rows", data.synth_rows);
    data.synth_cols = get_or(j, where, "cols", data.synth_cols);
    data.synth_train_per_class = get_or(j, where, "train_per_class", data.synth_train_per_class);
    data.synth_test_per_class = get_or(j, where, "test_per_class", data.synth_test_per_class);
    data.synth_noise = get_or(j, where, "noise", data.synth_noise);
    data.train_size = get_or<std::uint64_t>(j, where, "train_size", data.train_size);
    data.test_size = get_or<std::uint64_t>(j, where, "test_size", data.test_size);
    return data;
}

MixingSchedule parse_schedule(const Json& j) {
    const std::string where = "attack.schedule";
    check_keys(j, where, {"kind", "start_round", "values"});
    MixingSchedule schedule;
    const std::string kind = get_or<std::string>(j, where, "kind", "inverse-sqrt");
    if (kind == "inverse-sqrt") {
        schedule.kind = ScheduleKind::kInverseSqrt;
    } else if (kind == "step") {
        schedule.kind = ScheduleKind::kStepAt;
        schedule.start_round = require<int>(j, where, "start_round");
    } else if (kind == "constant-zero") {
        schedule.kind = ScheduleKind::kConstantZero;
    } else if (kind == "table") {
        schedule.kind = ScheduleKind::kTable;
        schedule.table = require<std::vector<double>>(j, where, "values");
    } else {
        fail(where, "unknown schedule kind \"" + kind + "\"");
    }
    return schedule;
}

AttackSpec parse_attack(const Json& j) {
    const std::string where = "attack";
    check_keys(j, where,
               {"kind", "attackers", "target_class", "flip_table", "sigma", "schedule",
                "pretrain_epochs"});
    AttackSpec attack;
    const std::string kind = get_or<std::string>(j, where, "kind", "none");
    if (kind == "none") {
        attack.kind = AttackKind::kNone;
    } else if (kind == "constant-output") {
        attack.kind = AttackKind::kConstantOutput;
    } else if (kind == "label-flip") {
        attack.kind = AttackKind::kLabelFlip;
    } else if (kind == "randomized") {
        attack.kind = AttackKind::kRandomized;
    } else {
        fail(where, "unknown attack kind \"" + kind + "\"");
    }
    // Reject fields the chosen kind cannot use, so that parse and emit are
    // exact inverses of each other.
    auto reject = [&](const char* key) {
        if (j.contains(key)) {
            fail(where, std::string("key \"") + key + "\" does not apply to kind \"" + kind + "\"");
        }
    };
    if (attack.kind != AttackKind::kConstantOutput) reject("target_class");
    if (attack.kind != AttackKind::kLabelFlip) reject("flip_table");
    if (attack.kind != AttackKind::kRandomized) reject("sigma");
    if (attack.kind == AttackKind::kNone) {
        reject("schedule");
        reject("pretrain_epochs");
        if (!get_or(j, where, "attackers", std::vector<int>{}).empty()) {
            fail(where, "attacker ids listed but kind is \"none\"");
        }
        return attack;
    }
    attack.attackers = get_or(j, where, "attackers", std::vector<int>{});
    attack.target_class = get_or(j, where, "target_class", attack.target_class);
    if (attack.kind == AttackKind::kLabelFlip) {
        attack.flip_table = get_or(j, where, "flip_table", default_flip_table());
    }
    attack.sigma_r = get_or(j, where, "sigma", attack.sigma_r);
    attack.pretrain_epochs = get_or(j, where, "pretrain_epochs", attack.pretrain_epochs);
    if (j.contains("schedule")) attack.schedule = parse_schedule(j.at("schedule"));
    return attack;
}

DetectionConfig parse_detection(const Json& j) {
    const std::string where = "detection";
    check_keys(j, where,
               {"enabled", "interval_rounds", "threshold", "calibration_factor", "median_pool",
                "delta_reference"});
    DetectionConfig det;
    det.enabled = get_or(j, where, "enabled", det.enabled);
    det.interval_rounds = get_or(j, where, "interval_rounds", det.interval_rounds);
    if (j.contains("threshold") && !j.at("threshold").is_null()) {
        det.threshold = require<double>(j, where, "threshold");
    }
    det.calibration_factor = get_or(j, where, "calibration_factor", det.calibration_factor);
    const std::string pool = get_or<std::string>(j, where, "median_pool", "all");
    if (pool == "all") {
        det.median_pool = MedianPool::kAllAgents;
    } else if (pool == "trusted") {
        det.median_pool = MedianPool::kTrustedAgents;
    } else {
        fail(where, "median_pool must be \"all\" or \"trusted\", got \"" + pool + "\"");
    }
    const std::string ref = get_or<std::string>(j, where, "delta_reference", "submission");
    if (ref == "submission") {
        det.delta_reference = DeltaReference::kPreviousSubmission;
    } else if (ref == "broadcast") {
        det.delta_reference = DeltaReference::kBroadcast;
    } else {
        fail(where, "delta_reference must be \"submission\" or \"broadcast\", got \"" + ref + "\"");
    }
    return det;
}

}  // namespace

ExperimentConfig config_from_json(const Json& doc) {
    check_keys(doc, "top level",
               {"experiment", "model", "data", "training", "attack", "detection", "report"});
    ExperimentConfig config;

    const Json experiment = doc.value("experiment", Json::object());
    const std::string where = "experiment";
    check_keys(experiment, where,
               {"agents", "weights", "rounds", "replications", "master_seed", "threads"});
    config.num_agents = get_or(experiment, where, "agents", config.num_agents);
    config.weights = get_or(experiment, where, "weights", config.weights);
    config.rounds = get_or(experiment, where, "rounds", config.rounds);
    config.replications = get_or(experiment, where, "replications", config.replications);
    config.master_seed = get_or<std::uint64_t>(experiment, where, "master_seed", config.master_seed);
    config.threads = get_or(experiment, where, "threads", config.threads);

    if (doc.contains("model")) {
        config.model = parse_model(doc.at("model"));
    } else {
        const int hidden[] = {64};
        config.model = ModelSpec::mlp(784, hidden, 10);
    }
    if (doc.contains("data")) config.data = parse_data(doc.at("data"));
    if (doc.contains("training")) {
        const Json& t = doc.at("training");
        check_keys(t, "training", {"lr", "batch_size", "local_epochs"});
        config.training.lr = get_or(t, "training", "lr", config.training.lr);
        config.training.batch_size = get_or(t, "training", "batch_size", config.training.batch_size);
        config.training.local_epochs =
            get_or(t, "training", "local_epochs", config.training.local_epochs);
    }
    if (doc.contains("attack")) config.attack = parse_attack(doc.at("attack"));
    if (doc.contains("detection")) config.detection = parse_detection(doc.at("detection"));
    if (doc.contains("report")) {
        const Json& r = doc.at("report");
        check_keys(r, "report", {"flip_table"});
        config.report_flip_table = get_or(r, "report", "flip_table", config.report_flip_table);
    }

    config.validate();
    return config;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path.string());
    Json doc;
    try {
        doc = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ParseError("config " + path.string() + ": " + e.what());
    }
    return config_from_json(doc);
}

nlohmann::ordered_json config_to_json(const ExperimentConfig& config) {
    Json doc;
    Json& experiment = doc["experiment"];
    experiment["agents"] = config.num_agents;
    if (!config.weights.empty()) experiment["weights"] = config.weights;
    experiment["rounds"] = config.rounds;
    experiment["replications"] = config.replications;
    experiment["master_seed"] = config.master_seed;
    experiment["threads"] = config.threads;

    Json& model = doc["model"];
    if (config.model.spatial_input()) {
        model["input_shape"] = std::vector<int>(config.model.input_shape.begin(),
                                                config.model.input_shape.end());
    } else {
        model["input"] = config.model.input_dim;
    }
    model["classes"] = config.model.num_classes;
    model["layers"] = Json::array();
    for (const LayerSpec& l : config.model.layers) model["layers"].push_back(layer_to_json(l));
    if (config.model.dropout_active) model["dropout_active"] = true;

    Json& data = doc["data"];
    if (config.data.synthetic) {
        data["source"] = "synthetic";
        data["classes"] = config.data.synth_classes;
        data["rows"] = config.data.synth_rows;
        data["cols"] = config.data.synth_cols;
        data["train_per_class"] = config.data.synth_train_per_class;
        data["test_per_class"] = config.data.synth_test_per_class;
        data["noise"] = config.data.synth_noise;
    } else {
        data["source"] = "idx";
        data["train_images"] = config.data.train_images;
        data["train_labels"] = config.data.train_labels;
        data["test_images"] = config.data.test_images;
        data["test_labels"] = config.data.test_labels;
    }
    data["train_size"] = config.data.train_size;
    data["test_size"] = config.data.test_size;

    Json& training = doc["training"];
    training["lr"] = config.training.lr;
    training["batch_size"] = config.training.batch_size;
    training["local_epochs"] = config.training.local_epochs;

    Json& attack = doc["attack"];
    switch (config.attack.kind) {
        case AttackKind::kNone:
            attack["kind"] = "none";
            break;
        case AttackKind::kConstantOutput:
            attack["kind"] = "constant-output";
            attack["target_class"] = config.attack.target_class;
            break;
        case AttackKind::kLabelFlip:
            attack["kind"] = "label-flip";
            attack["flip_table"] = config.attack.flip_table;
            break;
        case AttackKind::kRandomized:
            attack["kind"] = "randomized";
            attack["sigma"] = config.attack.sigma_r;
            break;
    }
    if (config.attack.kind != AttackKind::kNone) {
        attack["attackers"] = config.attack.attackers;
        attack["pretrain_epochs"] = config.attack.pretrain_epochs;
        Json& schedule = attack["schedule"];
        switch (config.attack.schedule.kind) {
            case ScheduleKind::kInverseSqrt:
                schedule["kind"] = "inverse-sqrt";
                break;
            case ScheduleKind::kStepAt:
                schedule["kind"] = "step";
                schedule["start_round"] = config.attack.schedule.start_round;
                break;
            case ScheduleKind::kConstantZero:
                schedule["kind"] = "constant-zero";
                break;
            case ScheduleKind::kTable:
                schedule["kind"] = "table";
                schedule["values"] = config.attack.schedule.table;
                break;
        }
    }

    Json& detection = doc["detection"];
    detection["enabled"] = config.detection.enabled;
    detection["interval_rounds"] = config.detection.interval_rounds;
    if (config.detection.threshold.has_value()) {
        detection["threshold"] = *config.detection.threshold;
    } else {
        detection["threshold"] = nullptr;
    }
    detection["calibration_factor"] = config.detection.calibration_factor;
    detection["median_pool"] =
        config.detection.median_pool == MedianPool::kTrustedAgents ? "trusted" : "all";
    detection["delta_reference"] =
        config.detection.delta_reference == DeltaReference::kBroadcast ? "broadcast" : "submission";

    if (!config.report_flip_table.empty()) {
        doc["report"]["flip_table"] = config.report_flip_table;
    }
    return doc;
}

}  // namespace fedsim
