#include "fedsim/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

void ExperimentConfig::validate() const {
    if (num_agents < 2) {
        throw ConfigError("experiment: need at least two agents, got " +
                          std::to_string(num_agents));
    }
    if (rounds < 1) throw ConfigError("experiment: rounds must be >= 1");
    if (replications < 1) throw ConfigError("experiment: replications must be >= 1");
    if (threads < 1) throw ConfigError("experiment: threads must be >= 1");
    if (!weights.empty()) {
        if (static_cast<int>(weights.size()) != num_agents) {
            throw ConfigError("experiment: " + std::to_string(weights.size()) +
                              " aggregation weights for " + std::to_string(num_agents) +
                              " agents");
        }
        double sum = 0.0;
        for (double w : weights) {
            if (!(w > 0.0)) throw ConfigError("experiment: aggregation weights must be positive");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw ConfigError("experiment: aggregation weights must sum to 1, got " +
                              std::to_string(sum));
        }
    }
    if (!(training.lr > 0.0)) {
        throw ConfigError("training: learning rate must be positive, got " +
                          std::to_string(training.lr));
    }
    if (training.batch_size < 1) throw ConfigError("training: batch size must be >= 1");
    if (training.local_epochs < 1) throw ConfigError("training: local epochs must be >= 1");
    model.validate();
    attack.validate(num_agents, model.num_classes);
    if (detection.interval_rounds < 1) {
        throw ConfigError("detection: interval length must be >= 1");
    }
    if (detection.threshold.has_value() && !(*detection.threshold > 0.0)) {
        throw ConfigError("detection: threshold must be positive");
    }
    if (!(detection.calibration_factor > 0.0)) {
        throw ConfigError("detection: calibration factor must be positive");
    }
    if (data.synthetic) {
        if (data.synth_classes < 2) throw ConfigError("data: synthetic classes must be >= 2");
        if (data.synth_rows < 1 || data.synth_cols < 1) {
            throw ConfigError("data: synthetic image size must be positive");
        }
        if (data.synth_train_per_class < 1 || data.synth_test_per_class < 1) {
            throw ConfigError("data: synthetic per-class counts must be positive");
        }
        if (data.synth_noise < 0.0) throw ConfigError("data: synthetic noise must be >= 0");
    } else {
        if (data.train_images.empty() || data.train_labels.empty() || data.test_images.empty() ||
            data.test_labels.empty()) {
            throw ConfigError("data: need train/test image and label paths (or synthetic mode)");
        }
    }
    if (!report_flip_table.empty()) {
        if (static_cast<int>(report_flip_table.size()) != model.num_classes) {
            throw ConfigError("report: flip table has " +
                              std::to_string(report_flip_table.size()) +
                              " entries, need one per class");
        }
        for (int v : report_flip_table) {
            if (v < 0 || v >= model.num_classes) {
                throw ConfigError("report: flip table entry outside the label range");
            }
        }
    }
}

std::vector<double> ExperimentConfig::effective_weights() const {
    if (!weights.empty()) return weights;
    return std::vector<double>(num_agents, 1.0 / num_agents);
}

std::vector<int> ExperimentConfig::effective_flip_table() const {
    if (!report_flip_table.empty()) return report_flip_table;
    if (attack.kind == AttackKind::kLabelFlip) return attack.flip_table;
    return {};
}

ParamVector aggregate(std::span<const ParamVector> updates, const std::vector<bool>& trusted,
                      std::span<const double> weights) {
    const std::size_t n = updates.size();
    if (n == 0) throw InputError("aggregate: no updates");
    if (trusted.size() != n || weights.size() != n) {
        throw InputError("aggregate: got " + std::to_string(n) + " updates, " +
                         std::to_string(trusted.size()) + " trust flags, " +
                         std::to_string(weights.size()) + " weights");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (updates[j].dim() != updates[0].dim()) {
            throw InputError("aggregate: update dim mismatch at agent " + std::to_string(j));
        }
        if (trusted[j]) total += weights[j];
    }
    if (!(total > 0.0)) {
        throw ProtocolError("aggregate: no trusted agents remain (pathological configuration)");
    }
    std::vector<double> out(updates[0].dim(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        if (!trusted[j]) continue;
        const double coef = weights[j] / total;
        const double* u = updates[j].values().data();
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += coef * u[i];
        }
    }
    return ParamVector(std::move(out));
}

int label_flip_success_count(std::span<const int> predictions, const LabeledDataset& test,
                             std::span<const int> table) {
    if (predictions.size() != test.size()) {
        throw InputError("label_flip_success_count: " + std::to_string(predictions.size()) +
                         " predictions for " + std::to_string(test.size()) + " examples");
    }
    int count = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const int label = test.label(i);
        if (label >= static_cast<int>(table.size())) {
            throw InputError("label_flip_success_count: label " + std::to_string(label) +
                             " has no flip table entry");
        }
        if (predictions[i] == table[label]) ++count;
    }
    return count;
}

int label_flip_success_count(const ModelState& model, const LabeledDataset& test,
                             std::span<const int> table) {
    const std::vector<int> preds = predictions(model, test);
    return label_flip_success_count(preds, test, table);
}

double nearest_rank_quantile(std::vector<double> values, double p) {
    if (values.empty()) throw InputError("nearest_rank_quantile: no values");
    if (!(p > 0.0) || p > 1.0) {
        throw InputError("nearest_rank_quantile: p must be in (0, 1], got " + std::to_string(p));
    }
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    // ceil(p*n), with a nudge so that p*n landing a hair above an integer by
    // floating-point rounding still selects that integer rank.
    std::size_t rank = static_cast<std::size_t>(std::ceil(p * n - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

DataPools load_pools(const DataConfig& data, std::uint64_t master_seed) {
    if (data.synthetic) {
        TrainTestSplit split = synth_image_split(
            data.synth_classes, data.synth_train_per_class, data.synth_test_per_class,
            data.synth_rows, data.synth_cols, data.synth_noise,
            derive_seed(master_seed, {kTagSynthData}));
        return DataPools{std::move(split.train), std::move(split.test)};
    }
    return DataPools{load_idx(data.train_images, data.train_labels),
                     load_idx(data.test_images, data.test_labels)};
}

namespace {

LabeledDataset draw_subsample(const LabeledDataset& pool, std::size_t want, std::uint64_t seed) {
    if (want == 0 || want >= pool.size()) return pool;
    return subset(pool, stratified_subsample(pool, want, seed));
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    if (v.size() % 2 == 1) return v[m];
    return (v[m - 1] + v[m]) / 2;
}

}  // namespace

Federation::Federation(const ExperimentConfig& config, int replication, const DataPools& pools)
    : config_(config),
      replication_(replication),
      rep_seed_(derive_seed(config.master_seed,
                            {kTagReplication, static_cast<std::uint64_t>(replication)})),
      test_(0, 0),
      global_{config.model, ParamVector()} {
    config_.validate();
    if (replication < 0 || replication >= config_.replications) {
        throw InputError("federation: replication index " + std::to_string(replication) +
                         " outside [0, " + std::to_string(config_.replications) + ")");
    }
    weights_ = config_.effective_weights();
    flip_table_ = config_.effective_flip_table();
    is_attacker_.assign(config_.num_agents, false);
    if (config_.attack.kind != AttackKind::kNone) {
        for (int a : config_.attack.attackers) is_attacker_[a] = true;
    }

    const LabeledDataset train = draw_subsample(
        pools.train, config_.data.train_size, derive_seed(rep_seed_, {kTagSubsampleTrain}));
    test_ = draw_subsample(pools.test, config_.data.test_size,
                           derive_seed(rep_seed_, {kTagSubsampleTest}));
    const ShardPlan plan =
        partition(train.size(), config_.num_agents, derive_seed(rep_seed_, {kTagPartition}));
    shards_.reserve(config_.num_agents);
    for (int j = 0; j < config_.num_agents; ++j) {
        shards_.push_back(subset(train, plan.agent_indices[j]));
    }

    Rng init_rng(derive_seed(rep_seed_, {kTagInit}));
    global_ = init_model(config_.model, init_rng);

    const std::size_t shard_size = shards_[0].size();
    steps_per_round_ =
        config_.training.local_epochs *
        static_cast<int>((shard_size + config_.training.batch_size - 1) /
                         config_.training.batch_size);

    if (config_.attack.kind != AttackKind::kNone && !config_.attack.attackers.empty()) {
        const int first_attacker =
            *std::min_element(config_.attack.attackers.begin(), config_.attack.attackers.end());
        const PretrainSettings settings{config_.attack.pretrain_epochs, config_.training.lr,
                                        config_.training.batch_size};
        false_model_ =
            pretrain_false_model(config_.attack, config_.model, &shards_[first_attacker], settings,
                                 derive_seed(rep_seed_, {kTagAttack}));
    }

    if (!config_.detection.enabled) {
        threshold_ = std::numeric_limits<double>::infinity();
    } else if (config_.detection.threshold.has_value()) {
        threshold_ = *config_.detection.threshold;
    } else {
        threshold_ = run_calibration();
    }
    detector_.emplace(
        DetectorConfig{config_.detection.interval_rounds, threshold_, config_.num_agents,
                       config_.detection.median_pool, config_.detection.delta_reference},
        global_.params);
}

/// Attack-free warmup over one interval from the initial model, on dedicated
/// seed streams. The threshold is calibration_factor times the median (over
/// agents) of the interval-mean deviation statistic.
double Federation::run_calibration() const {
    const int n = config_.num_agents;
    const int interval = config_.detection.interval_rounds;
    ParamVector global = global_.params;
    std::vector<ParamVector> previous(n, global);
    std::vector<double> sums(n, 0.0);
    const std::vector<bool> all_trusted(n, true);
    for (int t = 0; t < interval; ++t) {
        std::vector<ParamVector> subs;
        subs.reserve(n);
        for (int j = 0; j < n; ++j) {
            Rng rng(derive_seed(rep_seed_, {kTagCalibration, static_cast<std::uint64_t>(j),
                                            static_cast<std::uint64_t>(t)}));
            subs.push_back(local_train(ModelState{config_.model, global}, shards_[j],
                                       steps_per_round_, config_.training.lr,
                                       config_.training.batch_size, rng));
        }
        std::vector<ParamVector> deltas;
        deltas.reserve(n);
        for (int j = 0; j < n; ++j) {
            const ParamVector& ref =
                config_.detection.delta_reference == DeltaReference::kBroadcast ? global
                                                                                : previous[j];
            deltas.push_back(subs[j] - ref);
        }
        const std::vector<double> stats = round_statistic(deltas);
        for (int j = 0; j < n; ++j) {
            sums[j] += stats[j];
            previous[j] = subs[j];
        }
        global = aggregate(subs, all_trusted, weights_);
    }
    std::vector<double> means(n);
    for (int j = 0; j < n; ++j) means[j] = sums[j] / interval;
    const double threshold = config_.detection.calibration_factor * median_of(means);
    if (!(threshold > 0.0)) {
        throw ConfigError(
            "detection: calibration produced a non-positive threshold; set one explicitly");
    }
    return threshold;
}

RoundRecord Federation::run_round() {
    if (round_ >= config_.rounds) {
        throw ProtocolError("run_round: all " + std::to_string(config_.rounds) +
                            " rounds already executed");
    }
    const int t = round_;
    const ParamVector broadcast = global_.params;

    std::vector<ParamVector> subs;
    subs.reserve(config_.num_agents);
    for (int j = 0; j < config_.num_agents; ++j) {
        Rng rng(derive_seed(rep_seed_, {kTagAgent, static_cast<std::uint64_t>(j),
                                        static_cast<std::uint64_t>(t)}));
        subs.push_back(local_train(ModelState{config_.model, broadcast}, shards_[j],
                                   steps_per_round_, config_.training.lr,
                                   config_.training.batch_size, rng));
    }
    for (int j = 0; j < config_.num_agents; ++j) {
        if (is_attacker_[j]) {
            subs[j] = attacker_update(config_.attack.schedule, t, subs[j], false_model_);
        }
    }

    RoundRecord rec;
    rec.round = t;
    rec.stats = detector_->observe_round(broadcast, subs);
    if (detector_->at_boundary()) {
        const std::vector<IntervalRecord> records = detector_->conclude_interval();
        interval_records_.insert(interval_records_.end(), records.begin(), records.end());
    }
    global_.params = aggregate(subs, detector_->trusted(), weights_);

    const std::vector<int> preds = predictions(global_, test_);
    rec.prediction_histogram.assign(config_.model.num_classes, 0);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        ++rec.prediction_histogram[preds[i]];
        if (preds[i] != test_.label(i)) ++wrong;
    }
    rec.test_error = static_cast<double>(wrong) / static_cast<double>(preds.size());
    rec.trusted = detector_->trusted();
    rec.flip_success =
        flip_table_.empty() ? 0 : label_flip_success_count(preds, test_, flip_table_);
    ++round_;
    return rec;
}

double calibrate_threshold(const ExperimentConfig& config, int replication,
                           const DataPools& pools) {
    ExperimentConfig c = config;
    c.detection.enabled = true;
    c.detection.threshold.reset();
    Federation fed(c, replication, pools);
    return fed.threshold();
}

DetectionTimeline build_timeline(std::span<const IntervalRecord> records, int num_agents) {
    DetectionTimeline timeline;
    timeline.permanently_ignored_from.assign(num_agents, 0);
    if (records.empty()) return timeline;
    int max_interval = 0;
    for (const IntervalRecord& r : records) max_interval = std::max(max_interval, r.interval);
    // flags[j][k-1] = trusted after interval k
    std::vector<std::vector<bool>> flags(num_agents, std::vector<bool>(max_interval, true));
    for (const IntervalRecord& r : records) {
        flags[r.agent][r.interval - 1] = r.trusted;
    }
    for (int j = 0; j < num_agents; ++j) {
        int run_start = 0;  // 1-based start of the current ignored stretch, 0 = none
        for (int k = 1; k <= max_interval; ++k) {
            if (!flags[j][k - 1]) {
                if (run_start == 0) run_start = k;
                if (k == max_interval) {
                    timeline.episodes.push_back({j, run_start, k});
                    timeline.permanently_ignored_from[j] = run_start;
                }
            } else if (run_start != 0) {
                timeline.episodes.push_back({j, run_start, k - 1});
                run_start = 0;
            }
        }
    }
    return timeline;
}

ReplicationResult run_replication(const ExperimentConfig& config, int replication,
                                  const DataPools& pools) {
    Federation fed(config, replication, pools);
    ReplicationResult result;
    result.replication = replication;
    result.seed = fed.seed();
    result.threshold_used = fed.threshold();
    result.rounds.reserve(config.rounds);
    for (int t = 0; t < config.rounds; ++t) {
        result.rounds.push_back(fed.run_round());
    }
    result.intervals = fed.interval_records();
    result.timeline = build_timeline(result.intervals, config.num_agents);
    result.final_params = fed.global_params();
    return result;
}

ExperimentResult run_replications(const ExperimentConfig& config) {
    config.validate();
    const DataPools pools = load_pools(config.data, config.master_seed);
    const int reps = config.replications;

    ExperimentResult result;
    result.replications.resize(reps);
    std::vector<std::exception_ptr> failures(reps);
    std::atomic<int> next{0};
    auto work = [&] {
        for (;;) {
            const int r = next.fetch_add(1);
            if (r >= reps) return;
            try {
                result.replications[r] = run_replication(config, r, pools);
            } catch (...) {
                failures[r] = std::current_exception();
            }
        }
    };
    const int workers = std::clamp(config.threads, 1, reps);
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(workers);
        for (int w = 0; w < workers; ++w) threads.emplace_back(work);
        for (std::thread& th : threads) th.join();
    }
    for (int r = 0; r < reps; ++r) {
        if (!failures[r]) continue;
        const std::uint64_t seed =
            derive_seed(config.master_seed, {kTagReplication, static_cast<std::uint64_t>(r)});
        try {
            std::rethrow_exception(failures[r]);
        } catch (const std::exception& e) {
            throw ProtocolError("replication " + std::to_string(r) + " (seed " +
                                std::to_string(seed) + ") failed: " + e.what());
        }
    }

    result.q10.resize(config.rounds);
    result.q50.resize(config.rounds);
    result.q90.resize(config.rounds);
    std::vector<double> errors(reps);
    for (int t = 0; t < config.rounds; ++t) {
        for (int r = 0; r < reps; ++r) errors[r] = result.replications[r].rounds[t].test_error;
        result.q10[t] = nearest_rank_quantile(errors, 0.10);
        result.q50[t] = nearest_rank_quantile(errors, 0.50);
        result.q90[t] = nearest_rank_quantile(errors, 0.90);
    }
    return result;
}

}  // namespace fedsim
