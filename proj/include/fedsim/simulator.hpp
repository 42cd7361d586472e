#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsim/attack.hpp"
#include "fedsim/dataset.hpp"
#include "fedsim/detector.hpp"
#include "fedsim/model.hpp"
#include "fedsim/param_vector.hpp"

namespace fedsim {

struct TrainingConfig {
    double lr = 0.05;
    int batch_size = 32;
    int local_epochs = 1;  // passes over the shard per round
};

struct DetectionConfig {
    bool enabled = true;
    int interval_rounds = 5;
    // Absent -> calibrated per replication from an attack-free warmup interval:
    // calibration_factor times the median (over agents) of the warmup interval
    // mean of the deviation statistic.
    std::optional<double> threshold;
    double calibration_factor = 3.0;
    MedianPool median_pool = MedianPool::kAllAgents;
    DeltaReference delta_reference = DeltaReference::kPreviousSubmission;
};

/// Where the train/test pools come from. Either IDX file pairs or the built-in
/// synthetic image generator; the per-replication train/test sets are
/// stratified subsamples of the pools.
struct DataConfig {
    std::string train_images, train_labels;
    std::string test_images, test_labels;
    bool synthetic = true;
    int synth_classes = 10;
    int synth_rows = 28, synth_cols = 28;
    int synth_train_per_class = 700, synth_test_per_class = 120;
    double synth_noise = 1.2;
    std::size_t train_size = 6000;  // 0 = whole pool
    std::size_t test_size = 1000;   // 0 = whole pool
};

struct ExperimentConfig {
    int num_agents = 5;
    std::vector<double> weights;  // aggregation weights; empty = uniform 1/N
    int rounds = 60;
    int replications = 20;
    std::uint64_t master_seed = 1;
    int threads = 1;
    ModelSpec model;
    DataConfig data;
    TrainingConfig training;
    AttackSpec attack;
    DetectionConfig detection;
    // Flip-success counting on the test set; empty = the attack's table when
    // the attack is label-flip, otherwise no counting. Setting it explicitly
    // lets attack-free baselines report the same counter.
    std::vector<int> report_flip_table;

    void validate() const;
    std::vector<double> effective_weights() const;
    std::vector<int> effective_flip_table() const;
};

struct RoundRecord {
    int round = 0;
    double test_error = 0.0;
    std::vector<double> stats;    // deviation statistic per agent this round
    std::vector<bool> trusted;    // trust flags in force after this round
    int flip_success = 0;         // test examples predicted as table[true label]
    std::vector<int> prediction_histogram;  // test predictions per class
};

/// Trust-flag history condensed per agent: the interval from which an agent
/// stayed ignored through the end (0 = trusted at the end), plus every maximal
/// ignored stretch.
struct DetectionTimeline {
    struct Episode {
        int agent = 0;
        int from_interval = 0;  // 1-based
        int to_interval = 0;    // inclusive
        bool operator==(const Episode&) const = default;
    };
    std::vector<int> permanently_ignored_from;
    std::vector<Episode> episodes;
};

struct ReplicationResult {
    int replication = 0;
    std::uint64_t seed = 0;
    double threshold_used = 0.0;
    std::vector<RoundRecord> rounds;
    std::vector<IntervalRecord> intervals;  // interval-major, then agent
    DetectionTimeline timeline;
    ParamVector final_params;
};

struct ExperimentResult {
    std::vector<ReplicationResult> replications;
    // Nearest-rank quantiles of test error across replications, per round.
    std::vector<double> q10, q50, q90;
};

/// Weighted mean of the trusted agents' parameter vectors, weights renormalized
/// over the trusted set. Throws ProtocolError when no agent is trusted.
ParamVector aggregate(std::span<const ParamVector> updates, const std::vector<bool>& trusted,
                      std::span<const double> weights);

/// Test examples whose predicted label equals table[true label].
int label_flip_success_count(std::span<const int> predictions, const LabeledDataset& test,
                             std::span<const int> table);
int label_flip_success_count(const ModelState& model, const LabeledDataset& test,
                             std::span<const int> table);

/// Sorted nearest-rank quantile: the ceil(p*n)-th smallest value, p in (0, 1].
double nearest_rank_quantile(std::vector<double> values, double p);

struct DataPools {
    LabeledDataset train;
    LabeledDataset test;
};

/// Loads or generates the shared train/test pools once per experiment.
DataPools load_pools(const DataConfig& data, std::uint64_t master_seed);

/// Attack-free warmup of one detection interval; returns the calibrated
/// threshold. Uses dedicated seed streams, so the main run is unaffected.
double calibrate_threshold(const ExperimentConfig& config, int replication,
                           const DataPools& pools);

/// One replication's federation, stepped a round at a time: broadcast, local
/// training, attack injection, detection, trusted aggregation, evaluation.
class Federation {
public:
    Federation(const ExperimentConfig& config, int replication, const DataPools& pools);

    RoundRecord run_round();

    int round() const { return round_; }
    std::uint64_t seed() const { return rep_seed_; }
    double threshold() const { return threshold_; }
    const ParamVector& global_params() const { return global_.params; }
    const Detector& detector() const { return *detector_; }
    const std::vector<IntervalRecord>& interval_records() const { return interval_records_; }
    const LabeledDataset& test_set() const { return test_; }
    const LabeledDataset& shard(int agent) const { return shards_.at(agent); }

private:
    ExperimentConfig config_;
    int replication_;
    std::uint64_t rep_seed_;
    std::vector<double> weights_;
    std::vector<int> flip_table_;
    std::vector<bool> is_attacker_;
    std::vector<LabeledDataset> shards_;
    LabeledDataset test_;
    ModelState global_;
    ParamVector false_model_;
    double threshold_ = 0.0;
    std::optional<Detector> detector_;
    std::vector<IntervalRecord> interval_records_;
    int round_ = 0;
    int steps_per_round_ = 0;

    double run_calibration() const;
};

DetectionTimeline build_timeline(std::span<const IntervalRecord> records, int num_agents);

/// One full replication (rounds plus detection timeline).
ReplicationResult run_replication(const ExperimentConfig& config, int replication,
                                  const DataPools& pools);

/// All replications with derived seeds, optionally in parallel; the result is
/// independent of the execution order. A failed replication aborts the whole
/// experiment with its index and seed in the message.
ExperimentResult run_replications(const ExperimentConfig& config);

}  // namespace fedsim
