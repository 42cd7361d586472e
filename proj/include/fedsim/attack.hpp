#pragma once

#include <cstdint>
#include <vector>

#include "fedsim/dataset.hpp"
#include "fedsim/model.hpp"
#include "fedsim/param_vector.hpp"

namespace fedsim {

enum class ScheduleKind { kInverseSqrt, kStepAt, kConstantZero, kTable };

/// Time-varying mixing weight g(t) of the attacker's submission: g of the
/// truthful local model, 1-g of the fixed false model. Built-in schedules keep
/// g in [0,1], non-increasing, with g(0) = 1 (constant-zero, the pure false
/// model from the start, is the deliberate exception).
struct MixingSchedule {
    ScheduleKind kind = ScheduleKind::kInverseSqrt;
    int start_round = 0;        // step schedule: first round with g = 0
    std::vector<double> table;  // custom schedule: g per round; last entry persists

    double weight(int t) const;
    void validate() const;

    bool operator==(const MixingSchedule&) const = default;
};

/// weight(t) as a free function, matching the schedule invariants.
double mixing_weight(const MixingSchedule& schedule, int t);

enum class AttackKind { kNone, kConstantOutput, kLabelFlip, kRandomized };

struct AttackSpec {
    std::vector<int> attackers;  // agent ids; must be a strict minority
    AttackKind kind = AttackKind::kNone;
    int target_class = 9;        // constant-output
    std::vector<int> flip_table; // label-flip: new label per class, |C| entries
    double sigma_r = 0.0;        // randomized; 0 selects the honest init scale
    MixingSchedule schedule;
    int pretrain_epochs = 30;    // false-model training budget

    void validate(int num_agents, int num_classes) const;

    bool operator==(const AttackSpec&) const = default;
};

/// The 10-class derangement shipped with the example configs (no class maps to
/// itself, so a successful flip is always a visible misclassification).
std::vector<int> default_flip_table();

/// Copy of `data` with every label c replaced by table[c]; features untouched.
/// Throws InputError if a label falls outside the table or a table entry is
/// outside the label range.
LabeledDataset flip_labels(const LabeledDataset& data, std::span<const int> table);

/// Optimizer settings for false-model pretraining; mirrors the honest agents'
/// local training by default.
struct PretrainSettings {
    int epochs = 30;
    double lr = 0.05;
    int batch_size = 32;
};

/// The fixed false model W_f, built once per replication:
///   constant-output -> trained on `shard` with all labels set to target_class;
///   label-flip      -> trained on `shard` with labels mapped through the table;
///   randomized      -> i.i.d. Gaussian(0, sigma_r^2) parameters, no training.
/// Deterministic given seed. Trained kinds require a non-empty shard.
ParamVector pretrain_false_model(const AttackSpec& attack, const ModelSpec& spec,
                                 const LabeledDataset* shard, const PretrainSettings& settings,
                                 std::uint64_t seed);

/// Attacker's round-t submission: g(t) * truthful + (1 - g(t)) * false_model,
/// coordinatewise. The truthful vector is the attacker's honest local-training
/// result, so at g = 1 the attacker is indistinguishable from an honest agent.
ParamVector attacker_update(const MixingSchedule& schedule, int t, const ParamVector& truthful,
                            const ParamVector& false_model);

}  // namespace fedsim
