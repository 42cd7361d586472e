#include "fedsim/attack.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "fedsim/errors.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

double MixingSchedule::weight(int t) const {
    if (t < 0) throw InputError("mixing_weight: round index must be >= 0, got " + std::to_string(t));
    switch (kind) {
        case ScheduleKind::kInverseSqrt:
            return 1.0 / std::sqrt(static_cast<double>(t) + 1.0);
        case ScheduleKind::kStepAt:
            return t < start_round ? 1.0 : 0.0;
        case ScheduleKind::kConstantZero:
            return 0.0;
        case ScheduleKind::kTable:
            if (table.empty()) throw ConfigError("mixing schedule: custom table is empty");
            return t < static_cast<int>(table.size()) ? table[t] : table.back();
    }
    throw ConfigError("mixing schedule: unknown kind");
}

void MixingSchedule::validate() const {
    switch (kind) {
        case ScheduleKind::kInverseSqrt:
        case ScheduleKind::kConstantZero:
            return;
        case ScheduleKind::kStepAt:
            if (start_round < 1) {
                throw ConfigError(
                    "mixing schedule: step start round must be >= 1 (use constant-zero for a "
                    "pure false model from round 0), got " +
                    std::to_string(start_round));
            }
            return;
        case ScheduleKind::kTable: {
            if (table.empty()) throw ConfigError("mixing schedule: custom table is empty");
            if (table.front() != 1.0) {
                throw ConfigError("mixing schedule: custom table must start at 1");
            }
            for (std::size_t i = 0; i < table.size(); ++i) {
                if (!(table[i] >= 0.0 && table[i] <= 1.0)) {
                    throw ConfigError("mixing schedule: table entry " + std::to_string(i) +
                                      " outside [0, 1]");
                }
                if (i > 0 && table[i] > table[i - 1]) {
                    throw ConfigError("mixing schedule: table must be non-increasing (entry " +
                                      std::to_string(i) + ")");
                }
            }
            return;
        }
    }
    throw ConfigError("mixing schedule: unknown kind");
}

double mixing_weight(const MixingSchedule& schedule, int t) { return schedule.weight(t); }

void AttackSpec::validate(int num_agents, int num_classes) const {
    if (kind == AttackKind::kNone) {
        if (!attackers.empty()) {
            throw ConfigError("attack: kind is none but " + std::to_string(attackers.size()) +
                              " attacker ids are listed");
        }
        return;
    }
    std::set<int> seen;
    for (int id : attackers) {
        if (id < 0 || id >= num_agents) {
            throw ConfigError("attack: attacker id " + std::to_string(id) +
                              " outside agent range [0, " + std::to_string(num_agents) + ")");
        }
        if (!seen.insert(id).second) {
            throw ConfigError("attack: duplicate attacker id " + std::to_string(id));
        }
    }
    if (2 * static_cast<int>(attackers.size()) >= num_agents) {
        throw ConfigError("attackers must be a strict minority: n_a=" +
                          std::to_string(attackers.size()) + ", N=" + std::to_string(num_agents));
    }
    switch (kind) {
        case AttackKind::kConstantOutput:
            if (target_class < 0 || target_class >= num_classes) {
                throw ConfigError("attack: target class " + std::to_string(target_class) +
                                  " outside label range [0, " + std::to_string(num_classes) + ")");
            }
            break;
        case AttackKind::kLabelFlip: {
            if (static_cast<int>(flip_table.size()) != num_classes) {
                throw ConfigError("attack: flip table has " + std::to_string(flip_table.size()) +
                                  " entries, need one per class (" + std::to_string(num_classes) +
                                  ")");
            }
            for (std::size_t c = 0; c < flip_table.size(); ++c) {
                if (flip_table[c] < 0 || flip_table[c] >= num_classes) {
                    throw ConfigError("attack: flip table entry for class " + std::to_string(c) +
                                      " is outside the label range");
                }
            }
            break;
        }
        case AttackKind::kRandomized:
            if (sigma_r < 0.0) {
                throw ConfigError("attack: randomized scale must be >= 0, got " +
                                  std::to_string(sigma_r));
            }
            break;
        case AttackKind::kNone:
            break;
    }
    schedule.validate();
}

std::vector<int> default_flip_table() { return {3, 4, 7, 5, 8, 0, 9, 6, 2, 1}; }

LabeledDataset flip_labels(const LabeledDataset& data, std::span<const int> table) {
    const int classes = data.num_classes();
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.label(i) >= static_cast<int>(table.size())) {
            throw InputError("flip_labels: label " + std::to_string(data.label(i)) +
                             " has no entry in a table of size " + std::to_string(table.size()));
        }
    }
    for (std::size_t c = 0; c < table.size(); ++c) {
        if (table[c] < 0 || table[c] >= classes) {
            throw InputError("flip_labels: table entry for class " + std::to_string(c) +
                             " is outside the label range [0, " + std::to_string(classes) + ")");
        }
    }
    LabeledDataset out = data;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.set_label(i, table[out.label(i)]);
    }
    return out;
}

ParamVector pretrain_false_model(const AttackSpec& attack, const ModelSpec& spec,
                                 const LabeledDataset* shard, const PretrainSettings& settings,
                                 std::uint64_t seed) {
    if (attack.kind == AttackKind::kNone) {
        throw ConfigError("pretrain_false_model: attack kind is none");
    }
    Rng rng(seed);

    if (attack.kind == AttackKind::kRandomized) {
        const double sigma = attack.sigma_r > 0.0 ? attack.sigma_r : default_init_scale(spec);
        std::vector<double> params(spec.param_count());
        for (double& p : params) p = sigma * rng.gaussian();
        return ParamVector(std::move(params));
    }

    if (shard == nullptr || shard->size() == 0) {
        throw ConfigError("pretrain_false_model: trained attack kinds need training data");
    }
    LabeledDataset poisoned(0, 0);
    if (attack.kind == AttackKind::kConstantOutput) {
        poisoned = *shard;
        for (std::size_t i = 0; i < poisoned.size(); ++i) {
            poisoned.set_label(i, attack.target_class);
        }
    } else {  // label-flip
        poisoned = flip_labels(*shard, attack.flip_table);
    }

    if (settings.epochs < 1) {
        throw ConfigError("pretrain_false_model: epochs must be >= 1, got " +
                          std::to_string(settings.epochs));
    }
    ModelState m = init_model(spec, rng);
    const std::size_t n = poisoned.size();
    const int steps_per_epoch =
        static_cast<int>((n + settings.batch_size - 1) / settings.batch_size);
    return local_train(m, poisoned, settings.epochs * steps_per_epoch, settings.lr,
                       settings.batch_size, rng);
}

ParamVector attacker_update(const MixingSchedule& schedule, int t, const ParamVector& truthful,
                            const ParamVector& false_model) {
    return blend(schedule.weight(t), truthful, false_model);
}

}  // namespace fedsim
