#pragma once

#include <span>
#include <vector>

#include "fedsim/param_vector.hpp"

namespace fedsim {

/// Which agents' deltas feed the excluding-self median in the round statistic.
enum class MedianPool { kAllAgents, kTrustedAgents };

/// What the per-round parameter delta is measured against.
enum class DeltaReference { kPreviousSubmission, kBroadcast };

struct DetectorConfig {
    int interval_rounds = 5;  // rounds per decision interval
    double threshold = 0.0;   // deviation threshold; must be positive (+inf disables firing)
    int num_agents = 0;
    MedianPool median_pool = MedianPool::kAllAgents;
    DeltaReference delta_reference = DeltaReference::kPreviousSubmission;

    void validate() const;
};

/// Per-coordinate median across the vectors; even count takes the midpoint of
/// the two middle values. Throws InputError on an empty list or mixed dims.
ParamVector coordinatewise_median(std::span<const ParamVector> vectors);

/// Deviation statistic per agent for one round of deltas: the max-abs-coordinate
/// distance between an agent's delta and the coordinatewise median of the other
/// agents' deltas. `pool`, when given, restricts which agents enter the median
/// (self is always excluded); if the restriction empties the pool for some
/// agent it falls back to all other agents.
std::vector<double> round_statistic(std::span<const ParamVector> deltas,
                                    const std::vector<bool>* pool = nullptr);

/// Interval decision bit: true iff the interval-mean statistic strictly exceeds
/// threshold * sqrt(num_agents).
bool threshold_decision(double interval_mean, double threshold, int num_agents);

/// Majority vote over the full decision history: mean > 1/2 -> not trusted,
/// mean < 1/2 -> trusted, mean exactly 1/2 -> keep the previous flag.
bool majority_trust(std::span<const int> history, bool previous);

/// One detector output row per (interval, agent).
struct IntervalRecord {
    int interval = 0;       // 1-based index of the completed interval
    int agent = 0;
    double mean_stat = 0.0; // interval mean of the agent's deviation statistic
    int decision = 0;       // interval decision bit
    double vote_mean = 0.0; // running mean of all decision bits so far
    bool trusted = true;    // flag after this interval's vote
};

/// Coordinator-side detection state machine. Feed every round's submissions
/// (all agents, ignored ones included) through observe_round; at each interval
/// boundary call conclude_interval (or interval_decision + update_trust).
class Detector {
public:
    Detector(DetectorConfig config, const ParamVector& initial_global);

    /// Deviation statistics for one round, accumulated into the interval sums.
    /// `broadcast` is the global model this round's submissions trained from;
    /// it is the delta reference in kBroadcast mode.
    std::vector<double> observe_round(const ParamVector& broadcast,
                                      std::span<const ParamVector> submissions);

    bool at_boundary() const { return rounds_in_interval_ == config_.interval_rounds; }

    /// Decision bit per agent for the just-completed interval; appends to the
    /// histories and resets the accumulators. Mid-interval calls are protocol
    /// errors.
    std::vector<int> interval_decision();

    /// Recomputes every agent's trusted flag from its full decision history.
    std::vector<bool> update_trust();

    /// interval_decision + update_trust, packaged as report records.
    std::vector<IntervalRecord> conclude_interval();

    const DetectorConfig& config() const { return config_; }
    const std::vector<bool>& trusted() const { return trusted_; }
    const std::vector<std::vector<int>>& histories() const { return history_; }
    int completed_intervals() const { return completed_intervals_; }
    int rounds_in_interval() const { return rounds_in_interval_; }

private:
    DetectorConfig config_;
    std::vector<ParamVector> previous_;  // last submission per agent
    std::vector<double> interval_sum_;
    int rounds_in_interval_ = 0;
    int completed_intervals_ = 0;
    std::vector<std::vector<int>> history_;
    std::vector<bool> trusted_;
};

}  // namespace fedsim
