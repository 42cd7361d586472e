#include "fedsim/detector.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedsim/errors.hpp"

namespace fedsim {

void DetectorConfig::validate() const {
    if (interval_rounds < 1) {
        throw ConfigError("detector: interval length must be >= 1, got " +
                          std::to_string(interval_rounds));
    }
    if (!(threshold > 0.0)) {
        throw ConfigError("detector: threshold must be positive");
    }
    if (num_agents < 2) {
        throw ConfigError("detector: need at least two agents, got " +
                          std::to_string(num_agents));
    }
}

namespace {

void check_equal_dims(std::span<const ParamVector> vectors, const char* who) {
    for (std::size_t i = 1; i < vectors.size(); ++i) {
        if (vectors[i].dim() != vectors[0].dim()) {
            throw InputError(std::string(who) + ": vector " + std::to_string(i) + " has dim " +
                             std::to_string(vectors[i].dim()) + ", expected " +
                             std::to_string(vectors[0].dim()));
        }
    }
}

/// Median of the values pointed at by `sources` at coordinate k, written for
/// every k into `out`. Even counts take (lo + hi) / 2 of the two middle values.
void median_into(const std::vector<const double*>& sources, std::size_t dim, double* out,
                 std::vector<double>& scratch) {
    const std::size_t m = sources.size();
    scratch.resize(m);
    const std::size_t mid = m / 2;
    for (std::size_t k = 0; k < dim; ++k) {
        for (std::size_t i = 0; i < m; ++i) scratch[i] = sources[i][k];
        std::nth_element(scratch.begin(), scratch.begin() + mid, scratch.end());
        const double hi = scratch[mid];
        if (m % 2 == 1) {
            out[k] = hi;
        } else {
            const double lo = *std::max_element(scratch.begin(), scratch.begin() + mid);
            out[k] = (lo + hi) / 2;
        }
    }
}

}  // namespace

ParamVector coordinatewise_median(std::span<const ParamVector> vectors) {
    if (vectors.empty()) throw InputError("coordinatewise_median: empty list");
    check_equal_dims(vectors, "coordinatewise_median");
    const std::size_t dim = vectors[0].dim();
    std::vector<const double*> sources;
    sources.reserve(vectors.size());
    for (const ParamVector& v : vectors) sources.push_back(v.values().data());
    std::vector<double> out(dim), scratch;
    median_into(sources, dim, out.data(), scratch);
    return ParamVector(std::move(out));
}

std::vector<double> round_statistic(std::span<const ParamVector> deltas,
                                    const std::vector<bool>* pool) {
    const std::size_t n = deltas.size();
    if (n < 2) {
        throw InputError("round_statistic: need at least two agents, got " + std::to_string(n));
    }
    check_equal_dims(deltas, "round_statistic");
    if (pool != nullptr && pool->size() != n) {
        throw InputError("round_statistic: pool mask size " + std::to_string(pool->size()) +
                         " != agent count " + std::to_string(n));
    }
    const std::size_t dim = deltas[0].dim();
    std::vector<double> stats(n, 0.0);
    std::vector<const double*> sources;
    std::vector<double> median(dim), scratch;
    for (std::size_t j = 0; j < n; ++j) {
        sources.clear();
        for (std::size_t l = 0; l < n; ++l) {
            if (l == j) continue;
            if (pool == nullptr || (*pool)[l]) sources.push_back(deltas[l].values().data());
        }
        if (sources.empty()) {  // restriction emptied the pool; fall back to everyone else
            for (std::size_t l = 0; l < n; ++l) {
                if (l != j) sources.push_back(deltas[l].values().data());
            }
        }
        median_into(sources, dim, median.data(), scratch);
        double dist = 0.0;
        const double* dj = deltas[j].values().data();
        for (std::size_t k = 0; k < dim; ++k) {
            dist = std::max(dist, std::abs(dj[k] - median[k]));
        }
        stats[j] = dist;
    }
    return stats;
}

bool threshold_decision(double interval_mean, double threshold, int num_agents) {
    return interval_mean > threshold * std::sqrt(static_cast<double>(num_agents));
}

bool majority_trust(std::span<const int> history, bool previous) {
    if (history.empty()) return previous;
    long sum = 0;
    for (int d : history) sum += d;
    // 2*sum vs K compares the vote mean to 1/2 without floating point.
    const long k = static_cast<long>(history.size());
    if (2 * sum > k) return false;
    if (2 * sum < k) return true;
    return previous;
}

Detector::Detector(DetectorConfig config, const ParamVector& initial_global) : config_(config) {
    config_.validate();
    if (initial_global.dim() == 0) {
        throw InputError("detector: initial global model is empty");
    }
    previous_.assign(config_.num_agents, initial_global);
    interval_sum_.assign(config_.num_agents, 0.0);
    history_.assign(config_.num_agents, {});
    trusted_.assign(config_.num_agents, true);
}

std::vector<double> Detector::observe_round(const ParamVector& broadcast,
                                            std::span<const ParamVector> submissions) {
    const std::size_t n = static_cast<std::size_t>(config_.num_agents);
    if (submissions.size() != n) {
        throw ProtocolError("detector: expected one submission per agent (" + std::to_string(n) +
                            "), got " + std::to_string(submissions.size()));
    }
    if (at_boundary()) {
        throw ProtocolError("detector: interval is complete; conclude it before the next round");
    }
    std::vector<ParamVector> deltas;
    deltas.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
        const ParamVector& ref =
            config_.delta_reference == DeltaReference::kBroadcast ? broadcast : previous_[j];
        deltas.push_back(submissions[j] - ref);
    }
    const std::vector<bool>* pool =
        config_.median_pool == MedianPool::kTrustedAgents ? &trusted_ : nullptr;
    std::vector<double> stats = round_statistic(deltas, pool);
    for (std::size_t j = 0; j < n; ++j) {
        interval_sum_[j] += stats[j];
        previous_[j] = submissions[j];
    }
    ++rounds_in_interval_;
    return stats;
}

std::vector<int> Detector::interval_decision() {
    if (!at_boundary()) {
        throw ProtocolError("detector: interval decision mid-interval (" +
                            std::to_string(rounds_in_interval_) + " of " +
                            std::to_string(config_.interval_rounds) + " rounds)");
    }
    std::vector<int> decisions(config_.num_agents, 0);
    for (int j = 0; j < config_.num_agents; ++j) {
        const double mean = interval_sum_[j] / config_.interval_rounds;
        decisions[j] = threshold_decision(mean, config_.threshold, config_.num_agents) ? 1 : 0;
        history_[j].push_back(decisions[j]);
        interval_sum_[j] = 0.0;
    }
    rounds_in_interval_ = 0;
    ++completed_intervals_;
    return decisions;
}

std::vector<bool> Detector::update_trust() {
    for (int j = 0; j < config_.num_agents; ++j) {
        trusted_[j] = majority_trust(history_[j], trusted_[j]);
    }
    return trusted_;
}

std::vector<IntervalRecord> Detector::conclude_interval() {
    std::vector<double> means(config_.num_agents);
    if (at_boundary()) {
        for (int j = 0; j < config_.num_agents; ++j) {
            means[j] = interval_sum_[j] / config_.interval_rounds;
        }
    }
    const std::vector<int> decisions = interval_decision();
    update_trust();
    std::vector<IntervalRecord> records(config_.num_agents);
    for (int j = 0; j < config_.num_agents; ++j) {
        double vote_sum = 0.0;
        for (int d : history_[j]) vote_sum += d;
        records[j] = IntervalRecord{completed_intervals_,
                                    j,
                                    means[j],
                                    decisions[j],
                                    vote_sum / static_cast<double>(history_[j].size()),
                                    trusted_[j]};
    }
    return records;
}

}  // namespace fedsim
