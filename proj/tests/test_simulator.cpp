#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <doctest.h>

#include "fedsim/errors.hpp"
#include "fedsim/simulator.hpp"

using namespace fedsim;

namespace {

ParamVector pv(std::vector<double> values) { return ParamVector(std::move(values)); }

/// Seconds-scale experiment: 3 agents on a 4-class 6x6 synthetic pool, a
/// 36->8->4 network, 4 rounds in 2-round intervals.
ExperimentConfig tiny_config() {
    ExperimentConfig c;
    c.num_agents = 3;
    c.rounds = 4;
    c.replications = 2;
    c.master_seed = 7;
    std::vector<int> hidden = {8};
    c.model = ModelSpec::mlp(36, hidden, 4);
    c.data.synthetic = true;
    c.data.synth_classes = 4;
    c.data.synth_rows = 6;
    c.data.synth_cols = 6;
    c.data.synth_train_per_class = 30;
    c.data.synth_test_per_class = 10;
    c.data.train_size = 0;
    c.data.test_size = 0;
    c.training.batch_size = 16;
    c.detection.enabled = false;
    c.detection.interval_rounds = 2;
    return c;
}

std::vector<double> error_series(const ReplicationResult& rep) {
    std::vector<double> out;
    for (const RoundRecord& r : rep.rounds) out.push_back(r.test_error);
    return out;
}

}  // namespace

TEST_CASE("aggregate: uniform, trust-filtered, and weighted means are exact") {
    std::vector<double> half = {0.5, 0.5};
    std::vector<ParamVector> two = {pv({1, 3}), pv({2, 4})};
    CHECK(aggregate(two, {true, true}, half) == pv({1.5, 3.5}));

    std::vector<double> third(3, 1.0 / 3.0);
    std::vector<ParamVector> three = {pv({0}), pv({6}), pv({99})};
    // The ignored third agent drops out; the rest renormalize to 1/2 each.
    CHECK(aggregate(three, {true, true, false}, third) == pv({3}));

    std::vector<double> skewed = {0.5, 0.25, 0.25};
    std::vector<ParamVector> spike = {pv({4}), pv({0}), pv({0})};
    CHECK(aggregate(spike, {true, true, true}, skewed) == pv({2}));
}

TEST_CASE("aggregate rejects malformed calls and an empty trusted set") {
    std::vector<double> half = {0.5, 0.5};
    std::vector<ParamVector> two = {pv({1, 3}), pv({2, 4})};
    CHECK_THROWS_AS(aggregate(two, {true}, half), InputError);
    std::vector<ParamVector> no_updates;
    std::vector<double> no_weights;
    CHECK_THROWS_AS(aggregate(no_updates, {}, no_weights), InputError);
    std::vector<ParamVector> ragged = {pv({1, 3}), pv({2})};
    CHECK_THROWS_AS(aggregate(ragged, {true, true}, half), InputError);
    CHECK_THROWS_WITH_AS(aggregate(two, {false, false}, half),
                         doctest::Contains("no trusted agents remain"), ProtocolError);
}

TEST_CASE("flip-success counter on known prediction sets") {
    LabeledDataset data(2, 4);
    for (int c = 0; c < 4; ++c) { std::vector<double> x = {double(c), 0.0}; data.add(x, c); }

    std::vector<int> perfect = {0, 1, 2, 3};
    std::vector<int> rotate = {1, 2, 3, 0};
    std::vector<int> identity = {0, 1, 2, 3};

    // A derangement never matches correct predictions.
    CHECK(label_flip_success_count(perfect, data, rotate) == 0);
    // The identity table makes every correct prediction a "success".
    CHECK(label_flip_success_count(perfect, data, identity) == 4);
    // Fully rotated predictions match the rotation table everywhere.
    CHECK(label_flip_success_count(rotate, data, rotate) == 4);

    std::vector<int> short_preds = {0, 1};
    CHECK_THROWS_AS(label_flip_success_count(short_preds, data, rotate), InputError);
    std::vector<int> short_table = {1, 0};
    CHECK_THROWS_AS(label_flip_success_count(perfect, data, short_table), InputError);
}

TEST_CASE("flip-success model overload agrees with a manual recount") {
    LabeledDataset data(2, 4);
    for (int c = 0; c < 4; ++c) { std::vector<double> x = {double(c), 1.0}; data.add(x, c); }
    std::vector<int> hidden;
    ModelSpec spec = ModelSpec::mlp(2, hidden, 4);
    // All-zero parameters score every class equally; argmax resolves to 0.
    ModelState zero{spec, ParamVector(static_cast<std::size_t>(spec.param_count()))};
    std::vector<int> rotate = {1, 2, 3, 0};
    // Only the label-3 example has table[label] == 0 == prediction.
    CHECK(label_flip_success_count(zero, data, rotate) == 1);
}

TEST_CASE("nearest-rank quantile picks the ceil(p*n)-th smallest value") {
    CHECK(nearest_rank_quantile({0.4, 0.2, 0.1, 0.3}, 0.5) == 0.2);
    CHECK(nearest_rank_quantile({0.4, 0.2, 0.1, 0.3}, 1.0) == 0.4);
    CHECK(nearest_rank_quantile({0.4, 0.2, 0.1, 0.3}, 0.9) == 0.4);

    std::vector<double> twenty;
    for (int i = 20; i >= 1; --i) twenty.push_back(i);
    CHECK(nearest_rank_quantile(twenty, 0.1) == 2.0);
    CHECK(nearest_rank_quantile(twenty, 0.05) == 1.0);

    CHECK(nearest_rank_quantile({5.0}, 0.5) == 5.0);

    CHECK_THROWS_AS(nearest_rank_quantile({}, 0.5), InputError);
    CHECK_THROWS_AS(nearest_rank_quantile({1.0}, 0.0), InputError);
    CHECK_THROWS_AS(nearest_rank_quantile({1.0}, 1.5), InputError);
}

TEST_CASE("synthetic pools have the configured shape and are reproducible") {
    ExperimentConfig c = tiny_config();
    DataPools pools = load_pools(c.data, c.master_seed);
    CHECK(pools.train.size() == 120);  // 4 classes x 30
    CHECK(pools.test.size() == 40);
    CHECK(pools.train.feature_dim() == 36);

    DataPools again = load_pools(c.data, c.master_seed);
    CHECK(pools.train == again.train);
    CHECK(pools.test == again.test);
    DataPools other = load_pools(c.data, c.master_seed + 1);
    CHECK_FALSE(pools.train == other.train);
}

TEST_CASE("round records keep their invariants through a run") {
    ExperimentConfig c = tiny_config();
    c.detection.enabled = true;
    c.detection.threshold = 1e9;
    DataPools pools = load_pools(c.data, c.master_seed);
    ReplicationResult rep = run_replication(c, 0, pools);

    REQUIRE(rep.rounds.size() == 4);
    for (std::size_t t = 0; t < rep.rounds.size(); ++t) {
        const RoundRecord& r = rep.rounds[t];
        CHECK(r.round == static_cast<int>(t));
        CHECK(r.test_error >= 0.0);
        CHECK(r.test_error <= 1.0);
        CHECK(r.stats.size() == 3);
        for (double u : r.stats) CHECK(u >= 0.0);
        CHECK(r.trusted == std::vector<bool>{true, true, true});
        CHECK(r.flip_success == 0);
        int histogram_total = 0;
        for (int n : r.prediction_histogram) histogram_total += n;
        CHECK(histogram_total == 40);
    }
    // 4 rounds / 2-round intervals, one record per (interval, agent).
    CHECK(rep.intervals.size() == 6);
    CHECK(rep.timeline.episodes.empty());
    CHECK(rep.timeline.permanently_ignored_from == std::vector<int>{0, 0, 0});
}

TEST_CASE("detection machinery leaves an attack-free run untouched") {
    ExperimentConfig off = tiny_config();
    DataPools pools = load_pools(off.data, off.master_seed);
    ReplicationResult base = run_replication(off, 0, pools);

    ExperimentConfig fixed = off;
    fixed.detection.enabled = true;
    fixed.detection.threshold = 1e9;
    ReplicationResult with_fixed = run_replication(fixed, 0, pools);

    ExperimentConfig calibrated = off;
    calibrated.detection.enabled = true;  // threshold from the warmup interval
    ReplicationResult with_calibrated = run_replication(calibrated, 0, pools);

    CHECK(error_series(with_fixed) == error_series(base));
    CHECK(error_series(with_calibrated) == error_series(base));
    CHECK(with_fixed.final_params == base.final_params);
    CHECK(with_calibrated.final_params == base.final_params);
}

TEST_CASE("an attacker mixing at weight one is indistinguishable from honesty") {
    ExperimentConfig honest = tiny_config();
    DataPools pools = load_pools(honest.data, honest.master_seed);
    ReplicationResult base = run_replication(honest, 0, pools);

    ExperimentConfig staged = honest;
    staged.attack.kind = AttackKind::kConstantOutput;
    staged.attack.attackers = {0};
    staged.attack.target_class = 3;
    staged.attack.schedule.kind = ScheduleKind::kTable;
    staged.attack.schedule.table = {1.0};  // g(t) = 1 forever
    ReplicationResult same = run_replication(staged, 0, pools);

    CHECK(error_series(same) == error_series(base));
    CHECK(same.final_params == base.final_params);
}

TEST_CASE("a wild false model dominates the first-round statistic") {
    ExperimentConfig c = tiny_config();
    // Five agents so an honest agent's excluding-self median is taken over
    // four peers and the single wild submission cannot drag the midpoint.
    c.num_agents = 5;
    c.attack.kind = AttackKind::kRandomized;
    c.attack.sigma_r = 10.0;
    c.attack.attackers = {0};
    c.attack.schedule.kind = ScheduleKind::kConstantZero;  // pure false model
    c.detection.enabled = true;
    c.detection.threshold = 1e9;
    DataPools pools = load_pools(c.data, c.master_seed);
    Federation fed(c, 0, pools);
    RoundRecord first = fed.run_round();
    REQUIRE(first.stats.size() == 5);
    for (int j = 1; j < 5; ++j) {
        CAPTURE(j);
        CHECK(first.stats[0] > 10.0 * first.stats[static_cast<std::size_t>(j)]);
    }
}

TEST_CASE("replication seeds derive from the master seed deterministically") {
    ExperimentConfig c = tiny_config();
    ExperimentResult a = run_replications(c);
    ExperimentResult b = run_replications(c);
    REQUIRE(a.replications.size() == 2);
    for (std::size_t r = 0; r < a.replications.size(); ++r) {
        CHECK(a.replications[r].replication == static_cast<int>(r));
        CHECK(a.replications[r].seed == b.replications[r].seed);
        CHECK(error_series(a.replications[r]) == error_series(b.replications[r]));
        CHECK(a.replications[r].final_params == b.replications[r].final_params);
    }
    CHECK(a.replications[0].seed != a.replications[1].seed);
    for (std::size_t t = 0; t < a.q50.size(); ++t) {
        CHECK(a.q10[t] <= a.q50[t]);
        CHECK(a.q50[t] <= a.q90[t]);
    }
}

TEST_CASE("thread count never changes the results") {
    ExperimentConfig c = tiny_config();
    c.replications = 4;
    ExperimentResult serial = run_replications(c);
    c.threads = 2;
    ExperimentResult parallel = run_replications(c);
    REQUIRE(parallel.replications.size() == 4);
    for (std::size_t r = 0; r < 4; ++r) {
        CHECK(error_series(parallel.replications[r]) == error_series(serial.replications[r]));
        CHECK(parallel.replications[r].final_params == serial.replications[r].final_params);
        CHECK(parallel.replications[r].threshold_used == serial.replications[r].threshold_used);
    }
    CHECK(parallel.q50 == serial.q50);
}

TEST_CASE("calibration is deterministic and lands in threshold_used") {
    ExperimentConfig c = tiny_config();
    c.detection.enabled = true;
    c.detection.threshold.reset();
    DataPools pools = load_pools(c.data, c.master_seed);

    const double th = calibrate_threshold(c, 0, pools);
    CHECK(th > 0.0);
    CHECK(calibrate_threshold(c, 0, pools) == th);
    CHECK(calibrate_threshold(c, 1, pools) != th);

    ReplicationResult rep = run_replication(c, 0, pools);
    CHECK(rep.threshold_used == th);

    c.detection.threshold = 0.42;
    ReplicationResult fixed = run_replication(c, 0, pools);
    CHECK(fixed.threshold_used == 0.42);
}

TEST_CASE("a replication that excludes everyone aborts the experiment") {
    ExperimentConfig c = tiny_config();
    c.detection.enabled = true;
    c.detection.threshold = 1e-12;  // everyone trips at the first interval
    CHECK_THROWS_WITH_AS(run_replications(c), doctest::Contains("no trusted agents remain"),
                         ProtocolError);
    try {
        run_replications(c);
        FAIL("expected the experiment to abort");
    } catch (const ProtocolError& e) {
        CHECK(std::string(e.what()).find("replication 0") != std::string::npos);
        CHECK(std::string(e.what()).find("seed") != std::string::npos);
    }
}

TEST_CASE("timeline condenses trust flags into episodes") {
    // 3 agents over 6 intervals. Agent 1: out in 2-3, back in 4, out from 5 on.
    // Agent 2: out from the very first interval. Agent 0: never out.
    std::vector<IntervalRecord> records;
    auto trusted_at = [](int agent, int k) {
        if (agent == 1) return !(k == 2 || k == 3 || k >= 5);
        if (agent == 2) return false;
        return true;
    };
    for (int k = 1; k <= 6; ++k)
        for (int agent = 0; agent < 3; ++agent)
            records.push_back({k, agent, 0.0, 0, 0.0, trusted_at(agent, k)});

    DetectionTimeline timeline = build_timeline(records, 3);
    CHECK(timeline.permanently_ignored_from == std::vector<int>{0, 5, 1});
    std::vector<DetectionTimeline::Episode> expected = {
        {1, 2, 3}, {1, 5, 6}, {2, 1, 6}};
    CHECK(timeline.episodes == expected);

    CHECK(build_timeline({}, 3).permanently_ignored_from == std::vector<int>{0, 0, 0});
}

TEST_CASE("the federation enforces its run protocol") {
    ExperimentConfig c = tiny_config();
    DataPools pools = load_pools(c.data, c.master_seed);
    CHECK_THROWS_AS(Federation(c, 2, pools), InputError);   // only 2 replications
    CHECK_THROWS_AS(Federation(c, -1, pools), InputError);

    Federation fed(c, 0, pools);
    CHECK(fed.round() == 0);
    for (int t = 0; t < 4; ++t) fed.run_round();
    CHECK(fed.round() == 4);
    CHECK_THROWS_WITH_AS(fed.run_round(), doctest::Contains("already executed"), ProtocolError);
}

TEST_CASE("shards partition the training draw across agents") {
    ExperimentConfig c = tiny_config();
    DataPools pools = load_pools(c.data, c.master_seed);
    Federation fed(c, 0, pools);
    std::size_t total = 0;
    for (int j = 0; j < 3; ++j) total += fed.shard(j).size();
    CHECK(total == 120);
    CHECK(fed.test_set().size() == 40);
    CHECK(fed.shard(0).feature_dim() == 36);
}
