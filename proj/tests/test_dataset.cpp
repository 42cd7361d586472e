#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <doctest.h>

#include "fedsim/dataset.hpp"
#include "fedsim/rng.hpp"
#include "test_util.hpp"

using namespace fedsim;
using testutil::TempDir;

namespace {

void append_be32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

/// Two 28x28 images built byte-by-byte: image 0 constant 51, image 1 a ramp.
std::string fixture_images() {
    std::string out;
    append_be32(out, 2051);
    append_be32(out, 2);
    append_be32(out, 28);
    append_be32(out, 28);
    for (int i = 0; i < 784; ++i) out.push_back(static_cast<char>(51));
    for (int i = 0; i < 784; ++i) out.push_back(static_cast<char>(i % 256));
    return out;
}

std::string fixture_labels(std::uint32_t magic = 2049, std::uint32_t count = 2) {
    std::string out;
    append_be32(out, magic);
    append_be32(out, count);
    if (count >= 1) out.push_back(7);
    if (count >= 2) out.push_back(3);
    if (count >= 3) out.push_back(1);
    return out;
}

}  // namespace

TEST_CASE("load_idx reads a hand-built two-image pair") {
    TempDir dir("idx");
    testutil::write_file(dir.file("img"), fixture_images());
    testutil::write_file(dir.file("lab"), fixture_labels());

    LabeledDataset data = load_idx(dir.file("img"), dir.file("lab"));
    REQUIRE(data.size() == 2);
    CHECK(data.feature_dim() == 784);
    CHECK(data.num_classes() == 10);
    CHECK(data.label(0) == 7);
    CHECK(data.label(1) == 3);
    // Pixels scaled to [0,1] as byte/255.
    CHECK(data.features_of(0)[0] == doctest::Approx(51.0 / 255.0).epsilon(1e-12));
    CHECK(data.features_of(1)[0] == 0.0);
    CHECK(data.features_of(1)[255] == 1.0);
    CHECK(data.features_of(1)[256] == 0.0);  // ramp wraps at 256
}

TEST_CASE("load_idx rejects swapped magic numbers") {
    TempDir dir("idx_magic");
    testutil::write_file(dir.file("img"), fixture_images());
    testutil::write_file(dir.file("lab"), fixture_labels(2051));  // images magic in labels file
    CHECK_THROWS_WITH_AS(load_idx(dir.file("img"), dir.file("lab")),
                         doctest::Contains("bad magic in labels file"), ParseError);
}

TEST_CASE("load_idx rejects an image/label count mismatch") {
    TempDir dir("idx_count");
    testutil::write_file(dir.file("img"), fixture_images());  // 2 images
    testutil::write_file(dir.file("lab"), fixture_labels(2049, 3));
    CHECK_THROWS_WITH_AS(load_idx(dir.file("img"), dir.file("lab")),
                         doctest::Contains("image count 2 != label count 3"), ParseError);
}

TEST_CASE("load_idx rejects truncated files") {
    TempDir dir("idx_trunc");
    std::string img = fixture_images();
    img.resize(img.size() - 100);  // cut into the second image
    testutil::write_file(dir.file("img"), img);
    testutil::write_file(dir.file("lab"), fixture_labels());
    CHECK_THROWS_WITH_AS(load_idx(dir.file("img"), dir.file("lab")),
                         doctest::Contains("truncated"), ParseError);

    std::string header_only;
    append_be32(header_only, 2051);
    append_be32(header_only, 2);
    testutil::write_file(dir.file("img2"), header_only);  // dims missing
    CHECK_THROWS_AS(load_idx(dir.file("img2"), dir.file("lab")), ParseError);
}

TEST_CASE("load_idx reports unreadable paths") {
    TempDir dir("idx_missing");
    CHECK_THROWS_AS(load_idx(dir.file("absent"), dir.file("absent2")), IoError);
}

TEST_CASE("write_idx then load_idx round-trips after byte quantization") {
    TempDir dir("idx_rt");
    LabeledDataset data = synth_image_dataset(3, 4, 8, 8, 0.5, 99);
    write_idx(data, dir.file("img"), dir.file("lab"), 8, 8);
    LabeledDataset back = load_idx(dir.file("img"), dir.file("lab"));

    REQUIRE(back.size() == data.size());
    CHECK(back.labels() == data.labels());
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto orig = data.features_of(i);
        auto rt = back.features_of(i);
        for (std::size_t k = 0; k < orig.size(); ++k) {
            double clamped = std::clamp(orig[k], 0.0, 1.0);
            double quantized = std::round(clamped * 255.0) / 255.0;
            REQUIRE(rt[k] == doctest::Approx(quantized).epsilon(1e-12));
        }
    }
}

TEST_CASE("write_idx validates the image geometry") {
    TempDir dir("idx_geom");
    LabeledDataset data = synth_dataset(2, 2, 10, 0.1, 1);
    CHECK_THROWS_AS(write_idx(data, dir.file("img"), dir.file("lab"), 3, 3), InputError);
}

TEST_CASE("synth_dataset with zero noise repeats the class means") {
    LabeledDataset data = synth_dataset(3, 4, 16, 0.0, 7);
    REQUIRE(data.size() == 12);
    // All class-c examples identical, and distinct across classes.
    for (int c = 0; c < 3; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < data.size(); ++i)
            if (data.label(i) == c) members.push_back(i);
        REQUIRE(members.size() == 4);
        auto first = data.features_of(members[0]);
        double norm_sq = 0.0;
        for (double v : first) norm_sq += v * v;
        CHECK(norm_sq == doctest::Approx(1.0).epsilon(1e-9));  // unit-norm mean
        for (std::size_t m : members)
            CHECK(std::equal(first.begin(), first.end(), data.features_of(m).begin()));
    }
    CHECK_FALSE(std::equal(data.features_of(0).begin(), data.features_of(0).end(),
                           data.features_of(11).begin()));
}

TEST_CASE("synth_dataset label counts and determinism") {
    LabeledDataset a = synth_dataset(3, 5, 8, 0.3, 11);
    REQUIRE(a.size() == 15);
    std::vector<int> counts(3, 0);
    for (std::size_t i = 0; i < a.size(); ++i) ++counts[a.label(i)];
    CHECK(counts == std::vector<int>{5, 5, 5});

    LabeledDataset b = synth_dataset(3, 5, 8, 0.3, 11);
    CHECK(a == b);
    LabeledDataset c = synth_dataset(3, 5, 8, 0.3, 12);
    CHECK_FALSE(a == c);

    CHECK_THROWS_AS(synth_dataset(0, 5, 8, 0.3, 1), ConfigError);
    CHECK_THROWS_AS(synth_dataset(3, 5, 8, -0.1, 1), ConfigError);
}

TEST_CASE("synth_image_dataset pixels stay in [0,1] and classes are covered") {
    LabeledDataset data = synth_image_dataset(10, 3, 28, 28, 1.2, 5);
    REQUIRE(data.size() == 30);
    std::vector<int> counts(10, 0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        ++counts[data.label(i)];
        for (double v : data.features_of(i)) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
    }
    for (int c : counts) CHECK(c == 3);
    CHECK(data == synth_image_dataset(10, 3, 28, 28, 1.2, 5));
}

TEST_CASE("synth_image_split equals the split of one combined generation") {
    const int classes = 4, train_pc = 6, test_pc = 2;
    TrainTestSplit split = synth_image_split(classes, train_pc, test_pc, 12, 12, 0.8, 31);
    LabeledDataset pool = synth_image_dataset(classes, train_pc + test_pc, 12, 12, 0.8, 31);

    REQUIRE(split.train.size() == std::size_t(classes * train_pc));
    REQUIRE(split.test.size() == std::size_t(classes * test_pc));

    // Example i of class c sits at pool index c*(train_pc+test_pc)+i; the first
    // train_pc go to train, the rest to test.
    const int per_class = train_pc + test_pc;
    std::size_t ti = 0, si = 0;
    for (int c = 0; c < classes; ++c) {
        for (int i = 0; i < train_pc; ++i, ++ti) {
            auto expect = pool.features_of(std::size_t(c) * per_class + i);
            auto got = split.train.features_of(ti);
            REQUIRE(split.train.label(ti) == c);
            REQUIRE(std::equal(expect.begin(), expect.end(), got.begin()));
        }
        for (int i = train_pc; i < per_class; ++i, ++si) {
            auto expect = pool.features_of(std::size_t(c) * per_class + i);
            auto got = split.test.features_of(si);
            REQUIRE(split.test.label(si) == c);
            REQUIRE(std::equal(expect.begin(), expect.end(), got.begin()));
        }
    }
}

TEST_CASE("partition gives disjoint equal shards and drops the remainder") {
    ShardPlan even = partition(10, 5, 3);
    REQUIRE(even.agent_indices.size() == 5);
    std::set<std::size_t> seen;
    for (const auto& shard : even.agent_indices) {
        CHECK(shard.size() == 2);
        for (std::size_t idx : shard) {
            CHECK(idx < 10);
            CHECK(seen.insert(idx).second);  // disjoint
        }
    }
    CHECK(seen.size() == 10);

    ShardPlan odd = partition(11, 5, 3);
    std::size_t total = 0;
    for (const auto& shard : odd.agent_indices) {
        CHECK(shard.size() == 2);
        total += shard.size();
    }
    CHECK(total == 10);  // one index dropped

    ShardPlan again = partition(11, 5, 3);
    CHECK(again.agent_indices == odd.agent_indices);

    CHECK_THROWS_AS(partition(4, 5, 1), ConfigError);
    CHECK_THROWS_AS(partition(10, 0, 1), ConfigError);
}

TEST_CASE("subset materializes the chosen examples in order") {
    LabeledDataset data = synth_dataset(3, 4, 6, 0.2, 17);
    std::vector<std::size_t> picks = {11, 0, 5};
    LabeledDataset sub = subset(data, picks);
    REQUIRE(sub.size() == 3);
    for (std::size_t i = 0; i < picks.size(); ++i) {
        CHECK(sub.label(i) == data.label(picks[i]));
        auto expect = data.features_of(picks[i]);
        auto got = sub.features_of(i);
        CHECK(std::equal(expect.begin(), expect.end(), got.begin()));
    }
}

TEST_CASE("stratified_subsample balances labels") {
    LabeledDataset data = synth_dataset(5, 20, 4, 0.2, 23);
    std::vector<std::size_t> picks = stratified_subsample(data, 50, 77);
    REQUIRE(picks.size() == 50);
    std::vector<int> counts(5, 0);
    std::set<std::size_t> unique(picks.begin(), picks.end());
    CHECK(unique.size() == 50);
    for (std::size_t i : picks) ++counts[data.label(i)];
    CHECK(counts == std::vector<int>{10, 10, 10, 10, 10});

    // Remainder spreads over the lowest class indices.
    std::vector<std::size_t> uneven = stratified_subsample(data, 52, 77);
    counts.assign(5, 0);
    for (std::size_t i : uneven) ++counts[data.label(i)];
    CHECK(counts == std::vector<int>{11, 11, 10, 10, 10});

    CHECK(picks == stratified_subsample(data, 50, 77));
    CHECK_THROWS_AS(stratified_subsample(data, 500, 1), ConfigError);
}

TEST_CASE("LabeledDataset validates additions") {
    LabeledDataset data(3, 2);
    std::vector<double> x = {0.1, 0.2, 0.3};
    data.add(x, 1);
    CHECK(data.size() == 1);
    std::vector<double> short_x = {0.1};
    CHECK_THROWS_AS(data.add(short_x, 0), InputError);
    CHECK_THROWS_AS(data.add(x, 2), InputError);
    CHECK_THROWS_AS(data.add(x, -1), InputError);
    CHECK_THROWS_AS(data.set_label(0, 5), InputError);
    data.set_label(0, 0);
    CHECK(data.label(0) == 0);
}
