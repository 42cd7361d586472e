#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include <doctest.h>

#include "fedsim/rng.hpp"

using namespace fedsim;

TEST_CASE("derive_seed is a pure function of base and path") {
    CHECK(derive_seed(1, {kTagReplication, 0}) == derive_seed(1, {kTagReplication, 0}));
    CHECK(derive_seed(1, {kTagReplication, 0}) != derive_seed(1, {kTagReplication, 1}));
    CHECK(derive_seed(1, {kTagReplication, 0}) != derive_seed(2, {kTagReplication, 0}));
    CHECK(derive_seed(1, {kTagAgent, 0, 3}) != derive_seed(1, {kTagAgent, 3, 0}));
}

TEST_CASE("derived streams for different purposes are distinct") {
    const std::uint64_t rep = derive_seed(42, {kTagReplication, 7});
    std::set<std::uint64_t> seeds;
    for (std::uint64_t tag :
         {kTagInit, kTagSubsampleTrain, kTagSubsampleTest, kTagPartition, kTagAttack}) {
        seeds.insert(derive_seed(rep, {tag}));
    }
    for (int j = 0; j < 5; ++j)
        for (int t = 0; t < 5; ++t) seeds.insert(derive_seed(rep, {kTagAgent, std::uint64_t(j), std::uint64_t(t)}));
    for (int j = 0; j < 5; ++j)
        for (int t = 0; t < 5; ++t)
            seeds.insert(derive_seed(rep, {kTagCalibration, std::uint64_t(j), std::uint64_t(t)}));
    CHECK(seeds.size() == 5 + 25 + 25);  // no collisions across purposes
}

TEST_CASE("Rng sequences are reproducible") {
    Rng a(123), b(123), c(124);
    bool all_equal = true, any_differ = false;
    for (int i = 0; i < 100; ++i) {
        std::uint64_t x = a.next_u64();
        all_equal = all_equal && (x == b.next_u64());
        any_differ = any_differ || (x != c.next_u64());
    }
    CHECK(all_equal);
    CHECK(any_differ);
}

TEST_CASE("uniform stays in [0,1) and is roughly centered") {
    Rng rng(9);
    double sum = 0.0;
    for (int i = 0; i < 10000; ++i) {
        double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(sum / 10000 == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("uniform(lo,hi) respects its range") {
    Rng rng(10);
    for (int i = 0; i < 1000; ++i) {
        double u = rng.uniform(-2.0, 3.0);
        REQUIRE(u >= -2.0);
        REQUIRE(u < 3.0);
    }
}

TEST_CASE("gaussian moments are plausible") {
    Rng rng(11);
    const int n = 20000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        double g = rng.gaussian();
        REQUIRE(std::isfinite(g));
        sum += g;
        sq += g * g;
    }
    CHECK(sum / n == doctest::Approx(0.0).epsilon(0.05));
    CHECK(sq / n == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("uniform_index covers [0,n)") {
    Rng rng(12);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 7000; ++i) {
        std::size_t k = rng.uniform_index(7);
        REQUIRE(k < 7);
        ++hits[k];
    }
    for (int h : hits) CHECK(h > 700);  // each bucket near 1000
}

TEST_CASE("shuffle permutes without loss") {
    Rng rng(13);
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    std::vector<int> orig = v;
    rng.shuffle(v);
    CHECK(v != orig);  // 50! permutations; identity is effectively impossible
    std::sort(v.begin(), v.end());
    CHECK(v == orig);
}
