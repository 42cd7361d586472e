#include <cmath>
#include <limits>

#include <doctest.h>

#include "fedsim/errors.hpp"
#include "fedsim/param_vector.hpp"

using namespace fedsim;

TEST_CASE("construction and element access") {
    ParamVector zero(3);
    CHECK(zero.dim() == 3);
    CHECK(zero[0] == 0.0);

    ParamVector filled(2, 1.5);
    CHECK(filled[0] == 1.5);
    CHECK(filled[1] == 1.5);

    ParamVector from_values(std::vector<double>{1.0, 2.0, 3.0});
    CHECK(from_values.dim() == 3);
    CHECK(from_values[2] == 3.0);

    CHECK(ParamVector{}.empty());
}

TEST_CASE("add_scaled and scale") {
    ParamVector a(std::vector<double>{1.0, 2.0});
    ParamVector b(std::vector<double>{10.0, -4.0});
    a.add_scaled(b, 0.5);
    CHECK(a[0] == 6.0);
    CHECK(a[1] == 0.0);
    a.scale(2.0);
    CHECK(a[0] == 12.0);

    ParamVector wrong(3);
    CHECK_THROWS_AS(a.add_scaled(wrong, 1.0), InputError);
}

TEST_CASE("blend endpoints are exact") {
    ParamVector a(std::vector<double>{4.0, 0.0});
    ParamVector b(std::vector<double>{0.0, 8.0});
    CHECK(blend(1.0, a, b) == a);
    CHECK(blend(0.0, a, b) == b);

    ParamVector mid = blend(0.25, a, b);
    CHECK(mid[0] == 1.0);
    CHECK(mid[1] == 6.0);

    CHECK_THROWS_AS(blend(0.5, a, ParamVector(3)), InputError);
}

TEST_CASE("difference and sup-norm helpers") {
    ParamVector a(std::vector<double>{1.0, 5.0, -2.0});
    ParamVector b(std::vector<double>{0.0, 9.0, -2.0});
    ParamVector d = a - b;
    CHECK(d[0] == 1.0);
    CHECK(d[1] == -4.0);
    CHECK(d[2] == 0.0);

    CHECK(linf_norm(d) == 4.0);
    CHECK(linf_distance(a, b) == 4.0);
    CHECK(linf_norm(ParamVector{}) == 0.0);

    CHECK_THROWS_AS(a - ParamVector(2), InputError);
    CHECK_THROWS_AS(linf_distance(a, ParamVector(2)), InputError);
}

TEST_CASE("all_finite flags NaN and infinity") {
    ParamVector v(std::vector<double>{1.0, 2.0});
    CHECK(v.all_finite());
    v[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(v.all_finite());
    v[1] = std::numeric_limits<double>::infinity();
    CHECK_FALSE(v.all_finite());
}
