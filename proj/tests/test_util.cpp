#include "doctest.h"

#include <cstdint>
#include <set>

#include "mvar/util.hpp"

using namespace mvar;

TEST_CASE("iso hour parsing round-trips") {
    const int64_t h = parse_iso_hour("2024-01-01T00:00:00");
    CHECK(format_iso_hour(h) == "2024-01-01T00:00:00");
    CHECK(parse_iso_hour("2024-01-01T01:00:00") == h + 1);
    CHECK(parse_iso_hour("2024-01-02T00:00:00") == h + 24);
    CHECK(parse_iso_hour("2024-03-01T00:00:00") - parse_iso_hour("2024-02-28T00:00:00") == 48);
    CHECK(format_iso_hour(parse_iso_hour("1999-12-31T23:00:00")) == "1999-12-31T23:00:00");
}

TEST_CASE("iso hour rejects malformed input") {
    CHECK_THROWS_AS(parse_iso_hour("2024-01-01"), ParseError);
    CHECK_THROWS_AS(parse_iso_hour("2024-13-01T00:00:00"), ParseError);
    CHECK_THROWS_AS(parse_iso_hour("not a time"), ParseError);
    CHECK_THROWS_AS(parse_iso_hour("2024-02-30T00:00:00"), ParseError);
}

TEST_CASE("civil date conversion agrees with known anchors") {
    CHECK(days_from_civil(1970, 1, 1) == 0);
    CHECK(days_from_civil(2024, 1, 1) == 19723);
    int y = 0, m = 0, d = 0;
    civil_from_days(19723, y, m, d);
    CHECK(y == 2024);
    CHECK(m == 1);
    CHECK(d == 1);
}

TEST_CASE("hour of day and day of year") {
    const int64_t h = parse_iso_hour("2024-03-05T17:00:00");
    CHECK(hour_of_day(h) == 17);
    CHECK(day_of_year(h) == 31 + 29 + 5);  // 2024 is a leap year
    CHECK(day_of_year(parse_iso_hour("2023-01-01T00:00:00")) == 1);
    CHECK(hour_of_day(parse_iso_hour("2023-01-01T00:00:00")) == 0);
}

TEST_CASE("string helpers") {
    CHECK(split("a,b,,c", ',') == std::vector<std::string>{"a", "b", "", "c"});
    CHECK(split("", ',') == std::vector<std::string>{""});
    CHECK(trim("  x \t") == "x");
    CHECK(trim("\r\n") == "");
}

TEST_CASE("format_full round-trips doubles exactly") {
    for (const double v : {1.0, -0.1, 1e-300, 3.141592653589793, 123456789.123456789, 0.0}) {
        CHECK(std::stod(format_full(v)) == v);
    }
}

TEST_CASE("rng streams are deterministic and distinct") {
    Rng a(42, 0), b(42, 0), c(42, 1);
    bool same = true, distinct = false;
    for (int i = 0; i < 64; ++i) {
        const double x = a.uniform01();
        same = same && x == b.uniform01();
        distinct = distinct || x != c.uniform01();
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
    }
    CHECK(same);
    CHECK(distinct);
}

TEST_CASE("rng normal draws have sane scale") {
    Rng rng(7);
    double sum = 0.0, sumsq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sumsq += x * x;
    }
    CHECK(std::abs(sum / n) < 0.05);
    CHECK(std::abs(sumsq / n - 1.0) < 0.05);
}

TEST_CASE("shuffle is a seeded permutation") {
    std::vector<int> v1{1, 2, 3, 4, 5, 6, 7, 8}, v2 = v1, v3 = v1;
    Rng r1(5), r2(5), r3(6);
    shuffle(v1, r1);
    shuffle(v2, r2);
    shuffle(v3, r3);
    CHECK(v1 == v2);
    CHECK(std::set<int>(v1.begin(), v1.end()).size() == 8);
    CHECK(v1 != v3);
}
