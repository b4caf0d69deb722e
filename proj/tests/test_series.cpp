#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "mvar/series.hpp"
#include "mvar/util.hpp"

using namespace mvar;
using data::CityInfo;
using data::CitySeries;
using data::NormStats;
using data::QcAudit;
using data::StationInfo;
using data::StationTable;

namespace {

std::filesystem::path scratch_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "mvar_series_tests";
    std::filesystem::create_directories(dir);
    return dir;
}

CitySeries two_city_series() {
    CitySeries s;
    s.cities = {{"beijing", 39.9042, 116.4074}, {"tianjin", 39.3434, 117.3616}};
    s.times = {parse_iso_hour("2024-01-01T00:00:00"), parse_iso_hour("2024-01-01T01:00:00"),
               parse_iso_hour("2024-01-01T02:00:00"), parse_iso_hour("2024-01-01T03:00:00")};
    s.allocate();
    for (int t = 0; t < s.n_times(); ++t)
        for (int n = 0; n < s.n_cities(); ++n)
            for (int d = 0; d < data::kPollutants; ++d)
                s.set(t, n, d, 10.0 * t + 2.0 * n + 0.25 * d);
    return s;
}

}  // namespace

TEST_CASE("pollutant order is fixed") {
    const auto& names = data::pollutant_names();
    REQUIRE(names.size() == 6);
    CHECK(names[0] == "pm25");
    CHECK(names[1] == "pm10");
    CHECK(names[2] == "so2");
    CHECK(names[3] == "no2");
    CHECK(names[4] == "co");
    CHECK(names[5] == "o3");
    for (int d = 0; d < data::kPollutants; ++d)
        CHECK(data::pollutant_index(names[static_cast<size_t>(d)]) == d);
    CHECK_THROWS_AS(data::pollutant_index("nh3"), ConfigError);
}

TEST_CASE("city series indexing and slices") {
    CitySeries s = two_city_series();
    CHECK(s.find_time(s.times[2]) == 2);
    CHECK(s.find_time(s.times[0] - 5) == -1);
    CHECK(s.slice_complete(1));
    s.clear(1, 0, 3);
    CHECK_FALSE(s.slice_complete(1));
    CHECK(s.slice_complete(0));

    const num::DenseMatrix m = s.slice(2);
    CHECK(m.rows == 2);
    CHECK(m.cols == 6);
    CHECK(m.at(0, 0) == 20.0);
    CHECK(m.at(1, 5) == 20.0 + 2.0 + 1.25);
}

TEST_CASE("norm stats on a two-point series") {
    CitySeries s;
    s.cities = {{"a", 30.0, 116.0}};
    s.times = {0, 1};
    s.allocate();
    for (int d = 0; d < data::kPollutants; ++d) {
        s.set(0, 0, d, 0.0);
        s.set(1, 0, d, 2.0);
    }
    const NormStats stats = data::compute_norm_stats(s);
    CHECK(stats.mean.at(0, 0) == 1.0);
    CHECK(stats.stddev.at(0, 0) == 1.0);  // population std of {0, 2}
    CHECK_FALSE(stats.is_degenerate(0, 0));

    data::normalize(s, stats);
    CHECK(s.value(0, 0, 0) == -1.0);
    CHECK(s.value(1, 0, 0) == 1.0);
    data::denormalize(s, stats);
    CHECK(s.value(0, 0, 0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(s.value(1, 0, 0) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("constant series normalizes to zero via the degenerate clamp") {
    CitySeries s;
    s.cities = {{"a", 30.0, 116.0}};
    s.times = {0, 1, 2};
    s.allocate();
    for (int t = 0; t < 3; ++t)
        for (int d = 0; d < data::kPollutants; ++d) s.set(t, 0, d, 7.5);
    const NormStats stats = data::compute_norm_stats(s);
    CHECK(stats.is_degenerate(0, 0));
    CHECK(stats.stddev.at(0, 0) == 1.0);
    data::normalize(s, stats);
    for (int t = 0; t < 3; ++t) CHECK(s.value(t, 0, 0) == 0.0);
}

TEST_CASE("norm stats ignore invalid entries") {
    CitySeries s;
    s.cities = {{"a", 30.0, 116.0}};
    s.times = {0, 1, 2, 3};
    s.allocate();
    for (int d = 0; d < data::kPollutants; ++d) {
        s.set(0, 0, d, 0.0);
        s.set(1, 0, d, 2.0);
        s.set(2, 0, d, 1000.0);
        s.clear(2, 0, d);
        s.set(3, 0, d, 4.0);
    }
    const NormStats stats = data::compute_norm_stats(s);
    CHECK(stats.mean.at(0, 2) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("normalization round trip on random data") {
    CitySeries s = two_city_series();
    Rng rng(3);
    for (int t = 0; t < s.n_times(); ++t)
        for (int n = 0; n < s.n_cities(); ++n)
            for (int d = 0; d < data::kPollutants; ++d) {
                if (rng.chance(0.2)) {
                    s.clear(t, n, d);
                } else {
                    s.set(t, n, d, rng.uniform(-50.0, 300.0));
                }
            }
    const CitySeries original = s;
    const NormStats stats = data::compute_norm_stats(s);
    data::normalize(s, stats);
    data::denormalize(s, stats);
    for (size_t i = 0; i < s.values.size(); ++i) {
        CHECK(s.mask[i] == original.mask[i]);
        if (s.mask[i]) CHECK(std::abs(s.values[i] - original.values[i]) <= 1e-9);
    }

    const num::DenseMatrix slice = original.slice(1);
    const num::DenseMatrix back = data::denormalize_slice(data::normalize_slice(slice, stats), stats);
    CHECK(num::max_abs_diff(slice, back) <= 1e-9);
}

TEST_CASE("slice normalization rejects shape mismatches") {
    CitySeries s = two_city_series();
    const NormStats stats = data::compute_norm_stats(s);
    CHECK_THROWS_AS(data::normalize_slice(num::DenseMatrix(3, 6), stats), ShapeError);
}

TEST_CASE("station csv round trip") {
    StationTable t;
    t.stations = {{"s1", "beijing", 39.875, 116.25}, {"s2", "beijing", 40.0, 116.5},
                  {"s3", "tianjin", 39.125, 117.125}};
    t.times = {parse_iso_hour("2024-02-28T22:00:00"), parse_iso_hour("2024-02-28T23:00:00"),
               parse_iso_hour("2024-02-29T00:00:00")};
    t.allocate();
    Rng rng(8);
    for (int ti = 0; ti < t.n_times(); ++ti)
        for (int si = 0; si < t.n_stations(); ++si)
            for (int d = 0; d < data::kPollutants; ++d)
                if (!rng.chance(0.25))
                    t.set(ti, si, d, std::round(rng.uniform(0.0, 500.0) * 1e6) / 1e6);

    const auto path = (scratch_dir() / "stations.csv").string();
    data::write_station_csv(path, t);
    const StationTable back = data::read_station_csv(path);

    REQUIRE(back.n_stations() == 3);
    REQUIRE(back.n_times() == 3);
    CHECK(back.times == t.times);
    for (int si = 0; si < 3; ++si) {
        CHECK(back.stations[static_cast<size_t>(si)].id == t.stations[static_cast<size_t>(si)].id);
        CHECK(back.stations[static_cast<size_t>(si)].city_id ==
              t.stations[static_cast<size_t>(si)].city_id);
        CHECK(back.stations[static_cast<size_t>(si)].lat == t.stations[static_cast<size_t>(si)].lat);
        CHECK(back.stations[static_cast<size_t>(si)].lon == t.stations[static_cast<size_t>(si)].lon);
    }
    CHECK(back.mask == t.mask);
    for (size_t i = 0; i < t.values.size(); ++i)
        if (t.mask[i]) CHECK(back.values[i] == t.values[i]);
}

TEST_CASE("city csv and metadata round trip") {
    CitySeries s = two_city_series();
    s.clear(2, 1, 4);
    QcAudit audit;
    audit.stations_total = 9;
    audit.timesteps_total = s.n_times();
    audit.city_counts = {{4, 1}, {3, 1}};
    audit.removed.push_back({"s9", "beijing", {0.6, 0.1, 0.0, 0.0, 0.2, 0.9}});
    audit.excluded_cities.push_back("ghost");
    audit.fills = {5, 0, 1, 0, 0, 2};
    audit.dropped_timesteps = {1, 0, 0, 0, 0, 0};
    audit.idw_fallbacks = {0, 0, 3, 0, 0, 0};
    for (auto& vg : audit.variograms) {
        vg.sill = 1.25;
        vg.range_km = 180.5;
    }

    const auto csv = (scratch_dir() / "cities.csv").string();
    const auto meta = (scratch_dir() / "cities.meta").string();
    data::write_city_csv(csv, s);
    data::write_city_meta(meta, s, audit);
    const CitySeries back = data::read_city_series(csv, meta);

    REQUIRE(back.n_cities() == 2);
    CHECK(back.cities[0].id == "beijing");
    CHECK(back.cities[0].lat == 39.9042);
    CHECK(back.cities[1].lon == 117.3616);
    CHECK(back.times == s.times);
    CHECK(back.mask == s.mask);
    for (size_t i = 0; i < s.values.size(); ++i)
        if (s.mask[i]) CHECK(back.values[i] == s.values[i]);
}

TEST_CASE("norm stats file round trip") {
    CitySeries s = two_city_series();
    for (int t = 0; t < s.n_times(); ++t) s.set(t, 1, 5, 3.0);  // degenerate column
    const NormStats stats = data::compute_norm_stats(s);
    const auto path = (scratch_dir() / "norm_stats.txt").string();
    data::write_norm_stats(path, stats);
    const NormStats back = data::read_norm_stats(path);

    CHECK(back.city_ids == stats.city_ids);
    CHECK(back.degenerate == stats.degenerate);
    CHECK(num::max_abs_diff(back.mean, stats.mean) == 0.0);
    CHECK(num::max_abs_diff(back.stddev, stats.stddev) == 0.0);
    CHECK(back.is_degenerate(1, 5));
    CHECK_FALSE(back.is_degenerate(0, 0));
}

TEST_CASE("malformed csv reports the line number") {
    const auto dir = scratch_dir();

    const auto bad_cols = (dir / "bad_cols.csv").string();
    write_text_file(bad_cols,
                    "time,station_id,city_id,lat,lon,pm25,pm10,so2,no2,co,o3\n"
                    "2024-01-01T00:00:00,s1,beijing,39.9,116.4,1,2,3,4,5,6\n"
                    "2024-01-01T01:00:00,s1,beijing,39.9,116.4,1,2,3\n");
    try {
        data::read_station_csv(bad_cols);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("(line 3)") != std::string::npos);
    }

    const auto bad_value = (dir / "bad_value.csv").string();
    write_text_file(bad_value,
                    "time,station_id,city_id,lat,lon,pm25,pm10,so2,no2,co,o3\n"
                    "2024-01-01T00:00:00,s1,beijing,39.9,116.4,1,2,x,4,5,6\n");
    CHECK_THROWS_AS(data::read_station_csv(bad_value), ParseError);

    const auto bad_header = (dir / "bad_header.csv").string();
    write_text_file(bad_header, "time,who,what\n");
    try {
        data::read_station_csv(bad_header);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("(line 1)") != std::string::npos);
    }

    const auto bad_time = (dir / "bad_time.csv").string();
    write_text_file(bad_time,
                    "time,station_id,city_id,lat,lon,pm25,pm10,so2,no2,co,o3\n"
                    "2024-13-01T00:00:00,s1,beijing,39.9,116.4,1,2,3,4,5,6\n");
    CHECK_THROWS_AS(data::read_station_csv(bad_time), ParseError);

    CHECK_THROWS_AS(data::read_station_csv((dir / "does_not_exist.csv").string()),
                    MissingArtifactError);
}

TEST_CASE("station metadata must be consistent across rows") {
    const auto path = (scratch_dir() / "inconsistent.csv").string();
    write_text_file(path,
                    "time,station_id,city_id,lat,lon,pm25,pm10,so2,no2,co,o3\n"
                    "2024-01-01T00:00:00,s1,beijing,39.9,116.4,1,2,3,4,5,6\n"
                    "2024-01-01T01:00:00,s1,tianjin,39.9,116.4,1,2,3,4,5,6\n");
    CHECK_THROWS_AS(data::read_station_csv(path), ParseError);
}
