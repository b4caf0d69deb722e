#include "doctest.h"

#include <vector>

#include "mvar/qc.hpp"
#include "mvar/util.hpp"

using namespace mvar;
using data::CitySeries;
using data::QcAudit;
using data::QcOptions;
using data::QcResult;
using data::StationInfo;
using data::StationTable;
using data::Variogram;

namespace {

StationTable make_table(std::vector<StationInfo> stations, int n_times) {
    StationTable t;
    t.stations = std::move(stations);
    for (int i = 0; i < n_times; ++i) t.times.push_back(480000 + i);
    t.allocate();
    return t;
}

void fill_all(StationTable& t, double base) {
    for (int ti = 0; ti < t.n_times(); ++ti)
        for (int s = 0; s < t.n_stations(); ++s)
            for (int d = 0; d < data::kPollutants; ++d)
                t.set(ti, s, d, base + ti + 3.0 * s + 0.5 * d);
}

Variogram fixed_variogram() {
    Variogram vg;
    vg.sill = 1.0;
    vg.range_km = 200.0;
    vg.nugget = 0.0;
    return vg;
}

}  // namespace

TEST_CASE("station filter removes above half missing and keeps the boundary") {
    StationTable t = make_table({{"heavy", "a", 30.0, 116.0},
                                 {"full", "a", 30.1, 116.1},
                                 {"boundary", "a", 30.2, 116.2}},
                                10);
    fill_all(t, 10.0);
    for (int ti = 0; ti < 6; ++ti) t.mask[t.idx(ti, 0, 0)] = 0;  // 60% missing pm25
    for (int ti = 0; ti < 5; ++ti) t.mask[t.idx(ti, 2, 0)] = 0;  // exactly 50%

    QcAudit audit;
    const StationTable kept = data::qc_station_filter(t, QcOptions{}, audit);
    REQUIRE(kept.n_stations() == 2);
    CHECK(kept.stations[0].id == "full");
    CHECK(kept.stations[1].id == "boundary");
    REQUIRE(audit.removed.size() == 1);
    CHECK(audit.removed[0].station_id == "heavy");
    CHECK(audit.removed[0].missing_frac[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(audit.stations_total == 3);
}

TEST_CASE("station filter rejects empty input") {
    QcAudit audit;
    CHECK_THROWS_AS(data::qc_station_filter(StationTable{}, QcOptions{}, audit),
                    EmptyResultError);

    StationTable t = make_table({{"gone", "a", 30.0, 116.0}}, 4);
    // all values missing
    CHECK_THROWS_AS(data::qc_station_filter(t, QcOptions{}, audit), EmptyResultError);
}

TEST_CASE("one missing station in four drops the timestep") {
    StationTable t = make_table({{"s1", "a", 30.0, 116.0},
                                 {"s2", "a", 30.2, 116.2},
                                 {"s3", "b", 30.9, 116.9},
                                 {"s4", "b", 31.1, 117.1}},
                                3);
    fill_all(t, 50.0);
    t.mask[t.idx(1, 2, 4)] = 0;  // 25% missing for co at t=1

    QcOptions opt;
    opt.variogram_override = fixed_variogram();
    const QcResult r = data::run_qc_pipeline(t, opt);

    CHECK(r.audit.dropped_timesteps[4] == 1);
    CHECK(r.audit.fills[4] == 0);
    for (int n = 0; n < r.series.n_cities(); ++n) {
        CHECK_FALSE(r.series.valid(1, n, 4));
        CHECK(r.series.valid(0, n, 4));
        CHECK(r.series.valid(1, n, 3));
    }
}

TEST_CASE("complete timesteps pass through unchanged") {
    StationTable t = make_table({{"s1", "a", 30.0, 116.0}, {"s2", "a", 30.2, 116.2}}, 4);
    fill_all(t, 5.0);
    QcOptions opt;
    opt.variogram_override = fixed_variogram();
    const QcResult r = data::run_qc_pipeline(t, opt);
    CHECK(r.audit.fills == std::array<int64_t, 6>{});
    CHECK(r.audit.dropped_timesteps == std::array<int64_t, 6>{});
    for (int ti = 0; ti < 4; ++ti)
        for (int d = 0; d < data::kPollutants; ++d)
            CHECK(r.series.value(ti, 0, d) == std::max(5.0 + ti + 0.5 * d, 5.0 + ti + 3.0 + 0.5 * d));
}

TEST_CASE("fill at a location coincident with a present station is exact") {
    StationTable t = make_table({{"anchor", "a", 30.0, 116.0},
                                 {"twin", "a", 30.0, 116.0},
                                 {"s3", "a", 30.3, 116.3},
                                 {"s4", "b", 30.9, 116.9},
                                 {"s5", "b", 31.1, 117.1},
                                 {"s6", "b", 31.0, 116.5}},
                                2);
    fill_all(t, 80.0);
    t.mask[t.idx(1, 1, 2)] = 0;  // twin missing so2 at t=1; 1/6 <= 20%

    StationTable working = t;
    QcAudit audit;
    audit.stations_total = t.n_stations();
    std::array<Variogram, data::kPollutants> vgs;
    vgs.fill(fixed_variogram());
    std::vector<uint8_t> dropped;
    data::qc_timestep_fill(working, vgs, QcOptions{}, audit, dropped);

    CHECK(audit.fills[2] == 1);
    CHECK(working.value(1, 1, 2) == t.value(1, 0, 2));  // anchor's observation, exactly
}

TEST_CASE("equidistant pair fills the midpoint with the average") {
    StationTable t = make_table({{"left", "a", 30.0, 115.5},
                                 {"mid", "a", 30.0, 116.0},
                                 {"right", "a", 30.0, 116.5}},
                                1);
    for (int d = 0; d < data::kPollutants; ++d) {
        t.set(0, 0, d, 10.0);
        t.set(0, 2, d, 20.0);
    }

    SUBCASE("kriging path") {
        QcOptions opt;
        opt.timestep_drop_threshold = 0.5;
        opt.min_krige_stations = 2;
        opt.variogram_override = fixed_variogram();
        StationTable working = t;
        QcAudit audit;
        std::array<Variogram, data::kPollutants> vgs;
        vgs.fill(fixed_variogram());
        std::vector<uint8_t> dropped;
        data::qc_timestep_fill(working, vgs, opt, audit, dropped);
        CHECK(audit.fills[0] == 1);
        CHECK(audit.idw_fallbacks[0] == 0);
        CHECK(working.value(0, 1, 0) == doctest::Approx(15.0).epsilon(1e-10));
    }

    SUBCASE("idw fallback below the station minimum") {
        QcOptions opt;
        opt.timestep_drop_threshold = 0.5;
        StationTable working = t;
        QcAudit audit;
        std::array<Variogram, data::kPollutants> vgs;
        vgs.fill(fixed_variogram());
        std::vector<uint8_t> dropped;
        data::qc_timestep_fill(working, vgs, opt, audit, dropped);
        CHECK(audit.fills[0] == 0);
        CHECK(audit.idw_fallbacks[0] == 1);
        CHECK(working.value(0, 1, 0) == doctest::Approx(15.0).epsilon(1e-10));
    }
}

TEST_CASE("retained timesteps are complete after filling") {
    StationTable t = make_table({{"s1", "a", 30.0, 116.0},
                                 {"s2", "a", 30.2, 116.2},
                                 {"s3", "a", 29.8, 115.8},
                                 {"s4", "b", 30.9, 116.9},
                                 {"s5", "b", 31.1, 117.1}},
                                40);
    fill_all(t, 30.0);
    Rng rng(17);
    for (size_t i = 0; i < t.mask.size(); ++i)
        if (rng.chance(0.12)) t.mask[i] = 0;

    StationTable working = t;
    QcAudit audit;
    std::array<Variogram, data::kPollutants> vgs;
    vgs.fill(fixed_variogram());
    std::vector<uint8_t> dropped;
    data::qc_timestep_fill(working, vgs, QcOptions{}, audit, dropped);

    for (int ti = 0; ti < working.n_times(); ++ti)
        for (int d = 0; d < data::kPollutants; ++d) {
            if (dropped[static_cast<size_t>(ti) * data::kPollutants + static_cast<size_t>(d)])
                continue;
            for (int s = 0; s < working.n_stations(); ++s) CHECK(working.valid(ti, s, d));
        }
    CHECK(audit.fills[0] + audit.idw_fallbacks[0] > 0);
}

TEST_CASE("city aggregation takes the per-pollutant maximum") {
    StationTable t = make_table({{"s1", "multi", 30.0, 116.0},
                                 {"s2", "multi", 30.1, 116.1},
                                 {"s3", "multi", 30.2, 116.2},
                                 {"solo", "single", 31.0, 117.0}},
                                1);
    for (int d = 0; d < data::kPollutants; ++d) {
        t.set(0, 0, d, 12.0);
        t.set(0, 1, d, 30.0);
        t.set(0, 2, d, 7.0);
        t.set(0, 3, d, 44.5);
    }
    QcAudit audit;
    std::vector<uint8_t> dropped(data::kPollutants, 0);
    const CitySeries cs = data::city_aggregate(t, dropped, audit);
    REQUIRE(cs.n_cities() == 2);
    CHECK(cs.cities[0].id == "multi");
    CHECK(cs.cities[1].id == "single");
    CHECK(cs.value(0, 0, 0) == 30.0);
    CHECK(cs.value(0, 1, 0) == 44.5);
    // City coordinates are the mean of their stations'.
    CHECK(cs.cities[0].lat == doctest::Approx(30.1).epsilon(1e-12));
}

TEST_CASE("city maximum includes interpolated values") {
    StationTable t = make_table({{"a_obs", "a", 30.5, 116.5},
                                 {"a_gap", "a", 30.0, 116.0},
                                 {"far", "a", 29.0, 115.0},
                                 {"b1", "b", 30.01, 116.0},
                                 {"b2", "b", 29.99, 116.0}},
                                1);
    for (int d = 0; d < data::kPollutants; ++d) {
        t.set(0, 0, d, 35.0);
        t.set(0, 2, d, 20.0);
        t.set(0, 3, d, 40.0);
        t.set(0, 4, d, 40.0);
    }
    // a_gap missing everywhere: 1/5 = 20% <= threshold, so it gets filled.
    StationTable working = t;
    QcAudit audit;
    std::array<Variogram, data::kPollutants> vgs;
    vgs.fill(fixed_variogram());
    std::vector<uint8_t> dropped;
    data::qc_timestep_fill(working, vgs, QcOptions{}, audit, dropped);
    const double fill = working.value(0, 1, 0);
    CHECK(fill > 35.0);

    const CitySeries cs = data::city_aggregate(working, dropped, audit);
    REQUIRE(cs.cities[0].id == "a");
    CHECK(cs.value(0, 0, 0) == fill);
}

TEST_CASE("cities with no retained stations are excluded and reported") {
    StationTable t = make_table({{"good", "alive", 30.0, 116.0},
                                 {"also", "alive", 30.2, 116.2},
                                 {"dead", "ghost", 31.0, 117.0}},
                                10);
    fill_all(t, 10.0);
    for (int ti = 0; ti < 7; ++ti) t.mask[t.idx(ti, 2, 1)] = 0;  // 70% missing pm10

    QcOptions opt;
    opt.variogram_override = fixed_variogram();
    const QcResult r = data::run_qc_pipeline(t, opt);
    REQUIRE(r.series.n_cities() == 1);
    CHECK(r.series.cities[0].id == "alive");
    REQUIRE(r.audit.excluded_cities.size() == 1);
    CHECK(r.audit.excluded_cities[0] == "ghost");
    CHECK(r.audit.city_counts[0].retained == 2);
}

TEST_CASE("qc pipeline is idempotent on its own output") {
    StationTable t = make_table({{"s1", "a", 30.0, 116.0},
                                 {"s2", "a", 30.2, 116.2},
                                 {"s3", "a", 29.8, 115.9},
                                 {"s4", "b", 30.9, 116.9},
                                 {"s5", "b", 31.1, 117.1},
                                 {"s6", "b", 31.0, 116.6}},
                                160);
    Rng rng(23);
    for (int ti = 0; ti < t.n_times(); ++ti)
        for (int s = 0; s < t.n_stations(); ++s)
            for (int d = 0; d < data::kPollutants; ++d)
                if (!rng.chance(0.05)) t.set(ti, s, d, rng.uniform(5.0, 150.0));
    // a few heavily missing rows to exercise the drop path
    for (int ti = 40; ti < 44; ++ti)
        for (int s = 0; s < 4; ++s) t.mask[t.idx(ti, s, 0)] = 0;

    QcOptions opt;
    opt.variogram_override = fixed_variogram();
    const QcResult first = data::run_qc_pipeline(t, opt);

    StationTable echo;
    for (const auto& c : first.series.cities) echo.stations.push_back({c.id, c.id, c.lat, c.lon});
    echo.times = first.series.times;
    echo.values = first.series.values;
    echo.mask = first.series.mask;

    const QcResult second = data::run_qc_pipeline(echo, opt);
    REQUIRE(second.series.n_cities() == first.series.n_cities());
    CHECK(second.series.times == first.series.times);
    CHECK(second.series.mask == first.series.mask);
    CHECK(second.series.values == first.series.values);
    CHECK(second.audit.fills == std::array<int64_t, 6>{});
    CHECK(second.audit.idw_fallbacks == std::array<int64_t, 6>{});
}
