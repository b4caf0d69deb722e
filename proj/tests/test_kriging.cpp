#include "doctest.h"

#include <cmath>
#include <vector>

#include "mvar/geo.hpp"
#include "mvar/kriging.hpp"
#include "mvar/util.hpp"

using namespace mvar;
using data::KrigeResult;
using data::Snapshot;
using data::StationSample;
using data::Variogram;

namespace {

/// Independent dense solve of the ordinary Kriging system, written against
/// the textbook formulation rather than the library's solver.
std::vector<double> oracle_solve(std::vector<std::vector<double>> a, std::vector<double> b) {
    const size_t n = a.size();
    for (size_t col = 0; col < n; ++col) {
        size_t pivot = col;
        for (size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        std::swap(a[col], a[pivot]);
        std::swap(b[col], b[pivot]);
        REQUIRE(std::abs(a[col][col]) > 1e-13);
        for (size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a[r][col] / a[col][col];
            for (size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (size_t i = 0; i < n; ++i) x[i] = b[i] / a[i][i];
    return x;
}

double oracle_krige(const std::vector<StationSample>& st, double lat, double lon,
                    const Variogram& vg, std::vector<double>* weights_out = nullptr) {
    const size_t n = st.size();
    std::vector<std::vector<double>> a(n + 1, std::vector<double>(n + 1, 0.0));
    std::vector<double> b(n + 1, 0.0);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < n; ++j)
            a[i][j] = vg(geo::haversine_km(st[i].lat, st[i].lon, st[j].lat, st[j].lon));
        a[i][n] = 1.0;
        a[n][i] = 1.0;
        b[i] = vg(geo::haversine_km(st[i].lat, st[i].lon, lat, lon));
    }
    b[n] = 1.0;
    const std::vector<double> x = oracle_solve(a, b);
    double est = 0.0;
    for (size_t i = 0; i < n; ++i) est += x[i] * st[i].value;
    if (weights_out) weights_out->assign(x.begin(), x.begin() + static_cast<long>(n));
    return est;
}

}  // namespace

TEST_CASE("variogram evaluates the exponential model") {
    Variogram vg;
    vg.sill = 2.0;
    vg.range_km = 100.0;
    vg.nugget = 0.0;
    CHECK(vg(0.0) == 0.0);
    CHECK(vg(100.0) == doctest::Approx(2.0 * (1.0 - std::exp(-1.0))).epsilon(1e-12));
    CHECK(vg(1e9) == doctest::Approx(2.0).epsilon(1e-9));

    vg.nugget = 0.5;
    CHECK(vg(0.0) == 0.0);
    CHECK(vg(1e-6) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(vg(100.0) == doctest::Approx(0.5 + 2.0 * (1.0 - std::exp(-1.0))).epsilon(1e-12));
}

TEST_CASE("variogram validation rejects bad parameters") {
    Variogram vg;
    vg.sill = 0.0;
    CHECK_THROWS_AS(vg.validate(), ConfigError);
    vg.sill = 1.0;
    vg.range_km = -3.0;
    CHECK_THROWS_AS(vg.validate(), ConfigError);
    vg.range_km = 100.0;
    vg.nugget = -0.1;
    CHECK_THROWS_AS(vg.validate(), ConfigError);
    vg.nugget = 0.0;
    CHECK_NOTHROW(vg.validate());
}

TEST_CASE("kriging reproduces the observation at a station with zero nugget") {
    std::vector<StationSample> st = {
        {30.0, 116.0, 42.0}, {30.5, 116.2, 10.0}, {29.8, 115.7, 77.0}, {30.2, 116.6, 5.0}};
    Variogram vg;
    const KrigeResult r = data::krige_estimate(st, 29.8, 115.7, vg);
    CHECK(r.value == 77.0);
    CHECK(r.variance == 0.0);
    CHECK(r.weights[2] == 1.0);
    CHECK(r.weights[0] == 0.0);
}

TEST_CASE("two equidistant stations average") {
    std::vector<StationSample> st = {{30.0, 115.5, 10.0}, {30.0, 116.5, 20.0}};
    Variogram vg;
    const KrigeResult r = data::krige_estimate(st, 30.0, 116.0, vg);
    CHECK(r.value == doctest::Approx(15.0).epsilon(1e-10));
    CHECK(r.weights[0] + r.weights[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.weights[0] == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("kriging matches a dense-solve oracle over random configurations") {
    Rng rng(4242);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 3 + static_cast<int>(rng.uniform01() * 6.0);  // 3..8
        std::vector<StationSample> st;
        for (int i = 0; i < n; ++i)
            st.push_back({rng.uniform(29.0, 31.0), rng.uniform(115.0, 117.0),
                          rng.uniform(0.0, 100.0)});
        const double lat = rng.uniform(29.0, 31.0);
        const double lon = rng.uniform(115.0, 117.0);
        Variogram vg;
        vg.sill = rng.uniform(0.5, 3.0);
        vg.range_km = rng.uniform(50.0, 400.0);
        vg.nugget = (trial % 3 == 0) ? rng.uniform(0.05, 0.3) : 0.0;

        const KrigeResult got = data::krige_estimate(st, lat, lon, vg);
        std::vector<double> want_w;
        const double want = oracle_krige(st, lat, lon, vg, &want_w);

        CHECK(std::abs(got.value - want) <= 1e-8);
        double wsum = 0.0;
        for (int i = 0; i < n; ++i) {
            CHECK(std::abs(got.weights[static_cast<size_t>(i)] -
                           want_w[static_cast<size_t>(i)]) <= 1e-8);
            wsum += got.weights[static_cast<size_t>(i)];
        }
        CHECK(std::abs(wsum - 1.0) <= 1e-10);
    }
}

TEST_CASE("duplicate station locations raise degenerate geometry") {
    std::vector<StationSample> st = {
        {30.0, 116.0, 1.0}, {30.5, 116.2, 2.0}, {30.0, 116.0, 3.0}, {29.5, 115.5, 4.0}};
    Variogram vg;
    CHECK_THROWS_AS(data::krige_estimate(st, 30.1, 116.1, vg), DegenerateGeometryError);
    CHECK_THROWS_AS(data::krige_estimate({{30.0, 116.0, 1.0}}, 30.1, 116.1, vg),
                    DegenerateGeometryError);
}

TEST_CASE("idw weights by inverse squared distance") {
    std::vector<StationSample> st = {
        {30.0, 116.0, 10.0}, {30.4, 116.3, 50.0}, {29.7, 115.6, 30.0}};
    const double lat = 30.1, lon = 116.1;
    double wsum = 0.0, want = 0.0;
    for (const StationSample& s : st) {
        const double d = geo::haversine_km(s.lat, s.lon, lat, lon);
        wsum += 1.0 / (d * d);
        want += s.value / (d * d);
    }
    want /= wsum;
    const KrigeResult r = data::idw_estimate(st, lat, lon);
    CHECK(r.idw_fallback);
    CHECK(r.value == doctest::Approx(want).epsilon(1e-12));

    const KrigeResult hit = data::idw_estimate(st, 30.4, 116.3);
    CHECK(hit.value == 50.0);
    CHECK_THROWS_AS(data::idw_estimate({}, 30.0, 116.0), DegenerateGeometryError);
}

TEST_CASE("variogram fit recovers a known range") {
    const double true_sill = 2.0, true_range = 100.0;
    std::vector<std::pair<double, double>> coords;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) coords.push_back({29.0 + 0.45 * i, 115.0 + 0.5 * j});
    const size_t n = coords.size();

    // Covariance C(h) = sill * exp(-h/range); draw correlated fields through
    // its Cholesky factor.
    std::vector<double> cov(n * n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) {
            const double h = geo::haversine_km(coords[i].first, coords[i].second,
                                               coords[j].first, coords[j].second);
            cov[i * n + j] = true_sill * std::exp(-h / true_range) + (i == j ? 1e-9 : 0.0);
        }
    std::vector<double> chol(n * n, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j <= i; ++j) {
            double s = cov[i * n + j];
            for (size_t k = 0; k < j; ++k) s -= chol[i * n + k] * chol[j * n + k];
            if (i == j) {
                REQUIRE(s > 0.0);
                chol[i * n + i] = std::sqrt(s);
            } else {
                chol[i * n + j] = s / chol[j * n + j];
            }
        }

    Rng rng(99);
    std::vector<Snapshot> snaps;
    for (int t = 0; t < 200; ++t) {
        std::vector<double> z(n);
        for (double& v : z) v = rng.normal();
        Snapshot s;
        s.values.resize(n, 0.0);
        for (size_t i = 0; i < n; ++i)
            for (size_t k = 0; k <= i; ++k) s.values[i] += chol[i * n + k] * z[k];
        snaps.push_back(std::move(s));
    }

    const Variogram fit = data::fit_variogram(coords, snaps);
    CHECK_FALSE(fit.degenerate);
    CHECK(fit.range_km > true_range * 0.7);
    CHECK(fit.range_km < true_range * 1.3);
    CHECK(fit.sill > true_sill * 0.5);
    CHECK(fit.sill < true_sill * 2.0);
    CHECK(fit.nugget == 0.0);
}

TEST_CASE("variogram fit falls back on degenerate inputs") {
    std::vector<std::pair<double, double>> coords;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) coords.push_back({29.0 + 0.45 * i, 115.0 + 0.5 * j});
    std::vector<Snapshot> flat(200, Snapshot{std::vector<double>(coords.size(), 5.0)});
    const Variogram constant = data::fit_variogram(coords, flat);
    CHECK(constant.degenerate);
    CHECK(constant.range_km == 200.0);
    CHECK(constant.nugget == 0.0);
    CHECK(constant.sill > 0.0);

    std::vector<std::pair<double, double>> three = {{29.0, 115.0}, {29.5, 115.5}, {30.0, 116.0}};
    std::vector<Snapshot> few(4, Snapshot{{1.0, 2.0, 3.0}});  // 3 pairs x 4 < 50
    const Variogram sparse = data::fit_variogram(three, few);
    CHECK(sparse.degenerate);
    CHECK(sparse.range_km == 200.0);
}
