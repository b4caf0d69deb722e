#include "mvar/kriging.hpp"

#include <algorithm>
#include <cmath>

#include "mvar/geo.hpp"

namespace mvar::data {

namespace {
constexpr double kCoincidentKm = 1e-9;

/// Solve A x = b in place by Gaussian elimination with partial pivoting.
std::vector<double> solve_linear(std::vector<std::vector<double>> a, std::vector<double> b) {
    const size_t n = b.size();
    for (size_t col = 0; col < n; ++col) {
        size_t pivot = col;
        for (size_t r = col + 1; r < n; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
        if (std::fabs(a[pivot][col]) < 1e-12)
            throw DegenerateGeometryError(
                "kriging system is singular (duplicate station locations?)");
        std::swap(a[col], a[pivot]);
        std::swap(b[col], b[pivot]);
        for (size_t r = col + 1; r < n; ++r) {
            const double f = a[r][col] / a[col][col];
            if (f == 0.0) continue;
            for (size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n, 0.0);
    for (size_t ri = n; ri-- > 0;) {
        double acc = b[ri];
        for (size_t c = ri + 1; c < n; ++c) acc -= a[ri][c] * x[c];
        x[ri] = acc / a[ri][ri];
    }
    return x;
}
}  // namespace

double Variogram::operator()(double h_km) const {
    if (h_km <= 0.0) return 0.0;
    return sill * (1.0 - std::exp(-h_km / range_km)) + nugget;
}

void Variogram::validate() const {
    if (!(sill > 0.0)) throw ConfigError("variogram sill must be positive");
    if (!(range_km > 0.0)) throw ConfigError("variogram range must be positive");
    if (nugget < 0.0) throw ConfigError("variogram nugget must be non-negative");
}

KrigeResult krige_estimate(const std::vector<StationSample>& stations, double lat, double lon,
                           const Variogram& vg) {
    const size_t n = stations.size();
    if (n < 2)
        throw DegenerateGeometryError("krige_estimate needs >= 2 stations, got " +
                                      std::to_string(n));
    vg.validate();

    if (vg.nugget == 0.0) {
        for (size_t i = 0; i < n; ++i) {
            if (geo::haversine_km(stations[i].lat, stations[i].lon, lat, lon) < kCoincidentKm) {
                KrigeResult r;
                r.value = stations[i].value;
                r.variance = 0.0;
                r.weights.assign(n, 0.0);
                r.weights[i] = 1.0;
                return r;
            }
        }
    }

    // [ Gamma  1 ] [w]   [gamma0]
    // [ 1^T    0 ] [m] = [  1   ]
    std::vector<std::vector<double>> a(n + 1, std::vector<double>(n + 1, 0.0));
    std::vector<double> b(n + 1, 0.0);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < n; ++j) {
            a[i][j] = vg(geo::haversine_km(stations[i].lat, stations[i].lon, stations[j].lat,
                                           stations[j].lon));
        }
        a[i][n] = 1.0;
        a[n][i] = 1.0;
        b[i] = vg(geo::haversine_km(stations[i].lat, stations[i].lon, lat, lon));
    }
    b[n] = 1.0;

    const std::vector<double> x = solve_linear(std::move(a), std::move(b));
    KrigeResult r;
    r.weights.assign(x.begin(), x.begin() + static_cast<long>(n));
    double est = 0.0, var = x[n];
    for (size_t i = 0; i < n; ++i) {
        est += r.weights[i] * stations[i].value;
        var += r.weights[i] * vg(geo::haversine_km(stations[i].lat, stations[i].lon, lat, lon));
    }
    r.value = est;
    r.variance = var;
    return r;
}

KrigeResult idw_estimate(const std::vector<StationSample>& stations, double lat, double lon) {
    if (stations.empty()) throw DegenerateGeometryError("idw_estimate with no stations");
    KrigeResult r;
    r.idw_fallback = true;
    r.weights.assign(stations.size(), 0.0);
    double wsum = 0.0;
    for (size_t i = 0; i < stations.size(); ++i) {
        const double h = geo::haversine_km(stations[i].lat, stations[i].lon, lat, lon);
        if (h < kCoincidentKm) {
            std::fill(r.weights.begin(), r.weights.end(), 0.0);
            r.weights[i] = 1.0;
            r.value = stations[i].value;
            return r;
        }
        r.weights[i] = 1.0 / (h * h);
        wsum += r.weights[i];
    }
    double est = 0.0;
    for (size_t i = 0; i < stations.size(); ++i) {
        r.weights[i] /= wsum;
        est += r.weights[i] * stations[i].value;
    }
    r.value = est;
    return r;
}

Variogram fit_variogram(const std::vector<std::pair<double, double>>& coords,
                        const std::vector<Snapshot>& snapshots,
                        const VariogramFitOptions& opt) {
    const size_t n = coords.size();

    double value_sum = 0.0, value_sq = 0.0;
    size_t value_count = 0;
    for (const Snapshot& s : snapshots) {
        if (s.values.size() != n)
            throw ShapeError("fit_variogram: snapshot size " + std::to_string(s.values.size()) +
                             " vs " + std::to_string(n) + " stations");
        for (double v : s.values) {
            value_sum += v;
            value_sq += v * v;
            ++value_count;
        }
    }

    Variogram fallback;
    fallback.degenerate = true;
    fallback.range_km = opt.default_range_km;
    fallback.nugget = 0.0;
    if (value_count > 0) {
        const double mean = value_sum / static_cast<double>(value_count);
        const double var = value_sq / static_cast<double>(value_count) - mean * mean;
        fallback.sill = std::max(var, 1e-6);
    }

    const size_t pair_count = n < 2 ? 0 : n * (n - 1) / 2 * snapshots.size();
    if (pair_count < opt.min_pairs) return fallback;

    double max_dist = 0.0;
    std::vector<double> dist(n * n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            const double h = geo::haversine_km(coords[i].first, coords[i].second,
                                               coords[j].first, coords[j].second);
            dist[i * n + j] = h;
            max_dist = std::max(max_dist, h);
        }
    }
    if (max_dist <= 0.0) return fallback;

    const double cutoff = max_dist * 0.5;
    const double width = cutoff / opt.bins;
    std::vector<double> bin_gamma(static_cast<size_t>(opt.bins), 0.0);
    std::vector<size_t> bin_n(static_cast<size_t>(opt.bins), 0);
    for (const Snapshot& s : snapshots) {
        for (size_t i = 0; i < n; ++i) {
            for (size_t j = i + 1; j < n; ++j) {
                const double h = dist[i * n + j];
                if (h <= 0.0 || h > cutoff) continue;
                int bi = static_cast<int>(h / width);
                if (bi >= opt.bins) bi = opt.bins - 1;
                const double d = s.values[i] - s.values[j];
                bin_gamma[static_cast<size_t>(bi)] += 0.5 * d * d;
                ++bin_n[static_cast<size_t>(bi)];
            }
        }
    }

    std::vector<double> hs, gs;
    for (int bi = 0; bi < opt.bins; ++bi) {
        if (bin_n[static_cast<size_t>(bi)] == 0) continue;
        hs.push_back((bi + 0.5) * width);
        gs.push_back(bin_gamma[static_cast<size_t>(bi)] /
                     static_cast<double>(bin_n[static_cast<size_t>(bi)]));
    }
    if (hs.size() < 3) return fallback;

    // Search the range on a log grid; the optimal sill for a fixed range is
    // the closed-form least-squares ratio.
    double best_sse = std::numeric_limits<double>::infinity();
    double best_range = opt.default_range_km, best_sill = fallback.sill;
    const double lo = std::max(width * 0.25, 1.0), hi = max_dist * 3.0;
    const int steps = 160;
    for (int k = 0; k <= steps; ++k) {
        const double range = lo * std::pow(hi / lo, static_cast<double>(k) / steps);
        double num = 0.0, den = 0.0;
        for (size_t i = 0; i < hs.size(); ++i) {
            const double g = 1.0 - std::exp(-hs[i] / range);
            num += gs[i] * g;
            den += g * g;
        }
        if (den <= 0.0) continue;
        const double sill = num / den;
        if (!(sill > 0.0)) continue;
        double sse = 0.0;
        for (size_t i = 0; i < hs.size(); ++i) {
            const double e = gs[i] - sill * (1.0 - std::exp(-hs[i] / range));
            sse += e * e;
        }
        if (sse < best_sse) {
            best_sse = sse;
            best_range = range;
            best_sill = sill;
        }
    }

    if (!std::isfinite(best_sse) || best_sill < 1e-9) return fallback;
    Variogram out;
    out.sill = best_sill;
    out.range_km = best_range;
    out.nugget = 0.0;
    out.degenerate = false;
    return out;
}

}  // namespace mvar::data
