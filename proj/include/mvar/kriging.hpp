#pragma once

#include <vector>

#include "mvar/util.hpp"

namespace mvar::data {

/// Exponential semivariogram gamma(h) = sill * (1 - exp(-h / range)) plus a
/// nugget that applies only at h > 0.
struct Variogram {
    double sill = 1.0;
    double range_km = 200.0;
    double nugget = 0.0;
    bool degenerate = false;  // fit fell back to defaults

    double operator()(double h_km) const;
    void validate() const;
};

struct StationSample {
    double lat = 0.0;
    double lon = 0.0;
    double value = 0.0;
};

struct KrigeResult {
    double value = 0.0;
    double variance = 0.0;
    std::vector<double> weights;
    bool idw_fallback = false;
};

/// Ordinary Kriging at (lat, lon) from >= 2 stations: solves the
/// (n+1) x (n+1) semivariance system with a Lagrange multiplier enforcing
/// unit weight sum. Duplicate station locations make the system singular and
/// raise DegenerateGeometryError. With nugget 0 a station coincident with the
/// target short-circuits to that observation (exact interpolation).
KrigeResult krige_estimate(const std::vector<StationSample>& stations, double lat, double lon,
                           const Variogram& vg);

/// Inverse-distance-squared estimate, used when too few stations are present
/// for a stable Kriging system. A coincident station returns its value.
KrigeResult idw_estimate(const std::vector<StationSample>& stations, double lat, double lon);

/// One spatial snapshot: values at fixed station coordinates.
struct Snapshot {
    std::vector<double> values;  // aligned with the coords passed alongside
};

struct VariogramFitOptions {
    int bins = 10;
    size_t min_pairs = 50;
    double default_range_km = 200.0;
};

/// Fit sill and range of an exponential semivariogram from empirical
/// semivariances pooled over snapshots, using equal-width distance bins up to
/// half the maximum pairwise distance and a least-squares search over range
/// with the sill solved in closed form. Too few pairs, or a spatially
/// constant field, falls back to defaults (sill = sample variance clamped
/// away from zero, range = 200 km, nugget = 0) and sets `degenerate`.
Variogram fit_variogram(const std::vector<std::pair<double, double>>& coords,
                        const std::vector<Snapshot>& snapshots,
                        const VariogramFitOptions& opt = {});

}  // namespace mvar::data
