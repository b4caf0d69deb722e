#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mvar/dense.hpp"
#include "mvar/kriging.hpp"

namespace mvar::data {

constexpr int kPollutants = 6;

/// Canonical pollutant column order used by every file format and tensor
/// layout in the toolkit.
const std::array<std::string, kPollutants>& pollutant_names();
int pollutant_index(const std::string& name);

struct CityInfo {
    std::string id;
    double lat = 0.0;
    double lon = 0.0;
};

/// Hourly city-level concentrations with a validity mask. Values are stored
/// [time][city][pollutant]; times are strictly increasing epoch hours.
struct CitySeries {
    std::vector<CityInfo> cities;
    std::vector<int64_t> times;
    std::vector<double> values;
    std::vector<uint8_t> mask;

    int n_cities() const { return static_cast<int>(cities.size()); }
    int n_times() const { return static_cast<int>(times.size()); }

    size_t idx(int t, int n, int d) const {
        return (static_cast<size_t>(t) * cities.size() + static_cast<size_t>(n)) * kPollutants +
               static_cast<size_t>(d);
    }
    double value(int t, int n, int d) const { return values[idx(t, n, d)]; }
    bool valid(int t, int n, int d) const { return mask[idx(t, n, d)] != 0; }
    void set(int t, int n, int d, double v) {
        values[idx(t, n, d)] = v;
        mask[idx(t, n, d)] = 1;
    }
    void clear(int t, int n, int d) {
        values[idx(t, n, d)] = 0.0;
        mask[idx(t, n, d)] = 0;
    }

    void allocate() {
        values.assign(times.size() * cities.size() * kPollutants, 0.0);
        mask.assign(values.size(), 0);
    }

    /// Index of an epoch hour in times, or -1.
    int find_time(int64_t hour) const;
    /// True when every city and pollutant is valid at time index t.
    bool slice_complete(int t) const;
    /// N x D value matrix at time index t (mask ignored; caller checks).
    num::DenseMatrix slice(int t) const;
};

struct StationInfo {
    std::string id;
    std::string city_id;
    double lat = 0.0;
    double lon = 0.0;
};

/// Raw station observations on the shared hourly time axis.
struct StationTable {
    std::vector<StationInfo> stations;
    std::vector<int64_t> times;
    std::vector<double> values;  // [time][station][pollutant]
    std::vector<uint8_t> mask;

    int n_stations() const { return static_cast<int>(stations.size()); }
    int n_times() const { return static_cast<int>(times.size()); }
    size_t idx(int t, int s, int d) const {
        return (static_cast<size_t>(t) * stations.size() + static_cast<size_t>(s)) * kPollutants +
               static_cast<size_t>(d);
    }
    double value(int t, int s, int d) const { return values[idx(t, s, d)]; }
    bool valid(int t, int s, int d) const { return mask[idx(t, s, d)] != 0; }
    void set(int t, int s, int d, double v) {
        values[idx(t, s, d)] = v;
        mask[idx(t, s, d)] = 1;
    }
    void allocate() {
        values.assign(times.size() * stations.size() * kPollutants, 0.0);
        mask.assign(values.size(), 0);
    }
};

// ---- per-city normalization ----------------------------------------------

/// Per-city per-pollutant population mean and standard deviation. A standard
/// deviation below 1e-8 is clamped to 1 and flagged degenerate.
struct NormStats {
    num::DenseMatrix mean;    // N x D
    num::DenseMatrix stddev;  // N x D
    std::vector<uint8_t> degenerate;
    std::vector<std::string> city_ids;

    bool is_degenerate(int n, int d) const {
        return degenerate[static_cast<size_t>(n) * kPollutants + static_cast<size_t>(d)] != 0;
    }
};

NormStats compute_norm_stats(const CitySeries& train);
/// (x - mean) / std over valid entries, in place.
void normalize(CitySeries& series, const NormStats& stats);
void denormalize(CitySeries& series, const NormStats& stats);
num::DenseMatrix normalize_slice(const num::DenseMatrix& slice, const NormStats& stats);
num::DenseMatrix denormalize_slice(const num::DenseMatrix& slice, const NormStats& stats);

// ---- QC bookkeeping shared between the pipeline and the sidecar file ------

struct QcAudit {
    struct RemovedStation {
        std::string station_id;
        std::string city_id;
        std::array<double, kPollutants> missing_frac{};
    };
    struct CityCount {
        int retained = 0;
        int removed = 0;
    };
    int stations_total = 0;
    int timesteps_total = 0;
    std::vector<RemovedStation> removed;
    std::vector<std::string> excluded_cities;
    std::vector<CityCount> city_counts;  // aligned with the output cities
    std::array<int64_t, kPollutants> dropped_timesteps{};
    std::array<int64_t, kPollutants> fills{};
    std::array<int64_t, kPollutants> idw_fallbacks{};
    std::array<Variogram, kPollutants> variograms{};
};

// ---- file I/O -------------------------------------------------------------
// Station CSV: time,station_id,city_id,lat,lon,pm25,pm10,so2,no2,co,o3 with
// ISO-8601 hours and empty cells for missing values. City CSV drops the
// station columns; city coordinates live in the sidecar metadata file.

StationTable read_station_csv(const std::string& path);
void write_station_csv(const std::string& path, const StationTable& table);

void write_city_csv(const std::string& path, const CitySeries& series);
void write_city_meta(const std::string& path, const CitySeries& series, const QcAudit& audit);
CitySeries read_city_series(const std::string& csv_path, const std::string& meta_path);

void write_norm_stats(const std::string& path, const NormStats& stats);
NormStats read_norm_stats(const std::string& path);

}  // namespace mvar::data
