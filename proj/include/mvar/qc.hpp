#pragma once

#include <optional>

#include "mvar/series.hpp"

namespace mvar::data {

struct QcOptions {
    /// A station is removed when any pollutant's missing fraction exceeds
    /// this (strictly).
    double station_missing_threshold = 0.5;
    /// A (timestep, pollutant) is dropped when its missing fraction across
    /// retained stations exceeds this (strictly); otherwise gaps are filled.
    double timestep_drop_threshold = 0.2;
    /// Minimum present stations for a Kriging fill; below this the fill
    /// falls back to inverse-distance weighting and is flagged.
    int min_krige_stations = 3;
    /// Upper bound on complete snapshots used for variogram fitting.
    size_t variogram_snapshots = 200;
    /// Skip fitting and use this variogram for every pollutant.
    std::optional<Variogram> variogram_override;
    VariogramFitOptions fit;
};

struct QcResult {
    CitySeries series;
    QcAudit audit;
};

/// Step 1: drop stations whose missing fraction exceeds the threshold for
/// any pollutant, recording removals with their fractions. Returns the
/// filtered table.
StationTable qc_station_filter(const StationTable& table, const QcOptions& opt, QcAudit& audit);

/// Fit one variogram per pollutant from complete snapshots of the filtered
/// table (evenly sampled, capped by variogram_snapshots).
std::array<Variogram, kPollutants> qc_fit_variograms(const StationTable& table,
                                                     const QcOptions& opt);

/// Step 2: per (timestep, pollutant), drop when too sparse, otherwise fill
/// every gap by ordinary Kriging (IDW fallback below min_krige_stations).
/// dropped is a [time][pollutant] flag array the aggregation step consumes.
void qc_timestep_fill(StationTable& table, const std::array<Variogram, kPollutants>& vgs,
                      const QcOptions& opt, QcAudit& audit, std::vector<uint8_t>& dropped);

/// Step 3: collapse stations to cities by the per-pollutant maximum.
/// Dropped (timestep, pollutant) pairs stay masked for every city.
CitySeries city_aggregate(const StationTable& table, const std::vector<uint8_t>& dropped,
                          QcAudit& audit);

/// Full pipeline: filter, fit variograms, fill, aggregate.
QcResult run_qc_pipeline(const StationTable& table, const QcOptions& opt = {});

}  // namespace mvar::data
