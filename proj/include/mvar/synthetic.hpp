#pragma once

#include <cstdint>
#include <string>

#include "mvar/meteo.hpp"
#include "mvar/series.hpp"

namespace mvar::synth {

/// Knobs for the seeded dataset generator. The pollutant structure is fixed
/// (diurnal ozone, advected particulates, anticorrelated NO2, slow AR SO2
/// and CO); the config scales it.
struct SynthConfig {
    int n_cities = 12;
    int stations_per_city = 2;
    int days = 30;
    int grid_h = 16;
    int grid_w = 16;
    uint64_t seed = 1;
    std::string start_time = "2024-01-01T00:00:00";

    double wind_strength = 1.2;      // stationary wind speed scale, grid cells/hour
    double station_noise = 1.0;      // sd of station-level measurement noise
    double station_missing_rate = 0.02;   // per station/hour/pollutant cell
    double timestep_missing_rate = 0.0;   // per (hour, pollutant): all stations knocked out
    double o3_amplitude = 40.0;
    double pm_coupling = 18.0;       // scales how strongly the plume field drives PM

    void validate() const;
};

struct SynthOutput {
    data::StationTable stations;
    data::CitySeries truth;    // city-level ground truth, fully valid
    data::MeteoGrid grid;      // channels u10, v10, t2m, aod
};

/// Deterministic generation: the same config yields identical structures
/// (and therefore byte-identical files through the fixed-format writers).
SynthOutput generate(const SynthConfig& config);

/// Writes stations.csv, truth.csv, truth.meta and meteo.mvgr into dir.
void write_outputs(const std::string& dir, const SynthOutput& out);

}  // namespace mvar::synth
