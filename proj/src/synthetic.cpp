#include "mvar/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "mvar/util.hpp"

namespace mvar::synth {

namespace {

constexpr double kDomainLat0 = 30.0;
constexpr double kDomainLon0 = 110.0;
constexpr double kDomainSpan = 10.0;
constexpr double kTwoPi = 6.283185307179586476925286766559;

struct ArProcess {
    double rho;
    double innov_sd;
    double state = 0.0;

    double step(Rng& rng) {
        state = rho * state + innov_sd * rng.normal();
        return state;
    }
};

ArProcess make_ar(double rho, double stationary_sd) {
    return ArProcess{rho, stationary_sd * std::sqrt(1.0 - rho * rho)};
}

/// Bilinear sample with edge replication.
double sample_field(const std::vector<double>& field, int h, int w, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const int y1 = std::min(y0 + 1, h - 1);
    const int x1 = std::min(x0 + 1, w - 1);
    const double fy = y - y0;
    const double fx = x - x0;
    const auto at = [&](int yy, int xx) { return field[static_cast<size_t>(yy) * w + xx]; };
    return (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) +
           fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1));
}

struct Source {
    double y, x, strength, width;
};

}  // namespace

void SynthConfig::validate() const {
    if (n_cities < 1) throw ConfigError("n_cities must be >= 1");
    if (stations_per_city < 1) throw ConfigError("stations_per_city must be >= 1");
    if (days < 1) throw ConfigError("days must be >= 1");
    if (grid_h < 2 || grid_w < 2) throw ConfigError("grid extents must be >= 2");
    if (station_missing_rate < 0.0 || station_missing_rate >= 1.0 || timestep_missing_rate < 0.0 ||
        timestep_missing_rate >= 1.0) {
        throw ConfigError("missingness rates must lie in [0, 1)");
    }
    if (station_noise < 0.0) throw ConfigError("station_noise must be >= 0");
    if (wind_strength < 0.0) throw ConfigError("wind_strength must be >= 0");
    if (o3_amplitude < 0.0 || pm_coupling < 0.0) {
        throw ConfigError("pollutant scales must be >= 0");
    }
}

SynthOutput generate(const SynthConfig& config) {
    config.validate();
    const int64_t start = parse_iso_hour(config.start_time);
    const int n_times = config.days * 24;
    const int h = config.grid_h;
    const int w = config.grid_w;
    const int n_cells = h * w;

    Rng layout_rng(config.seed, 0);
    Rng wind_rng(config.seed, 1);
    Rng plume_rng(config.seed, 2);
    Rng city_rng(config.seed, 3);
    Rng station_rng(config.seed, 4);
    Rng missing_rng(config.seed, 5);

    SynthOutput out;

    // City and station layout, kept a margin inside the domain.
    char name[32];
    for (int n = 0; n < config.n_cities; ++n) {
        data::CityInfo city;
        std::snprintf(name, sizeof(name), "city%02d", n + 1);
        city.id = name;
        city.lat = kDomainLat0 + 1.0 + (kDomainSpan - 2.0) * layout_rng.uniform01();
        city.lon = kDomainLon0 + 1.0 + (kDomainSpan - 2.0) * layout_rng.uniform01();
        out.truth.cities.push_back(city);
        for (int s = 0; s < config.stations_per_city; ++s) {
            data::StationInfo st;
            std::snprintf(name, sizeof(name), "city%02d-s%d", n + 1, s + 1);
            st.id = name;
            st.city_id = city.id;
            st.lat = city.lat + layout_rng.uniform(-0.25, 0.25);
            st.lon = city.lon + layout_rng.uniform(-0.25, 0.25);
            out.stations.stations.push_back(st);
        }
    }
    std::vector<double> o3_phase(static_cast<size_t>(config.n_cities));
    for (double& p : o3_phase) p = 24.0 * layout_rng.uniform01();

    std::vector<Source> sources;
    for (int k = 0; k < 5; ++k) {
        Source s;
        s.y = (h - 1) * layout_rng.uniform01();
        s.x = (w - 1) * layout_rng.uniform01();
        s.strength = layout_rng.uniform(0.6, 1.4);
        s.width = layout_rng.uniform(1.5, 3.5);
        sources.push_back(s);
    }
    std::vector<double> source_field(static_cast<size_t>(n_cells), 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double v = 0.0;
            for (const auto& s : sources) {
                const double dy = y - s.y;
                const double dx = x - s.x;
                v += s.strength * std::exp(-(dy * dy + dx * dx) / (2.0 * s.width * s.width));
            }
            source_field[static_cast<size_t>(y) * w + x] = v;
        }
    }

    for (int t = 0; t < n_times; ++t) {
        out.truth.times.push_back(start + t);
        out.stations.times.push_back(start + t);
    }
    out.truth.allocate();
    out.stations.allocate();

    out.grid.variables = {"u10", "v10", "t2m", "aod"};
    out.grid.lat0 = kDomainLat0;
    out.grid.lon0 = kDomainLon0;
    out.grid.dlat = kDomainSpan / (h - 1);
    out.grid.dlon = kDomainSpan / (w - 1);
    out.grid.grid_h = h;
    out.grid.grid_w = w;
    out.grid.times = out.truth.times;
    out.grid.allocate();

    // Wind: one AR(1) vector per hour, shared across the grid apart from a
    // fixed spatial texture.
    ArProcess wind_u = make_ar(0.95, config.wind_strength);
    ArProcess wind_v = make_ar(0.95, config.wind_strength);
    wind_u.state = config.wind_strength * wind_rng.normal();
    wind_v.state = config.wind_strength * wind_rng.normal();

    // Latent plume field driving the particulates.
    std::vector<double> plume = source_field;
    std::vector<double> plume_next(static_cast<size_t>(n_cells));

    // Per-city AR deviations, advanced in a fixed (city, pollutant) order.
    const double kRho[data::kPollutants] = {0.9, 0.9, 0.97, 0.9, 0.97, 0.8};
    const double kSd[data::kPollutants] = {0.3, 0.4, 1.0, 1.2, 15.0, 1.5};
    std::vector<ArProcess> dev;
    dev.reserve(static_cast<size_t>(config.n_cities) * data::kPollutants);
    for (int n = 0; n < config.n_cities; ++n) {
        for (int d = 0; d < data::kPollutants; ++d) dev.push_back(make_ar(kRho[d], kSd[d]));
    }

    std::vector<double> city_gy(static_cast<size_t>(config.n_cities));
    std::vector<double> city_gx(static_cast<size_t>(config.n_cities));
    for (int n = 0; n < config.n_cities; ++n) {
        city_gy[static_cast<size_t>(n)] = (out.truth.cities[static_cast<size_t>(n)].lat - kDomainLat0) / out.grid.dlat;
        city_gx[static_cast<size_t>(n)] = (out.truth.cities[static_cast<size_t>(n)].lon - kDomainLon0) / out.grid.dlon;
    }

    for (int t = 0; t < n_times; ++t) {
        const int64_t now = start + t;
        const double hour = static_cast<double>(hour_of_day(now));
        const double u = wind_u.state;
        const double v = wind_v.state;

        // Grid channels for this hour.
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double texture = 0.1 * std::sin(kTwoPi * x / w);
                const double t2m = 15.0 + 8.0 * std::sin(kTwoPi * (hour - 6.0) / 24.0) +
                                   1.5 * (static_cast<double>(y) / h);
                out.grid.values[out.grid.idx(t, 0, y, x)] = static_cast<float>(u + texture);
                out.grid.values[out.grid.idx(t, 1, y, x)] =
                    static_cast<float>(v + 0.1 * std::sin(kTwoPi * y / h));
                out.grid.values[out.grid.idx(t, 2, y, x)] = static_cast<float>(t2m);
                out.grid.values[out.grid.idx(t, 3, y, x)] =
                    static_cast<float>(plume[static_cast<size_t>(y) * w + x]);
            }
        }

        // City truth for this hour.
        for (int n = 0; n < config.n_cities; ++n) {
            const double p_here =
                sample_field(plume, h, w, city_gy[static_cast<size_t>(n)], city_gx[static_cast<size_t>(n)]);
            const double o3_dev = dev[static_cast<size_t>(n) * data::kPollutants + 5].step(city_rng);
            const double o3 =
                70.0 +
                config.o3_amplitude *
                    std::sin(kTwoPi * (hour + o3_phase[static_cast<size_t>(n)]) / 24.0) +
                o3_dev;
            double values[data::kPollutants];
            values[0] = 35.0 + config.pm_coupling * p_here +
                        dev[static_cast<size_t>(n) * data::kPollutants + 0].step(city_rng);
            values[1] = 55.0 + 1.4 * config.pm_coupling * p_here +
                        dev[static_cast<size_t>(n) * data::kPollutants + 1].step(city_rng);
            values[2] = 12.0 + dev[static_cast<size_t>(n) * data::kPollutants + 2].step(city_rng);
            values[3] = 30.0 - 0.35 * (o3 - 70.0) +
                        dev[static_cast<size_t>(n) * data::kPollutants + 3].step(city_rng);
            values[4] = 900.0 + dev[static_cast<size_t>(n) * data::kPollutants + 4].step(city_rng);
            values[5] = o3;
            for (int d = 0; d < data::kPollutants; ++d) {
                out.truth.set(t, n, d, std::max(0.0, values[d]));
            }
        }

        // Stations: truth plus noise, with configured missingness.
        for (int d = 0; d < data::kPollutants; ++d) {
            const bool knockout = missing_rng.chance(config.timestep_missing_rate);
            int s_index = 0;
            for (int n = 0; n < config.n_cities; ++n) {
                for (int s = 0; s < config.stations_per_city; ++s, ++s_index) {
                    const double noisy = out.truth.value(t, n, d) +
                                         config.station_noise * station_rng.normal();
                    if (knockout || missing_rng.chance(config.station_missing_rate)) continue;
                    out.stations.set(t, s_index, d, std::max(0.0, noisy));
                }
            }
        }

        // Advance the latent state to the next hour.
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double adv = sample_field(plume, h, w, y - v, x - u);
                const double noise = 0.02 * plume_rng.normal();
                plume_next[static_cast<size_t>(y) * w + x] =
                    std::max(0.0, 0.92 * adv + 0.08 * source_field[static_cast<size_t>(y) * w + x] +
                                      noise);
            }
        }
        plume.swap(plume_next);
        wind_u.step(wind_rng);
        wind_v.step(wind_rng);
    }
    return out;
}

void write_outputs(const std::string& dir, const SynthOutput& out) {
    data::write_station_csv(dir + "/stations.csv", out.stations);
    data::write_city_csv(dir + "/truth.csv", out.truth);
    data::QcAudit audit;
    audit.stations_total = out.stations.n_stations();
    audit.timesteps_total = out.truth.n_times();
    audit.city_counts.assign(
        out.truth.cities.size(),
        data::QcAudit::CityCount{out.stations.n_stations() / std::max(1, out.truth.n_cities()), 0});
    data::write_city_meta(dir + "/truth.meta", out.truth, audit);
    data::write_meteo_grid(dir + "/meteo.mvgr", out.grid);
}

}  // namespace mvar::synth
