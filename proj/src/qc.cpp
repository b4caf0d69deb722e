#include "mvar/qc.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace mvar::data {

StationTable qc_station_filter(const StationTable& table, const QcOptions& opt, QcAudit& audit) {
    if (table.n_stations() == 0 || table.n_times() == 0)
        throw EmptyResultError("qc_station_filter: empty station table");
    audit.stations_total = table.n_stations();
    audit.timesteps_total = table.n_times();

    const double total = static_cast<double>(table.n_times());
    std::vector<int> keep;
    for (int s = 0; s < table.n_stations(); ++s) {
        std::array<double, kPollutants> frac{};
        bool removed = false;
        for (int d = 0; d < kPollutants; ++d) {
            int64_t present = 0;
            for (int t = 0; t < table.n_times(); ++t)
                if (table.valid(t, s, d)) ++present;
            frac[static_cast<size_t>(d)] = 1.0 - static_cast<double>(present) / total;
            if (frac[static_cast<size_t>(d)] > opt.station_missing_threshold) removed = true;
        }
        if (removed) {
            audit.removed.push_back(QcAudit::RemovedStation{
                table.stations[static_cast<size_t>(s)].id,
                table.stations[static_cast<size_t>(s)].city_id, frac});
        } else {
            keep.push_back(s);
        }
    }
    if (keep.empty())
        throw EmptyResultError("qc_station_filter: every station exceeded the missing threshold");

    StationTable out;
    out.times = table.times;
    for (int s : keep) out.stations.push_back(table.stations[static_cast<size_t>(s)]);
    out.allocate();
    for (int t = 0; t < table.n_times(); ++t)
        for (size_t si = 0; si < keep.size(); ++si)
            for (int d = 0; d < kPollutants; ++d)
                if (table.valid(t, keep[si], d))
                    out.set(t, static_cast<int>(si), d, table.value(t, keep[si], d));
    return out;
}

std::array<Variogram, kPollutants> qc_fit_variograms(const StationTable& table,
                                                     const QcOptions& opt) {
    std::array<Variogram, kPollutants> vgs;
    if (opt.variogram_override) {
        for (auto& v : vgs) v = *opt.variogram_override;
        return vgs;
    }
    std::vector<std::pair<double, double>> coords;
    for (const auto& s : table.stations) coords.emplace_back(s.lat, s.lon);

    for (int d = 0; d < kPollutants; ++d) {
        std::vector<int> complete;
        double sum = 0.0, sq = 0.0;
        int64_t count = 0;
        for (int t = 0; t < table.n_times(); ++t) {
            bool all = true;
            for (int s = 0; s < table.n_stations(); ++s) {
                if (table.valid(t, s, d)) {
                    const double v = table.value(t, s, d);
                    sum += v;
                    sq += v * v;
                    ++count;
                } else {
                    all = false;
                }
            }
            if (all) complete.push_back(t);
        }
        Variogram fallback;
        fallback.degenerate = true;
        fallback.range_km = opt.fit.default_range_km;
        if (count > 0) {
            const double mean = sum / static_cast<double>(count);
            fallback.sill = std::max(sq / static_cast<double>(count) - mean * mean, 1e-6);
        }
        if (complete.empty()) {
            vgs[static_cast<size_t>(d)] = fallback;
            continue;
        }
        const size_t take = std::min(opt.variogram_snapshots, complete.size());
        std::vector<Snapshot> snaps;
        snaps.reserve(take);
        for (size_t k = 0; k < take; ++k) {
            const int t = complete[k * complete.size() / take];
            Snapshot snap;
            snap.values.reserve(static_cast<size_t>(table.n_stations()));
            for (int s = 0; s < table.n_stations(); ++s) snap.values.push_back(table.value(t, s, d));
            snaps.push_back(std::move(snap));
        }
        vgs[static_cast<size_t>(d)] = fit_variogram(coords, snaps, opt.fit);
    }
    return vgs;
}

void qc_timestep_fill(StationTable& table, const std::array<Variogram, kPollutants>& vgs,
                      const QcOptions& opt, QcAudit& audit, std::vector<uint8_t>& dropped) {
    const int s_count = table.n_stations();
    dropped.assign(static_cast<size_t>(table.n_times()) * kPollutants, 0);
    for (int t = 0; t < table.n_times(); ++t) {
        for (int d = 0; d < kPollutants; ++d) {
            std::vector<int> missing;
            std::vector<StationSample> present;
            for (int s = 0; s < s_count; ++s) {
                if (table.valid(t, s, d)) {
                    present.push_back(StationSample{table.stations[static_cast<size_t>(s)].lat,
                                                    table.stations[static_cast<size_t>(s)].lon,
                                                    table.value(t, s, d)});
                } else {
                    missing.push_back(s);
                }
            }
            if (missing.empty()) continue;
            const double frac =
                static_cast<double>(missing.size()) / static_cast<double>(s_count);
            if (frac > opt.timestep_drop_threshold) {
                dropped[static_cast<size_t>(t) * kPollutants + static_cast<size_t>(d)] = 1;
                ++audit.dropped_timesteps[static_cast<size_t>(d)];
                continue;
            }
            for (int s : missing) {
                const StationInfo& st = table.stations[static_cast<size_t>(s)];
                if (static_cast<int>(present.size()) >= opt.min_krige_stations) {
                    try {
                        const KrigeResult kr =
                            krige_estimate(present, st.lat, st.lon, vgs[static_cast<size_t>(d)]);
                        table.set(t, s, d, kr.value);
                        ++audit.fills[static_cast<size_t>(d)];
                        continue;
                    } catch (const DegenerateGeometryError&) {
                        // coincident stations make the system singular; fall
                        // through to the distance-weighted estimate
                    }
                }
                const KrigeResult ir = idw_estimate(present, st.lat, st.lon);
                table.set(t, s, d, ir.value);
                ++audit.idw_fallbacks[static_cast<size_t>(d)];
            }
        }
    }
}

CitySeries city_aggregate(const StationTable& table, const std::vector<uint8_t>& dropped,
                          QcAudit& audit) {
    if (table.n_stations() == 0) throw EmptyResultError("city_aggregate: no stations");
    std::map<std::string, std::vector<int>> by_city;
    for (int s = 0; s < table.n_stations(); ++s)
        by_city[table.stations[static_cast<size_t>(s)].city_id].push_back(s);

    CitySeries series;
    for (const auto& [city_id, members] : by_city) {
        CityInfo c;
        c.id = city_id;
        double lat = 0.0, lon = 0.0;
        for (int s : members) {
            lat += table.stations[static_cast<size_t>(s)].lat;
            lon += table.stations[static_cast<size_t>(s)].lon;
        }
        c.lat = lat / static_cast<double>(members.size());
        c.lon = lon / static_cast<double>(members.size());
        series.cities.push_back(c);
    }
    series.times = table.times;
    series.allocate();

    int ci = 0;
    for (const auto& [city_id, members] : by_city) {
        for (int t = 0; t < table.n_times(); ++t) {
            for (int d = 0; d < kPollutants; ++d) {
                if (dropped[static_cast<size_t>(t) * kPollutants + static_cast<size_t>(d)])
                    continue;
                double mx = -std::numeric_limits<double>::infinity();
                bool any = false;
                for (int s : members) {
                    if (!table.valid(t, s, d)) continue;
                    mx = std::max(mx, table.value(t, s, d));
                    any = true;
                }
                if (any) series.set(t, ci, d, mx);
            }
        }
        ++ci;
    }

    // per-city retained/removed counts and cities that lost every station
    std::map<std::string, int> removed_per_city;
    for (const auto& r : audit.removed) ++removed_per_city[r.city_id];
    audit.city_counts.clear();
    for (const auto& [city_id, members] : by_city) {
        QcAudit::CityCount cc;
        cc.retained = static_cast<int>(members.size());
        auto it = removed_per_city.find(city_id);
        cc.removed = it == removed_per_city.end() ? 0 : it->second;
        audit.city_counts.push_back(cc);
    }
    for (const auto& [city_id, n] : removed_per_city)
        if (!by_city.count(city_id)) audit.excluded_cities.push_back(city_id);
    std::sort(audit.excluded_cities.begin(), audit.excluded_cities.end());
    return series;
}

QcResult run_qc_pipeline(const StationTable& table, const QcOptions& opt) {
    QcResult result;
    StationTable filtered = qc_station_filter(table, opt, result.audit);
    const std::array<Variogram, kPollutants> vgs = qc_fit_variograms(filtered, opt);
    result.audit.variograms = vgs;
    std::vector<uint8_t> dropped;
    qc_timestep_fill(filtered, vgs, opt, result.audit, dropped);
    result.series = city_aggregate(filtered, dropped, result.audit);
    return result;
}

}  // namespace mvar::data
