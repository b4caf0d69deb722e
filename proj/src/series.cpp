#include "mvar/series.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <sstream>

namespace mvar::data {

const std::array<std::string, kPollutants>& pollutant_names() {
    static const std::array<std::string, kPollutants> names = {"pm25", "pm10", "so2",
                                                               "no2",  "co",   "o3"};
    return names;
}

int pollutant_index(const std::string& name) {
    const auto& names = pollutant_names();
    for (int i = 0; i < kPollutants; ++i)
        if (names[static_cast<size_t>(i)] == name) return i;
    throw ConfigError("unknown pollutant '" + name + "'");
}

int CitySeries::find_time(int64_t hour) const {
    auto it = std::lower_bound(times.begin(), times.end(), hour);
    if (it == times.end() || *it != hour) return -1;
    return static_cast<int>(it - times.begin());
}

bool CitySeries::slice_complete(int t) const {
    for (int n = 0; n < n_cities(); ++n)
        for (int d = 0; d < kPollutants; ++d)
            if (!valid(t, n, d)) return false;
    return true;
}

num::DenseMatrix CitySeries::slice(int t) const {
    num::DenseMatrix m(n_cities(), kPollutants);
    for (int n = 0; n < n_cities(); ++n)
        for (int d = 0; d < kPollutants; ++d) m.at(n, d) = value(t, n, d);
    return m;
}

// ---- normalization --------------------------------------------------------

NormStats compute_norm_stats(const CitySeries& train) {
    const int n_cities = train.n_cities();
    if (n_cities == 0 || train.n_times() == 0)
        throw EmptyResultError("compute_norm_stats: empty series");
    NormStats stats;
    stats.mean = num::DenseMatrix(n_cities, kPollutants, 0.0);
    stats.stddev = num::DenseMatrix(n_cities, kPollutants, 1.0);
    stats.degenerate.assign(static_cast<size_t>(n_cities) * kPollutants, 0);
    for (const CityInfo& c : train.cities) stats.city_ids.push_back(c.id);

    for (int n = 0; n < n_cities; ++n) {
        for (int d = 0; d < kPollutants; ++d) {
            double sum = 0.0, sq = 0.0;
            int64_t count = 0;
            for (int t = 0; t < train.n_times(); ++t) {
                if (!train.valid(t, n, d)) continue;
                const double v = train.value(t, n, d);
                sum += v;
                sq += v * v;
                ++count;
            }
            const size_t flat = static_cast<size_t>(n) * kPollutants + static_cast<size_t>(d);
            if (count == 0) {
                stats.mean.at(n, d) = 0.0;
                stats.stddev.at(n, d) = 1.0;
                stats.degenerate[flat] = 1;
                continue;
            }
            const double mean = sum / static_cast<double>(count);
            double var = sq / static_cast<double>(count) - mean * mean;
            if (var < 0.0) var = 0.0;
            double sd = std::sqrt(var);
            stats.mean.at(n, d) = mean;
            if (sd < 1e-8) {
                sd = 1.0;
                stats.degenerate[flat] = 1;
            }
            stats.stddev.at(n, d) = sd;
        }
    }
    return stats;
}

namespace {
void check_stats_shape(const CitySeries& series, const NormStats& stats) {
    if (stats.mean.rows != series.n_cities() || stats.mean.cols != kPollutants)
        throw ShapeError("norm stats " + stats.mean.shape_str() + " vs series with " +
                         std::to_string(series.n_cities()) + " cities");
}
}  // namespace

void normalize(CitySeries& series, const NormStats& stats) {
    check_stats_shape(series, stats);
    for (int t = 0; t < series.n_times(); ++t)
        for (int n = 0; n < series.n_cities(); ++n)
            for (int d = 0; d < kPollutants; ++d)
                if (series.valid(t, n, d))
                    series.values[series.idx(t, n, d)] =
                        (series.value(t, n, d) - stats.mean.at(n, d)) / stats.stddev.at(n, d);
}

void denormalize(CitySeries& series, const NormStats& stats) {
    check_stats_shape(series, stats);
    for (int t = 0; t < series.n_times(); ++t)
        for (int n = 0; n < series.n_cities(); ++n)
            for (int d = 0; d < kPollutants; ++d)
                if (series.valid(t, n, d))
                    series.values[series.idx(t, n, d)] =
                        series.value(t, n, d) * stats.stddev.at(n, d) + stats.mean.at(n, d);
}

num::DenseMatrix normalize_slice(const num::DenseMatrix& slice, const NormStats& stats) {
    if (!slice.same_shape(stats.mean))
        throw ShapeError("normalize_slice: " + slice.shape_str() + " vs stats " +
                         stats.mean.shape_str());
    num::DenseMatrix out = slice;
    for (int n = 0; n < out.rows; ++n)
        for (int d = 0; d < out.cols; ++d)
            out.at(n, d) = (out.at(n, d) - stats.mean.at(n, d)) / stats.stddev.at(n, d);
    return out;
}

num::DenseMatrix denormalize_slice(const num::DenseMatrix& slice, const NormStats& stats) {
    if (!slice.same_shape(stats.mean))
        throw ShapeError("denormalize_slice: " + slice.shape_str() + " vs stats " +
                         stats.mean.shape_str());
    num::DenseMatrix out = slice;
    for (int n = 0; n < out.rows; ++n)
        for (int d = 0; d < out.cols; ++d)
            out.at(n, d) = out.at(n, d) * stats.stddev.at(n, d) + stats.mean.at(n, d);
    return out;
}

// ---- CSV ------------------------------------------------------------------

namespace {
double parse_value_cell(const std::string& cell, long line_no, bool& present) {
    const std::string s = trim(cell);
    if (s.empty()) {
        present = false;
        return 0.0;
    }
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw ParseError("bad numeric cell '" + cell + "'", line_no);
    present = true;
    return v;
}

double parse_coord_cell(const std::string& cell, long line_no) {
    bool present = false;
    const double v = parse_value_cell(cell, line_no, present);
    if (!present) throw ParseError("empty coordinate cell", line_no);
    return v;
}
}  // namespace

StationTable read_station_csv(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    long line_no = 0;

    if (!std::getline(in, line)) throw ParseError("empty station CSV " + path, 0);
    ++line_no;
    const std::string expected = "time,station_id,city_id,lat,lon,pm25,pm10,so2,no2,co,o3";
    if (trim(line) != expected)
        throw ParseError("station CSV header mismatch, want '" + expected + "'", line_no);

    struct Row {
        int64_t time;
        int station;
        std::array<double, kPollutants> vals;
        std::array<bool, kPollutants> present;
    };
    std::vector<Row> rows;
    std::vector<StationInfo> stations;
    std::map<std::string, int> station_index;
    std::vector<int64_t> time_set;

    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::vector<std::string> cells = split(line, ',');
        if (cells.size() != 11)
            throw ParseError("want 11 columns, got " + std::to_string(cells.size()), line_no);
        Row r{};
        try {
            r.time = parse_iso_hour(cells[0]);
        } catch (const ParseError& e) {
            throw ParseError(e.what(), line_no);
        }
        const std::string sid = trim(cells[1]);
        const std::string cid = trim(cells[2]);
        if (sid.empty() || cid.empty()) throw ParseError("empty station or city id", line_no);
        const double lat = parse_coord_cell(cells[3], line_no);
        const double lon = parse_coord_cell(cells[4], line_no);
        auto it = station_index.find(sid);
        if (it == station_index.end()) {
            station_index[sid] = static_cast<int>(stations.size());
            r.station = static_cast<int>(stations.size());
            stations.push_back(StationInfo{sid, cid, lat, lon});
        } else {
            r.station = it->second;
            const StationInfo& s = stations[static_cast<size_t>(it->second)];
            if (s.city_id != cid || s.lat != lat || s.lon != lon)
                throw ParseError("station '" + sid + "' metadata contradicts earlier rows",
                                 line_no);
        }
        for (int d = 0; d < kPollutants; ++d) {
            bool present = false;
            r.vals[static_cast<size_t>(d)] =
                parse_value_cell(cells[static_cast<size_t>(5 + d)], line_no, present);
            r.present[static_cast<size_t>(d)] = present;
        }
        rows.push_back(r);
        time_set.push_back(r.time);
    }
    if (rows.empty()) throw EmptyResultError("station CSV " + path + " has no data rows");

    std::sort(time_set.begin(), time_set.end());
    time_set.erase(std::unique(time_set.begin(), time_set.end()), time_set.end());

    StationTable table;
    table.stations = std::move(stations);
    table.times = std::move(time_set);
    table.allocate();
    for (const Row& r : rows) {
        const auto it = std::lower_bound(table.times.begin(), table.times.end(), r.time);
        const int t = static_cast<int>(it - table.times.begin());
        for (int d = 0; d < kPollutants; ++d)
            if (r.present[static_cast<size_t>(d)])
                table.set(t, r.station, d, r.vals[static_cast<size_t>(d)]);
    }
    return table;
}

void write_station_csv(const std::string& path, const StationTable& table) {
    std::ostringstream out;
    out << "time,station_id,city_id,lat,lon,pm25,pm10,so2,no2,co,o3\n";
    for (int t = 0; t < table.n_times(); ++t) {
        const std::string ts = format_iso_hour(table.times[static_cast<size_t>(t)]);
        for (int s = 0; s < table.n_stations(); ++s) {
            const StationInfo& st = table.stations[static_cast<size_t>(s)];
            out << ts << ',' << st.id << ',' << st.city_id << ',' << format_full(st.lat) << ','
                << format_full(st.lon);
            for (int d = 0; d < kPollutants; ++d) {
                out << ',';
                if (table.valid(t, s, d)) out << format_fixed6(table.value(t, s, d));
            }
            out << '\n';
        }
    }
    write_text_file(path, out.str());
}

void write_city_csv(const std::string& path, const CitySeries& series) {
    std::ostringstream out;
    out << "time,city_id,pm25,pm10,so2,no2,co,o3\n";
    for (int t = 0; t < series.n_times(); ++t) {
        const std::string ts = format_iso_hour(series.times[static_cast<size_t>(t)]);
        for (int n = 0; n < series.n_cities(); ++n) {
            out << ts << ',' << series.cities[static_cast<size_t>(n)].id;
            for (int d = 0; d < kPollutants; ++d) {
                out << ',';
                if (series.valid(t, n, d)) out << format_fixed6(series.value(t, n, d));
            }
            out << '\n';
        }
    }
    write_text_file(path, out.str());
}

void write_city_meta(const std::string& path, const CitySeries& series, const QcAudit& audit) {
    std::ostringstream out;
    out << "mvar-city-meta v1\n";
    out << "pollutants";
    for (const auto& p : pollutant_names()) out << ' ' << p;
    out << '\n';
    out << "cities " << series.n_cities() << '\n';
    for (int n = 0; n < series.n_cities(); ++n) {
        const CityInfo& c = series.cities[static_cast<size_t>(n)];
        const QcAudit::CityCount cc = n < static_cast<int>(audit.city_counts.size())
                                          ? audit.city_counts[static_cast<size_t>(n)]
                                          : QcAudit::CityCount{};
        out << "city " << c.id << ' ' << format_full(c.lat) << ' ' << format_full(c.lon) << ' '
            << cc.retained << ' ' << cc.removed << '\n';
    }
    out << "timesteps " << series.n_times() << '\n';
    out << "stations_total " << audit.stations_total << '\n';
    for (const auto& r : audit.removed) {
        out << "removed_station " << r.station_id << ' ' << r.city_id;
        for (double f : r.missing_frac) out << ' ' << format_full(f);
        out << '\n';
    }
    for (const auto& c : audit.excluded_cities) out << "excluded_city " << c << '\n';
    auto write_counts = [&out](const char* key, const std::array<int64_t, kPollutants>& a) {
        out << key;
        for (int64_t v : a) out << ' ' << v;
        out << '\n';
    };
    write_counts("dropped_timesteps", audit.dropped_timesteps);
    write_counts("fills", audit.fills);
    write_counts("idw_fallbacks", audit.idw_fallbacks);
    for (int d = 0; d < kPollutants; ++d) {
        const Variogram& vg = audit.variograms[static_cast<size_t>(d)];
        out << "variogram " << pollutant_names()[static_cast<size_t>(d)] << ' '
            << format_full(vg.sill) << ' ' << format_full(vg.range_km) << ' '
            << format_full(vg.nugget) << ' ' << (vg.degenerate ? 1 : 0) << '\n';
    }
    write_text_file(path, out.str());
}

CitySeries read_city_series(const std::string& csv_path, const std::string& meta_path) {
    // Coordinates come from the sidecar; the CSV carries values only.
    std::istringstream meta(read_text_file(meta_path));
    std::string line;
    long line_no = 0;
    if (!std::getline(meta, line) || trim(line) != "mvar-city-meta v1")
        throw ParseError("bad city metadata header in " + meta_path, 1);
    line_no = 1;
    std::vector<CityInfo> cities;
    while (std::getline(meta, line)) {
        ++line_no;
        const std::vector<std::string> parts = split(trim(line), ' ');
        if (parts.empty() || parts[0] != "city") continue;
        if (parts.size() < 4) throw ParseError("short city line", line_no);
        CityInfo c;
        c.id = parts[1];
        c.lat = parse_coord_cell(parts[2], line_no);
        c.lon = parse_coord_cell(parts[3], line_no);
        cities.push_back(c);
    }
    if (cities.empty()) throw EmptyResultError("no cities in " + meta_path);
    std::map<std::string, int> city_index;
    for (size_t i = 0; i < cities.size(); ++i) city_index[cities[i].id] = static_cast<int>(i);

    std::istringstream in(read_text_file(csv_path));
    line_no = 0;
    if (!std::getline(in, line)) throw ParseError("empty city CSV " + csv_path, 0);
    ++line_no;
    const std::string expected = "time,city_id,pm25,pm10,so2,no2,co,o3";
    if (trim(line) != expected)
        throw ParseError("city CSV header mismatch, want '" + expected + "'", line_no);

    struct Row {
        int64_t time;
        int city;
        std::array<double, kPollutants> vals;
        std::array<bool, kPollutants> present;
    };
    std::vector<Row> rows;
    std::vector<int64_t> time_set;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::vector<std::string> cells = split(line, ',');
        if (cells.size() != 2 + kPollutants)
            throw ParseError("want 8 columns, got " + std::to_string(cells.size()), line_no);
        Row r{};
        try {
            r.time = parse_iso_hour(cells[0]);
        } catch (const ParseError& e) {
            throw ParseError(e.what(), line_no);
        }
        auto it = city_index.find(trim(cells[1]));
        if (it == city_index.end())
            throw ParseError("city '" + cells[1] + "' missing from metadata", line_no);
        r.city = it->second;
        for (int d = 0; d < kPollutants; ++d) {
            bool present = false;
            r.vals[static_cast<size_t>(d)] =
                parse_value_cell(cells[static_cast<size_t>(2 + d)], line_no, present);
            r.present[static_cast<size_t>(d)] = present;
        }
        rows.push_back(r);
        time_set.push_back(r.time);
    }
    if (rows.empty()) throw EmptyResultError("city CSV " + csv_path + " has no data rows");
    std::sort(time_set.begin(), time_set.end());
    time_set.erase(std::unique(time_set.begin(), time_set.end()), time_set.end());

    CitySeries series;
    series.cities = std::move(cities);
    series.times = std::move(time_set);
    series.allocate();
    for (const Row& r : rows) {
        const auto it = std::lower_bound(series.times.begin(), series.times.end(), r.time);
        const int t = static_cast<int>(it - series.times.begin());
        for (int d = 0; d < kPollutants; ++d)
            if (r.present[static_cast<size_t>(d)])
                series.set(t, r.city, d, r.vals[static_cast<size_t>(d)]);
    }
    return series;
}

void write_norm_stats(const std::string& path, const NormStats& stats) {
    std::ostringstream out;
    out << "mvar-normstats v1\n";
    out << "pollutants";
    for (const auto& p : pollutant_names()) out << ' ' << p;
    out << '\n';
    out << "cities " << stats.mean.rows << '\n';
    for (int n = 0; n < stats.mean.rows; ++n) {
        out << "city "
            << (n < static_cast<int>(stats.city_ids.size()) ? stats.city_ids[static_cast<size_t>(n)]
                                                            : std::to_string(n))
            << '\n';
        out << "mean";
        for (int d = 0; d < kPollutants; ++d) out << ' ' << format_full(stats.mean.at(n, d));
        out << '\n';
        out << "std";
        for (int d = 0; d < kPollutants; ++d) out << ' ' << format_full(stats.stddev.at(n, d));
        out << '\n';
        out << "degenerate";
        for (int d = 0; d < kPollutants; ++d)
            out << ' '
                << (stats.degenerate[static_cast<size_t>(n) * kPollutants +
                                     static_cast<size_t>(d)]
                        ? 1
                        : 0);
        out << '\n';
    }
    write_text_file(path, out.str());
}

NormStats read_norm_stats(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line) || trim(line) != "mvar-normstats v1")
        throw ParseError("bad norm stats header in " + path, 1);
    long line_no = 1;
    int n_cities = -1;
    NormStats stats;
    int cur = -1;
    auto parse_row = [&](const std::vector<std::string>& parts, num::DenseMatrix& m,
                         long ln) {
        if (static_cast<int>(parts.size()) != 1 + kPollutants)
            throw ParseError("want " + std::to_string(kPollutants) + " values", ln);
        for (int d = 0; d < kPollutants; ++d)
            m.at(cur, d) = parse_coord_cell(parts[static_cast<size_t>(1 + d)], ln);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty()) continue;
        const std::vector<std::string> parts = split(t, ' ');
        if (parts[0] == "pollutants") continue;
        if (parts[0] == "cities") {
            n_cities = static_cast<int>(std::strtol(parts.at(1).c_str(), nullptr, 10));
            if (n_cities < 1) throw ParseError("bad city count", line_no);
            stats.mean = num::DenseMatrix(n_cities, kPollutants, 0.0);
            stats.stddev = num::DenseMatrix(n_cities, kPollutants, 1.0);
            stats.degenerate.assign(static_cast<size_t>(n_cities) * kPollutants, 0);
        } else if (parts[0] == "city") {
            ++cur;
            if (n_cities < 0 || cur >= n_cities) throw ParseError("unexpected city line", line_no);
            stats.city_ids.push_back(parts.size() > 1 ? parts[1] : std::to_string(cur));
        } else if (parts[0] == "mean") {
            parse_row(parts, stats.mean, line_no);
        } else if (parts[0] == "std") {
            parse_row(parts, stats.stddev, line_no);
        } else if (parts[0] == "degenerate") {
            if (static_cast<int>(parts.size()) != 1 + kPollutants)
                throw ParseError("bad degenerate line", line_no);
            for (int d = 0; d < kPollutants; ++d)
                stats.degenerate[static_cast<size_t>(cur) * kPollutants + static_cast<size_t>(d)] =
                    parts[static_cast<size_t>(1 + d)] == "1" ? 1 : 0;
        } else {
            throw ParseError("unknown norm stats line '" + parts[0] + "'", line_no);
        }
    }
    if (n_cities < 1 || cur + 1 != n_cities)
        throw ParseError("norm stats city count mismatch in " + path, line_no);
    return stats;
}

}  // namespace mvar::data
