#include "mvar/evaluation.hpp"

#include <array>
#include <cmath>
#include <sstream>

#include "mvar/training.hpp"
#include "mvar/util.hpp"

namespace mvar::eval {

using num::DenseMatrix;

namespace {

struct BucketWindow {
    int lo_hours;
    int hi_hours;
    const char* label;
};

constexpr std::array<BucketWindow, 4> kBuckets{{
    {1, 24, "1-24h"},
    {25, 48, "25-48h"},
    {49, 72, "49-72h"},
    {97, 120, "97-120h"},
}};

int local_hour(int64_t epoch_hours, int local_offset_hours) {
    const int64_t shifted = epoch_hours + local_offset_hours;
    return static_cast<int>(((shifted % 24) + 24) % 24);
}

}  // namespace

std::vector<int64_t> select_init_times(const data::CitySeries& series, int lead_hours, int tau,
                                       int local_offset_hours) {
    if (lead_hours < 1) throw ConfigError("lead_hours must be >= 1");
    if (tau < 1) throw ConfigError("tau must be >= 1");
    std::vector<int64_t> inits;
    for (int i = 0; i < series.n_times(); ++i) {
        const int64_t t0 = series.times[static_cast<size_t>(i)];
        const int lh = local_hour(t0, local_offset_hours);
        if (lh != 8 && lh != 20) continue;
        const int ip = series.find_time(t0 - lead_hours);
        if (ip < 0 || !series.slice_complete(ip) || !series.slice_complete(i)) continue;
        bool any_target = false;
        for (int g = 1; g <= tau && !any_target; ++g) {
            const int it = series.find_time(t0 + static_cast<int64_t>(g) * lead_hours);
            any_target = it >= 0 && series.slice_complete(it);
        }
        if (any_target) inits.push_back(t0);
    }
    return inits;
}

ForecastSet forecast_rollouts(const model::MvarModel& model, const data::CitySeries& physical,
                              const data::NormStats& stats, const std::vector<int64_t>& init_times,
                              int tau, const data::MeteoGrid* grid) {
    if (tau < 1) throw ConfigError("tau must be >= 1");
    if (model.hp.n_cities != physical.n_cities() || model.hp.n_pollutants != data::kPollutants) {
        throw ShapeError("model dimensions do not match the series");
    }
    for (int n = 0; n < physical.n_cities(); ++n) {
        if (model.cities[static_cast<size_t>(n)].id != physical.cities[static_cast<size_t>(n)].id) {
            throw ConfigError("model and series city order disagree at index " +
                                    std::to_string(n));
        }
    }
    const int lead = model.lead_hours;
    ForecastSet out;
    out.init_times = init_times;
    out.lead_hours = lead;
    out.tau = tau;
    out.preds.reserve(init_times.size());
    for (const int64_t t0 : init_times) {
        const int ic = physical.find_time(t0);
        const int ip = physical.find_time(t0 - lead);
        if (ic < 0 || ip < 0) {
            throw ConfigError("init time " + format_iso_hour(t0) +
                                    " lacks its input states");
        }
        train::RolloutSample s;
        s.t0 = t0;
        s.x_prev = data::normalize_slice(physical.slice(ip), stats);
        s.x_curr = data::normalize_slice(physical.slice(ic), stats);
        if (model.hp.use_meteo) {
            if (grid == nullptr) throw ConfigError("the model needs a meteorology grid");
            for (int g = 0; g <= tau; ++g) {
                const int gm = grid->find_time(t0 + static_cast<int64_t>(g) * lead);
                if (gm < 0) {
                    throw MissingArtifactError(
                        "meteorology grid lacks hour " +
                        format_iso_hour(t0 + static_cast<int64_t>(g) * lead));
                }
                s.meteo_t.push_back(gm);
            }
        }
        num::Tape tape;
        auto tm = model::stage(tape, model, false);
        const auto preds = train::rollout(tm, s, tau, grid);
        std::vector<DenseMatrix> row;
        row.reserve(preds.size());
        for (const auto& p : preds) row.push_back(data::denormalize_slice(tape.value(p), stats));
        out.preds.push_back(std::move(row));
    }
    return out;
}

ForecastSet persistence_baseline(const data::CitySeries& physical,
                                 const std::vector<int64_t>& init_times, int lead_hours, int tau) {
    if (tau < 1) throw ConfigError("tau must be >= 1");
    ForecastSet out;
    out.init_times = init_times;
    out.lead_hours = lead_hours;
    out.tau = tau;
    out.preds.reserve(init_times.size());
    for (const int64_t t0 : init_times) {
        const int ic = physical.find_time(t0);
        if (ic < 0) {
            throw ConfigError("init time " + format_iso_hour(t0) +
                                    " is not in the series");
        }
        out.preds.emplace_back(static_cast<size_t>(tau), physical.slice(ic));
    }
    return out;
}

EvalReport rmse_buckets(const ForecastSet& forecasts, const data::CitySeries& truth) {
    const int n_cities = truth.n_cities();
    const int n_buckets = static_cast<int>(kBuckets.size());
    EvalReport report;
    const auto& names = data::pollutant_names();
    report.pollutants.assign(names.begin(), names.end());
    for (const auto& b : kBuckets) report.bucket_labels.emplace_back(b.label);
    report.lead_hours = forecasts.lead_hours;
    report.init_times = forecasts.init_times;
    report.bucket_rmse = DenseMatrix(data::kPollutants, n_buckets);
    report.step_rmse = DenseMatrix(data::kPollutants, std::max(1, forecasts.tau));
    report.bucket_n.assign(data::kPollutants, std::vector<int64_t>(static_cast<size_t>(n_buckets), 0));
    report.step_n.assign(data::kPollutants,
                         std::vector<int64_t>(static_cast<size_t>(std::max(1, forecasts.tau)), 0));

    DenseMatrix bucket_sq(data::kPollutants, n_buckets);
    DenseMatrix step_sq(data::kPollutants, std::max(1, forecasts.tau));

    if (forecasts.preds.size() != forecasts.init_times.size()) {
        throw ShapeError("forecast set is internally inconsistent");
    }
    for (size_t i = 0; i < forecasts.init_times.size(); ++i) {
        const int64_t t0 = forecasts.init_times[i];
        const auto& steps = forecasts.preds[i];
        if (static_cast<int>(steps.size()) != forecasts.tau) {
            throw ShapeError("forecast for " + format_iso_hour(t0) + " has " +
                                   std::to_string(steps.size()) + " steps, expected " +
                                   std::to_string(forecasts.tau));
        }
        for (int g = 1; g <= forecasts.tau; ++g) {
            const DenseMatrix& pred = steps[static_cast<size_t>(g - 1)];
            if (pred.rows != n_cities || pred.cols != data::kPollutants) {
                throw ShapeError("forecast slice " + pred.shape_str() +
                                       " does not match the truth series");
            }
            const int hours = g * forecasts.lead_hours;
            const int it = truth.find_time(t0 + hours);
            if (it < 0) continue;
            int bucket = -1;
            for (int b = 0; b < n_buckets; ++b) {
                if (hours >= kBuckets[static_cast<size_t>(b)].lo_hours &&
                    hours <= kBuckets[static_cast<size_t>(b)].hi_hours) {
                    bucket = b;
                    break;
                }
            }
            for (int d = 0; d < data::kPollutants; ++d) {
                bool complete = true;
                for (int n = 0; n < n_cities && complete; ++n) complete = truth.valid(it, n, d);
                if (!complete) continue;
                double sq = 0.0;
                for (int n = 0; n < n_cities; ++n) {
                    const double e = pred.at(n, d) - truth.value(it, n, d);
                    sq += e * e;
                }
                step_sq.at(d, g - 1) += sq;
                report.step_n[static_cast<size_t>(d)][static_cast<size_t>(g - 1)] += n_cities;
                if (bucket >= 0) {
                    bucket_sq.at(d, bucket) += sq;
                    report.bucket_n[static_cast<size_t>(d)][static_cast<size_t>(bucket)] +=
                        n_cities;
                }
            }
        }
    }
    for (int d = 0; d < data::kPollutants; ++d) {
        for (int b = 0; b < n_buckets; ++b) {
            const int64_t n = report.bucket_n[static_cast<size_t>(d)][static_cast<size_t>(b)];
            report.bucket_rmse.at(d, b) =
                n > 0 ? std::sqrt(bucket_sq.at(d, b) / static_cast<double>(n)) : 0.0;
        }
        for (int g = 0; g < forecasts.tau; ++g) {
            const int64_t n = report.step_n[static_cast<size_t>(d)][static_cast<size_t>(g)];
            report.step_rmse.at(d, g) =
                n > 0 ? std::sqrt(step_sq.at(d, g) / static_cast<double>(n)) : 0.0;
        }
    }
    return report;
}

DenseMatrix relative_rmse(const DenseMatrix& report, const DenseMatrix& baseline) {
    if (!report.same_shape(baseline)) {
        throw ShapeError("RMSE tables " + report.shape_str() + " vs " +
                               baseline.shape_str());
    }
    DenseMatrix out(report.rows, report.cols);
    for (size_t i = 0; i < out.v.size(); ++i) {
        if (!(baseline.v[i] > 0.0)) {
            throw NumericError("baseline RMSE must be positive for a relative comparison");
        }
        out.v[i] = report.v[i] / baseline.v[i];
    }
    return out;
}

double pooled_normalized_rmse(const ForecastSet& forecasts, const data::CitySeries& truth,
                              const data::NormStats& stats) {
    double sq = 0.0;
    int64_t n_cells = 0;
    const int n_cities = truth.n_cities();
    for (size_t i = 0; i < forecasts.init_times.size(); ++i) {
        const int64_t t0 = forecasts.init_times[i];
        for (int g = 1; g <= forecasts.tau; ++g) {
            const int it = truth.find_time(t0 + static_cast<int64_t>(g) * forecasts.lead_hours);
            if (it < 0) continue;
            const DenseMatrix& pred = forecasts.preds[i][static_cast<size_t>(g - 1)];
            for (int d = 0; d < data::kPollutants; ++d) {
                bool complete = true;
                for (int n = 0; n < n_cities && complete; ++n) complete = truth.valid(it, n, d);
                if (!complete) continue;
                for (int n = 0; n < n_cities; ++n) {
                    const double e =
                        (pred.at(n, d) - truth.value(it, n, d)) / stats.stddev.at(n, d);
                    sq += e * e;
                    ++n_cells;
                }
            }
        }
    }
    if (n_cells == 0) throw EmptyResultError("no overlapping truth for the forecast set");
    return std::sqrt(sq / static_cast<double>(n_cells));
}

void write_bucket_csv(const std::string& path, const EvalReport& report) {
    std::ostringstream out;
    out << "pollutant,bucket,rmse,n\n";
    for (int d = 0; d < static_cast<int>(report.pollutants.size()); ++d) {
        for (int b = 0; b < static_cast<int>(report.bucket_labels.size()); ++b) {
            out << report.pollutants[static_cast<size_t>(d)] << ","
                << report.bucket_labels[static_cast<size_t>(b)] << ","
                << format_full(report.bucket_rmse.at(d, b)) << ","
                << report.bucket_n[static_cast<size_t>(d)][static_cast<size_t>(b)] << "\n";
        }
    }
    write_text_file(path, out.str());
}

void write_step_csv(const std::string& path, const EvalReport& report) {
    std::ostringstream out;
    out << "pollutant,step,hours,rmse,n\n";
    for (int d = 0; d < static_cast<int>(report.pollutants.size()); ++d) {
        for (int g = 0; g < report.step_rmse.cols; ++g) {
            out << report.pollutants[static_cast<size_t>(d)] << "," << (g + 1) << ","
                << (g + 1) * report.lead_hours << ","
                << format_full(report.step_rmse.at(d, g)) << ","
                << report.step_n[static_cast<size_t>(d)][static_cast<size_t>(g)] << "\n";
        }
    }
    write_text_file(path, out.str());
}

void write_forecast_csv(const std::string& path, const ForecastSet& forecasts,
                        const std::vector<std::string>& city_ids) {
    const auto names = data::pollutant_names();
    std::ostringstream out;
    out << "init_time,offset_hours,city_id,pollutant,value\n";
    for (size_t i = 0; i < forecasts.init_times.size(); ++i) {
        const std::string init = format_iso_hour(forecasts.init_times[i]);
        for (int g = 1; g <= forecasts.tau; ++g) {
            const DenseMatrix& pred = forecasts.preds[i][static_cast<size_t>(g - 1)];
            if (pred.rows != static_cast<int>(city_ids.size())) {
                throw ShapeError("forecast slice does not match the city id list");
            }
            for (int n = 0; n < pred.rows; ++n) {
                for (int d = 0; d < pred.cols; ++d) {
                    out << init << "," << g * forecasts.lead_hours << ","
                        << city_ids[static_cast<size_t>(n)] << "," << names[static_cast<size_t>(d)]
                        << "," << format_fixed6(pred.at(n, d)) << "\n";
                }
            }
        }
    }
    write_text_file(path, out.str());
}

ReadForecasts read_forecast_csv(const std::string& path) {
    if (!file_exists(path)) throw MissingArtifactError("forecast CSV not found: " + path);
    const std::string text = read_text_file(path);
    std::istringstream lines(text);
    std::string line;
    int lineno = 0;

    if (!std::getline(lines, line)) throw ParseError("empty forecast CSV", 0);
    ++lineno;
    if (trim(line) != "init_time,offset_hours,city_id,pollutant,value") {
        throw ParseError("unexpected forecast CSV header: '" + line + "'", lineno);
    }

    // (init, offset) -> city -> pollutant -> value, discovered in file order.
    std::map<int64_t, std::map<int, std::map<std::string, std::array<double, data::kPollutants>>>>
        table;
    std::map<int64_t, std::map<int, std::map<std::string, std::array<bool, data::kPollutants>>>>
        seen;
    std::vector<std::string> city_ids;
    while (std::getline(lines, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto parts = split(line, ',');
        if (parts.size() != 5) {
            throw ParseError("expected 5 columns, got " + std::to_string(parts.size()),
                                   lineno);
        }
        int64_t init;
        try {
            init = parse_iso_hour(parts[0]);
        } catch (const ParseError& e) {
            throw ParseError(std::string(e.what()), lineno);
        }
        int offset;
        try {
            size_t pos = 0;
            offset = std::stoi(parts[1], &pos);
            if (pos != parts[1].size() || offset < 1) throw std::invalid_argument("offset");
        } catch (const std::exception&) {
            throw ParseError("bad offset_hours '" + parts[1] + "'", lineno);
        }
        const int d = data::pollutant_index(parts[3]);
        if (d < 0) throw ParseError("unknown pollutant '" + parts[3] + "'", lineno);
        double value;
        try {
            size_t pos = 0;
            value = std::stod(parts[4], &pos);
            if (pos != parts[4].size()) throw std::invalid_argument("value");
        } catch (const std::exception&) {
            throw ParseError("bad value '" + parts[4] + "'", lineno);
        }
        if (std::find(city_ids.begin(), city_ids.end(), parts[2]) == city_ids.end()) {
            city_ids.push_back(parts[2]);
        }
        auto& flag = seen[init][offset][parts[2]][static_cast<size_t>(d)];
        if (flag) throw ParseError("duplicate forecast row", lineno);
        flag = true;
        table[init][offset][parts[2]][static_cast<size_t>(d)] = value;
    }
    if (table.empty()) throw EmptyResultError("forecast CSV has no rows");

    // The offset ladder must be identical for every init and uniform.
    std::vector<int> offsets;
    for (const auto& [off, _] : table.begin()->second) offsets.push_back(off);
    const int lead = offsets.front();
    for (size_t k = 0; k < offsets.size(); ++k) {
        if (offsets[k] != static_cast<int>(k + 1) * lead) {
            throw ParseError("forecast offsets are not a uniform ladder", 0);
        }
    }
    ReadForecasts out;
    out.city_ids = city_ids;
    out.forecasts.lead_hours = lead;
    out.forecasts.tau = static_cast<int>(offsets.size());
    for (const auto& [init, per_offset] : table) {
        if (per_offset.size() != offsets.size()) {
            throw ParseError("init " + format_iso_hour(init) +
                                       " has a different offset set",
                                   0);
        }
        out.forecasts.init_times.push_back(init);
        std::vector<DenseMatrix> row;
        for (const int off : offsets) {
            const auto& per_city = per_offset.at(off);
            DenseMatrix m(static_cast<int>(city_ids.size()), data::kPollutants);
            for (int n = 0; n < m.rows; ++n) {
                const auto it = per_city.find(city_ids[static_cast<size_t>(n)]);
                if (it == per_city.end()) {
                    throw ParseError("missing city '" + city_ids[static_cast<size_t>(n)] +
                                               "' at offset " + std::to_string(off),
                                           0);
                }
                const auto& seen_flags =
                    seen.at(init).at(off).at(city_ids[static_cast<size_t>(n)]);
                for (int d = 0; d < data::kPollutants; ++d) {
                    if (!seen_flags[static_cast<size_t>(d)]) {
                        throw ParseError("missing pollutant value for city '" +
                                                   city_ids[static_cast<size_t>(n)] + "'",
                                               0);
                    }
                    m.at(n, d) = it->second[static_cast<size_t>(d)];
                }
            }
            row.push_back(std::move(m));
        }
        out.forecasts.preds.push_back(std::move(row));
    }
    return out;
}

void align_forecasts(ForecastSet& forecasts, const std::vector<std::string>& city_ids,
                     const std::vector<data::CityInfo>& target) {
    if (city_ids.size() != target.size()) {
        throw ShapeError("forecast covers " + std::to_string(city_ids.size()) +
                               " cities, truth has " + std::to_string(target.size()));
    }
    std::vector<int> perm(target.size());
    for (size_t n = 0; n < target.size(); ++n) {
        const auto it = std::find(city_ids.begin(), city_ids.end(), target[n].id);
        if (it == city_ids.end()) {
            throw ConfigError("forecast lacks city '" + target[n].id + "'");
        }
        perm[n] = static_cast<int>(it - city_ids.begin());
    }
    for (auto& row : forecasts.preds) {
        for (auto& m : row) {
            DenseMatrix re(m.rows, m.cols);
            for (int n = 0; n < m.rows; ++n) {
                for (int d = 0; d < m.cols; ++d) re.at(n, d) = m.at(perm[static_cast<size_t>(n)], d);
            }
            m = std::move(re);
        }
    }
}

}  // namespace mvar::eval
