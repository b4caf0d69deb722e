#include "mvar/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "mvar/checkpoint.hpp"
#include "mvar/evaluation.hpp"
#include "mvar/model.hpp"
#include "mvar/qc.hpp"
#include "mvar/scheduler.hpp"
#include "mvar/series.hpp"
#include "mvar/synthetic.hpp"
#include "mvar/training.hpp"
#include "mvar/util.hpp"

namespace mvar::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json load_json(const std::string& path) {
    if (!file_exists(path)) throw MissingArtifactError("config file not found: " + path);
    const std::string text = read_text_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        const size_t stop = std::min(text.size(), static_cast<size_t>(e.byte));
        const long line_no = 1 + static_cast<long>(std::count(text.begin(), text.begin() + stop, '\n'));
        throw ParseError("invalid JSON in " + path + ": " + e.what(), line_no);
    }
}

/// Every key must come from the allowed list; typos and stale keys fail
/// loudly instead of being silently ignored.
void reject_unknown_keys(const json& obj, const std::string& scope,
                         std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw ConfigError("config section '" + scope + "' must be a JSON object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) throw ConfigError("unknown config key '" + scope + it.key() + "'");
    }
}

double get_number(const json& obj, const std::string& scope, const char* key, double fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number()) throw ConfigError("config key '" + scope + key + "' must be a number");
    return v.get<double>();
}

int get_int(const json& obj, const std::string& scope, const char* key, int fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number_integer())
        throw ConfigError("config key '" + scope + key + "' must be an integer");
    return v.get<int>();
}

uint64_t get_u64(const json& obj, const std::string& scope, const char* key, uint64_t fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<int64_t>() < 0))
        throw ConfigError("config key '" + scope + key + "' must be a non-negative integer");
    return v.get<uint64_t>();
}

bool get_bool(const json& obj, const std::string& scope, const char* key, bool fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_boolean()) throw ConfigError("config key '" + scope + key + "' must be a boolean");
    return v.get<bool>();
}

std::string get_string(const json& obj, const std::string& scope, const char* key,
                       const std::string& fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_string()) throw ConfigError("config key '" + scope + key + "' must be a string");
    return v.get<std::string>();
}

std::string need_string(const json& obj, const std::string& scope, const char* key) {
    const std::string v = get_string(obj, scope, key, "");
    if (v.empty()) throw ConfigError("config key '" + scope + key + "' is required");
    return v;
}

std::optional<uint64_t> env_seed() {
    const char* raw = std::getenv("MVAR_SEED");
    if (raw == nullptr || *raw == '\0') return std::nullopt;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(raw, &end, 10);
    if (end == raw || *end != '\0')
        throw ConfigError(std::string("MVAR_SEED must be a non-negative integer, got '") + raw +
                          "'");
    return static_cast<uint64_t>(v);
}

/// foo.csv -> foo.meta; anything else gets .meta appended.
std::string sidecar_meta_path(const std::string& csv_path) {
    const std::string suffix = ".csv";
    if (csv_path.size() > suffix.size() &&
        csv_path.compare(csv_path.size() - suffix.size(), suffix.size(), suffix) == 0)
        return csv_path.substr(0, csv_path.size() - suffix.size()) + ".meta";
    return csv_path + ".meta";
}

std::string first_line(const std::string& path) {
    if (!file_exists(path)) throw MissingArtifactError("file not found: " + path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    return trim(line);
}

// ---- qc -------------------------------------------------------------------

int cmd_qc(const std::string& stations_path, const std::string& out_dir,
           const std::string& variogram) {
    data::QcOptions opt;
    if (variogram != "auto") {
        const std::vector<std::string> parts = split(variogram, ',');
        double sill = 0.0;
        double range_km = 0.0;
        bool ok = parts.size() == 2;
        if (ok) {
            try {
                sill = std::stod(parts[0]);
                range_km = std::stod(parts[1]);
            } catch (const std::exception&) {
                ok = false;
            }
        }
        if (!ok || sill <= 0.0 || range_km <= 0.0)
            throw ConfigError("--variogram must be 'auto' or 'sill,range' with positive values, got '" +
                              variogram + "'");
        data::Variogram vg;
        vg.sill = sill;
        vg.range_km = range_km;
        opt.variogram_override = vg;
    }

    const data::StationTable table = data::read_station_csv(stations_path);
    const data::QcResult result = data::run_qc_pipeline(table, opt);
    const data::NormStats stats = data::compute_norm_stats(result.series);

    fs::create_directories(out_dir);
    data::write_city_csv(out_dir + "/cities.csv", result.series);
    data::write_city_meta(out_dir + "/cities.meta", result.series, result.audit);
    data::write_norm_stats(out_dir + "/norm_stats.txt", stats);

    int64_t fills = 0;
    int64_t dropped = 0;
    for (int d = 0; d < data::kPollutants; ++d) {
        fills += result.audit.fills[static_cast<size_t>(d)];
        dropped += result.audit.dropped_timesteps[static_cast<size_t>(d)];
    }
    std::cout << "stations " << result.audit.stations_total << " kept "
              << (result.audit.stations_total - static_cast<int>(result.audit.removed.size()))
              << " removed " << result.audit.removed.size() << "\n";
    std::cout << "cities " << result.series.n_cities() << " timesteps " << result.series.n_times()
              << "\n";
    std::cout << "filled " << fills << " dropped " << dropped << "\n";
    std::cout << "wrote " << out_dir << "/cities.csv " << out_dir << "/cities.meta " << out_dir
              << "/norm_stats.txt\n";
    return 0;
}

// ---- train ----------------------------------------------------------------

struct TrainRun {
    std::string city_csv;
    std::string city_meta;
    std::string norm_stats;
    std::string meteo_grid;
    std::string out_dir;
    model::HyperParams hyper;
    train::TrainConfig tc;
    bool use_meteo = false;
    int lead_hours = 6;
    double val_fraction = 0.0;
};

TrainRun parse_train_config(const std::string& path) {
    const json root = load_json(path);
    reject_unknown_keys(root, "", {"paths", "hyper", "train", "use_meteo", "lead_hours",
                                   "val_fraction"});
    TrainRun run;

    const json paths = root.contains("paths") ? root.at("paths") : json::object();
    reject_unknown_keys(paths, "paths.", {"city_csv", "city_meta", "norm_stats", "meteo_grid",
                                          "out_dir"});
    run.city_csv = need_string(paths, "paths.", "city_csv");
    run.city_meta = get_string(paths, "paths.", "city_meta", sidecar_meta_path(run.city_csv));
    run.norm_stats = need_string(paths, "paths.", "norm_stats");
    run.meteo_grid = get_string(paths, "paths.", "meteo_grid", "");
    run.out_dir = need_string(paths, "paths.", "out_dir");

    const json hyper = root.contains("hyper") ? root.at("hyper") : json::object();
    reject_unknown_keys(hyper, "hyper.",
                        {"blocks", "d_in", "d_pa", "d_pm", "d_t", "heads", "ds_channels", "ln_eps"});
    run.hyper.blocks = get_int(hyper, "hyper.", "blocks", run.hyper.blocks);
    run.hyper.d_in = get_int(hyper, "hyper.", "d_in", run.hyper.d_in);
    run.hyper.d_pa = get_int(hyper, "hyper.", "d_pa", run.hyper.d_pa);
    run.hyper.d_pm = get_int(hyper, "hyper.", "d_pm", run.hyper.d_pm);
    run.hyper.d_t = get_int(hyper, "hyper.", "d_t", run.hyper.d_t);
    run.hyper.heads = get_int(hyper, "hyper.", "heads", run.hyper.heads);
    run.hyper.ds_channels = get_int(hyper, "hyper.", "ds_channels", run.hyper.ds_channels);
    run.hyper.ln_eps = get_number(hyper, "hyper.", "ln_eps", run.hyper.ln_eps);

    const json tj = root.contains("train") ? root.at("train") : json::object();
    reject_unknown_keys(tj, "train.",
                        {"tau", "lr", "weight_decay", "epochs", "batch_size", "w_max", "w_min",
                         "seed", "clip_norm", "mae", "sample_stride_hours"});
    run.tc.tau = get_int(tj, "train.", "tau", run.tc.tau);
    run.tc.lr = get_number(tj, "train.", "lr", run.tc.lr);
    run.tc.weight_decay = get_number(tj, "train.", "weight_decay", run.tc.weight_decay);
    run.tc.epochs = get_int(tj, "train.", "epochs", run.tc.epochs);
    run.tc.batch_size = get_int(tj, "train.", "batch_size", run.tc.batch_size);
    run.tc.w_max = get_number(tj, "train.", "w_max", run.tc.w_max);
    run.tc.w_min = get_number(tj, "train.", "w_min", run.tc.w_min);
    run.tc.seed = get_u64(tj, "train.", "seed", run.tc.seed);
    run.tc.clip_norm = get_number(tj, "train.", "clip_norm", run.tc.clip_norm);
    run.tc.mae = get_bool(tj, "train.", "mae", run.tc.mae);
    run.tc.sample_stride_hours =
        get_int(tj, "train.", "sample_stride_hours", run.tc.sample_stride_hours);

    run.use_meteo = get_bool(root, "", "use_meteo", run.use_meteo);
    run.lead_hours = get_int(root, "", "lead_hours", run.lead_hours);
    run.val_fraction = get_number(root, "", "val_fraction", run.val_fraction);
    if (run.val_fraction < 0.0 || run.val_fraction >= 1.0)
        throw ConfigError("val_fraction must lie in [0, 1)");
    if (run.lead_hours < 1) throw ConfigError("lead_hours must be positive");
    if (run.use_meteo && run.meteo_grid.empty())
        throw ConfigError("use_meteo requires paths.meteo_grid");
    return run;
}

int cmd_train(const std::string& config_path, int lead_override) {
    TrainRun run = parse_train_config(config_path);
    if (lead_override > 0) run.lead_hours = lead_override;
    if (const auto seed = env_seed()) run.tc.seed = *seed;
    run.tc.validate();

    const data::CitySeries physical = data::read_city_series(run.city_csv, run.city_meta);
    const data::NormStats stats = data::read_norm_stats(run.norm_stats);
    if (static_cast<int>(stats.city_ids.size()) != physical.n_cities())
        throw ConfigError("norm stats cover " + std::to_string(stats.city_ids.size()) +
                          " cities but the series has " + std::to_string(physical.n_cities()));
    for (int n = 0; n < physical.n_cities(); ++n)
        if (stats.city_ids[static_cast<size_t>(n)] != physical.cities[static_cast<size_t>(n)].id)
            throw ConfigError("norm stats city order differs from the series at index " +
                              std::to_string(n));

    std::optional<data::MeteoGrid> grid;
    if (run.use_meteo) grid = data::read_meteo_grid(run.meteo_grid);
    const data::MeteoGrid* grid_ptr = grid ? &*grid : nullptr;

    model::HyperParams hp = run.hyper;
    hp.n_cities = physical.n_cities();
    hp.use_meteo = run.use_meteo;
    if (grid) {
        hp.meteo_channels = static_cast<int>(grid->variables.size());
        hp.grid_h = grid->grid_h;
        hp.grid_w = grid->grid_w;
    }
    hp.validate();

    data::CitySeries normed = physical;
    data::normalize(normed, stats);
    std::vector<train::RolloutSample> samples = train::build_samples(
        normed, run.lead_hours, run.tc.tau, run.tc.sample_stride_hours, grid_ptr);
    if (samples.empty())
        throw EmptyResultError("no complete rollout windows in " + run.city_csv + " at lead " +
                               std::to_string(run.lead_hours) + "h");

    // Validation samples come off the chronological tail so they never
    // overlap the shuffled training pool.
    const size_t n_val = static_cast<size_t>(run.val_fraction * static_cast<double>(samples.size()));
    std::vector<train::RolloutSample> val_samples(samples.end() - static_cast<long>(n_val),
                                                  samples.end());
    samples.resize(samples.size() - n_val);

    std::cout << "training lead " << run.lead_hours << "h on " << samples.size() << " samples";
    if (!val_samples.empty()) std::cout << " (+" << val_samples.size() << " validation)";
    std::cout << ", " << run.tc.epochs << " epochs\n";

    model::MvarModel init = model::init_model(hp, physical.cities, run.tc.seed, grid_ptr,
                                              run.lead_hours, run.norm_stats);
    const train::TrainResult result =
        train::train(std::move(init), samples, val_samples, run.tc, grid_ptr);

    fs::create_directories(run.out_dir);
    const std::string tag = "lead" + std::to_string(run.lead_hours);
    const std::string ckpt_path = run.out_dir + "/" + tag + ".mvck";
    model::write_checkpoint(ckpt_path, result.best_model);
    train::write_loss_log(run.out_dir + "/loss_" + tag + ".csv", result.log);

    double last_train = 0.0;
    for (const auto& entry : result.log)
        if (entry.split == "train") last_train = entry.loss;
    std::cout << "final train loss " << format_full(last_train) << "\n";
    std::cout << "wrote " << ckpt_path << "\n";
    return 0;
}

// ---- forecast -------------------------------------------------------------

int cmd_forecast(const std::string& ckpt_dir, const std::string& init_str, int horizon,
                 const std::string& data_csv, const std::string& data_meta,
                 const std::string& norm_override, const std::string& meteo_path,
                 const std::string& out_dir, const std::vector<int>& leads) {
    if (horizon < 1) throw ConfigError("--horizon must be positive");
    const int64_t init_hour = parse_iso_hour(init_str);

    // Distinct leads the hourly plans will actually invoke; checkpoints are
    // verified up front so a missing artifact fails before any model runs.
    std::set<int> needed;
    for (int h = 1; h <= horizon; ++h)
        for (int step : sched::greedy_plan(h, leads).steps) needed.insert(step);
    std::map<int, model::MvarModel> models;
    for (int lead : needed) {
        const std::string path = ckpt_dir + "/lead" + std::to_string(lead) + ".mvck";
        if (!file_exists(path))
            throw MissingArtifactError("no checkpoint for lead " + std::to_string(lead) + "h (" +
                                       path + ")");
        model::MvarModel m = model::read_checkpoint(path);
        if (m.lead_hours != lead)
            throw ConfigError(path + " was trained at lead " + std::to_string(m.lead_hours) +
                              "h, not " + std::to_string(lead) + "h");
        models.emplace(lead, std::move(m));
    }
    const model::MvarModel& first = models.begin()->second;
    for (const auto& [lead, m] : models) {
        if (m.cities.size() != first.cities.size())
            throw ConfigError("checkpoints disagree on the city list");
        for (size_t n = 0; n < m.cities.size(); ++n)
            if (m.cities[n].id != first.cities[n].id)
                throw ConfigError("checkpoints disagree on the city list");
    }

    std::string stats_path = norm_override;
    if (stats_path.empty()) {
        stats_path = first.normstats_ref;
        if (!file_exists(stats_path) && file_exists(ckpt_dir + "/" + first.normstats_ref))
            stats_path = ckpt_dir + "/" + first.normstats_ref;
    }
    if (stats_path.empty() || !file_exists(stats_path))
        throw MissingArtifactError("normalization stats not found (checkpoint references '" +
                                   first.normstats_ref + "'; pass --norm-stats)");
    const data::NormStats stats = data::read_norm_stats(stats_path);

    data::CitySeries physical = data::read_city_series(
        data_csv, data_meta.empty() ? sidecar_meta_path(data_csv) : data_meta);
    // The observation columns must line up with the model's city axis.
    {
        std::vector<int> order;
        for (const auto& city : first.cities) {
            int found = -1;
            for (int n = 0; n < physical.n_cities(); ++n)
                if (physical.cities[static_cast<size_t>(n)].id == city.id) {
                    found = n;
                    break;
                }
            if (found < 0)
                throw ConfigError("observations lack model city '" + city.id + "'");
            order.push_back(found);
        }
        data::CitySeries reordered;
        reordered.cities = first.cities;
        reordered.times = physical.times;
        reordered.allocate();
        for (int t = 0; t < physical.n_times(); ++t)
            for (size_t n = 0; n < order.size(); ++n)
                for (int d = 0; d < data::kPollutants; ++d)
                    if (physical.valid(t, order[n], d))
                        reordered.set(t, static_cast<int>(n), d, physical.value(t, order[n], d));
        physical = std::move(reordered);
    }
    if (static_cast<int>(stats.city_ids.size()) != physical.n_cities())
        throw ConfigError("norm stats city count differs from the checkpoint city list");
    for (int n = 0; n < physical.n_cities(); ++n)
        if (stats.city_ids[static_cast<size_t>(n)] != physical.cities[static_cast<size_t>(n)].id)
            throw ConfigError("norm stats city order differs from the checkpoint city list");

    std::optional<data::MeteoGrid> grid;
    bool any_meteo = false;
    for (const auto& [lead, m] : models) any_meteo = any_meteo || m.hp.use_meteo;
    if (any_meteo) {
        if (meteo_path.empty())
            throw ConfigError("a checkpoint uses meteorology; pass --meteo <grid file>");
        grid = data::read_meteo_grid(meteo_path);
    }

    // Each lead's step model closes over its checkpoint; states travel the
    // timeline in physical units and are normalized per invocation.
    std::map<int, sched::StepModel> step_models;
    for (const auto& [lead, m] : models) {
        const model::MvarModel* mp = &m;
        const data::MeteoGrid* gp = grid ? &*grid : nullptr;
        step_models[lead] = [mp, gp, &stats, init_hour, lead](const num::DenseMatrix& x_prev,
                                                              const num::DenseMatrix& x_curr,
                                                              int cursor) {
            std::optional<model::MeteoInput> met;
            if (mp->hp.use_meteo) {
                const int64_t h_curr = init_hour + cursor;
                const int64_t h_next = h_curr + lead;
                model::MeteoInput mi;
                mi.grid = gp;
                mi.t_curr = gp->find_time(h_curr);
                mi.t_next = gp->find_time(h_next);
                if (mi.t_curr < 0)
                    throw MissingArtifactError("meteorology grid lacks hour " +
                                               format_iso_hour(h_curr));
                if (mi.t_next < 0)
                    throw MissingArtifactError("meteorology grid lacks hour " +
                                               format_iso_hour(h_next));
                mi.te_hour = h_curr;
                met = mi;
            }
            const num::DenseMatrix out = model::predict_step_plain(
                *mp, data::normalize_slice(x_prev, stats), data::normalize_slice(x_curr, stats),
                met);
            return data::denormalize_slice(out, stats);
        };
    }

    // Observation history back to the largest lead; missing hours are only
    // fatal if a plan actually reads them.
    sched::Timeline history;
    const int max_lead = *needed.rbegin();
    for (int offset = -max_lead; offset <= 0; ++offset) {
        const int t = physical.find_time(init_hour + offset);
        if (t >= 0 && physical.slice_complete(t)) history.put(offset, physical.slice(t));
    }
    if (!history.has(0))
        throw ConfigError("observations lack a complete state at " + format_iso_hour(init_hour));

    const sched::ComposeResult hourly = sched::hourly_forecast(horizon, step_models, history, leads);

    eval::ForecastSet out_set;
    out_set.init_times = {init_hour};
    out_set.lead_hours = 1;
    out_set.tau = horizon;
    out_set.preds.emplace_back();
    for (int h = 1; h <= horizon; ++h) out_set.preds[0].push_back(hourly.states.at(h));

    fs::create_directories(out_dir);
    std::vector<std::string> city_ids;
    for (const auto& city : first.cities) city_ids.push_back(city.id);
    eval::write_forecast_csv(out_dir + "/forecast.csv", out_set, city_ids);

    const sched::ForecastPlan plan = sched::greedy_plan(horizon, leads);
    std::ostringstream dump;
    dump << "horizon " << plan.horizon << "\n";
    dump << "steps";
    for (int step : plan.steps) dump << ' ' << step;
    dump << "\n";
    dump << "invocations " << plan.invocations() << "\n";
    write_text_file(out_dir + "/plan.txt", dump.str());
    std::cout << dump.str();
    std::cout << "wrote " << out_dir << "/forecast.csv\n";
    return 0;
}

// ---- evaluate -------------------------------------------------------------

const char* kForecastHeader = "init_time,offset_hours,city_id,pollutant,value";

/// Time-aligned city CSV reinterpreted as a forecast set: predictions for
/// each init are the series' own values at the target hours. Cells the
/// prediction series cannot supply fall back to zero and are counted.
eval::ForecastSet series_as_forecasts(const data::CitySeries& pred,
                                      const std::vector<int64_t>& init_times, int lead_hours,
                                      int tau, int64_t* substituted) {
    eval::ForecastSet set;
    set.init_times = init_times;
    set.lead_hours = lead_hours;
    set.tau = tau;
    for (const int64_t init : init_times) {
        std::vector<num::DenseMatrix> steps;
        for (int g = 1; g <= tau; ++g) {
            const int t = pred.find_time(init + static_cast<int64_t>(g) * lead_hours);
            num::DenseMatrix m(pred.n_cities(), data::kPollutants);
            for (int n = 0; n < pred.n_cities(); ++n)
                for (int d = 0; d < data::kPollutants; ++d) {
                    if (t >= 0 && pred.valid(t, n, d))
                        m.at(n, d) = pred.value(t, n, d);
                    else
                        ++*substituted;
                }
            steps.push_back(std::move(m));
        }
        set.preds.push_back(std::move(steps));
    }
    return set;
}

int cmd_evaluate(const std::string& pred_path, const std::string& truth_csv,
                 const std::string& pred_meta, const std::string& truth_meta,
                 const std::string& out_dir, int lead_hours, int tau, int utc_offset) {
    const data::CitySeries truth = data::read_city_series(
        truth_csv, truth_meta.empty() ? sidecar_meta_path(truth_csv) : truth_meta);

    eval::ForecastSet forecasts;
    const std::string header = first_line(pred_path);
    if (header == kForecastHeader) {
        eval::ReadForecasts read = eval::read_forecast_csv(pred_path);
        eval::align_forecasts(read.forecasts, read.city_ids, truth.cities);
        forecasts = std::move(read.forecasts);
    } else {
        if (lead_hours < 1 || tau < 1) throw ConfigError("--lead and --tau must be positive");
        const data::CitySeries pred = data::read_city_series(
            pred_path, pred_meta.empty() ? sidecar_meta_path(pred_path) : pred_meta);
        if (pred.n_cities() != truth.n_cities())
            throw ShapeError("prediction series has " + std::to_string(pred.n_cities()) +
                             " cities, truth has " + std::to_string(truth.n_cities()));
        for (int n = 0; n < pred.n_cities(); ++n)
            if (pred.cities[static_cast<size_t>(n)].id != truth.cities[static_cast<size_t>(n)].id)
                throw ConfigError("prediction city order differs from truth at index " +
                                  std::to_string(n));
        const std::vector<int64_t> init_times =
            eval::select_init_times(truth, lead_hours, tau, utc_offset);
        if (init_times.empty())
            throw EmptyResultError("no valid forecast init times in " + truth_csv);
        int64_t substituted = 0;
        forecasts = series_as_forecasts(pred, init_times, lead_hours, tau, &substituted);
        if (substituted > 0)
            std::cout << "warning: prediction series missing " << substituted
                      << " cells, scored as zero\n";
    }

    const eval::EvalReport report = eval::rmse_buckets(forecasts, truth);
    int64_t scored = 0;
    for (const auto& row : report.step_n)
        for (const int64_t n : row) scored += n;
    if (scored == 0) throw EmptyResultError("no forecast step had complete truth to score");

    fs::create_directories(out_dir);
    eval::write_bucket_csv(out_dir + "/bucket_rmse.csv", report);
    eval::write_step_csv(out_dir + "/step_rmse.csv", report);

    std::cout << "inits " << report.init_times.size() << " steps " << forecasts.tau << " lead "
              << forecasts.lead_hours << "h\n";
    std::cout << "pollutant";
    for (const auto& label : report.bucket_labels) std::cout << ' ' << label;
    std::cout << "\n";
    for (int d = 0; d < static_cast<int>(report.pollutants.size()); ++d) {
        std::cout << report.pollutants[static_cast<size_t>(d)];
        for (int b = 0; b < static_cast<int>(report.bucket_labels.size()); ++b)
            std::cout << ' ' << format_fixed6(report.bucket_rmse.at(d, b));
        std::cout << "\n";
    }
    std::cout << "wrote " << out_dir << "/bucket_rmse.csv " << out_dir << "/step_rmse.csv\n";
    return 0;
}

// ---- synth ----------------------------------------------------------------

int cmd_synth(const std::string& config_path, const std::string& out_override) {
    const json root = load_json(config_path);
    reject_unknown_keys(root, "",
                        {"out_dir", "n_cities", "stations_per_city", "days", "grid_h", "grid_w",
                         "seed", "start_time", "wind_strength", "station_noise",
                         "station_missing_rate", "timestep_missing_rate", "o3_amplitude",
                         "pm_coupling"});
    synth::SynthConfig cfg;
    cfg.n_cities = get_int(root, "", "n_cities", cfg.n_cities);
    cfg.stations_per_city = get_int(root, "", "stations_per_city", cfg.stations_per_city);
    cfg.days = get_int(root, "", "days", cfg.days);
    cfg.grid_h = get_int(root, "", "grid_h", cfg.grid_h);
    cfg.grid_w = get_int(root, "", "grid_w", cfg.grid_w);
    cfg.seed = get_u64(root, "", "seed", cfg.seed);
    cfg.start_time = get_string(root, "", "start_time", cfg.start_time);
    cfg.wind_strength = get_number(root, "", "wind_strength", cfg.wind_strength);
    cfg.station_noise = get_number(root, "", "station_noise", cfg.station_noise);
    cfg.station_missing_rate = get_number(root, "", "station_missing_rate", cfg.station_missing_rate);
    cfg.timestep_missing_rate =
        get_number(root, "", "timestep_missing_rate", cfg.timestep_missing_rate);
    cfg.o3_amplitude = get_number(root, "", "o3_amplitude", cfg.o3_amplitude);
    cfg.pm_coupling = get_number(root, "", "pm_coupling", cfg.pm_coupling);
    if (const auto seed = env_seed()) cfg.seed = *seed;
    cfg.validate();

    std::string out_dir = out_override.empty() ? get_string(root, "", "out_dir", "") : out_override;
    if (out_dir.empty()) throw ConfigError("output directory required (config out_dir or --out)");

    const synth::SynthOutput out = synth::generate(cfg);
    fs::create_directories(out_dir);
    synth::write_outputs(out_dir, out);
    std::cout << "cities " << out.truth.n_cities() << " stations " << out.stations.n_stations()
              << " hours " << out.truth.n_times() << "\n";
    std::cout << "wrote " << out_dir << "/stations.csv " << out_dir << "/truth.csv " << out_dir
              << "/truth.meta " << out_dir << "/meteo.mvgr\n";
    return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
    CLI::App app{"multivariate air pollutant forecasting toolkit"};
    app.require_subcommand(1);

    std::string qc_stations, qc_out;
    std::string qc_variogram = "auto";
    CLI::App* qc = app.add_subcommand("qc", "quality-control station data into city series");
    qc->add_option("--stations", qc_stations, "station observation CSV")->required();
    qc->add_option("--out", qc_out, "output directory for city CSV, metadata and norm stats")
        ->required();
    qc->add_option("--variogram", qc_variogram,
                   "'auto' to fit per pollutant, or 'sill,range' to override");

    std::string train_config;
    int train_lead = 0;
    CLI::App* tr = app.add_subcommand("train", "train a single-step model from QC outputs");
    tr->add_option("--config", train_config, "JSON run configuration")->required();
    tr->add_option("--lead", train_lead, "override the configured lead spacing in hours");

    std::string fc_ckpts, fc_init, fc_data, fc_meta, fc_norm, fc_meteo;
    std::string fc_out = ".";
    int fc_horizon = 0;
    std::vector<int> fc_leads = {24, 6, 3, 1};
    CLI::App* fc = app.add_subcommand("forecast", "compose an hourly forecast from lead models");
    fc->add_option("--checkpoints", fc_ckpts, "directory holding lead<h>.mvck checkpoints")
        ->required();
    fc->add_option("--init", fc_init, "forecast init time (ISO-8601 hour)")->required();
    fc->add_option("--horizon", fc_horizon, "forecast horizon in hours")->required();
    fc->add_option("--data", fc_data, "observed city CSV supplying the input states")->required();
    fc->add_option("--meta", fc_meta, "city metadata sidecar (default: derived from --data)");
    fc->add_option("--norm-stats", fc_norm,
                   "normalization stats (default: the checkpoint's reference)");
    fc->add_option("--meteo", fc_meteo, "meteorology grid file for meteorology checkpoints");
    fc->add_option("--out", fc_out, "output directory (default .)");
    fc->add_option("--leads", fc_leads, "available lead hours (default 24 6 3 1)");

    std::string ev_pred, ev_truth, ev_pred_meta, ev_truth_meta;
    std::string ev_out = ".";
    int ev_lead = 6;
    int ev_tau = 8;
    int ev_offset = 8;
    CLI::App* ev = app.add_subcommand("evaluate", "score forecasts against truth");
    ev->add_option("--pred", ev_pred, "forecast CSV, or a city CSV scored time-aligned")
        ->required();
    ev->add_option("--truth", ev_truth, "truth city CSV")->required();
    ev->add_option("--pred-meta", ev_pred_meta, "prediction metadata sidecar (city CSV form only)");
    ev->add_option("--truth-meta", ev_truth_meta, "truth metadata sidecar (default: derived)");
    ev->add_option("--out", ev_out, "output directory (default .)");
    ev->add_option("--lead", ev_lead, "step spacing in hours for city CSV predictions");
    ev->add_option("--tau", ev_tau, "steps per init for city CSV predictions");
    ev->add_option("--utc-offset", ev_offset, "local time zone offset for init selection");

    std::string sy_config, sy_out;
    CLI::App* sy = app.add_subcommand("synth", "generate a seeded synthetic dataset");
    sy->add_option("--config", sy_config, "JSON generator configuration")->required();
    sy->add_option("--out", sy_out, "output directory (overrides config out_dir)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (qc->parsed()) return cmd_qc(qc_stations, qc_out, qc_variogram);
        if (tr->parsed()) return cmd_train(train_config, train_lead);
        if (fc->parsed())
            return cmd_forecast(fc_ckpts, fc_init, fc_horizon, fc_data, fc_meta, fc_norm, fc_meteo,
                                fc_out, fc_leads);
        if (ev->parsed())
            return cmd_evaluate(ev_pred, ev_truth, ev_pred_meta, ev_truth_meta, ev_out, ev_lead,
                                ev_tau, ev_offset);
        if (sy->parsed()) return cmd_synth(sy_config, sy_out);
    } catch (const EmptyResultError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const MissingArtifactError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}

}  // namespace mvar::cli
