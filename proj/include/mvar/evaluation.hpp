#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvar/model.hpp"
#include "mvar/series.hpp"

namespace mvar::eval {

/// Timestamps at local 08:00 and 20:00 (local = UTC + local_offset_hours)
/// whose two input states are mask-complete and which have at least one
/// reachable target step in the series.
std::vector<int64_t> select_init_times(const data::CitySeries& series, int lead_hours, int tau,
                                       int local_offset_hours = 8);

/// Forecasts in physical units: preds[i][g] is the N x D prediction for
/// init_times[i] at step g+1 (hour (g+1)*lead_hours after the init).
struct ForecastSet {
    std::vector<int64_t> init_times;
    int lead_hours = 6;
    int tau = 0;
    std::vector<std::vector<num::DenseMatrix>> preds;
};

/// Roll the model out from every init time; inputs are normalized with
/// stats, outputs denormalized back to physical units.
ForecastSet forecast_rollouts(const model::MvarModel& model, const data::CitySeries& physical,
                              const data::NormStats& stats, const std::vector<int64_t>& init_times,
                              int tau, const data::MeteoGrid* grid);

/// Every step predicts the init-time observation unchanged.
ForecastSet persistence_baseline(const data::CitySeries& physical,
                                 const std::vector<int64_t>& init_times, int lead_hours, int tau);

struct EvalReport {
    std::vector<std::string> pollutants;
    std::vector<std::string> bucket_labels;
    int lead_hours = 6;
    num::DenseMatrix bucket_rmse;                 // D x buckets, 0 where n = 0
    std::vector<std::vector<int64_t>> bucket_n;   // pooled cell counts
    num::DenseMatrix step_rmse;                   // D x tau
    std::vector<std::vector<int64_t>> step_n;
    std::vector<int64_t> init_times;
};

/// Pooled-then-root RMSE per pollutant over the horizon windows 1-24h,
/// 25-48h, 49-72h and 97-120h (a step counts when its hour lands inside a
/// window; at 6 h resolution that is steps 1-4, 5-8, 9-12 and 17-20, with
/// 13-16 outside every window). A step with any missing truth for a
/// pollutant drops that (init, step) pair from that pollutant's pooling.
EvalReport rmse_buckets(const ForecastSet& forecasts, const data::CitySeries& truth);

/// Elementwise ratio of two RMSE tables; every baseline entry must be > 0.
num::DenseMatrix relative_rmse(const num::DenseMatrix& report, const num::DenseMatrix& baseline);

/// One number: RMSE pooled over all pollutants, cities, steps and inits in
/// normalized units (each pollutant scaled by its per-city training stats).
double pooled_normalized_rmse(const ForecastSet& forecasts, const data::CitySeries& truth,
                              const data::NormStats& stats);

void write_bucket_csv(const std::string& path, const EvalReport& report);
void write_step_csv(const std::string& path, const EvalReport& report);

/// Forecast rows as `init_time,offset_hours,city_id,pollutant,value`, one
/// per (init, step, city, pollutant).
void write_forecast_csv(const std::string& path, const ForecastSet& forecasts,
                        const std::vector<std::string>& city_ids);

struct ReadForecasts {
    ForecastSet forecasts;
    std::vector<std::string> city_ids;
};

/// Inverse of write_forecast_csv. Offsets must form a uniform 1..tau ladder
/// (the same for every init); lead_hours is inferred from the spacing.
ReadForecasts read_forecast_csv(const std::string& path);

/// Reorder the city axis of every prediction to match the target city list.
void align_forecasts(ForecastSet& forecasts, const std::vector<std::string>& city_ids,
                     const std::vector<data::CityInfo>& target);

}  // namespace mvar::eval
