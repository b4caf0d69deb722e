#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mvar/model.hpp"
#include "mvar/series.hpp"

namespace mvar::train {

struct TrainConfig {
    int tau = 8;
    double lr = 1e-4;
    double weight_decay = 1e-2;
    int epochs = 20;
    int batch_size = 64;
    double w_max = 5.0;
    double w_min = 0.1;
    uint64_t seed = 0;
    double clip_norm = 0.0;  // 0 disables gradient clipping
    bool mae = false;        // absolute error instead of squared
    /// Spacing between sample start times when building the dataset.
    int sample_stride_hours = 1;

    void validate() const;
};

/// One training sample: the two input states, tau rollout targets, and (in
/// meteorology mode) the tau+1 grid time indices covering the rollout span.
struct RolloutSample {
    num::DenseMatrix x_prev;
    num::DenseMatrix x_curr;
    std::vector<num::DenseMatrix> targets;
    std::vector<int> meteo_t;  // grid indices for hours t0, t0+lead, ..., t0+tau*lead
    int64_t t0 = 0;            // epoch hour of x_curr
};

/// Linearly spaced weights from w_max down to w_min, length tau.
std::vector<double> make_sw_weights(int tau, double w_max, double w_min);

/// Step-weighted loss over a rollout: the weighted average over steps of the
/// per-step mean (over cities and pollutants) squared error.
double sw_loss_plain(const std::vector<num::DenseMatrix>& preds,
                     const std::vector<num::DenseMatrix>& targets,
                     const std::vector<double>& weights, bool mae = false);

/// Taped form for training; targets enter as constant leaves.
num::Val sw_loss(num::Tape& tape, const std::vector<num::Val>& preds,
                 const std::vector<num::DenseMatrix>& targets, const std::vector<double>& weights,
                 bool mae = false);

/// Autoregressive rollout on a tape: step g consumes the predictions of
/// steps g-1 and g-2 (the observed inputs for the first two) and, with
/// meteorology, the grid pair straddling that step. Gradients flow through
/// the whole chain.
std::vector<num::Val> rollout(model::TapedModel& tm, const RolloutSample& sample, int tau,
                              const data::MeteoGrid* grid);

/// Every rollout window at the configured stride whose pollutant slices are
/// all mask-complete (and whose meteorology hours are all on the grid).
std::vector<RolloutSample> build_samples(const data::CitySeries& series, int lead_hours, int tau,
                                         int sample_stride_hours, const data::MeteoGrid* grid);

struct AdamState {
    std::vector<num::DenseMatrix> m;
    std::vector<num::DenseMatrix> v;
    int64_t step = 0;
};

AdamState make_adam_state(const num::ParamSet& params);

/// One Adam update with bias correction and decoupled weight decay. A
/// non-finite gradient aborts with the offending parameter's name.
void adam_step(num::ParamSet& params, const num::GradSet& grads, AdamState& state,
               const TrainConfig& cfg);

struct LossLogEntry {
    int epoch = 0;
    std::string split;
    double loss = 0.0;
};

struct TrainResult {
    model::MvarModel final_model;
    model::MvarModel best_model;
    std::vector<LossLogEntry> log;
};

/// Average rollout loss over a sample set with frozen parameters.
double evaluate_loss(const model::MvarModel& model, const std::vector<RolloutSample>& samples,
                     const TrainConfig& cfg, const data::MeteoGrid* grid);

/// Mini-batch training over seeded shuffles. The best model is the one with
/// the lowest validation loss (training loss when no validation set is
/// given); the log holds one row per epoch and split.
TrainResult train(model::MvarModel model, const std::vector<RolloutSample>& train_samples,
                  const std::vector<RolloutSample>& val_samples, const TrainConfig& cfg,
                  const data::MeteoGrid* grid);

/// Loss log as CSV with header epoch,split,loss.
void write_loss_log(const std::string& path, const std::vector<LossLogEntry>& log);

}  // namespace mvar::train
