#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mvar/meteo.hpp"
#include "mvar/params.hpp"
#include "mvar/series.hpp"
#include "mvar/tape.hpp"

namespace mvar::model {

struct HyperParams {
    int n_cities = 0;
    int n_pollutants = data::kPollutants;
    int meteo_channels = 0;
    int grid_h = 0;
    int grid_w = 0;
    int blocks = 3;        // stacked cross/self attention blocks
    int d_in = 112;        // concentration embedding width
    int d_pa = 16;         // city position encoding width
    int d_pm = 16;         // grid position encoding width (= d_pa, shared projector)
    int d_t = 32;          // time encoding width
    int heads = 4;
    int ds_channels = 64;  // downsampler mid channels
    double ln_eps = 1e-5;
    bool use_meteo = false;

    int d_e() const { return d_in + d_pa; }
    /// Token count after the two stride-2 stages.
    int meteo_tokens() const { return (grid_h / 4) * (grid_w / 4); }
    void validate() const;
};

/// Affine degrees-to-model-units map shared by the city and grid position
/// encodings. Derived from the city set with order-insensitive reductions,
/// stored in checkpoints so forecasts reproduce training exactly.
struct CoordFrame {
    double lat0 = 0.0;
    double lon0 = 0.0;
    double scale = 1.0;

    static CoordFrame from_cities(const std::vector<data::CityInfo>& cities);
    num::DenseMatrix map(const num::DenseMatrix& coords_deg) const;
};

/// A trained (or initialized) model: hyperparameters, the coordinate frame,
/// per-channel meteorology statistics, city identities and the parameters.
struct MvarModel {
    HyperParams hp;
    CoordFrame frame;
    std::vector<data::CityInfo> cities;
    std::vector<double> meteo_mean;  // per channel, empty without meteorology
    std::vector<double> meteo_std;
    num::ParamSet params;
    int lead_hours = 6;
    std::string normstats_ref;

    num::DenseMatrix city_coords_deg() const;
};

/// Parameter registry with the canonical tensor names and shapes for hp.
num::ParamSet make_param_set(const HyperParams& hp);
/// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) for weights, ones/zeros for
/// normalization gains/biases, with a seeded generator.
void init_params(num::ParamSet& params, const HyperParams& hp, uint64_t seed);

MvarModel init_model(const HyperParams& hp, const std::vector<data::CityInfo>& cities,
                     uint64_t seed, const data::MeteoGrid* grid_for_stats, int lead_hours,
                     const std::string& normstats_ref);

/// Sinusoidal encoding of hour-of-day and day-of-year, 1 x d_t.
num::DenseMatrix time_encoding(int64_t epoch_hours, int d_t);

struct MeteoInput {
    const data::MeteoGrid* grid = nullptr;
    int t_curr = -1;  // grid time index of the current state
    int t_next = -1;  // grid time index one step ahead
    int64_t te_hour = 0;
};

/// Post-softmax attention matrices captured for inspection, keyed by
/// "<stage>.h<head>".
struct ModelTrace {
    std::vector<std::pair<std::string, num::DenseMatrix>> attention;
};

/// Model parameters staged as leaves on one tape, reused across the rollout
/// steps recorded on that tape.
struct TapedModel {
    num::Tape* tape = nullptr;
    const MvarModel* model = nullptr;
    std::map<std::string, num::Val> leaves;
    num::Val city_coords;  // mapped coordinates, constant leaf
    num::Val grid_coords;  // mapped grid point coordinates, staged on first use
    const data::MeteoGrid* cached_grid = nullptr;

    num::Val p(const std::string& name) const;
};

TapedModel stage(num::Tape& tape, const MvarModel& model, bool requires_grad);

/// GELU affine of [x_prev, x_curr] concatenated with the city position
/// encoding; output N x d_e.
num::Val embed_inputs(TapedModel& tm, num::Val x_prev, num::Val x_curr);

/// Downsample a consecutive pair of meteo fields (plus grid position and
/// time encodings) to N^m x d_e tokens via two stride-2 residual stages.
num::Val encode_meteo(TapedModel& tm, const MeteoInput& met);

/// One cross-attention + self-attention block; kv carries the meteorology
/// tokens, or the block input itself in meteorology-free mode.
num::Val mcst_block(TapedModel& tm, num::Val x, num::Val kv, int block_index, ModelTrace* trace);

/// Full one-step forward: embedding, first self-attention, the block stack,
/// and the delta head added onto x_curr. Inputs are normalized N x D states.
num::Val predict_step(TapedModel& tm, num::Val x_prev, num::Val x_curr,
                      const std::optional<MeteoInput>& met, ModelTrace* trace = nullptr);

/// Convenience: run one step on a scratch tape without gradients.
num::DenseMatrix predict_step_plain(const MvarModel& model, const num::DenseMatrix& x_prev,
                                    const num::DenseMatrix& x_curr,
                                    const std::optional<MeteoInput>& met,
                                    ModelTrace* trace = nullptr);

}  // namespace mvar::model
