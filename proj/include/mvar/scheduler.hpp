#pragma once

#include <functional>
#include <map>
#include <vector>

#include "mvar/dense.hpp"

namespace mvar::sched {

/// Decomposition of a forecast horizon into single-step model leads.
struct ForecastPlan {
    int horizon = 0;
    std::vector<int> steps;

    int invocations() const { return static_cast<int>(steps.size()); }
};

/// Repeatedly take the largest lead that does not overshoot the remaining
/// horizon. The lead set must contain 1 so every horizon is reachable.
ForecastPlan greedy_plan(int horizon, const std::vector<int>& leads = {24, 6, 3, 1});

/// invocations(greedy_plan(h)) for h = 1..max_horizon; index 0 holds h = 1.
std::vector<int> invocation_profile(int max_horizon,
                                    const std::vector<int>& leads = {24, 6, 3, 1});

/// States on an hourly offset axis around the forecast init: offsets <= 0
/// are observations (back to -24), positive offsets are written by the
/// composition walk.
struct Timeline {
    std::map<int, num::DenseMatrix> states;

    bool has(int offset) const { return states.count(offset) != 0; }
    const num::DenseMatrix& at(int offset) const;
    void put(int offset, num::DenseMatrix state);
};

/// A single-step forecaster for one lead: maps the states at
/// (cursor - lead, cursor) to the state at (cursor + lead). The callable
/// closes over whatever checkpoint and meteorology source it needs.
using StepModel = std::function<num::DenseMatrix(const num::DenseMatrix& x_prev,
                                                 const num::DenseMatrix& x_curr,
                                                 int cursor_offset)>;

struct ComposeResult {
    /// Only offsets the plan actually produced (its step boundaries).
    std::map<int, num::DenseMatrix> states;
    /// Chained model invocations behind each produced offset.
    std::map<int, int> invocations;
};

/// Walk the plan from offset 0, feeding each lead model the timeline states
/// at (cursor - lead, cursor) and writing its output at (cursor + lead).
/// Reads are strict: a plan that steps down to a smaller lead needs the
/// state exactly that lead behind the cursor, and throws when neither the
/// history nor an earlier step supplied it (hourly_forecast shares states
/// across hours to satisfy such reads).
ComposeResult compose_forecast(const ForecastPlan& plan, const std::map<int, StepModel>& models,
                               const Timeline& history);

/// Hourly product: one greedy plan per target hour 1..horizon, walked over
/// a single timeline shared across hours (smallest hour first). Earlier
/// hours fill every intermediate offset, so each plan's backward reads at
/// lead transitions always resolve; already-produced offsets are reused
/// rather than recomputed. Each hour's invocation count is the length of
/// its own plan, the depth of the error-accumulation chain behind it.
ComposeResult hourly_forecast(int horizon, const std::map<int, StepModel>& models,
                              const Timeline& history, const std::vector<int>& leads = {24, 6, 3, 1});

}  // namespace mvar::sched
