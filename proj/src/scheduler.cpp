#include "mvar/scheduler.hpp"

#include <algorithm>
#include <set>

#include "mvar/util.hpp"

namespace mvar::sched {

ForecastPlan greedy_plan(int horizon, const std::vector<int>& leads) {
    if (horizon < 1) throw ConfigError("forecast horizon must be >= 1");
    if (leads.empty() || std::find(leads.begin(), leads.end(), 1) == leads.end()) {
        throw ConfigError("lead set must contain 1 to cover every horizon");
    }
    std::vector<int> sorted = leads;
    std::sort(sorted.begin(), sorted.end(), std::greater<int>());

    ForecastPlan plan;
    plan.horizon = horizon;
    int remaining = horizon;
    while (remaining > 0) {
        for (const int lead : sorted) {
            if (lead <= remaining) {
                plan.steps.push_back(lead);
                remaining -= lead;
                break;
            }
        }
    }
    return plan;
}

std::vector<int> invocation_profile(int max_horizon, const std::vector<int>& leads) {
    if (max_horizon < 1) throw ConfigError("max_horizon must be >= 1");
    std::vector<int> profile;
    profile.reserve(static_cast<size_t>(max_horizon));
    for (int h = 1; h <= max_horizon; ++h) profile.push_back(greedy_plan(h, leads).invocations());
    return profile;
}

const num::DenseMatrix& Timeline::at(int offset) const {
    auto it = states.find(offset);
    if (it == states.end()) {
        throw ConfigError("timeline has no state at offset " + std::to_string(offset));
    }
    return it->second;
}

void Timeline::put(int offset, num::DenseMatrix state) { states[offset] = std::move(state); }

ComposeResult compose_forecast(const ForecastPlan& plan, const std::map<int, StepModel>& models,
                               const Timeline& history) {
    for (const int lead : plan.steps) {
        if (models.count(lead) == 0) {
            throw MissingArtifactError("no model for lead " + std::to_string(lead) + "h");
        }
    }
    Timeline timeline = history;
    ComposeResult result;
    int cursor = 0;
    int count = 0;
    for (const int lead : plan.steps) {
        const num::DenseMatrix& x_prev = timeline.at(cursor - lead);
        const num::DenseMatrix& x_curr = timeline.at(cursor);
        num::DenseMatrix next = models.at(lead)(x_prev, x_curr, cursor);
        cursor += lead;
        ++count;
        timeline.put(cursor, next);
        result.states[cursor] = std::move(next);
        result.invocations[cursor] = count;
    }
    return result;
}

ComposeResult hourly_forecast(int horizon, const std::map<int, StepModel>& models,
                              const Timeline& history, const std::vector<int>& leads) {
    if (horizon < 1) throw ConfigError("forecast horizon must be >= 1");
    std::set<int> distinct;
    for (int h = 1; h <= horizon; ++h)
        for (const int lead : greedy_plan(h, leads).steps) distinct.insert(lead);
    for (const int lead : distinct) {
        if (models.count(lead) == 0) {
            throw MissingArtifactError("no model for lead " + std::to_string(lead) + "h");
        }
    }

    // One timeline grows across target hours, smallest first. After hour
    // h - 1 every offset 1..h-1 is filled, so a plan step at cursor c with
    // lead l always finds its second input at c - l: either an observation
    // (c - l <= 0) or an earlier hour's own target. Steps whose output
    // offset already exists are skipped; with the canonical lead set the
    // existing state came from an identical greedy prefix.
    Timeline timeline = history;
    ComposeResult all;
    for (int h = 1; h <= horizon; ++h) {
        const ForecastPlan plan = greedy_plan(h, leads);
        int cursor = 0;
        for (const int lead : plan.steps) {
            if (timeline.has(cursor + lead)) {
                cursor += lead;
                continue;
            }
            const num::DenseMatrix& x_prev = timeline.at(cursor - lead);
            const num::DenseMatrix& x_curr = timeline.at(cursor);
            num::DenseMatrix next = models.at(lead)(x_prev, x_curr, cursor);
            cursor += lead;
            timeline.put(cursor, std::move(next));
        }
        all.states[h] = timeline.at(h);
        all.invocations[h] = plan.invocations();
    }
    return all;
}

}  // namespace mvar::sched
