#include "mvar/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "mvar/util.hpp"

namespace mvar::train {

using num::DenseMatrix;
using num::Val;

void TrainConfig::validate() const {
    if (tau < 1) throw ConfigError("tau must be >= 1");
    if (!(w_max >= w_min) || !(w_min > 0.0)) {
        throw ConfigError("loss weights must satisfy w_max >= w_min > 0");
    }
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
    if (sample_stride_hours < 1) throw ConfigError("sample_stride_hours must be >= 1");
}

std::vector<double> make_sw_weights(int tau, double w_max, double w_min) {
    if (tau < 1) throw ConfigError("tau must be >= 1");
    if (!(w_max >= w_min) || !(w_min > 0.0)) {
        throw ConfigError("loss weights must satisfy w_max >= w_min > 0");
    }
    std::vector<double> w(static_cast<size_t>(tau));
    w.back() = w_min;
    w.front() = w_max;
    for (int i = 1; i < tau - 1; ++i) {
        w[static_cast<size_t>(i)] = (static_cast<double>(tau - 1 - i) * w_max +
                                     static_cast<double>(i) * w_min) /
                                    static_cast<double>(tau - 1);
    }
    return w;
}

namespace {

void check_rollout_shapes(size_t preds, size_t targets, size_t weights) {
    if (preds == 0) throw ShapeError("empty rollout");
    if (preds != targets || preds != weights) {
        throw ShapeError("rollout step counts disagree: " + std::to_string(preds) +
                               " predictions, " + std::to_string(targets) + " targets, " +
                               std::to_string(weights) + " weights");
    }
}

}  // namespace

double sw_loss_plain(const std::vector<DenseMatrix>& preds, const std::vector<DenseMatrix>& targets,
                     const std::vector<double>& weights, bool mae) {
    check_rollout_shapes(preds.size(), targets.size(), weights.size());
    const double wsum = num::stable_sum(weights);
    double acc = 0.0;
    for (size_t i = 0; i < preds.size(); ++i) {
        if (!preds[i].same_shape(targets[i])) {
            throw ShapeError("prediction " + preds[i].shape_str() + " vs target " +
                                   targets[i].shape_str());
        }
        double step = 0.0;
        for (size_t j = 0; j < preds[i].v.size(); ++j) {
            const double d = preds[i].v[j] - targets[i].v[j];
            step += mae ? std::fabs(d) : d * d;
        }
        acc += weights[i] * (step / static_cast<double>(preds[i].v.size()));
    }
    return acc / wsum;
}

Val sw_loss(num::Tape& tape, const std::vector<Val>& preds, const std::vector<DenseMatrix>& targets,
            const std::vector<double>& weights, bool mae) {
    check_rollout_shapes(preds.size(), targets.size(), weights.size());
    const double wsum = num::stable_sum(weights);
    Val acc{};
    for (size_t i = 0; i < preds.size(); ++i) {
        const Val tgt = tape.leaf(targets[i], false);
        const Val diff = tape.add(preds[i], tape.scale(tgt, -1.0));
        const Val err = mae ? tape.abs(diff) : tape.hadamard(diff, diff);
        const auto& shape = tape.value(preds[i]);
        const double k =
            weights[i] / (wsum * static_cast<double>(shape.rows) * static_cast<double>(shape.cols));
        const Val term = tape.scale(tape.sum_all(err), k);
        acc = i == 0 ? term : tape.add(acc, term);
    }
    return acc;
}

std::vector<Val> rollout(model::TapedModel& tm, const RolloutSample& sample, int tau,
                         const data::MeteoGrid* grid) {
    if (tau < 1) throw ConfigError("tau must be >= 1");
    auto& tape = *tm.tape;
    const auto& hp = tm.model->hp;
    const int lead = tm.model->lead_hours;
    if (hp.use_meteo) {
        if (grid == nullptr) throw ConfigError("rollout needs the meteorology grid");
        if (sample.meteo_t.size() != static_cast<size_t>(tau) + 1) {
            throw ConfigError("sample carries " + std::to_string(sample.meteo_t.size()) +
                                    " meteorology indices, expected " + std::to_string(tau + 1));
        }
    }
    Val prev = tape.leaf(sample.x_prev, false);
    Val curr = tape.leaf(sample.x_curr, false);
    std::vector<Val> preds;
    preds.reserve(static_cast<size_t>(tau));
    for (int g = 1; g <= tau; ++g) {
        std::optional<model::MeteoInput> met;
        if (hp.use_meteo) {
            met = model::MeteoInput{grid, sample.meteo_t[static_cast<size_t>(g - 1)],
                                    sample.meteo_t[static_cast<size_t>(g)],
                                    sample.t0 + static_cast<int64_t>(g - 1) * lead};
        }
        const Val next = model::predict_step(tm, prev, curr, met);
        preds.push_back(next);
        prev = curr;
        curr = next;
    }
    return preds;
}

std::vector<RolloutSample> build_samples(const data::CitySeries& series, int lead_hours, int tau,
                                         int sample_stride_hours, const data::MeteoGrid* grid) {
    if (lead_hours < 1) throw ConfigError("lead_hours must be >= 1");
    if (tau < 1) throw ConfigError("tau must be >= 1");
    if (sample_stride_hours < 1) throw ConfigError("sample_stride_hours must be >= 1");
    if (series.n_times() == 0) throw EmptyResultError("series has no timesteps");

    std::vector<RolloutSample> samples;
    for (int i = 0; i < series.n_times(); ++i) {
        const int64_t t0 = series.times[static_cast<size_t>(i)];
        if ((t0 - series.times.front()) % sample_stride_hours != 0) continue;
        const int ip = series.find_time(t0 - lead_hours);
        if (ip < 0 || !series.slice_complete(ip) || !series.slice_complete(i)) continue;

        std::vector<int> target_idx;
        bool ok = true;
        for (int g = 1; g <= tau; ++g) {
            const int it = series.find_time(t0 + static_cast<int64_t>(g) * lead_hours);
            if (it < 0 || !series.slice_complete(it)) {
                ok = false;
                break;
            }
            target_idx.push_back(it);
        }
        if (!ok) continue;

        RolloutSample s;
        s.t0 = t0;
        if (grid != nullptr) {
            for (int g = 0; g <= tau && ok; ++g) {
                const int gm = grid->find_time(t0 + static_cast<int64_t>(g) * lead_hours);
                if (gm < 0) ok = false;
                else s.meteo_t.push_back(gm);
            }
            if (!ok) continue;
        }
        s.x_prev = series.slice(ip);
        s.x_curr = series.slice(i);
        for (const int it : target_idx) s.targets.push_back(series.slice(it));
        samples.push_back(std::move(s));
    }
    return samples;
}

AdamState make_adam_state(const num::ParamSet& params) {
    AdamState st;
    st.m.reserve(params.count());
    st.v.reserve(params.count());
    for (const auto& t : params.tensors()) {
        st.m.emplace_back(t.value.rows, t.value.cols);
        st.v.emplace_back(t.value.rows, t.value.cols);
    }
    return st;
}

void adam_step(num::ParamSet& params, const num::GradSet& grads, AdamState& state,
               const TrainConfig& cfg) {
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    if (grads.size() != params.count() || state.m.size() != params.count()) {
        throw ShapeError("optimizer state does not match the parameter set");
    }
    state.step += 1;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.count(); ++i) {
        auto& t = params.tensor(i);
        const auto& g = grads[i];
        if (!t.value.same_shape(g)) {
            throw ShapeError("gradient shape " + g.shape_str() + " for parameter " + t.name);
        }
        if (!g.all_finite()) {
            throw NumericError("non-finite gradient for parameter " + t.name);
        }
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (size_t j = 0; j < t.value.v.size(); ++j) {
            const double gj = g.v[j];
            m.v[j] = kBeta1 * m.v[j] + (1.0 - kBeta1) * gj;
            v.v[j] = kBeta2 * v.v[j] + (1.0 - kBeta2) * gj * gj;
            const double mhat = m.v[j] / c1;
            const double vhat = v.v[j] / c2;
            const double p_old = t.value.v[j];
            t.value.v[j] =
                p_old - cfg.lr * (mhat / (std::sqrt(vhat) + kEps) + cfg.weight_decay * p_old);
        }
    }
}

double evaluate_loss(const model::MvarModel& model, const std::vector<RolloutSample>& samples,
                     const TrainConfig& cfg, const data::MeteoGrid* grid) {
    if (samples.empty()) throw EmptyResultError("no samples to evaluate");
    const auto weights = make_sw_weights(cfg.tau, cfg.w_max, cfg.w_min);
    double sum = 0.0;
    for (const auto& s : samples) {
        num::Tape tape;
        auto tm = model::stage(tape, model, false);
        const auto preds = rollout(tm, s, cfg.tau, grid);
        sum += tape.value(sw_loss(tape, preds, s.targets, weights, cfg.mae)).at(0, 0);
    }
    return sum / static_cast<double>(samples.size());
}

TrainResult train(model::MvarModel model, const std::vector<RolloutSample>& train_samples,
                  const std::vector<RolloutSample>& val_samples, const TrainConfig& cfg,
                  const data::MeteoGrid* grid) {
    cfg.validate();
    if (train_samples.empty()) throw EmptyResultError("no training samples");

    const auto weights = make_sw_weights(cfg.tau, cfg.w_max, cfg.w_min);
    AdamState state = make_adam_state(model.params);
    TrainResult res;
    res.best_model = model;
    double best = std::numeric_limits<double>::infinity();

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng rng(cfg.seed, static_cast<uint64_t>(epoch));
        std::vector<size_t> order(train_samples.size());
        std::iota(order.begin(), order.end(), size_t{0});
        shuffle(order, rng);

        double loss_sum = 0.0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            num::GradSet acc = num::zero_grads(model.params);
            const double inv = 1.0 / static_cast<double>(end - start);
            for (size_t k = start; k < end; ++k) {
                const auto& s = train_samples[order[k]];
                num::Tape tape;
                auto tm = model::stage(tape, model, true);
                const auto preds = rollout(tm, s, cfg.tau, grid);
                const Val loss = sw_loss(tape, preds, s.targets, weights, cfg.mae);
                loss_sum += tape.value(loss).at(0, 0);
                tape.backward(loss);
                for (size_t i = 0; i < model.params.count(); ++i) {
                    const auto& g = tape.grad(tm.p(model.params.tensor(i).name));
                    auto& dst = acc[i];
                    for (size_t j = 0; j < dst.v.size(); ++j) dst.v[j] += inv * g.v[j];
                }
            }
            if (cfg.clip_norm > 0.0) {
                double sq = 0.0;
                for (const auto& g : acc)
                    for (const double x : g.v) sq += x * x;
                const double norm = std::sqrt(sq);
                if (norm > cfg.clip_norm) {
                    const double sc = cfg.clip_norm / norm;
                    for (auto& g : acc)
                        for (double& x : g.v) x *= sc;
                }
            }
            adam_step(model.params, acc, state, cfg);
        }

        const double train_loss = loss_sum / static_cast<double>(train_samples.size());
        res.log.push_back({epoch, "train", train_loss});
        double monitored = train_loss;
        if (!val_samples.empty()) {
            const double val_loss = evaluate_loss(model, val_samples, cfg, grid);
            res.log.push_back({epoch, "val", val_loss});
            monitored = val_loss;
        }
        if (monitored < best) {
            best = monitored;
            res.best_model = model;
        }
    }
    res.final_model = std::move(model);
    return res;
}

void write_loss_log(const std::string& path, const std::vector<LossLogEntry>& log) {
    std::ostringstream out;
    out << "epoch,split,loss\n";
    for (const auto& e : log) {
        out << e.epoch << "," << e.split << "," << format_full(e.loss) << "\n";
    }
    write_text_file(path, out.str());
}

}  // namespace mvar::train
