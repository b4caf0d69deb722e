#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <limits>
#include <vector>

#include "mvar/gradcheck.hpp"
#include "mvar/training.hpp"
#include "mvar/util.hpp"

using namespace mvar;
using data::CityInfo;
using data::CitySeries;
using model::HyperParams;
using model::MvarModel;
using num::DenseMatrix;
using train::RolloutSample;
using train::TrainConfig;

namespace {

HyperParams tiny_hp(int n_cities) {
    HyperParams hp;
    hp.n_cities = n_cities;
    hp.blocks = 1;
    hp.d_in = 6;
    hp.d_pa = 2;
    hp.d_pm = 2;
    hp.d_t = 4;
    hp.heads = 2;
    return hp;
}

std::vector<CityInfo> two_cities() {
    return {{"a", 39.0, 116.0}, {"b", 38.0, 117.0}};
}

DenseMatrix random_state(int n, int d, Rng& rng) {
    DenseMatrix m(n, d);
    for (double& x : m.v) x = rng.uniform(-1.0, 1.0);
    return m;
}

RolloutSample random_sample(int n, int tau, Rng& rng) {
    RolloutSample s;
    s.x_prev = random_state(n, 6, rng);
    s.x_curr = random_state(n, 6, rng);
    for (int g = 0; g < tau; ++g) s.targets.push_back(random_state(n, 6, rng));
    s.t0 = 475000;
    return s;
}

/// Hourly series long enough for rollout windows, filled with smooth
/// city-specific waves.
CitySeries wave_series(int n_times) {
    CitySeries s;
    s.cities = two_cities();
    for (int i = 0; i < n_times; ++i) s.times.push_back(474000 + i);
    s.allocate();
    for (int t = 0; t < n_times; ++t)
        for (int n = 0; n < 2; ++n)
            for (int d = 0; d < 6; ++d)
                s.set(t, n, d, std::sin(0.07 * t + 0.9 * n + 0.4 * d));
    return s;
}

}  // namespace

TEST_CASE("sw weights are the published arithmetic sequence") {
    const auto w = train::make_sw_weights(8, 5.0, 0.1);
    const double want[8] = {5.0, 4.3, 3.6, 2.9, 2.2, 1.5, 0.8, 0.1};
    REQUIRE(w.size() == 8);
    CHECK(w.front() == 5.0);
    CHECK(w.back() == 0.1);
    for (int i = 0; i < 8; ++i) CHECK(std::abs(w[static_cast<size_t>(i)] - want[i]) <= 1e-12);
    double sum = 0.0;
    for (double x : w) sum += x;
    CHECK(sum == doctest::Approx(20.4).epsilon(1e-12));

    CHECK(train::make_sw_weights(2, 5.0, 0.1) == std::vector<double>{5.0, 0.1});
    CHECK(train::make_sw_weights(1, 5.0, 0.1) == std::vector<double>{5.0});
    CHECK_THROWS_AS(train::make_sw_weights(0, 5.0, 0.1), ConfigError);
    CHECK_THROWS_AS(train::make_sw_weights(4, 0.1, 5.0), ConfigError);
    CHECK_THROWS_AS(train::make_sw_weights(4, 5.0, 0.0), ConfigError);
}

TEST_CASE("sw loss hand fixtures") {
    DenseMatrix one(1, 1, 3.0);
    DenseMatrix target(1, 1, 1.0);
    CHECK(train::sw_loss_plain({one}, {one}, {1.0}) == 0.0);
    CHECK(train::sw_loss_plain({one}, {target}, {1.0}) == 4.0);
    CHECK(train::sw_loss_plain({one}, {target}, {1.0}, true) == 2.0);

    // per-step mean squared errors [1, 0] with weights [5, 0.1]
    DenseMatrix p1(2, 3, 1.0), t1(2, 3, 0.0);
    DenseMatrix p2(2, 3, 4.0), t2(2, 3, 4.0);
    const double got = train::sw_loss_plain({p1, p2}, {t1, t2}, {5.0, 0.1});
    CHECK(got == doctest::Approx(5.0 / 5.1).epsilon(1e-12));
}

TEST_CASE("sw loss ignores uniform weight scaling") {
    Rng rng(60);
    std::vector<DenseMatrix> preds, targets;
    for (int g = 0; g < 4; ++g) {
        preds.push_back(random_state(3, 6, rng));
        targets.push_back(random_state(3, 6, rng));
    }
    const auto w = train::make_sw_weights(4, 5.0, 0.1);
    std::vector<double> scaled = w;
    for (double& x : scaled) x *= 3.7;
    const double a = train::sw_loss_plain(preds, targets, w);
    const double b = train::sw_loss_plain(preds, targets, scaled);
    CHECK(std::abs(a - b) <= 1e-12);
    CHECK(a > 0.0);
}

TEST_CASE("taped sw loss equals the plain evaluation") {
    Rng rng(61);
    std::vector<DenseMatrix> targets;
    num::Tape tape;
    std::vector<num::Val> preds;
    std::vector<DenseMatrix> pred_values;
    for (int g = 0; g < 3; ++g) {
        pred_values.push_back(random_state(2, 6, rng));
        preds.push_back(tape.leaf(pred_values.back(), false));
        targets.push_back(random_state(2, 6, rng));
    }
    const auto w = train::make_sw_weights(3, 5.0, 0.1);
    for (const bool mae : {false, true}) {
        const double taped = tape.value(train::sw_loss(tape, preds, targets, w, mae)).at(0, 0);
        const double plain = train::sw_loss_plain(pred_values, targets, w, mae);
        CHECK(std::abs(taped - plain) <= 1e-14);
    }

    CHECK_THROWS_AS(train::sw_loss_plain({pred_values[0]}, targets, w), ShapeError);
    CHECK_THROWS_AS(train::sw_loss_plain({}, {}, {}), ShapeError);
}

TEST_CASE("identity model rollout repeats the current state") {
    MvarModel m = model::init_model(tiny_hp(2), two_cities(), 3, nullptr, 6, "");
    m.params.at("head.w2").v.assign(m.params.at("head.w2").v.size(), 0.0);
    Rng rng(62);
    RolloutSample s = random_sample(2, 4, rng);

    num::Tape tape;
    auto tm = model::stage(tape, m, false);
    const auto preds = train::rollout(tm, s, 4, nullptr);
    REQUIRE(preds.size() == 4);
    for (const auto& p : preds) CHECK(num::max_abs_diff(tape.value(p), s.x_curr) == 0.0);
}

TEST_CASE("rollout chains predict_step") {
    MvarModel m = model::init_model(tiny_hp(2), two_cities(), 5, nullptr, 6, "");
    Rng rng(63);
    RolloutSample s = random_sample(2, 3, rng);

    num::Tape tape;
    auto tm = model::stage(tape, m, false);
    const auto preds = train::rollout(tm, s, 3, nullptr);
    REQUIRE(preds.size() == 3);

    const DenseMatrix p1 = model::predict_step_plain(m, s.x_prev, s.x_curr, std::nullopt);
    const DenseMatrix p2 = model::predict_step_plain(m, s.x_curr, p1, std::nullopt);
    const DenseMatrix p3 = model::predict_step_plain(m, p1, p2, std::nullopt);
    CHECK(num::max_abs_diff(tape.value(preds[0]), p1) <= 1e-12);
    CHECK(num::max_abs_diff(tape.value(preds[1]), p2) <= 1e-12);
    CHECK(num::max_abs_diff(tape.value(preds[2]), p3) <= 1e-12);

    // tau=1 is exactly one step
    num::Tape tape1;
    auto tm1 = model::stage(tape1, m, false);
    const auto single = train::rollout(tm1, s, 1, nullptr);
    REQUIRE(single.size() == 1);
    CHECK(num::max_abs_diff(tape1.value(single[0]), p1) == 0.0);
}

TEST_CASE("rollout never reads the targets") {
    MvarModel m = model::init_model(tiny_hp(2), two_cities(), 7, nullptr, 6, "");
    Rng rng(64);
    RolloutSample clean = random_sample(2, 3, rng);
    RolloutSample poisoned = clean;
    for (auto& t : poisoned.targets)
        t.v.assign(t.v.size(), std::numeric_limits<double>::quiet_NaN());

    num::Tape tape_a, tape_b;
    auto tm_a = model::stage(tape_a, m, false);
    auto tm_b = model::stage(tape_b, m, false);
    const auto pa = train::rollout(tm_a, clean, 3, nullptr);
    const auto pb = train::rollout(tm_b, poisoned, 3, nullptr);
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(num::max_abs_diff(tape_a.value(pa[i]), tape_b.value(pb[i])) == 0.0);
        CHECK(tape_b.value(pb[i]).all_finite());
    }
}

TEST_CASE("rollout gradients match finite differences") {
    MvarModel m = model::init_model(tiny_hp(2), two_cities(), 9, nullptr, 6, "");
    Rng rng(65);
    RolloutSample s = random_sample(2, 3, rng);
    const auto w = train::make_sw_weights(3, 5.0, 0.1);

    num::Tape tape;
    auto tm = model::stage(tape, m, true);
    const auto preds = train::rollout(tm, s, 3, nullptr);
    const num::Val loss = train::sw_loss(tape, preds, s.targets, w);
    tape.backward(loss);
    num::GradSet analytic;
    for (const auto& t : m.params.tensors()) analytic.push_back(tape.grad(tm.p(t.name)));

    const auto f = [&](const num::ParamSet& p) {
        MvarModel probe = m;
        probe.params = p;
        std::vector<DenseMatrix> chain;
        DenseMatrix prev = s.x_prev, curr = s.x_curr;
        for (int g = 0; g < 3; ++g) {
            DenseMatrix next = model::predict_step_plain(probe, prev, curr, std::nullopt);
            chain.push_back(next);
            prev = curr;
            curr = next;
        }
        return train::sw_loss_plain(chain, s.targets, w);
    };
    const num::GradSet numeric = num::finite_diff_gradients(f, m.params);
    const num::GradCheckReport report = num::compare_gradients(m.params, analytic, numeric);
    CHECK(report.ok(1e-4));
    CHECK(report.compared == m.params.scalar_count());
}

TEST_CASE("sample windows require complete slices") {
    CitySeries s = wave_series(30);
    s.clear(13, 1, 2);

    const auto all = train::build_samples(s, 1, 2, 1, nullptr);
    // t0 needs t0-1, t0, t0+1, t0+2 all complete; t=13 is broken.
    CHECK(all.size() == 23);
    for (const auto& sample : all) {
        const int64_t t0 = sample.t0;
        CHECK(t0 != s.times[11]);
        CHECK(t0 != s.times[12]);
        CHECK(t0 != s.times[13]);
        CHECK(t0 != s.times[14]);
        REQUIRE(sample.targets.size() == 2);
        CHECK(num::max_abs_diff(sample.x_curr, s.slice(s.find_time(t0))) == 0.0);
        CHECK(num::max_abs_diff(sample.targets[1], s.slice(s.find_time(t0 + 2))) == 0.0);
    }

    const auto strided = train::build_samples(s, 1, 2, 6, nullptr);
    CHECK(strided.size() == 3);  // offsets 6, 18, 24
    for (const auto& sample : strided) CHECK((sample.t0 - s.times.front()) % 6 == 0);

    const auto spaced = train::build_samples(s, 6, 2, 1, nullptr);
    // t0 needs t0-6 and t0+12 on the axis: offsets 6..17 minus the broken span
    for (const auto& sample : spaced) {
        const int64_t off = sample.t0 - s.times.front();
        CHECK(off >= 6);
        CHECK(off <= 17);
    }

    CHECK_THROWS_AS(train::build_samples(CitySeries{}, 1, 2, 1, nullptr), EmptyResultError);
}

TEST_CASE("sample windows require meteorology coverage") {
    CitySeries s = wave_series(20);
    data::MeteoGrid g;
    g.variables = {"u10"};
    g.grid_h = 4;
    g.grid_w = 4;
    // covers the series hours except one in the middle
    for (int i = 0; i < 20; ++i)
        if (i != 9) g.times.push_back(s.times.front() + i);
    g.allocate();

    const auto with_gap = train::build_samples(s, 1, 2, 1, &g);
    const auto full = train::build_samples(s, 1, 2, 1, nullptr);
    CHECK(full.size() == 17);
    // windows touching grid hour 9 (t0-0 .. t0+2 spans) disappear
    CHECK(with_gap.size() == full.size() - 3);
    for (const auto& sample : with_gap) {
        REQUIRE(sample.meteo_t.size() == 3);
        for (int k = 0; k <= 2; ++k)
            CHECK(g.times[static_cast<size_t>(sample.meteo_t[static_cast<size_t>(k)])] ==
                  sample.t0 + k);
    }
}

TEST_CASE("adam closed-form behavior") {
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.weight_decay = 0.0;

    num::ParamSet params;
    params.add("w", DenseMatrix::from_rows({{1.0, -2.0}}));
    auto state = train::make_adam_state(params);

    SUBCASE("zero gradient leaves parameters unchanged") {
        num::GradSet g = {DenseMatrix(1, 2, 0.0)};
        train::adam_step(params, g, state, cfg);
        CHECK(params.at("w").at(0, 0) == 1.0);
        CHECK(params.at("w").at(0, 1) == -2.0);
    }

    SUBCASE("first step moves by about lr against the gradient sign") {
        num::GradSet g = {DenseMatrix::from_rows({{0.5, -3.0}})};
        train::adam_step(params, g, state, cfg);
        CHECK(params.at("w").at(0, 0) == doctest::Approx(1.0 - cfg.lr).epsilon(1e-6));
        CHECK(params.at("w").at(0, 1) == doctest::Approx(-2.0 + cfg.lr).epsilon(1e-6));
    }

    SUBCASE("decoupled weight decay is a pure shrink") {
        cfg.weight_decay = 0.01;
        num::GradSet g = {DenseMatrix(1, 2, 0.0)};
        const double f = 1.0 - cfg.lr * cfg.weight_decay;
        train::adam_step(params, g, state, cfg);
        train::adam_step(params, g, state, cfg);
        train::adam_step(params, g, state, cfg);
        CHECK(params.at("w").at(0, 0) == doctest::Approx(f * f * f).epsilon(1e-15));
        CHECK(params.at("w").at(0, 1) == doctest::Approx(-2.0 * f * f * f).epsilon(1e-15));
    }

    SUBCASE("non-finite gradients abort with the parameter name") {
        num::GradSet g = {DenseMatrix(1, 2, std::numeric_limits<double>::quiet_NaN())};
        try {
            train::adam_step(params, g, state, cfg);
            FAIL("expected NumericError");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).find("w") != std::string::npos);
        }
    }

    SUBCASE("shape mismatches are rejected") {
        num::GradSet g = {DenseMatrix(2, 2, 0.0)};
        CHECK_THROWS_AS(train::adam_step(params, g, state, cfg), ShapeError);
    }
}

TEST_CASE("training is deterministic and logs every epoch") {
    CitySeries series = wave_series(40);
    const auto samples = train::build_samples(series, 1, 3, 1, nullptr);
    REQUIRE(samples.size() > 8);
    const std::vector<RolloutSample> train_set(samples.begin(), samples.begin() + 6);
    const std::vector<RolloutSample> val_set(samples.begin() + 6, samples.begin() + 9);

    TrainConfig cfg;
    cfg.tau = 3;
    cfg.lr = 1e-3;
    cfg.epochs = 4;
    cfg.batch_size = 4;
    cfg.seed = 71;

    MvarModel m = model::init_model(tiny_hp(2), two_cities(), 71, nullptr, 1, "");
    const auto r1 = train::train(m, train_set, val_set, cfg, nullptr);
    const auto r2 = train::train(m, train_set, val_set, cfg, nullptr);

    REQUIRE(r1.log.size() == 8);  // one train and one val row per epoch
    for (size_t i = 0; i < r1.log.size(); ++i) {
        CHECK(r1.log[i].epoch == r2.log[i].epoch);
        CHECK(r1.log[i].split == r2.log[i].split);
        CHECK(r1.log[i].loss == r2.log[i].loss);
    }
    for (size_t i = 0; i < m.params.count(); ++i)
        CHECK(num::max_abs_diff(r1.final_model.params.tensor(i).value,
                                r2.final_model.params.tensor(i).value) == 0.0);

    TrainConfig other = cfg;
    other.seed = 72;
    const auto r3 = train::train(m, train_set, val_set, other, nullptr);
    bool any_diff = false;
    for (size_t i = 0; i < r1.log.size() && !any_diff; ++i)
        any_diff = r1.log[i].loss != r3.log[i].loss;
    CHECK(any_diff);

    CHECK_THROWS_AS(train::train(m, {}, {}, cfg, nullptr), EmptyResultError);
}

TEST_CASE("best model tracks the lowest validation loss") {
    CitySeries series = wave_series(40);
    const auto samples = train::build_samples(series, 1, 2, 1, nullptr);
    const std::vector<RolloutSample> train_set(samples.begin(), samples.begin() + 6);
    const std::vector<RolloutSample> val_set(samples.begin() + 6, samples.begin() + 8);

    TrainConfig cfg;
    cfg.tau = 2;
    cfg.lr = 2e-3;
    cfg.epochs = 6;
    cfg.batch_size = 8;
    cfg.seed = 5;

    MvarModel m = model::init_model(tiny_hp(2), two_cities(), 15, nullptr, 1, "");
    const auto res = train::train(m, train_set, val_set, cfg, nullptr);

    double best_logged = std::numeric_limits<double>::infinity();
    for (const auto& e : res.log)
        if (e.split == "val") best_logged = std::min(best_logged, e.loss);
    const double best_eval = train::evaluate_loss(res.best_model, val_set, cfg, nullptr);
    CHECK(best_eval == doctest::Approx(best_logged).epsilon(1e-12));
}

TEST_CASE("a tiny model overfits a handful of samples") {
    CitySeries series = wave_series(24);
    const auto samples = train::build_samples(series, 1, 2, 3, nullptr);
    REQUIRE(samples.size() >= 4);
    const std::vector<RolloutSample> train_set(samples.begin(), samples.begin() + 4);

    TrainConfig cfg;
    cfg.tau = 2;
    cfg.lr = 3e-3;
    cfg.epochs = 60;
    cfg.batch_size = 4;
    cfg.seed = 99;

    MvarModel m = model::init_model(tiny_hp(2), two_cities(), 33, nullptr, 1, "");
    const double initial = train::evaluate_loss(m, train_set, cfg, nullptr);
    const auto res = train::train(m, train_set, {}, cfg, nullptr);
    const double final_loss = train::evaluate_loss(res.final_model, train_set, cfg, nullptr);
    CHECK(final_loss < 0.25 * initial);
}

TEST_CASE("loss log file format") {
    const auto dir = std::filesystem::temp_directory_path() / "mvar_training_tests";
    std::filesystem::create_directories(dir);
    const auto path = (dir / "loss.csv").string();
    train::write_loss_log(path, {{1, "train", 0.5}, {1, "val", 0.75}, {2, "train", 0.25}});
    const std::string text = read_text_file(path);
    CHECK(text == "epoch,split,loss\n1,train,0.5\n1,val,0.75\n2,train,0.25\n");
}

TEST_CASE("training config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    TrainConfig bad = cfg;
    bad.tau = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.w_min = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.sample_stride_hours = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
