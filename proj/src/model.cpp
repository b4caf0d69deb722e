#include "mvar/model.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "mvar/util.hpp"

namespace mvar::model {

using num::DenseMatrix;
using num::Val;

void HyperParams::validate() const {
    if (n_cities < 1) throw ConfigError("n_cities must be >= 1");
    if (n_pollutants < 1) throw ConfigError("n_pollutants must be >= 1");
    if (blocks < 1) throw ConfigError("blocks must be >= 1");
    if (d_in < 1 || d_pa < 1) throw ConfigError("d_in and d_pa must be >= 1");
    if (d_pm != d_pa) {
        throw ConfigError("d_pm must equal d_pa (one projector serves both encodings)");
    }
    if (heads < 1 || d_e() % heads != 0) {
        throw ConfigError("d_e (= d_in + d_pa) must be divisible by heads");
    }
    if (d_t < 4 || d_t % 4 != 0) {
        throw ConfigError("d_t must be a positive multiple of 4");
    }
    if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
    if (use_meteo) {
        if (meteo_channels < 1) throw ConfigError("meteo_channels must be >= 1");
        if (ds_channels < 1) throw ConfigError("ds_channels must be >= 1");
        if (grid_h < 4 || grid_w < 4 || grid_h % 4 != 0 || grid_w % 4 != 0) {
            throw ConfigError("grid dimensions must be multiples of 4");
        }
    }
}

CoordFrame CoordFrame::from_cities(const std::vector<data::CityInfo>& cities) {
    if (cities.empty()) throw EmptyResultError("no cities to build a coordinate frame from");
    std::vector<double> lats, lons;
    lats.reserve(cities.size());
    lons.reserve(cities.size());
    for (const auto& c : cities) {
        lats.push_back(c.lat);
        lons.push_back(c.lon);
    }
    CoordFrame f;
    const double n = static_cast<double>(cities.size());
    f.lat0 = num::stable_sum(lats) / n;
    f.lon0 = num::stable_sum(lons) / n;
    const double span_lat =
        *std::max_element(lats.begin(), lats.end()) - *std::min_element(lats.begin(), lats.end());
    const double span_lon =
        *std::max_element(lons.begin(), lons.end()) - *std::min_element(lons.begin(), lons.end());
    f.scale = 2.0 / std::max({span_lat, span_lon, 1e-6});
    return f;
}

DenseMatrix CoordFrame::map(const DenseMatrix& coords_deg) const {
    if (coords_deg.cols != 2) {
        throw ShapeError("coordinate matrix must have 2 columns, got " +
                               coords_deg.shape_str());
    }
    DenseMatrix out(coords_deg.rows, 2);
    for (int r = 0; r < coords_deg.rows; ++r) {
        out.at(r, 0) = (coords_deg.at(r, 0) - lat0) * scale;
        out.at(r, 1) = (coords_deg.at(r, 1) - lon0) * scale;
    }
    return out;
}

DenseMatrix MvarModel::city_coords_deg() const {
    DenseMatrix out(static_cast<int>(cities.size()), 2);
    for (size_t i = 0; i < cities.size(); ++i) {
        out.at(static_cast<int>(i), 0) = cities[i].lat;
        out.at(static_cast<int>(i), 1) = cities[i].lon;
    }
    return out;
}

namespace {

int cross_query_width(const HyperParams& hp, int block_index) {
    return block_index == 1 ? hp.d_in : hp.d_e();
}

int cross_kv_width(const HyperParams& hp, int block_index) {
    return hp.use_meteo ? hp.d_e() : cross_query_width(hp, block_index);
}

/// Registers every tensor in canonical order. With an Rng the tensors are
/// initialized as they are added (weights and biases uniform over
/// +-1/sqrt(fan_in), normalization gains 1 and biases 0), so the draw order
/// is the registration order.
num::ParamSet build_params(const HyperParams& hp, Rng* rng) {
    num::ParamSet ps;
    auto weight = [&](const std::string& name, int rows, int cols, int fan_in) {
        DenseMatrix m(rows, cols);
        if (rng != nullptr) num::init_uniform_fan_in(m, fan_in, *rng);
        ps.add(name, std::move(m));
    };
    auto norm_pair = [&](const std::string& prefix, int width) {
        ps.add(prefix + ".gain", DenseMatrix(1, width, 1.0));
        ps.add(prefix + ".bias", DenseMatrix(1, width, 0.0));
    };
    auto attention = [&](const std::string& prefix, int q_width, int kv_width, int out_width) {
        weight(prefix + ".wq", q_width, hp.d_e(), q_width);
        weight(prefix + ".wk", kv_width, hp.d_e(), kv_width);
        weight(prefix + ".wv", kv_width, hp.d_e(), kv_width);
        weight(prefix + ".wo", hp.d_e(), out_width, hp.d_e());
    };
    auto ffd = [&](const std::string& prefix) {
        const int de = hp.d_e();
        norm_pair(prefix + ".norm", de);
        weight(prefix + ".w1", de, 4 * de, de);
        weight(prefix + ".b1", 1, 4 * de, de);
        weight(prefix + ".w2", 4 * de, de, 4 * de);
        weight(prefix + ".b2", 1, de, 4 * de);
    };

    const int de = hp.d_e();
    weight("embed.w", 2 * hp.n_pollutants, hp.d_in, 2 * hp.n_pollutants);
    weight("embed.b", 1, hp.d_in, 2 * hp.n_pollutants);
    weight("pe.w", 2, hp.d_pa, 2);
    weight("pe.b", 1, hp.d_pa, 2);
    attention("attn_in", de, de, hp.d_in);
    for (int j = 1; j <= hp.blocks; ++j) {
        const std::string b = "block" + std::to_string(j);
        attention(b + ".cross", cross_query_width(hp, j), cross_kv_width(hp, j), de);
        norm_pair(b + ".norm", de);
        ffd(b + ".ffd1");
        attention(b + ".self", de, de, de);
        ffd(b + ".ffd2");
    }
    if (hp.use_meteo) {
        int in_c = 2 * hp.meteo_channels + hp.d_pm;
        int out_c = hp.ds_channels;
        for (int s = 1; s <= 2; ++s) {
            const std::string p = "ds.block" + std::to_string(s);
            weight(p + ".conv1.k", out_c, in_c * 9, in_c * 9);
            weight(p + ".conv1.b", 1, out_c, in_c * 9);
            weight(p + ".te.w", hp.d_t, out_c, hp.d_t);
            norm_pair(p + ".norm", out_c);
            weight(p + ".conv2.k", out_c, out_c * 9, out_c * 9);
            weight(p + ".conv2.b", 1, out_c, out_c * 9);
            weight(p + ".skip.k", out_c, in_c, in_c);
            weight(p + ".skip.b", 1, out_c, in_c);
            in_c = out_c;
            out_c = de;
        }
    }
    weight("head.w1", hp.blocks * de, de, hp.blocks * de);
    weight("head.b1", 1, de, hp.blocks * de);
    weight("head.w2", de, hp.n_pollutants, de);
    return ps;
}

}  // namespace

num::ParamSet make_param_set(const HyperParams& hp) {
    hp.validate();
    return build_params(hp, nullptr);
}

void init_params(num::ParamSet& params, const HyperParams& hp, uint64_t seed) {
    hp.validate();
    Rng rng(seed);
    num::ParamSet fresh = build_params(hp, &rng);
    if (fresh.count() != params.count()) {
        throw ShapeError("parameter set does not match the hyperparameters");
    }
    for (size_t i = 0; i < fresh.count(); ++i) {
        auto& dst = params.tensor(i);
        const auto& src = fresh.tensor(i);
        if (dst.name != src.name || !dst.value.same_shape(src.value)) {
            throw ShapeError("parameter " + dst.name + " does not match the expected shape");
        }
        dst.value = src.value;
    }
}

MvarModel init_model(const HyperParams& hp, const std::vector<data::CityInfo>& cities,
                     uint64_t seed, const data::MeteoGrid* grid_for_stats, int lead_hours,
                     const std::string& normstats_ref) {
    hp.validate();
    if (static_cast<int>(cities.size()) != hp.n_cities) {
        throw ConfigError("city list size does not match n_cities");
    }
    if (lead_hours < 1) throw ConfigError("lead_hours must be >= 1");

    MvarModel m;
    m.hp = hp;
    m.cities = cities;
    m.frame = CoordFrame::from_cities(cities);
    m.lead_hours = lead_hours;
    m.normstats_ref = normstats_ref;

    if (hp.use_meteo) {
        if (grid_for_stats == nullptr) {
            throw ConfigError("a meteorology grid is required to derive channel statistics");
        }
        const auto& g = *grid_for_stats;
        if (g.n_channels() != hp.meteo_channels || g.grid_h != hp.grid_h ||
            g.grid_w != hp.grid_w) {
            throw ShapeError("meteorology grid does not match the hyperparameters");
        }
        if (g.n_times() < 1) throw EmptyResultError("meteorology grid has no timesteps");
        const size_t per_channel =
            static_cast<size_t>(g.n_times()) * static_cast<size_t>(g.grid_h) *
            static_cast<size_t>(g.grid_w);
        m.meteo_mean.assign(hp.meteo_channels, 0.0);
        m.meteo_std.assign(hp.meteo_channels, 1.0);
        for (int c = 0; c < hp.meteo_channels; ++c) {
            double sum = 0.0, sumsq = 0.0;
            for (int t = 0; t < g.n_times(); ++t) {
                for (int y = 0; y < g.grid_h; ++y) {
                    for (int x = 0; x < g.grid_w; ++x) {
                        const double v = g.value(t, c, y, x);
                        sum += v;
                        sumsq += v * v;
                    }
                }
            }
            const double mean = sum / static_cast<double>(per_channel);
            const double var = std::max(0.0, sumsq / static_cast<double>(per_channel) - mean * mean);
            double sd = std::sqrt(var);
            if (sd < 1e-8) sd = 1.0;
            m.meteo_mean[c] = mean;
            m.meteo_std[c] = sd;
        }
    }

    m.params = build_params(hp, nullptr);
    init_params(m.params, hp, seed);
    return m;
}

DenseMatrix time_encoding(int64_t epoch_hours, int d_t) {
    if (d_t < 4 || d_t % 4 != 0) {
        throw ConfigError("time encoding width must be a positive multiple of 4");
    }
    const int k = d_t / 4;
    const double hour = static_cast<double>(hour_of_day(epoch_hours));
    const double yday = static_cast<double>(day_of_year(epoch_hours) - 1) + hour / 24.0;
    const double two_pi = 8.0 * std::atan(1.0);
    DenseMatrix out(1, d_t);
    // Layout: k hour-of-day sines, k hour-of-day cosines, then the same pair
    // of groups for the day-of-year phase.
    for (int i = 0; i < k; ++i) {
        const double ph = two_pi * static_cast<double>(i + 1) * hour / 24.0;
        out.at(0, i) = std::sin(ph);
        out.at(0, k + i) = std::cos(ph);
    }
    for (int i = 0; i < k; ++i) {
        const double py = two_pi * static_cast<double>(i + 1) * yday / 365.25;
        out.at(0, 2 * k + i) = std::sin(py);
        out.at(0, 3 * k + i) = std::cos(py);
    }
    return out;
}

Val TapedModel::p(const std::string& name) const {
    auto it = leaves.find(name);
    if (it == leaves.end()) throw ConfigError("unknown model tensor: " + name);
    return it->second;
}

TapedModel stage(num::Tape& tape, const MvarModel& model, bool requires_grad) {
    TapedModel tm;
    tm.tape = &tape;
    tm.model = &model;
    for (const auto& t : model.params.tensors()) {
        tm.leaves.emplace(t.name, tape.leaf(t.value, requires_grad));
    }
    tm.city_coords = tape.leaf(model.frame.map(model.city_coords_deg()), false);
    return tm;
}

namespace {

struct AttnResult {
    Val q;    // projected query, N x d_e, kept for the residual path
    Val out;  // mixed heads through the output projection
};

AttnResult multi_head_attention(TapedModel& tm, Val q_in, Val kv, const std::string& prefix,
                                ModelTrace* trace) {
    auto& t = *tm.tape;
    const auto& hp = tm.model->hp;
    const Val q = t.matmul(q_in, tm.p(prefix + ".wq"));
    const Val k = t.matmul(kv, tm.p(prefix + ".wk"));
    const Val v = t.matmul(kv, tm.p(prefix + ".wv"));
    const int dh = hp.d_e() / hp.heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Val> mixed;
    mixed.reserve(static_cast<size_t>(hp.heads));
    for (int h = 0; h < hp.heads; ++h) {
        const Val qh = t.slice_cols(q, h * dh, (h + 1) * dh);
        const Val kh = t.slice_cols(k, h * dh, (h + 1) * dh);
        const Val vh = t.slice_cols(v, h * dh, (h + 1) * dh);
        const Val attn = t.softmax_rows(t.scale(t.matmul(qh, t.transpose(kh)), sc));
        if (trace != nullptr) {
            trace->attention.emplace_back(prefix + ".h" + std::to_string(h), t.value(attn));
        }
        mixed.push_back(t.attn_mix(attn, vh));
    }
    return {q, t.matmul(t.concat_cols(mixed), tm.p(prefix + ".wo"))};
}

/// Pre-norm feed-forward with residual: x + fc2(gelu(fc1(layernorm(x)))).
Val feed_forward(TapedModel& tm, Val x, const std::string& prefix) {
    auto& t = *tm.tape;
    const Val y = t.layer_norm(x, tm.p(prefix + ".norm.gain"), tm.p(prefix + ".norm.bias"),
                               tm.model->hp.ln_eps);
    const Val h = t.gelu(t.add_bias_row(t.matmul(y, tm.p(prefix + ".w1")), tm.p(prefix + ".b1")));
    const Val o = t.add_bias_row(t.matmul(h, tm.p(prefix + ".w2")), tm.p(prefix + ".b2"));
    return t.add(x, o);
}

/// Residual downsampling stage: strided conv, broadcast time-encoding
/// injection, per-position channel normalization, GELU, 3x3 conv, plus a
/// 1x1 strided skip projection.
Val ds_stage(TapedModel& tm, Val x, int h, int w, const std::string& prefix, Val te) {
    auto& t = *tm.tape;
    const Val c1 = t.conv2d(x, tm.p(prefix + ".conv1.k"), tm.p(prefix + ".conv1.b"),
                            num::ConvSpec{h, w, 3, 3, 2});
    const Val tproj = t.matmul(te, tm.p(prefix + ".te.w"));
    const Val with_te = t.add_bias_row(t.transpose(c1), tproj);
    const Val n = t.layer_norm(with_te, tm.p(prefix + ".norm.gain"), tm.p(prefix + ".norm.bias"),
                               tm.model->hp.ln_eps);
    const Val act = t.transpose(t.gelu(n));
    const Val c2 = t.conv2d(act, tm.p(prefix + ".conv2.k"), tm.p(prefix + ".conv2.b"),
                            num::ConvSpec{h / 2, w / 2, 3, 3, 1});
    const Val skip = t.conv2d(x, tm.p(prefix + ".skip.k"), tm.p(prefix + ".skip.b"),
                              num::ConvSpec{h, w, 1, 1, 2});
    return t.add(c2, skip);
}

}  // namespace

Val embed_inputs(TapedModel& tm, Val x_prev, Val x_curr) {
    auto& t = *tm.tape;
    const Val pair = t.concat_cols(x_prev, x_curr);
    const Val xc = t.gelu(t.add_bias_row(t.matmul(pair, tm.p("embed.w")), tm.p("embed.b")));
    const Val pe = t.add_bias_row(t.matmul(tm.city_coords, tm.p("pe.w")), tm.p("pe.b"));
    return t.concat_cols(xc, pe);
}

Val encode_meteo(TapedModel& tm, const MeteoInput& met) {
    auto& t = *tm.tape;
    const auto& hp = tm.model->hp;
    if (met.grid == nullptr) throw ConfigError("meteorology input has no grid");
    const auto& g = *met.grid;
    if (g.n_channels() != hp.meteo_channels || g.grid_h != hp.grid_h || g.grid_w != hp.grid_w) {
        throw ShapeError("meteorology grid does not match the model's hyperparameters");
    }
    if (met.t_curr < 0 || met.t_next < 0 || met.t_curr >= g.n_times() ||
        met.t_next >= g.n_times()) {
        throw ConfigError("meteorology time index out of range");
    }

    const int ch = hp.meteo_channels;
    const int pts = hp.grid_h * hp.grid_w;
    DenseMatrix feat(pts, 2 * ch);
    for (int c = 0; c < ch; ++c) {
        const double mean = tm.model->meteo_mean[c];
        const double sd = tm.model->meteo_std[c];
        for (int y = 0; y < hp.grid_h; ++y) {
            for (int x = 0; x < hp.grid_w; ++x) {
                const int p = y * hp.grid_w + x;
                feat.at(p, c) = (static_cast<double>(g.value(met.t_curr, c, y, x)) - mean) / sd;
                feat.at(p, ch + c) = (static_cast<double>(g.value(met.t_next, c, y, x)) - mean) / sd;
            }
        }
    }
    const Val mfeat = t.leaf(std::move(feat), false);
    if (tm.cached_grid != met.grid) {
        tm.grid_coords = t.leaf(tm.model->frame.map(g.point_coords()), false);
        tm.cached_grid = met.grid;
    }
    const Val pem = t.add_bias_row(t.matmul(tm.grid_coords, tm.p("pe.w")), tm.p("pe.b"));
    const Val m_in = t.transpose(t.concat_cols(mfeat, pem));
    const Val te = t.leaf(time_encoding(met.te_hour, hp.d_t), false);
    const Val s1 = ds_stage(tm, m_in, hp.grid_h, hp.grid_w, "ds.block1", te);
    const Val s2 = ds_stage(tm, s1, hp.grid_h / 2, hp.grid_w / 2, "ds.block2", te);
    return t.transpose(s2);
}

Val mcst_block(TapedModel& tm, Val x, Val kv, int block_index, ModelTrace* trace) {
    auto& t = *tm.tape;
    const std::string b = "block" + std::to_string(block_index);
    const AttnResult cross = multi_head_attention(tm, x, kv, b + ".cross", trace);
    const Val normed = t.layer_norm(t.add(cross.q, cross.out), tm.p(b + ".norm.gain"),
                                    tm.p(b + ".norm.bias"), tm.model->hp.ln_eps);
    const Val zcf = feed_forward(tm, normed, b + ".ffd1");
    const AttnResult self = multi_head_attention(tm, zcf, zcf, b + ".self", trace);
    return feed_forward(tm, t.add(zcf, self.out), b + ".ffd2");
}

Val predict_step(TapedModel& tm, Val x_prev, Val x_curr, const std::optional<MeteoInput>& met,
                 ModelTrace* trace) {
    auto& t = *tm.tape;
    const auto& hp = tm.model->hp;
    const Val xcp = embed_inputs(tm, x_prev, x_curr);
    Val x = multi_head_attention(tm, xcp, xcp, "attn_in", trace).out;

    Val meteo_tokens;
    if (hp.use_meteo) {
        if (!met.has_value()) {
            throw ConfigError("the model expects meteorology input for every step");
        }
        meteo_tokens = encode_meteo(tm, *met);
    }
    std::vector<Val> outputs;
    outputs.reserve(static_cast<size_t>(hp.blocks));
    for (int j = 1; j <= hp.blocks; ++j) {
        x = mcst_block(tm, x, hp.use_meteo ? meteo_tokens : x, j, trace);
        outputs.push_back(x);
    }
    const Val o = outputs.size() == 1 ? outputs[0] : t.concat_cols(outputs);
    const Val mid = t.gelu(t.add_bias_row(t.matmul(o, tm.p("head.w1")), tm.p("head.b1")));
    const Val delta = t.matmul(mid, tm.p("head.w2"));
    return t.add(x_curr, delta);
}

DenseMatrix predict_step_plain(const MvarModel& model, const DenseMatrix& x_prev,
                               const DenseMatrix& x_curr, const std::optional<MeteoInput>& met,
                               ModelTrace* trace) {
    num::Tape tape;
    TapedModel tm = stage(tape, model, false);
    const Val prev = tape.leaf(x_prev, false);
    const Val curr = tape.leaf(x_curr, false);
    const Val out = predict_step(tm, prev, curr, met, trace);
    return tape.value(out);
}

}  // namespace mvar::model
