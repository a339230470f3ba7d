#include "fmanetpp/networks.hpp"

#include <cmath>

namespace fmanet::net {

using namespace fmanet::ad;
using hrbp::FlowMaskState;
using nn::Ctx;
using nn::ParamStore;
using ops::FlowMaskVar;

void NetworkConfig::validate() const {
    if (m < 1) throw std::invalid_argument("NetworkConfig: M must be >= 1");
    if (n < 1) throw std::invalid_argument("NetworkConfig: n must be >= 1");
    if (s != 1 && s != 2 && s != 4) throw std::invalid_argument("NetworkConfig: s must be 1, 2 or 4");
    if (kd < 1) throw std::invalid_argument("NetworkConfig: kd must be >= 1");
    if (cf % heads != 0) throw std::invalid_argument("NetworkConfig: heads must divide cf");
}

NetworkConfig NetworkConfig::from_config(const Config& cfg) {
    NetworkConfig c;
    c.m = static_cast<int>(cfg.get_int("net.m", c.m));
    c.n = static_cast<int>(cfg.get_int("net.n", c.n));
    c.cf = static_cast<int>(cfg.get_int("net.cf", c.cf));
    c.kd = static_cast<int>(cfg.get_int("net.kd", c.kd));
    c.s = static_cast<int>(cfg.get_int("net.s", c.s));
    c.ce = static_cast<int>(cfg.get_int("net.ce", c.ce));
    c.heads = static_cast<int>(cfg.get_int("net.heads", c.heads));
    c.window = static_cast<int>(cfg.get_int("net.window", c.window));
    c.rdb_growth = static_cast<int>(cfg.get_int("net.rdb_growth", c.rdb_growth));
    c.c_up = static_cast<int>(cfg.get_int("net.c_up", c.c_up));
    c.validate();
    return c;
}

nlohmann::json NetworkConfig::to_json() const {
    return {{"m", m},   {"n", n},         {"cf", cf},       {"kd", kd},
            {"s", s},   {"ce", ce},       {"heads", heads}, {"window", window},
            {"rdb_growth", rdb_growth},   {"c_up", c_up}};
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
    NetworkConfig c;
    c.m = j.at("m");
    c.n = j.at("n");
    c.cf = j.at("cf");
    c.kd = j.at("kd");
    c.s = j.at("s");
    c.ce = j.at("ce");
    c.heads = j.at("heads");
    c.window = j.at("window");
    c.rdb_growth = j.at("rdb_growth");
    c.c_up = j.at("c_up");
    c.validate();
    return c;
}

namespace {

std::string bname(const char* net, int j) {
    return std::string(net) + ".b" + std::to_string(j) + ".";
}

Var conv_lrelu(Ctx& ctx, const std::string& w, const std::string& b, Var x, int pad, bool trainable) {
    return lrelu(conv2d(x, ctx.p(w, trainable), ctx.p(b, trainable), 1, pad), 0.1);
}

}  // namespace

void build(ParamStore& ps, Rng& rng, const NetworkConfig& cfg) {
    cfg.validate();
    const int cf = cfg.cf;

    // ---- Net^D ----
    nn::init_conv(ps.create("netd.embed.w", Shape{3, 3, 3, cf}).value, rng);
    ps.create("netd.embed.b", Shape{cf});
    for (int j = 0; j < cfg.m; ++j) hrbp::build(ps, rng, bname("netd", j), cfg.block_config(false));

    nn::init_conv(ps.create("netd.fy.w1", Shape{3, 3, cf + 6 * cfg.n, cf}).value, rng);
    ps.create("netd.fy.b1", Shape{cf});
    // zero flow head: image flows start at rest
    ps.create("netd.fy.w2", Shape{1, 1, cf, 6 * cfg.s * cfg.s});
    ps.create("netd.fy.b2", Shape{6 * cfg.s * cfg.s});

    nn::init_conv(ps.create("netd.kd.w1", Shape{3, 3, cf, 2 * cf}).value, rng);
    ps.create("netd.kd.b1", Shape{2 * cf});
    nn::init_conv(ps.create("netd.kd.w2", Shape{1, 1, 2 * cf, 3 * cfg.kd * cfg.kd}).value, rng);
    ps.create("netd.kd.b2", Shape{3 * cfg.kd * cfg.kd});

    // ---- Net^R ----
    nn::init_conv(ps.create("netr.embed.w", Shape{3, 3, 3, cf}).value, rng);
    ps.create("netr.embed.b", Shape{cf});
    const int g = cfg.rdb_growth;
    nn::init_conv(ps.create("netr.rdb.w0", Shape{1, 1, 2 * cf, cf}).value, rng);
    ps.create("netr.rdb.b0", Shape{cf});
    nn::init_conv(ps.create("netr.rdb.w1", Shape{3, 3, cf, g}).value, rng);
    ps.create("netr.rdb.b1", Shape{g});
    nn::init_conv(ps.create("netr.rdb.w2", Shape{3, 3, cf + g, g}).value, rng);
    ps.create("netr.rdb.b2", Shape{g});
    nn::init_conv(ps.create("netr.rdb.w3", Shape{3, 3, cf + 2 * g, g}).value, rng);
    ps.create("netr.rdb.b3", Shape{g});
    nn::init_conv(ps.create("netr.rdb.wf", Shape{1, 1, cf + 3 * g, cf}).value, rng);
    ps.create("netr.rdb.bf", Shape{cf});

    nn::init_conv(ps.create("netr.kfeat.w", Shape{1, 1, 3 * cfg.kd * cfg.kd, cf}).value, rng);
    ps.create("netr.kfeat.b", Shape{cf});

    for (int j = 0; j < cfg.m; ++j) hrbp::build(ps, rng, bname("netr", j), cfg.block_config(true));

    const int cu = cfg.c_up;
    if (cfg.s == 4) {
        nn::init_conv(ps.create("netr.up.w1", Shape{3, 3, cf, 4 * cu}).value, rng);
        ps.create("netr.up.b1", Shape{4 * cu});
        nn::init_conv(ps.create("netr.up.w2", Shape{3, 3, cu, 4 * cu}).value, rng);
        ps.create("netr.up.b2", Shape{4 * cu});
    } else if (cfg.s == 2) {
        nn::init_conv(ps.create("netr.up.w1", Shape{3, 3, cf, 4 * cu}).value, rng);
        ps.create("netr.up.b1", Shape{4 * cu});
    } else {
        nn::init_conv(ps.create("netr.up.w1", Shape{3, 3, cf, cu}).value, rng);
        ps.create("netr.up.b1", Shape{cu});
    }
    // zero output head: restoration starts at the bilinear baseline
    ps.create("netr.out.w", Shape{3, 3, cu, 3});
    ps.create("netr.out.b", Shape{3});
}

DegradationPriors netd_forward(Ctx& ctx, const NetworkConfig& cfg, const std::vector<Var>& x,
                               const std::vector<Var>& u, bool trainable) {
    const int t = static_cast<int>(x.size());
    if (t < 2) throw std::invalid_argument("netd_forward: need at least two frames");
    if (u.size() != x.size())
        throw std::invalid_argument("netd_forward: one exposure embedding per frame required");
    const int h = x[0].shape()[0], w = x[0].shape()[1];
    const hrbp::HrbpConfig bc = cfg.block_config(false);

    std::vector<Var> feats(t);
    std::vector<FlowMaskState> states(t);
    for (int i = 0; i < t; ++i) {
        feats[i] = conv_lrelu(ctx, "netd.embed.w", "netd.embed.b", x[i], 1, trainable);
        states[i] = hrbp::init_state(ctx.tape(), h, w, cfg.n);
    }
    for (int j = 0; j < cfg.m; ++j) {
        std::vector<Var> nf(t);
        std::vector<FlowMaskState> ns(t);
        for (int i = 0; i < t; ++i) {
            Var prev = i > 0 ? feats[i - 1] : Var();
            Var next = i + 1 < t ? feats[i + 1] : Var();
            auto [f, st] = hrbp::step(ctx, bname("netd", j), bc, prev, feats[i], next, states[i],
                                      u[i], Var(), trainable);
            nf[i] = f;
            ns[i] = st;
        }
        feats = std::move(nf);
        states = std::move(ns);
    }

    DegradationPriors pr;
    pr.f_dm = feats;
    pr.fm_dm = states;
    pr.fy_fwd.resize(t);
    pr.fy_bwd.resize(t);
    pr.kernels.resize(t);
    for (int i = 0; i < t; ++i) {
        Var hin = concat_last({feats[i], states[i].flows, sigmoid(states[i].logits)});
        Var h1 = conv_lrelu(ctx, "netd.fy.w1", "netd.fy.b1", hin, 1, trainable);
        Var raw = conv2d(h1, ctx.p("netd.fy.w2", trainable), ctx.p("netd.fy.b2", trainable), 1, 0);
        Var hr = pixel_shuffle(raw, cfg.s);  // {sH, sW, 6}
        pr.fy_fwd[i] = FlowMaskVar{scale(slice_last(hr, 0, 2), cfg.s), sigmoid(slice_last(hr, 2, 3))};
        pr.fy_bwd[i] = FlowMaskVar{scale(slice_last(hr, 3, 5), cfg.s), sigmoid(slice_last(hr, 5, 6))};

        Var k1 = conv_lrelu(ctx, "netd.kd.w1", "netd.kd.b1", feats[i], 1, trainable);
        Var kraw = conv2d(k1, ctx.p("netd.kd.w2", trainable), ctx.p("netd.kd.b2", trainable), 1, 0);
        const int taps = 3 * cfg.kd * cfg.kd;
        Var flat = softmax_rows(reshape(kraw, Shape{h * w, taps}));
        pr.kernels[i] = split_temporal(reshape(flat, Shape{h, w, taps}), 3);
    }
    return pr;
}

Restored netr_forward(Ctx& ctx, const NetworkConfig& cfg, const std::vector<Var>& x,
                      const DegradationPriors& priors, const std::vector<Var>& u, bool trainable) {
    const int t = static_cast<int>(x.size());
    if (priors.f_dm.size() != x.size() || priors.kernels.size() != x.size())
        throw std::invalid_argument("netr_forward: priors do not match the sequence length");
    if (u.size() != x.size())
        throw std::invalid_argument("netr_forward: one exposure embedding per frame required");
    const hrbp::HrbpConfig bc = cfg.block_config(true);

    std::vector<Var> feats(t), kfeat(t);
    std::vector<FlowMaskState> states(t);
    for (int i = 0; i < t; ++i) {
        Var emb = conv_lrelu(ctx, "netr.embed.w", "netr.embed.b", x[i], 1, trainable);
        Var x0 = conv2d(concat_last({emb, priors.f_dm[i]}), ctx.p("netr.rdb.w0", trainable),
                        ctx.p("netr.rdb.b0", trainable), 1, 0);
        Var d1 = conv_lrelu(ctx, "netr.rdb.w1", "netr.rdb.b1", x0, 1, trainable);
        Var d2 = conv_lrelu(ctx, "netr.rdb.w2", "netr.rdb.b2", concat_last({x0, d1}), 1, trainable);
        Var d3 = conv_lrelu(ctx, "netr.rdb.w3", "netr.rdb.b3", concat_last({x0, d1, d2}), 1, trainable);
        Var fused = conv2d(concat_last({x0, d1, d2, d3}), ctx.p("netr.rdb.wf", trainable),
                           ctx.p("netr.rdb.bf", trainable), 1, 0);
        feats[i] = add(x0, fused);
        states[i] = priors.fm_dm[i];
        kfeat[i] = conv_lrelu(ctx, "netr.kfeat.w", "netr.kfeat.b", merge_temporal(priors.kernels[i]),
                              0, trainable);
    }
    for (int j = 0; j < cfg.m; ++j) {
        std::vector<Var> nf(t);
        std::vector<FlowMaskState> ns(t);
        for (int i = 0; i < t; ++i) {
            Var prev = i > 0 ? feats[i - 1] : Var();
            Var next = i + 1 < t ? feats[i + 1] : Var();
            auto [f, st] = hrbp::step(ctx, bname("netr", j), bc, prev, feats[i], next, states[i],
                                      u[i], kfeat[i], trainable);
            nf[i] = f;
            ns[i] = st;
        }
        feats = std::move(nf);
        states = std::move(ns);
    }

    Restored out;
    out.y.resize(t);
    out.y_res.resize(t);
    for (int i = 0; i < t; ++i) {
        Var hf = feats[i];
        if (cfg.s == 4) {
            hf = lrelu(pixel_shuffle(conv2d(hf, ctx.p("netr.up.w1", trainable),
                                            ctx.p("netr.up.b1", trainable), 1, 1),
                                     2),
                       0.1);
            hf = lrelu(pixel_shuffle(conv2d(hf, ctx.p("netr.up.w2", trainable),
                                            ctx.p("netr.up.b2", trainable), 1, 1),
                                     2),
                       0.1);
        } else if (cfg.s == 2) {
            hf = lrelu(pixel_shuffle(conv2d(hf, ctx.p("netr.up.w1", trainable),
                                            ctx.p("netr.up.b1", trainable), 1, 1),
                                     2),
                       0.1);
        } else {
            hf = conv_lrelu(ctx, "netr.up.w1", "netr.up.b1", hf, 1, trainable);
        }
        out.y_res[i] = conv2d(hf, ctx.p("netr.out.w", trainable), ctx.p("netr.out.b", trainable), 1, 1);
        out.y[i] = add(out.y_res[i], bilinear_upsample(x[i], cfg.s));
    }
    return out;
}

std::vector<Var> reconstruct_from_priors(const NetworkConfig& cfg, const DegradationPriors& priors,
                                         const std::vector<Var>& y_hr) {
    const int t = static_cast<int>(y_hr.size());
    if (priors.kernels.size() != y_hr.size())
        throw std::invalid_argument("reconstruct_from_priors: priors do not match the sequence");
    std::vector<Var> xhat(t);
    for (int i = 0; i < t; ++i) {
        Var y_prev = y_hr[i > 0 ? i - 1 : 0];
        Var y_next = y_hr[i + 1 < t ? i + 1 : t - 1];
        xhat[i] = ops::reconstruct_blurry_lr(priors.kernels[i], y_prev, y_hr[i], y_next,
                                             priors.fy_bwd[i], priors.fy_fwd[i], cfg.s);
    }
    return xhat;
}

}  // namespace fmanet::net
