#include <doctest.h>

#include <cmath>

#include "fmanetpp/networks.hpp"
#include "testutil.hpp"

using namespace fmanet;
using namespace fmanet::ad;
using namespace fmanet::net;
using testutil::random_tensor;

namespace {

NetworkConfig tiny_net(int m = 1, int n = 1) {
    NetworkConfig c;
    c.m = m;
    c.n = n;
    c.cf = 8;
    c.kd = 3;
    c.s = 4;
    c.ce = 8;
    c.heads = 2;
    c.window = 4;
    c.rdb_growth = 4;
    c.c_up = 4;
    return c;
}

nn::ParamStore built(const NetworkConfig& cfg, unsigned seed) {
    nn::ParamStore ps;
    Rng rng(seed);
    build(ps, rng, cfg);
    return ps;
}

std::vector<Var> leaves(Tape& t, const std::vector<Tensor>& xs) {
    std::vector<Var> v;
    for (const Tensor& x : xs) v.push_back(t.leaf(x, false));
    return v;
}

std::vector<Tensor> random_frames(Rng& rng, int t, int h, int w, int c) {
    std::vector<Tensor> out;
    for (int i = 0; i < t; ++i) out.push_back(random_tensor(Shape{h, w, c}, rng));
    return out;
}

std::vector<Tensor> random_embeddings(Rng& rng, int t, int ce) {
    std::vector<Tensor> out;
    for (int i = 0; i < t; ++i) {
        Tensor u = random_tensor(Shape{1, ce}, rng, -1, 1);
        double nrm = 0;
        for (double v : u.v) nrm += v * v;
        nrm = std::sqrt(nrm);
        for (auto& v : u.v) v /= nrm;
        out.push_back(u);
    }
    return out;
}

}  // namespace

TEST_CASE("netd_forward: kernels are simplex-normalized; short sequences rejected") {
    NetworkConfig cfg = tiny_net();
    nn::ParamStore ps = built(cfg, 110);
    Rng rng(111);
    Tape t;
    nn::Ctx ctx(t, ps, false);
    auto x = leaves(t, random_frames(rng, 3, 8, 8, 3));
    auto u = leaves(t, random_embeddings(rng, 3, cfg.ce));

    DegradationPriors pr = netd_forward(ctx, cfg, x, u, false);
    REQUIRE(pr.kernels.size() == 3);
    for (const Var& k : pr.kernels) {
        REQUIRE(k.shape() == Shape{3, 8, 8, 9});
        for (int y = 0; y < 8; ++y)
            for (int xq = 0; xq < 8; ++xq) {
                double acc = 0;
                for (int ti = 0; ti < 3; ++ti)
                    for (int j = 0; j < 9; ++j)
                        acc += k.val()[((static_cast<size_t>(ti) * 8 + y) * 8 + xq) * 9 + j];
                CHECK(acc == doctest::Approx(1.0).epsilon(1e-5));
            }
    }
    // HR flow-mask pairs at the upscaled resolution
    REQUIRE(pr.fy_fwd[0].flow.shape() == Shape{32, 32, 2});
    REQUIRE(pr.fy_fwd[0].mask.shape() == Shape{32, 32, 1});

    auto x1 = leaves(t, random_frames(rng, 1, 8, 8, 3));
    auto u1 = leaves(t, random_embeddings(rng, 1, cfg.ce));
    CHECK_THROWS_AS(netd_forward(ctx, cfg, x1, u1, false), std::invalid_argument);
}

TEST_CASE("netr_forward: fresh model reproduces the bilinear baseline exactly") {
    NetworkConfig cfg = tiny_net();
    nn::ParamStore ps = built(cfg, 112);  // netr.out head is zero-initialized
    Rng rng(113);
    Tape t;
    nn::Ctx ctx(t, ps, false);
    auto x = leaves(t, random_frames(rng, 2, 8, 8, 3));
    auto u = leaves(t, random_embeddings(rng, 2, cfg.ce));
    DegradationPriors pr = netd_forward(ctx, cfg, x, u, false);
    Restored r = netr_forward(ctx, cfg, x, pr, u, false);
    REQUIRE(r.y.size() == 2);
    for (int i = 0; i < 2; ++i) {
        REQUIRE(r.y[i].shape() == Shape{32, 32, 3});
        Tensor base = bilinear_upsample(x[i], cfg.s).tensor();
        CHECK(testutil::max_abs_diff(r.y[i].tensor(), base) == 0.0);
    }
}

TEST_CASE("netr_forward: residual contract holds bit-exactly after perturbation") {
    NetworkConfig cfg = tiny_net();
    nn::ParamStore ps = built(cfg, 114);
    Rng rng(115);
    for (auto& v : ps.get("netr.out.w").value.v) v = rng.uniform(-0.3, 0.3);  // non-trivial residual

    Tape t;
    nn::Ctx ctx(t, ps, false);
    auto x = leaves(t, random_frames(rng, 2, 8, 8, 3));
    auto u = leaves(t, random_embeddings(rng, 2, cfg.ce));
    DegradationPriors pr = netd_forward(ctx, cfg, x, u, false);
    Restored r = netr_forward(ctx, cfg, x, pr, u, false);
    for (int i = 0; i < 2; ++i) {
        Tensor base = bilinear_upsample(x[i], cfg.s).tensor();
        Tensor diff = r.y[i].tensor();
        for (size_t j = 0; j < diff.v.size(); ++j) diff.v[j] -= r.y_res[i].val()[j];
        CHECK(testutil::max_abs_diff(diff, base) == 0.0);
    }
}

TEST_CASE("reconstruct_from_priors: crafted delta and constant cases, oracle match") {
    NetworkConfig cfg = tiny_net();
    cfg.s = 1;
    Rng rng(116);
    Tape t;

    auto make_priors = [&](int tt, int h, int w, const Tensor& kern, const Tensor& flow,
                           const Tensor& mask) {
        DegradationPriors pr;
        for (int i = 0; i < tt; ++i) {
            pr.kernels.push_back(t.leaf(kern, false));
            pr.fy_fwd.push_back(ops::FlowMaskVar{t.leaf(flow, false), t.leaf(mask, false)});
            pr.fy_bwd.push_back(ops::FlowMaskVar{t.leaf(flow, false), t.leaf(mask, false)});
        }
        (void)h;
        (void)w;
        return pr;
    };

    // delta kernels + zero flows -> X_hat = Y (stride 1, center tap)
    Tensor kern(Shape{3, 6, 6, 9}, 0.0);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) kern.at(1, y, x, 4) = 1.0;
    Tensor zf(Shape{6, 6, 2});
    Tensor ones(Shape{6, 6, 1}, 1.0);
    auto y_frames = random_frames(rng, 3, 6, 6, 3);
    DegradationPriors pr = make_priors(3, 6, 6, kern, zf, ones);
    std::vector<Var> xh = reconstruct_from_priors(cfg, pr, leaves(t, y_frames));
    for (int i = 0; i < 3; ++i) CHECK(testutil::max_abs_diff(xh[i].tensor(), y_frames[i]) == 0.0);

    // constant Y with any convex kernel -> constant X_hat
    Tensor flat(Shape{3, 6, 6, 9}, 1.0 / 27.0);
    Tensor rf = testutil::random_flow(6, 6, rng, 1.0);
    DegradationPriors pr2 = make_priors(3, 6, 6, flat, rf, ones);
    std::vector<Tensor> const_y(3, Tensor(Shape{6, 6, 3}, 0.55));
    std::vector<Var> xh2 = reconstruct_from_priors(cfg, pr2, leaves(t, const_y));
    for (const Var& v : xh2)
        for (double val : v.val()) CHECK(val == doctest::Approx(0.55).epsilon(1e-12));

    // random instance against the brute-force oracle (middle frame)
    NetworkConfig cfg2 = tiny_net();
    cfg2.s = 2;
    Tensor kern2 = random_tensor(Shape{3, 4, 4, 9}, rng, 0.0, 0.2);
    Tensor f2 = random_tensor(Shape{8, 8, 2}, rng, -2, 2);
    Tensor m2 = random_tensor(Shape{8, 8, 1}, rng);
    auto y2 = random_frames(rng, 3, 8, 8, 3);
    DegradationPriors pr3;
    for (int i = 0; i < 3; ++i) {
        pr3.kernels.push_back(t.leaf(kern2, false));
        pr3.fy_fwd.push_back(ops::FlowMaskVar{t.leaf(f2, false), t.leaf(m2, false)});
        pr3.fy_bwd.push_back(ops::FlowMaskVar{t.leaf(f2, false), t.leaf(m2, false)});
    }
    std::vector<Var> xh3 = reconstruct_from_priors(cfg2, pr3, leaves(t, y2));
    Tensor oracle = testutil::oracle_fgdf({y2[0], y2[1], y2[2]}, {&f2, nullptr, &f2},
                                          {&m2, nullptr, &m2}, kern2, 2);
    CHECK(testutil::max_abs_diff(xh3[1].tensor(), oracle) < 1e-6);
}

TEST_CASE("netd_forward: direction-aware (sequence reversal changes priors)") {
    NetworkConfig cfg = tiny_net(2, 2);
    nn::ParamStore ps = built(cfg, 117);
    Rng rng(118);
    auto xs = random_frames(rng, 4, 8, 8, 3);
    auto us = random_embeddings(rng, 4, cfg.ce);

    Tape t;
    nn::Ctx ctx(t, ps, false);
    DegradationPriors a = netd_forward(ctx, cfg, leaves(t, xs), leaves(t, us), false);
    std::vector<Tensor> xr(xs.rbegin(), xs.rend());
    std::vector<Tensor> ur(us.rbegin(), us.rend());
    DegradationPriors b = netd_forward(ctx, cfg, leaves(t, xr), leaves(t, ur), false);

    // frame 1 of the forward pass vs frame 2 of the reversed pass see the
    // same frame content with swapped neighbors
    double diff = testutil::max_abs_diff(a.kernels[1].tensor(), b.kernels[2].tensor());
    CHECK(diff > 1e-6);
}

TEST_CASE("receptive field grows by one frame per block") {
    Rng rng(119);
    auto xs = random_frames(rng, 5, 8, 8, 3);
    auto us = random_embeddings(rng, 5, 8);
    auto perturbed = xs;
    for (auto& v : perturbed[0].v) v = std::min(1.0, v + 0.2);  // hit frame 0

    for (int m : {1, 2}) {
        NetworkConfig cfg = tiny_net(m, 1);
        nn::ParamStore ps = built(cfg, 120);
        Tape t;
        nn::Ctx ctx(t, ps, false);
        DegradationPriors a = netd_forward(ctx, cfg, leaves(t, xs), leaves(t, us), false);
        DegradationPriors b = netd_forward(ctx, cfg, leaves(t, perturbed), leaves(t, us), false);
        // frame at distance m+1 from the perturbation is untouched;
        // frame at distance exactly m changes
        const double unchanged = testutil::max_abs_diff(a.f_dm[m + 1].tensor(), b.f_dm[m + 1].tensor());
        const double changed = testutil::max_abs_diff(a.f_dm[m].tensor(), b.f_dm[m].tensor());
        CHECK(unchanged == 0.0);
        CHECK(changed > 1e-9);
    }
}

TEST_CASE("netd/netr forward is deterministic given parameters") {
    NetworkConfig cfg = tiny_net();
    nn::ParamStore ps = built(cfg, 121);
    Rng rng(122);
    auto xs = random_frames(rng, 3, 8, 8, 3);
    auto us = random_embeddings(rng, 3, cfg.ce);
    auto run = [&] {
        Tape t;
        nn::Ctx ctx(t, ps, false);
        auto x = leaves(t, xs);
        auto u = leaves(t, us);
        DegradationPriors pr = netd_forward(ctx, cfg, x, u, false);
        Restored r = netr_forward(ctx, cfg, x, pr, u, false);
        std::vector<Tensor> out;
        for (const Var& v : r.y) out.push_back(v.tensor());
        return out;
    };
    auto a = run(), b = run();
    for (size_t i = 0; i < a.size(); ++i) CHECK(testutil::max_abs_diff(a[i], b[i]) == 0.0);
}
