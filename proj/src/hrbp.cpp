#include "fmanetpp/hrbp.hpp"

#include <cmath>

namespace fmanet::hrbp {

using namespace fmanet::ad;
using nn::Ctx;
using nn::init_conv;
using nn::init_linear;
using nn::Param;
using nn::ParamStore;

namespace {

// logit(1 - 1e-3): "full visibility" without saturating the sigmoid
constexpr double kInitMaskLogit = 6.906754778648554;

std::vector<std::vector<int>> window_rows(int h, int w, int win) {
    std::vector<std::vector<int>> windows;
    if (win <= 0) {
        std::vector<int> all(static_cast<size_t>(h) * w);
        for (int i = 0; i < h * w; ++i) all[i] = i;
        windows.push_back(std::move(all));
        return windows;
    }
    for (int y0 = 0; y0 < h; y0 += win)
        for (int x0 = 0; x0 < w; x0 += win) {
            const int y1 = std::min(y0 + win, h), x1 = std::min(x0 + win, w);
            std::vector<int> rows;
            rows.reserve(static_cast<size_t>(y1 - y0) * (x1 - x0));
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) rows.push_back(y * w + x);
            windows.push_back(std::move(rows));
        }
    return windows;
}

// Windowed multi-head attention block: q_src and kv_src are {HW, C}. Window
// outputs are re-assembled through the inverse row permutation.
Var windowed_attention(Var q_src, Var kv_src_k, Var kv_src_v, int h, int w, int heads, int win) {
    const int c = q_src.shape()[1];
    const int dh = c / heads;
    auto windows = window_rows(h, w, win);

    std::vector<int> perm;
    perm.reserve(static_cast<size_t>(h) * w);
    std::vector<Var> outs;
    outs.reserve(windows.size());
    for (const auto& rows : windows) {
        perm.insert(perm.end(), rows.begin(), rows.end());
        Var qw = gather_rows(q_src, rows);
        Var kw = gather_rows(kv_src_k, rows);
        Var vw = gather_rows(kv_src_v, rows);
        std::vector<Var> head_outs;
        head_outs.reserve(heads);
        for (int hd = 0; hd < heads; ++hd) {
            Var qh = slice_last(qw, hd * dh, (hd + 1) * dh);
            Var kh = slice_last(kw, hd * dh, (hd + 1) * dh);
            Var vh = slice_last(vw, hd * dh, (hd + 1) * dh);
            head_outs.push_back(attention_core(qh, kh, vh));
        }
        outs.push_back(concat_last(head_outs));
    }
    Var stacked = concat_rows(outs);
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
    return gather_rows(stacked, inv);
}

}  // namespace

Var attention_core(Var q, Var k, Var v) {
    if (q.shape().rank() != 2 || k.shape().rank() != 2 || v.shape().rank() != 2)
        throw std::invalid_argument("attention_core: expected rank-2 inputs");
    if (q.shape()[1] != k.shape()[1] || k.shape()[0] != v.shape()[0])
        throw std::invalid_argument("attention_core: shape mismatch");
    const double d = static_cast<double>(q.shape()[1]);
    Var scores = matmul(q, k, false, true);
    Var p = softmax_rows_scaled(scores, 1.0 / std::sqrt(d));
    return matmul(p, v);
}

FlowMaskState init_state(Tape& tape, int h, int w, int n) {
    FlowMaskState st;
    st.flows = tape.zeros(Shape{h, w, 4 * n});
    Tensor logits(Shape{h, w, 2 * n}, kInitMaskLogit);
    st.logits = tape.leaf(logits, false);
    return st;
}

void build(ParamStore& ps, Rng& rng, const std::string& prefix, const HrbpConfig& cfg) {
    if (cfg.cf % cfg.heads != 0)
        throw std::invalid_argument("hrbp: heads must divide feature channels");
    if (cfg.n < 1) throw std::invalid_argument("hrbp: need at least one flow hypothesis");
    const int cf = cfg.cf, n = cfg.n;

    init_conv(ps.create(prefix + "fuse.w1", Shape{1, 1, (1 + 2 * n) * cf, cf}).value, rng);
    ps.create(prefix + "fuse.b1", Shape{cf});
    init_conv(ps.create(prefix + "fuse.w2", Shape{3, 3, cf, cf}).value, rng);
    ps.create(prefix + "fuse.b2", Shape{cf});

    init_conv(ps.create(prefix + "flow.w", Shape{3, 3, 6 * n + cf, 6 * n}).value, rng);
    // start near the identity update so early steps stay close to the prior
    for (auto& v : ps.get(prefix + "flow.w").value.v) v *= 0.1;
    ps.create(prefix + "flow.b", Shape{6 * n});

    auto ones = [&](const std::string& name, int c) {
        Param& p = ps.create(name, Shape{c});
        std::fill(p.value.v.begin(), p.value.v.end(), 1.0);
    };
    ones(prefix + "attn.ln1.g", cf);
    ps.create(prefix + "attn.ln1.b", Shape{cf});
    init_linear(ps.create(prefix + "attn.qkv.w", Shape{cf, 3 * cf}).value, rng);
    ps.create(prefix + "attn.qkv.b", Shape{3 * cf});
    init_linear(ps.create(prefix + "attn.proj.w", Shape{cf, cf}).value, rng);
    ps.create(prefix + "attn.proj.b", Shape{cf});
    if (cfg.da) {
        ones(prefix + "da.ln.g", cf);
        ps.create(prefix + "da.ln.b", Shape{cf});
        init_linear(ps.create(prefix + "da.q.w", Shape{cf, cf}).value, rng);
        ps.create(prefix + "da.q.b", Shape{cf});
        init_linear(ps.create(prefix + "da.kv.w", Shape{cf, 2 * cf}).value, rng);
        ps.create(prefix + "da.kv.b", Shape{2 * cf});
        init_linear(ps.create(prefix + "da.proj.w", Shape{cf, cf}).value, rng);
        ps.create(prefix + "da.proj.b", Shape{cf});
    }
    ones(prefix + "ffn.ln.g", cf);
    ps.create(prefix + "ffn.ln.b", Shape{cf});
    init_linear(ps.create(prefix + "ffn.w1", Shape{cf, 2 * cf}).value, rng);
    ps.create(prefix + "ffn.b1", Shape{2 * cf});
    init_linear(ps.create(prefix + "ffn.w2", Shape{2 * cf, cf}).value, rng);
    ps.create(prefix + "ffn.b2", Shape{cf});

    init_linear(ps.create(prefix + "etm.w1", Shape{cfg.ce, cfg.ce}).value, rng);
    ps.create(prefix + "etm.b1", Shape{cfg.ce});
    // zero head: modulation starts as the identity
    ps.create(prefix + "etm.w2", Shape{cfg.ce, 2 * cf});
    ps.create(prefix + "etm.b2", Shape{2 * cf});
}

Var fuse_neighbors(Ctx& ctx, const std::string& prefix, const HrbpConfig& cfg, Var f_prev, Var f_cur,
                   Var f_next, const FlowMaskState& state, bool trainable) {
    const int n = cfg.n;
    if (state.flows.shape()[2] != 4 * n || state.logits.shape()[2] != 2 * n)
        throw std::invalid_argument("fuse_neighbors: state does not match hypothesis count");
    if (f_prev.defined() && f_prev.shape() != f_cur.shape())
        throw std::invalid_argument("fuse_neighbors: neighbor dims disagree");
    if (f_next.defined() && f_next.shape() != f_cur.shape())
        throw std::invalid_argument("fuse_neighbors: neighbor dims disagree");

    std::vector<Var> parts = {f_cur};
    Var mask_all = sigmoid(state.logits);
    for (int dir = 0; dir < 2; ++dir) {
        Var nbr = dir == 0 ? f_next : f_prev;  // fwd hypotheses warp the next frame
        for (int k = 0; k < n; ++k) {
            if (!nbr.defined()) {
                parts.push_back(f_cur);  // replicated edge frame, zero flow, mask 1
                continue;
            }
            const int fc = (dir * n + k) * 2;
            Var flow = slice_last(state.flows, fc, fc + 2);
            Var mask = slice_last(mask_all, dir * n + k, dir * n + k + 1);
            parts.push_back(ops::occlusion_warp(nbr, flow, mask));
        }
    }
    Var cat = concat_last(parts);
    Var h = lrelu(conv2d(cat, ctx.p(prefix + "fuse.w1", trainable), ctx.p(prefix + "fuse.b1", trainable),
                         1, 0),
                  0.1);
    return conv2d(h, ctx.p(prefix + "fuse.w2", trainable), ctx.p(prefix + "fuse.b2", trainable), 1, 1);
}

FlowMaskState update_flow_masks(Ctx& ctx, const std::string& prefix, const HrbpConfig& cfg,
                                const FlowMaskState& state, Var ftilde, bool trainable) {
    const int n = cfg.n;
    Var cat = concat_last({state.flows, sigmoid(state.logits), ftilde});
    Var delta = conv2d(cat, ctx.p(prefix + "flow.w", trainable), ctx.p(prefix + "flow.b", trainable), 1, 1);
    FlowMaskState out;
    out.flows = add(state.flows, slice_last(delta, 0, 4 * n));
    out.logits = add(state.logits, slice_last(delta, 4 * n, 6 * n));
    return out;
}

Var multi_attention(Ctx& ctx, const std::string& prefix, const HrbpConfig& cfg, Var ftilde,
                    Var kernel_feature, bool trainable) {
    if (cfg.da != kernel_feature.defined())
        throw std::invalid_argument("multi_attention: kernel feature must be given exactly when "
                                    "degradation-aware attention is configured");
    const int h = ftilde.shape()[0], w = ftilde.shape()[1], c = ftilde.shape()[2];
    Var x = reshape(ftilde, Shape{h * w, c});

    Var ln1 = layer_norm(x, ctx.p(prefix + "attn.ln1.g", trainable), ctx.p(prefix + "attn.ln1.b", trainable));
    Var qkv = linear(ln1, ctx.p(prefix + "attn.qkv.w", trainable), ctx.p(prefix + "attn.qkv.b", trainable));
    Var q = slice_last(qkv, 0, c), k = slice_last(qkv, c, 2 * c), v = slice_last(qkv, 2 * c, 3 * c);
    Var attn = windowed_attention(q, k, v, h, w, cfg.heads, cfg.window);
    Var h1 = add(x, linear(attn, ctx.p(prefix + "attn.proj.w", trainable),
                           ctx.p(prefix + "attn.proj.b", trainable)));

    if (cfg.da) {
        Var kf = reshape(kernel_feature, Shape{h * w, c});
        Var qd = linear(kf, ctx.p(prefix + "da.q.w", trainable), ctx.p(prefix + "da.q.b", trainable));
        Var ln = layer_norm(h1, ctx.p(prefix + "da.ln.g", trainable), ctx.p(prefix + "da.ln.b", trainable));
        Var kv = linear(ln, ctx.p(prefix + "da.kv.w", trainable), ctx.p(prefix + "da.kv.b", trainable));
        Var kd = slice_last(kv, 0, c), vd = slice_last(kv, c, 2 * c);
        Var da = windowed_attention(qd, kd, vd, h, w, cfg.heads, cfg.window);
        h1 = add(h1, linear(da, ctx.p(prefix + "da.proj.w", trainable),
                            ctx.p(prefix + "da.proj.b", trainable)));
    }

    Var ln2 = layer_norm(h1, ctx.p(prefix + "ffn.ln.g", trainable), ctx.p(prefix + "ffn.ln.b", trainable));
    Var f1 = gelu(linear(ln2, ctx.p(prefix + "ffn.w1", trainable), ctx.p(prefix + "ffn.b1", trainable)));
    Var f2 = linear(f1, ctx.p(prefix + "ffn.w2", trainable), ctx.p(prefix + "ffn.b2", trainable));
    return reshape(add(h1, f2), Shape{h, w, c});
}

Var etm_modulate(Ctx& ctx, const std::string& prefix, const HrbpConfig& cfg, Var fhat, Var u,
                 bool trainable) {
    if (u.shape().rank() != 2 || u.shape()[0] != 1 || u.shape()[1] != cfg.ce)
        throw std::invalid_argument("etm_modulate: u must be {1, ce}");
    const int cf = fhat.shape()[2];
    Var hidden = lrelu(linear(u, ctx.p(prefix + "etm.w1", trainable), ctx.p(prefix + "etm.b1", trainable)),
                       0.1);
    Var ab = linear(hidden, ctx.p(prefix + "etm.w2", trainable), ctx.p(prefix + "etm.b2", trainable));
    Var alpha = reshape(slice_last(ab, 0, cf), Shape{cf});
    Var beta = reshape(slice_last(ab, cf, 2 * cf), Shape{cf});
    return channel_affine(fhat, alpha, beta);
}

std::pair<Var, FlowMaskState> step(Ctx& ctx, const std::string& prefix, const HrbpConfig& cfg,
                                   Var f_prev, Var f_cur, Var f_next, const FlowMaskState& state,
                                   Var u, Var kernel_feature, bool trainable) {
    Var ftilde = fuse_neighbors(ctx, prefix, cfg, f_prev, f_cur, f_next, state, trainable);
    FlowMaskState new_state = update_flow_masks(ctx, prefix, cfg, state, ftilde, trainable);
    Var fhat = multi_attention(ctx, prefix, cfg, ftilde, kernel_feature, trainable);
    Var out = etm_modulate(ctx, prefix, cfg, fhat, u, trainable);
    return {out, new_state};
}

}  // namespace fmanet::hrbp
