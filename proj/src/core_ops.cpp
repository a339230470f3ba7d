#include "fmanetpp/core_ops.hpp"

#include <cmath>

namespace fmanet::ops {

using ad::Node;
using ad::Tape;

namespace {

struct Bilinear {
    int x0, x1, y0, y1;
    double fx, fy;
    bool gx, gy;  // whether the sample point is strictly inside along each axis
};

Bilinear sample_setup(double sx, double sy, int W, int H) {
    Bilinear b;
    b.gx = sx > 0.0 && sx < W - 1;
    b.gy = sy > 0.0 && sy < H - 1;
    double cx = sx < 0 ? 0 : (sx > W - 1 ? W - 1 : sx);
    double cy = sy < 0 ? 0 : (sy > H - 1 ? H - 1 : sy);
    b.x0 = static_cast<int>(std::floor(cx));
    if (b.x0 > W - 2) b.x0 = W > 1 ? W - 2 : 0;
    b.x1 = W > 1 ? b.x0 + 1 : 0;
    b.fx = W > 1 ? cx - b.x0 : 0.0;
    b.y0 = static_cast<int>(std::floor(cy));
    if (b.y0 > H - 2) b.y0 = H > 1 ? H - 2 : 0;
    b.y1 = H > 1 ? b.y0 + 1 : 0;
    b.fy = H > 1 ? cy - b.y0 : 0.0;
    return b;
}

}  // namespace

Var backward_warp(Var frame, Var flow) {
    if (frame.shape().rank() != 3) throw std::invalid_argument("backward_warp: frame must be H x W x C");
    if (flow.shape().rank() != 3 || flow.shape()[2] != 2)
        throw std::invalid_argument("backward_warp: flow must be H x W x 2");
    const int H = frame.shape()[0], W = frame.shape()[1], C = frame.shape()[2];
    if (flow.shape()[0] != H || flow.shape()[1] != W)
        throw std::invalid_argument("backward_warp: frame " + frame.shape().str() + " and flow " +
                                    flow.shape().str() + " disagree");

    Tape* tape = frame.tape();
    bool rg = tape->grad_enabled() && (frame.requires_grad() || flow.requires_grad());
    Var out(tape, tape->alloc(frame.shape(), rg));

    const double* F = frame.val().data();
    const double* FL = flow.val().data();
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const size_t p = static_cast<size_t>(y) * W + x;
            const double sx = x + FL[p * 2 + 0];
            const double sy = y + FL[p * 2 + 1];
            const Bilinear b = sample_setup(sx, sy, W, H);
            const double* f00 = F + (static_cast<size_t>(b.y0) * W + b.x0) * C;
            const double* f01 = F + (static_cast<size_t>(b.y0) * W + b.x1) * C;
            const double* f10 = F + (static_cast<size_t>(b.y1) * W + b.x0) * C;
            const double* f11 = F + (static_cast<size_t>(b.y1) * W + b.x1) * C;
            double* o = out.val().data() + p * C;
            for (int c = 0; c < C; ++c)
                o[c] = (1 - b.fy) * ((1 - b.fx) * f00[c] + b.fx * f01[c]) +
                       b.fy * ((1 - b.fx) * f10[c] + b.fx * f11[c]);
        }

    if (rg) {
        Node *on = out.node(), *fn = frame.node(), *fln = flow.node();
        on->back = [on, fn, fln, H, W, C] {
            const double* F2 = fn->val.data();
            const double* FL2 = fln->val.data();
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const size_t p = static_cast<size_t>(y) * W + x;
                    const double sx = x + FL2[p * 2 + 0];
                    const double sy = y + FL2[p * 2 + 1];
                    const Bilinear b = sample_setup(sx, sy, W, H);
                    const double* g = on->grad.data() + p * C;
                    if (fn->requires_grad) {
                        auto& gf = Tape::grad_of(fn);
                        double* g00 = gf.data() + (static_cast<size_t>(b.y0) * W + b.x0) * C;
                        double* g01 = gf.data() + (static_cast<size_t>(b.y0) * W + b.x1) * C;
                        double* g10 = gf.data() + (static_cast<size_t>(b.y1) * W + b.x0) * C;
                        double* g11 = gf.data() + (static_cast<size_t>(b.y1) * W + b.x1) * C;
                        for (int c = 0; c < C; ++c) {
                            g00[c] += g[c] * (1 - b.fy) * (1 - b.fx);
                            g01[c] += g[c] * (1 - b.fy) * b.fx;
                            g10[c] += g[c] * b.fy * (1 - b.fx);
                            g11[c] += g[c] * b.fy * b.fx;
                        }
                    }
                    if (fln->requires_grad) {
                        const double* f00 = F2 + (static_cast<size_t>(b.y0) * W + b.x0) * C;
                        const double* f01 = F2 + (static_cast<size_t>(b.y0) * W + b.x1) * C;
                        const double* f10 = F2 + (static_cast<size_t>(b.y1) * W + b.x0) * C;
                        const double* f11 = F2 + (static_cast<size_t>(b.y1) * W + b.x1) * C;
                        double du = 0, dv = 0;
                        for (int c = 0; c < C; ++c) {
                            du += g[c] * ((1 - b.fy) * (f01[c] - f00[c]) + b.fy * (f11[c] - f10[c]));
                            dv += g[c] * ((1 - b.fx) * (f10[c] - f00[c]) + b.fx * (f11[c] - f01[c]));
                        }
                        auto& gfl = Tape::grad_of(fln);
                        if (b.gx) gfl[p * 2 + 0] += du;
                        if (b.gy) gfl[p * 2 + 1] += dv;
                    }
                }
        };
    }
    return out;
}

Var occlusion_warp(Var frame, Var flow, Var mask) {
    if (mask.shape().rank() != 3 || mask.shape()[2] != 1)
        throw std::invalid_argument("occlusion_warp: mask must be H x W x 1");
    if (mask.shape()[0] != frame.shape()[0] || mask.shape()[1] != frame.shape()[1])
        throw std::invalid_argument("occlusion_warp: mask dims disagree with frame");
    Var warped = backward_warp(frame, flow);

    const int H = frame.shape()[0], W = frame.shape()[1], C = frame.shape()[2];
    Tape* tape = frame.tape();
    bool rg = tape->grad_enabled() && (warped.requires_grad() || mask.requires_grad());
    Var out(tape, tape->alloc(frame.shape(), rg));
    for (int p = 0; p < H * W; ++p) {
        const double m = mask.val()[p];
        for (int c = 0; c < C; ++c)
            out.val()[static_cast<size_t>(p) * C + c] = m * warped.val()[static_cast<size_t>(p) * C + c];
    }
    if (rg) {
        Node *on = out.node(), *wn = warped.node(), *mn = mask.node();
        on->back = [on, wn, mn, H, W, C] {
            for (int p = 0; p < H * W; ++p) {
                const double m = mn->val[p];
                const double* g = on->grad.data() + static_cast<size_t>(p) * C;
                if (wn->requires_grad) {
                    auto& gw = Tape::grad_of(wn);
                    for (int c = 0; c < C; ++c) gw[static_cast<size_t>(p) * C + c] += g[c] * m;
                }
                if (mn->requires_grad) {
                    double acc = 0;
                    for (int c = 0; c < C; ++c) acc += g[c] * wn->val[static_cast<size_t>(p) * C + c];
                    Tape::grad_of(mn)[p] += acc;
                }
            }
        };
    }
    return out;
}

Var fgdf_apply(const std::vector<Var>& neighbors, const std::vector<FlowMaskVar>& fm, Var kernels,
               int stride) {
    if (neighbors.empty()) throw std::invalid_argument("fgdf_apply: no neighbors");
    if (fm.size() != neighbors.size())
        throw std::invalid_argument("fgdf_apply: flow-mask count does not match neighbor count");
    if (kernels.shape().rank() != 4)
        throw std::invalid_argument("fgdf_apply: kernels must be T x H x W x m^2");
    const int T = static_cast<int>(neighbors.size());
    if (kernels.shape()[0] != T)
        throw std::invalid_argument("fgdf_apply: kernel temporal extent " +
                                    std::to_string(kernels.shape()[0]) + " does not match neighbor count " +
                                    std::to_string(T));
    const int Hn = neighbors[0].shape()[0], Wn = neighbors[0].shape()[1], C = neighbors[0].shape()[2];
    for (const Var& nb : neighbors)
        if (nb.shape() != neighbors[0].shape())
            throw std::invalid_argument("fgdf_apply: neighbor shapes disagree");
    if (stride < 1 || Hn % stride != 0 || Wn % stride != 0)
        throw std::invalid_argument("fgdf_apply: frame dims " + neighbors[0].shape().str() +
                                    " not divisible by stride " + std::to_string(stride));
    const int Ho = Hn / stride, Wo = Wn / stride;
    if (kernels.shape()[1] != Ho || kernels.shape()[2] != Wo)
        throw std::invalid_argument("fgdf_apply: kernel spatial dims disagree with output dims");
    const int m2 = kernels.shape()[3];
    const int m = static_cast<int>(std::lround(std::sqrt(static_cast<double>(m2))));
    if (m * m != m2) throw std::invalid_argument("fgdf_apply: tap count is not a square");
    for (const FlowMaskVar& f : fm)
        if (f.flow.defined() != f.mask.defined())
            throw std::invalid_argument("fgdf_apply: flow and mask must come as a pair");

    std::vector<Var> warped(neighbors.size());
    for (size_t t = 0; t < neighbors.size(); ++t)
        warped[t] = fm[t].has() ? occlusion_warp(neighbors[t], fm[t].flow, fm[t].mask) : neighbors[t];

    Tape* tape = kernels.tape();
    bool rg = tape->grad_enabled() && kernels.requires_grad();
    for (const Var& wv : warped) rg = rg || (tape->grad_enabled() && wv.requires_grad());
    Var out(tape, tape->alloc(Shape{Ho, Wo, C}, rg));

    const int anchor = (stride - 1) / 2;
    const int lo = -((m - 1) / 2);
    const double* K = kernels.val().data();
    for (int y = 0; y < Ho; ++y)
        for (int x = 0; x < Wo; ++x) {
            double* o = out.val().data() + (static_cast<size_t>(y) * Wo + x) * C;
            std::fill(o, o + C, 0.0);
            const int ay = y * stride + anchor, ax = x * stride + anchor;
            for (int t = 0; t < T; ++t) {
                const double* Wt = warped[t].val().data();
                const double* kt = K + ((static_cast<size_t>(t) * Ho + y) * Wo + x) * m2;
                for (int ky = 0; ky < m; ++ky) {
                    int py = ay + lo + ky;
                    py = py < 0 ? 0 : (py >= Hn ? Hn - 1 : py);
                    for (int kx = 0; kx < m; ++kx) {
                        int px = ax + lo + kx;
                        px = px < 0 ? 0 : (px >= Wn ? Wn - 1 : px);
                        const double wgt = kt[ky * m + kx];
                        const double* src = Wt + (static_cast<size_t>(py) * Wn + px) * C;
                        for (int c = 0; c < C; ++c) o[c] += wgt * src[c];
                    }
                }
            }
        }

    if (rg) {
        Node* on = out.node();
        Node* kn = kernels.node();
        std::vector<Node*> wnodes;
        for (const Var& wv : warped) wnodes.push_back(wv.node());
        on->back = [on, kn, wnodes, T, Ho, Wo, Hn, Wn, C, m, m2, stride, anchor, lo] {
            for (int y = 0; y < Ho; ++y)
                for (int x = 0; x < Wo; ++x) {
                    const double* g = on->grad.data() + (static_cast<size_t>(y) * Wo + x) * C;
                    const int ay = y * stride + anchor, ax = x * stride + anchor;
                    for (int t = 0; t < T; ++t) {
                        Node* wn = wnodes[t];
                        const double* kt =
                            kn->val.data() + ((static_cast<size_t>(t) * Ho + y) * Wo + x) * m2;
                        for (int ky = 0; ky < m; ++ky) {
                            int py = ay + lo + ky;
                            py = py < 0 ? 0 : (py >= Hn ? Hn - 1 : py);
                            for (int kx = 0; kx < m; ++kx) {
                                int px = ax + lo + kx;
                                px = px < 0 ? 0 : (px >= Wn ? Wn - 1 : px);
                                const size_t src = (static_cast<size_t>(py) * Wn + px) * C;
                                if (kn->requires_grad) {
                                    double acc = 0;
                                    for (int c = 0; c < C; ++c) acc += g[c] * wn->val[src + c];
                                    Tape::grad_of(kn)[((static_cast<size_t>(t) * Ho + y) * Wo + x) * m2 +
                                                      ky * m + kx] += acc;
                                }
                                if (wn->requires_grad) {
                                    auto& gw = Tape::grad_of(wn);
                                    const double wgt = kt[ky * m + kx];
                                    for (int c = 0; c < C; ++c) gw[src + c] += wgt * g[c];
                                }
                            }
                        }
                    }
                }
        };
    }
    return out;
}

Var reconstruct_blurry_lr(Var kernels, Var y_prev, Var y_cur, Var y_next, const FlowMaskVar& fm_prev,
                          const FlowMaskVar& fm_next, int stride) {
    if (kernels.shape().rank() != 4 || kernels.shape()[0] != 3)
        throw std::invalid_argument("reconstruct_blurry_lr: kernels must be 3 x H x W x k^2");
    if (!fm_prev.has() || !fm_next.has())
        throw std::invalid_argument("reconstruct_blurry_lr: outer frames need flow-mask pairs");
    return fgdf_apply({y_prev, y_cur, y_next}, {fm_prev, FlowMaskVar{}, fm_next}, kernels, stride);
}

}  // namespace fmanet::ops
