#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "fmanetpp/tape.hpp"

namespace fmanet::ad {

namespace {

using RM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RM>;
using MapCRM = Eigen::Map<const RM>;

Var make(Var like, Shape shape, bool rg) { return Var(like.tape(), like.tape()->alloc(shape, rg)); }

void require_same_shape(Var a, Var b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                                    b.shape().str());
}

bool want_grad(Var a) { return a.tape()->grad_enabled() && a.requires_grad(); }
bool want_grad(Var a, Var b) { return a.tape()->grad_enabled() && (a.requires_grad() || b.requires_grad()); }

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

// im2col scratch, one per thread since tapes are thread-local.
std::vector<double>& scratch() {
    static thread_local std::vector<double> buf;
    return buf;
}

void im2col(const double* x, int H, int W, int C, int kh, int kw, int stride, int pad, int Ho, int Wo,
            double* col) {
    const int K = kh * kw * C;
    for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
            double* row = col + (static_cast<size_t>(oy) * Wo + ox) * K;
            for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride - pad + ky;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * stride - pad + kx;
                    double* dst = row + (ky * kw + kx) * C;
                    if (iy < 0 || iy >= H || ix < 0 || ix >= W) {
                        std::fill(dst, dst + C, 0.0);
                    } else {
                        const double* src = x + (static_cast<size_t>(iy) * W + ix) * C;
                        std::copy(src, src + C, dst);
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, int H, int W, int C, int kh, int kw, int stride, int pad, int Ho,
                int Wo, double* dx) {
    const int K = kh * kw * C;
    for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
            const double* row = col + (static_cast<size_t>(oy) * Wo + ox) * K;
            for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox * stride - pad + kx;
                    if (ix < 0 || ix >= W) continue;
                    const double* src = row + (ky * kw + kx) * C;
                    double* dst = dx + (static_cast<size_t>(iy) * W + ix) * C;
                    for (int c = 0; c < C; ++c) dst[c] += src[c];
                }
            }
        }
    }
}

}  // namespace

// ---------------- elementwise ----------------

Var add(Var a, Var b) {
    require_same_shape(a, b, "add");
    Var out = make(a, a.shape(), want_grad(a, b));
    const size_t n = a.val().size();
    for (size_t i = 0; i < n; ++i) out.val()[i] = a.val()[i] + b.val()[i];
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node(), *bn = b.node();
        on->back = [on, an, bn] {
            if (an->requires_grad) {
                auto& ga = Tape::grad_of(an);
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                auto& gb = Tape::grad_of(bn);
                for (size_t i = 0; i < gb.size(); ++i) gb[i] += on->grad[i];
            }
        };
    }
    return out;
}

Var sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    Var out = make(a, a.shape(), want_grad(a, b));
    const size_t n = a.val().size();
    for (size_t i = 0; i < n; ++i) out.val()[i] = a.val()[i] - b.val()[i];
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node(), *bn = b.node();
        on->back = [on, an, bn] {
            if (an->requires_grad) {
                auto& ga = Tape::grad_of(an);
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                auto& gb = Tape::grad_of(bn);
                for (size_t i = 0; i < gb.size(); ++i) gb[i] -= on->grad[i];
            }
        };
    }
    return out;
}

Var mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    Var out = make(a, a.shape(), want_grad(a, b));
    const size_t n = a.val().size();
    for (size_t i = 0; i < n; ++i) out.val()[i] = a.val()[i] * b.val()[i];
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node(), *bn = b.node();
        on->back = [on, an, bn] {
            if (an->requires_grad) {
                auto& ga = Tape::grad_of(an);
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[i] * bn->val[i];
            }
            if (bn->requires_grad) {
                auto& gb = Tape::grad_of(bn);
                for (size_t i = 0; i < gb.size(); ++i) gb[i] += on->grad[i] * an->val[i];
            }
        };
    }
    return out;
}

Var scale(Var a, double c) {
    Var out = make(a, a.shape(), want_grad(a));
    const size_t n = a.val().size();
    for (size_t i = 0; i < n; ++i) out.val()[i] = a.val()[i] * c;
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node();
        on->back = [on, an, c] {
            auto& ga = Tape::grad_of(an);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[i] * c;
        };
    }
    return out;
}

Var add_scalar(Var a, double c) {
    Var out = make(a, a.shape(), want_grad(a));
    const size_t n = a.val().size();
    for (size_t i = 0; i < n; ++i) out.val()[i] = a.val()[i] + c;
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node();
        on->back = [on, an] {
            auto& ga = Tape::grad_of(an);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[i];
        };
    }
    return out;
}

Var relu(Var a) { return lrelu(a, 0.0); }

Var lrelu(Var a, double slope) {
    Var out = make(a, a.shape(), want_grad(a));
    const size_t n = a.val().size();
    for (size_t i = 0; i < n; ++i) {
        double x = a.val()[i];
        out.val()[i] = x > 0.0 ? x : slope * x;
    }
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node();
        on->back = [on, an, slope] {
            auto& ga = Tape::grad_of(an);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[i] * (an->val[i] > 0.0 ? 1.0 : slope);
        };
    }
    return out;
}

Var sigmoid(Var a) {
    Var out = make(a, a.shape(), want_grad(a));
    const size_t n = a.val().size();
    for (size_t i = 0; i < n; ++i) out.val()[i] = 1.0 / (1.0 + std::exp(-a.val()[i]));
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node();
        on->back = [on, an] {
            auto& ga = Tape::grad_of(an);
            for (size_t i = 0; i < ga.size(); ++i) {
                double y = on->val[i];
                ga[i] += on->grad[i] * y * (1.0 - y);
            }
        };
    }
    return out;
}

Var gelu(Var a) {
    Var out = make(a, a.shape(), want_grad(a));
    const size_t n = a.val().size();
    for (size_t i = 0; i < n; ++i) {
        double x = a.val()[i];
        out.val()[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node();
        on->back = [on, an] {
            auto& ga = Tape::grad_of(an);
            for (size_t i = 0; i < ga.size(); ++i) {
                double x = an->val[i];
                double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                ga[i] += on->grad[i] * (cdf + x * pdf);
            }
        };
    }
    return out;
}

Var sqr(Var a) {
    Var out = make(a, a.shape(), want_grad(a));
    const size_t n = a.val().size();
    for (size_t i = 0; i < n; ++i) out.val()[i] = a.val()[i] * a.val()[i];
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node();
        on->back = [on, an] {
            auto& ga = Tape::grad_of(an);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * on->grad[i] * an->val[i];
        };
    }
    return out;
}

// ---------------- structure ----------------

Var concat_last(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_last: empty input");
    const Shape& s0 = xs[0].shape();
    const int rank = s0.rank();
    std::int64_t rows = 1;
    for (int i = 0; i < rank - 1; ++i) rows *= s0[i];
    int ctotal = 0;
    bool rg = false;
    for (const Var& x : xs) {
        if (x.shape().rank() != rank)
            throw std::invalid_argument("concat_last: rank mismatch");
        std::int64_t r = 1;
        for (int i = 0; i < rank - 1; ++i) {
            if (x.shape()[i] != s0[i]) throw std::invalid_argument("concat_last: leading dims mismatch");
            r *= x.shape()[i];
        }
        (void)r;
        ctotal += x.shape()[rank - 1];
        rg = rg || x.requires_grad();
    }
    std::vector<int> dims;
    for (int i = 0; i < rank - 1; ++i) dims.push_back(s0[i]);
    dims.push_back(ctotal);
    Var out = make(xs[0], Shape::of(dims), xs[0].tape()->grad_enabled() && rg);

    int off = 0;
    for (const Var& x : xs) {
        const int cx = x.shape()[x.shape().rank() - 1];
        for (std::int64_t r = 0; r < rows; ++r)
            std::copy(x.val().begin() + r * cx, x.val().begin() + (r + 1) * cx,
                      out.val().begin() + r * ctotal + off);
        off += cx;
    }
    if (out.requires_grad()) {
        Node* on = out.node();
        std::vector<Node*> parents;
        std::vector<int> widths;
        for (const Var& x : xs) {
            parents.push_back(x.node());
            widths.push_back(x.shape()[x.shape().rank() - 1]);
        }
        on->back = [on, parents, widths, rows, ctotal] {
            int off2 = 0;
            for (size_t k = 0; k < parents.size(); ++k) {
                Node* p = parents[k];
                const int cx = widths[k];
                if (p->requires_grad) {
                    auto& gp = Tape::grad_of(p);
                    for (std::int64_t r = 0; r < rows; ++r)
                        for (int c = 0; c < cx; ++c) gp[r * cx + c] += on->grad[r * ctotal + off2 + c];
                }
                off2 += cx;
            }
        };
    }
    return out;
}

Var concat_rows(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_rows: empty input");
    const int C = xs[0].shape()[1];
    int rows = 0;
    bool rg = false;
    for (const Var& x : xs) {
        if (x.shape().rank() != 2 || x.shape()[1] != C)
            throw std::invalid_argument("concat_rows: incompatible shapes");
        rows += x.shape()[0];
        rg = rg || x.requires_grad();
    }
    Var out = make(xs[0], Shape{rows, C}, xs[0].tape()->grad_enabled() && rg);
    size_t off = 0;
    for (const Var& x : xs) {
        std::copy(x.val().begin(), x.val().end(), out.val().begin() + off);
        off += x.val().size();
    }
    if (out.requires_grad()) {
        Node* on = out.node();
        std::vector<Node*> parents;
        for (const Var& x : xs) parents.push_back(x.node());
        on->back = [on, parents] {
            size_t off2 = 0;
            for (Node* p : parents) {
                const size_t n = static_cast<size_t>(p->shape.numel());
                if (p->requires_grad) {
                    auto& gp = Tape::grad_of(p);
                    for (size_t i = 0; i < n; ++i) gp[i] += on->grad[off2 + i];
                }
                off2 += n;
            }
        };
    }
    return out;
}

Var split_temporal(Var a, int t) {
    if (a.shape().rank() != 3) throw std::invalid_argument("split_temporal: expected H x W x T*J");
    const int H = a.shape()[0], W = a.shape()[1], C = a.shape()[2];
    if (C % t != 0) throw std::invalid_argument("split_temporal: channels not divisible by T");
    const int J = C / t;
    Var out = make(a, Shape{t, H, W, J}, want_grad(a));
    for (int ti = 0; ti < t; ++ti)
        for (int p = 0; p < H * W; ++p)
            for (int j = 0; j < J; ++j)
                out.val()[(static_cast<size_t>(ti) * H * W + p) * J + j] =
                    a.val()[static_cast<size_t>(p) * C + ti * J + j];
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node();
        on->back = [on, an, t, H, W, C, J] {
            auto& ga = Tape::grad_of(an);
            for (int ti = 0; ti < t; ++ti)
                for (int p = 0; p < H * W; ++p)
                    for (int j = 0; j < J; ++j)
                        ga[static_cast<size_t>(p) * C + ti * J + j] +=
                            on->grad[(static_cast<size_t>(ti) * H * W + p) * J + j];
        };
    }
    return out;
}

Var merge_temporal(Var a) {
    if (a.shape().rank() != 4) throw std::invalid_argument("merge_temporal: expected T x H x W x J");
    const int t = a.shape()[0], H = a.shape()[1], W = a.shape()[2], J = a.shape()[3];
    const int C = t * J;
    Var out = make(a, Shape{H, W, C}, want_grad(a));
    for (int ti = 0; ti < t; ++ti)
        for (int p = 0; p < H * W; ++p)
            for (int j = 0; j < J; ++j)
                out.val()[static_cast<size_t>(p) * C + ti * J + j] =
                    a.val()[(static_cast<size_t>(ti) * H * W + p) * J + j];
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node();
        on->back = [on, an, t, H, W, C, J] {
            auto& ga = Tape::grad_of(an);
            for (int ti = 0; ti < t; ++ti)
                for (int p = 0; p < H * W; ++p)
                    for (int j = 0; j < J; ++j)
                        ga[(static_cast<size_t>(ti) * H * W + p) * J + j] +=
                            on->grad[static_cast<size_t>(p) * C + ti * J + j];
        };
    }
    return out;
}

Var slice_last(Var a, int c0, int c1) {
    const Shape& s = a.shape();
    const int rank = s.rank();
    const int C = s[rank - 1];
    if (c0 < 0 || c1 > C || c0 >= c1) throw std::invalid_argument("slice_last: bad range");
    std::int64_t rows = 1;
    std::vector<int> dims;
    for (int i = 0; i < rank - 1; ++i) {
        rows *= s[i];
        dims.push_back(s[i]);
    }
    const int cw = c1 - c0;
    dims.push_back(cw);
    Var out = make(a, Shape::of(dims), want_grad(a));
    for (std::int64_t r = 0; r < rows; ++r)
        std::copy(a.val().begin() + r * C + c0, a.val().begin() + r * C + c1, out.val().begin() + r * cw);
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node();
        on->back = [on, an, rows, C, c0, cw] {
            auto& ga = Tape::grad_of(an);
            for (std::int64_t r = 0; r < rows; ++r)
                for (int c = 0; c < cw; ++c) ga[r * C + c0 + c] += on->grad[r * cw + c];
        };
    }
    return out;
}

Var reshape(Var a, Shape s) {
    if (s.numel() != a.shape().numel())
        throw std::invalid_argument("reshape: numel mismatch " + a.shape().str() + " -> " + s.str());
    Var out = make(a, s, want_grad(a));
    out.val() = a.val();
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node();
        on->back = [on, an] {
            auto& ga = Tape::grad_of(an);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[i];
        };
    }
    return out;
}

Var gather_rows(Var a, const std::vector<int>& rows) {
    if (a.shape().rank() != 2) throw std::invalid_argument("gather_rows: expected rank-2");
    const int N = a.shape()[0], C = a.shape()[1];
    for (int r : rows)
        if (r < 0 || r >= N) throw std::invalid_argument("gather_rows: index out of range");
    Var out = make(a, Shape{static_cast<int>(rows.size()), C}, want_grad(a));
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy(a.val().begin() + static_cast<size_t>(rows[i]) * C,
                  a.val().begin() + static_cast<size_t>(rows[i] + 1) * C, out.val().begin() + i * C);
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node();
        std::vector<int> idx = rows;
        on->back = [on, an, idx, C] {
            auto& ga = Tape::grad_of(an);
            for (size_t i = 0; i < idx.size(); ++i)
                for (int c = 0; c < C; ++c)
                    ga[static_cast<size_t>(idx[i]) * C + c] += on->grad[i * C + c];
        };
    }
    return out;
}

Var pixel_shuffle(Var a, int r) {
    if (a.shape().rank() != 3) throw std::invalid_argument("pixel_shuffle: expected H x W x C");
    const int H = a.shape()[0], W = a.shape()[1], C = a.shape()[2];
    if (C % (r * r) != 0) throw std::invalid_argument("pixel_shuffle: channels not divisible by r^2");
    const int Co = C / (r * r);
    Var out = make(a, Shape{H * r, W * r, Co}, want_grad(a));
    for (int y = 0; y < H * r; ++y) {
        const int iy = y / r, dy = y % r;
        for (int x = 0; x < W * r; ++x) {
            const int ix = x / r, dx = x % r;
            const double* src = a.val().data() + (static_cast<size_t>(iy) * W + ix) * C;
            double* dst = out.val().data() + (static_cast<size_t>(y) * W * r + x) * Co;
            for (int c = 0; c < Co; ++c) dst[c] = src[(c * r + dy) * r + dx];
        }
    }
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node();
        on->back = [on, an, H, W, C, Co, r] {
            auto& ga = Tape::grad_of(an);
            for (int y = 0; y < H * r; ++y) {
                const int iy = y / r, dy = y % r;
                for (int x = 0; x < W * r; ++x) {
                    const int ix = x / r, dx = x % r;
                    double* gsrc = ga.data() + (static_cast<size_t>(iy) * W + ix) * C;
                    const double* gdst = on->grad.data() + (static_cast<size_t>(y) * W * r + x) * Co;
                    for (int c = 0; c < Co; ++c) gsrc[(c * r + dy) * r + dx] += gdst[c];
                }
            }
        };
    }
    return out;
}

Var bilinear_upsample(Var a, int s) {
    if (a.shape().rank() != 3) throw std::invalid_argument("bilinear_upsample: expected H x W x C");
    if (s < 1) throw std::invalid_argument("bilinear_upsample: bad scale");
    const int H = a.shape()[0], W = a.shape()[1], C = a.shape()[2];
    const int Ho = H * s, Wo = W * s;
    // Half-pixel center alignment with edge clamping.
    auto axis_map = [s](int n, int no) {
        std::vector<int> i0(no), i1(no);
        std::vector<double> f(no);
        for (int o = 0; o < no; ++o) {
            double src = (o + 0.5) / s - 0.5;
            if (src < 0) src = 0;
            if (src > n - 1) src = n - 1;
            int a0 = static_cast<int>(std::floor(src));
            if (a0 > n - 2) a0 = n > 1 ? n - 2 : 0;
            i0[o] = a0;
            i1[o] = n > 1 ? a0 + 1 : 0;
            f[o] = src - a0;
        }
        return std::tuple(i0, i1, f);
    };
    auto [y0, y1, fy] = axis_map(H, Ho);
    auto [x0, x1, fx] = axis_map(W, Wo);

    Var out = make(a, Shape{Ho, Wo, C}, want_grad(a));
    for (int y = 0; y < Ho; ++y)
        for (int x = 0; x < Wo; ++x) {
            const double wy = fy[y], wx = fx[x];
            const double* p00 = a.val().data() + (static_cast<size_t>(y0[y]) * W + x0[x]) * C;
            const double* p01 = a.val().data() + (static_cast<size_t>(y0[y]) * W + x1[x]) * C;
            const double* p10 = a.val().data() + (static_cast<size_t>(y1[y]) * W + x0[x]) * C;
            const double* p11 = a.val().data() + (static_cast<size_t>(y1[y]) * W + x1[x]) * C;
            double* dst = out.val().data() + (static_cast<size_t>(y) * Wo + x) * C;
            for (int c = 0; c < C; ++c)
                dst[c] = (1 - wy) * ((1 - wx) * p00[c] + wx * p01[c]) +
                         wy * ((1 - wx) * p10[c] + wx * p11[c]);
        }
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node();
        auto Y0 = y0; auto Y1 = y1; auto FY = fy; auto X0 = x0; auto X1 = x1; auto FX = fx;
        on->back = [on, an, Y0, Y1, FY, X0, X1, FX, W, C, Wo, Ho] {
            auto& ga = Tape::grad_of(an);
            for (int y = 0; y < Ho; ++y)
                for (int x = 0; x < Wo; ++x) {
                    const double wy = FY[y], wx = FX[x];
                    const double* g = on->grad.data() + (static_cast<size_t>(y) * Wo + x) * C;
                    double* g00 = ga.data() + (static_cast<size_t>(Y0[y]) * W + X0[x]) * C;
                    double* g01 = ga.data() + (static_cast<size_t>(Y0[y]) * W + X1[x]) * C;
                    double* g10 = ga.data() + (static_cast<size_t>(Y1[y]) * W + X0[x]) * C;
                    double* g11 = ga.data() + (static_cast<size_t>(Y1[y]) * W + X1[x]) * C;
                    for (int c = 0; c < C; ++c) {
                        g00[c] += g[c] * (1 - wy) * (1 - wx);
                        g01[c] += g[c] * (1 - wy) * wx;
                        g10[c] += g[c] * wy * (1 - wx);
                        g11[c] += g[c] * wy * wx;
                    }
                }
        };
    }
    return out;
}

// ---------------- reductions / losses ----------------

Var sum(Var a) {
    Var out = make(a, Shape{1}, want_grad(a));
    double acc = 0;
    for (double v : a.val()) acc += v;
    out.val()[0] = acc;
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node();
        on->back = [on, an] {
            auto& ga = Tape::grad_of(an);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[0];
        };
    }
    return out;
}

Var mean_all(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.shape().numel())); }

Var l1(Var a, Var b) {
    require_same_shape(a, b, "l1");
    Var out = make(a, Shape{1}, want_grad(a, b));
    const size_t n = a.val().size();
    double acc = 0;
    for (size_t i = 0; i < n; ++i) acc += std::abs(a.val()[i] - b.val()[i]);
    out.val()[0] = acc / static_cast<double>(n);
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node(), *bn = b.node();
        on->back = [on, an, bn, n] {
            const double g = on->grad[0] / static_cast<double>(n);
            for (size_t i = 0; i < n; ++i) {
                double d = an->val[i] - bn->val[i];
                double s = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
                if (an->requires_grad) Tape::grad_of(an)[i] += g * s;
                if (bn->requires_grad) Tape::grad_of(bn)[i] -= g * s;
            }
        };
    }
    return out;
}

Var dot_const(Var a, const Tensor& w) {
    if (a.shape().numel() != w.numel()) throw std::invalid_argument("dot_const: size mismatch");
    Var out = make(a, Shape{1}, want_grad(a));
    double acc = 0;
    for (size_t i = 0; i < a.val().size(); ++i) acc += a.val()[i] * w.v[i];
    out.val()[0] = acc;
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node();
        std::vector<double> wc = w.v;
        on->back = [on, an, wc] {
            auto& ga = Tape::grad_of(an);
            for (size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[0] * wc[i];
        };
    }
    return out;
}

Var mean_hw(Var a) {
    if (a.shape().rank() != 3) throw std::invalid_argument("mean_hw: expected H x W x C");
    const int H = a.shape()[0], W = a.shape()[1], C = a.shape()[2];
    Var out = make(a, Shape{C}, want_grad(a));
    std::fill(out.val().begin(), out.val().end(), 0.0);
    for (int p = 0; p < H * W; ++p)
        for (int c = 0; c < C; ++c) out.val()[c] += a.val()[static_cast<size_t>(p) * C + c];
    const double inv = 1.0 / (H * W);
    for (int c = 0; c < C; ++c) out.val()[c] *= inv;
    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node();
        on->back = [on, an, H, W, C, inv] {
            auto& ga = Tape::grad_of(an);
            for (int p = 0; p < H * W; ++p)
                for (int c = 0; c < C; ++c) ga[static_cast<size_t>(p) * C + c] += on->grad[c] * inv;
        };
    }
    return out;
}

Var add_many(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("add_many: empty input");
    Var acc = xs[0];
    for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return acc;
}

// ---------------- linear algebra / NN ----------------

Var matmul(Var a, Var b, bool ta, bool tb) {
    if (a.shape().rank() != 2 || b.shape().rank() != 2)
        throw std::invalid_argument("matmul: expected rank-2 operands");
    const int m = ta ? a.shape()[1] : a.shape()[0];
    const int k = ta ? a.shape()[0] : a.shape()[1];
    const int kb = tb ? b.shape()[1] : b.shape()[0];
    const int n = tb ? b.shape()[0] : b.shape()[1];
    if (k != kb)
        throw std::invalid_argument("matmul: inner dim mismatch " + a.shape().str() + " vs " + b.shape().str());

    Var out = make(a, Shape{m, n}, want_grad(a, b));
    MapCRM A(a.val().data(), a.shape()[0], a.shape()[1]);
    MapCRM B(b.val().data(), b.shape()[0], b.shape()[1]);
    MapRM O(out.val().data(), m, n);
    if (!ta && !tb) O.noalias() = A * B;
    else if (ta && !tb) O.noalias() = A.transpose() * B;
    else if (!ta && tb) O.noalias() = A * B.transpose();
    else O.noalias() = A.transpose() * B.transpose();

    if (out.requires_grad()) {
        Node *on = out.node(), *an = a.node(), *bn = b.node();
        on->back = [on, an, bn, ta, tb, m, n] {
            MapCRM G(on->grad.data(), m, n);
            MapCRM A2(an->val.data(), an->shape[0], an->shape[1]);
            MapCRM B2(bn->val.data(), bn->shape[0], bn->shape[1]);
            if (an->requires_grad) {
                MapRM GA(Tape::grad_of(an).data(), an->shape[0], an->shape[1]);
                if (!ta && !tb) GA.noalias() += G * B2.transpose();
                else if (!ta && tb) GA.noalias() += G * B2;
                else if (ta && !tb) GA.noalias() += B2 * G.transpose();
                else GA.noalias() += B2.transpose() * G.transpose();
            }
            if (bn->requires_grad) {
                MapRM GB(Tape::grad_of(bn).data(), bn->shape[0], bn->shape[1]);
                if (!ta && !tb) GB.noalias() += A2.transpose() * G;
                else if (ta && !tb) GB.noalias() += A2 * G;
                else if (!ta && tb) GB.noalias() += G.transpose() * A2;
                else GB.noalias() += G.transpose() * A2.transpose();
            }
        };
    }
    return out;
}

Var linear(Var x, Var w, Var b) {
    Var out = matmul(x, w);
    if (!b.defined()) return out;
    const int N = out.shape()[0], C = out.shape()[1];
    if (b.shape().numel() != C) throw std::invalid_argument("linear: bias size mismatch");
    Var out2 = make(x, out.shape(), want_grad(out, b));
    for (int r = 0; r < N; ++r)
        for (int c = 0; c < C; ++c) out2.val()[static_cast<size_t>(r) * C + c] =
            out.val()[static_cast<size_t>(r) * C + c] + b.val()[c];
    if (out2.requires_grad()) {
        Node *on = out2.node(), *xn = out.node(), *bn = b.node();
        on->back = [on, xn, bn, N, C] {
            if (xn->requires_grad) {
                auto& gx = Tape::grad_of(xn);
                for (size_t i = 0; i < gx.size(); ++i) gx[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                auto& gb = Tape::grad_of(bn);
                for (int r = 0; r < N; ++r)
                    for (int c = 0; c < C; ++c) gb[c] += on->grad[static_cast<size_t>(r) * C + c];
            }
        };
    }
    return out2;
}

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
    if (x.shape().rank() != 3) throw std::invalid_argument("conv2d: input must be H x W x C");
    if (w.shape().rank() != 4) throw std::invalid_argument("conv2d: weight must be kh x kw x Cin x Cout");
    const int H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
    const int kh = w.shape()[0], kw = w.shape()[1], wc = w.shape()[2], Co = w.shape()[3];
    if (wc != C) throw std::invalid_argument("conv2d: channel mismatch");
    if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho < 1 || Wo < 1) throw std::invalid_argument("conv2d: kernel larger than padded input");
    const int K = kh * kw * C;
    const std::int64_t rows = static_cast<std::int64_t>(Ho) * Wo;

    auto& col = scratch();
    col.resize(static_cast<size_t>(rows) * K);
    im2col(x.val().data(), H, W, C, kh, kw, stride, pad, Ho, Wo, col.data());

    Var out = make(x, Shape{Ho, Wo, Co}, want_grad(x, w) || (b.defined() && want_grad(b)));
    {
        MapCRM Cm(col.data(), rows, K);
        MapCRM Wm(w.val().data(), K, Co);
        MapRM Om(out.val().data(), rows, Co);
        Om.noalias() = Cm * Wm;
    }
    if (b.defined()) {
        if (b.shape().numel() != Co) throw std::invalid_argument("conv2d: bias size mismatch");
        for (std::int64_t r = 0; r < rows; ++r)
            for (int c = 0; c < Co; ++c) out.val()[static_cast<size_t>(r) * Co + c] += b.val()[c];
    }

    if (out.requires_grad()) {
        Node *on = out.node(), *xn = x.node(), *wn = w.node();
        Node* bn = b.defined() ? b.node() : nullptr;
        on->back = [on, xn, wn, bn, H, W, C, kh, kw, stride, pad, Ho, Wo, Co, K, rows] {
            MapCRM G(on->grad.data(), rows, Co);
            if (wn->requires_grad || xn->requires_grad) {
                auto& col2 = scratch();
                col2.resize(static_cast<size_t>(rows) * K);
                if (wn->requires_grad) {
                    im2col(xn->val.data(), H, W, C, kh, kw, stride, pad, Ho, Wo, col2.data());
                    MapCRM Cm(col2.data(), rows, K);
                    MapRM GW(Tape::grad_of(wn).data(), K, Co);
                    GW.noalias() += Cm.transpose() * G;
                }
                if (xn->requires_grad) {
                    MapCRM Wm(wn->val.data(), K, Co);
                    MapRM Dcol(col2.data(), rows, K);
                    Dcol.noalias() = G * Wm.transpose();
                    col2im_add(col2.data(), H, W, C, kh, kw, stride, pad, Ho, Wo,
                               Tape::grad_of(xn).data());
                }
            }
            if (bn && bn->requires_grad) {
                auto& gb = Tape::grad_of(bn);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (int c = 0; c < Co; ++c) gb[c] += on->grad[static_cast<size_t>(r) * Co + c];
            }
        };
    }
    return out;
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    if (x.shape().rank() != 2) throw std::invalid_argument("layer_norm: expected rank-2 N x C");
    const int N = x.shape()[0], C = x.shape()[1];
    if (gamma.shape().numel() != C || beta.shape().numel() != C)
        throw std::invalid_argument("layer_norm: affine size mismatch");
    Var out = make(x, x.shape(), want_grad(x, gamma) || want_grad(beta));
    for (int r = 0; r < N; ++r) {
        const double* xr = x.val().data() + static_cast<size_t>(r) * C;
        double mu = 0;
        for (int c = 0; c < C; ++c) mu += xr[c];
        mu /= C;
        double var = 0;
        for (int c = 0; c < C; ++c) var += (xr[c] - mu) * (xr[c] - mu);
        var /= C;
        const double inv = 1.0 / std::sqrt(var + eps);
        double* yr = out.val().data() + static_cast<size_t>(r) * C;
        for (int c = 0; c < C; ++c) yr[c] = (xr[c] - mu) * inv * gamma.val()[c] + beta.val()[c];
    }
    if (out.requires_grad()) {
        Node *on = out.node(), *xn = x.node(), *gn = gamma.node(), *bn = beta.node();
        on->back = [on, xn, gn, bn, N, C, eps] {
            for (int r = 0; r < N; ++r) {
                const double* xr = xn->val.data() + static_cast<size_t>(r) * C;
                const double* g = on->grad.data() + static_cast<size_t>(r) * C;
                double mu = 0;
                for (int c = 0; c < C; ++c) mu += xr[c];
                mu /= C;
                double var = 0;
                for (int c = 0; c < C; ++c) var += (xr[c] - mu) * (xr[c] - mu);
                var /= C;
                const double inv = 1.0 / std::sqrt(var + eps);
                double mean_dxhat = 0, mean_dxhat_xhat = 0;
                for (int c = 0; c < C; ++c) {
                    const double xhat = (xr[c] - mu) * inv;
                    const double dxhat = g[c] * gn->val[c];
                    mean_dxhat += dxhat;
                    mean_dxhat_xhat += dxhat * xhat;
                }
                mean_dxhat /= C;
                mean_dxhat_xhat /= C;
                if (xn->requires_grad) {
                    auto& gx = Tape::grad_of(xn);
                    for (int c = 0; c < C; ++c) {
                        const double xhat = (xr[c] - mu) * inv;
                        const double dxhat = g[c] * gn->val[c];
                        gx[static_cast<size_t>(r) * C + c] +=
                            inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                    }
                }
                if (gn->requires_grad) {
                    auto& gg = Tape::grad_of(gn);
                    for (int c = 0; c < C; ++c) gg[c] += g[c] * (xr[c] - mu) * inv;
                }
                if (bn->requires_grad) {
                    auto& gb = Tape::grad_of(bn);
                    for (int c = 0; c < C; ++c) gb[c] += g[c];
                }
            }
        };
    }
    return out;
}

Var softmax_rows(Var x) { return softmax_rows_scaled(x, 1.0); }

Var softmax_rows_scaled(Var x, double sc) {
    if (x.shape().rank() != 2) throw std::invalid_argument("softmax_rows: expected rank-2");
    const int N = x.shape()[0], C = x.shape()[1];
    Var out = make(x, x.shape(), want_grad(x));
    for (int r = 0; r < N; ++r) {
        const double* xr = x.val().data() + static_cast<size_t>(r) * C;
        double* yr = out.val().data() + static_cast<size_t>(r) * C;
        double mx = -1e300;
        for (int c = 0; c < C; ++c) mx = std::max(mx, xr[c] * sc);
        double z = 0;
        for (int c = 0; c < C; ++c) {
            yr[c] = std::exp(xr[c] * sc - mx);
            z += yr[c];
        }
        const double inv = 1.0 / z;
        for (int c = 0; c < C; ++c) yr[c] *= inv;
    }
    if (out.requires_grad()) {
        Node *on = out.node(), *xn = x.node();
        on->back = [on, xn, N, C, sc] {
            auto& gx = Tape::grad_of(xn);
            for (int r = 0; r < N; ++r) {
                const double* y = on->val.data() + static_cast<size_t>(r) * C;
                const double* g = on->grad.data() + static_cast<size_t>(r) * C;
                double dot = 0;
                for (int c = 0; c < C; ++c) dot += g[c] * y[c];
                for (int c = 0; c < C; ++c)
                    gx[static_cast<size_t>(r) * C + c] += sc * y[c] * (g[c] - dot);
            }
        };
    }
    return out;
}

Var rows_logsumexp_masked(Var x, const std::vector<unsigned char>& mask) {
    if (x.shape().rank() != 2) throw std::invalid_argument("rows_logsumexp_masked: expected rank-2");
    const int N = x.shape()[0], C = x.shape()[1];
    if (mask.size() != static_cast<size_t>(N) * C)
        throw std::invalid_argument("rows_logsumexp_masked: mask size mismatch");
    Var out = make(x, Shape{N}, want_grad(x));
    for (int r = 0; r < N; ++r) {
        const double* xr = x.val().data() + static_cast<size_t>(r) * C;
        const unsigned char* mr = mask.data() + static_cast<size_t>(r) * C;
        double mx = -1e300;
        int cnt = 0;
        for (int c = 0; c < C; ++c)
            if (mr[c]) {
                mx = std::max(mx, xr[c]);
                ++cnt;
            }
        if (cnt == 0) throw std::invalid_argument("rows_logsumexp_masked: empty row mask");
        double z = 0;
        for (int c = 0; c < C; ++c)
            if (mr[c]) z += std::exp(xr[c] - mx);
        out.val()[r] = mx + std::log(z);
    }
    if (out.requires_grad()) {
        Node *on = out.node(), *xn = x.node();
        std::vector<unsigned char> m = mask;
        on->back = [on, xn, m, N, C] {
            auto& gx = Tape::grad_of(xn);
            for (int r = 0; r < N; ++r) {
                const double* xr = xn->val.data() + static_cast<size_t>(r) * C;
                const double lse = on->val[r];
                const double g = on->grad[r];
                for (int c = 0; c < C; ++c)
                    if (m[static_cast<size_t>(r) * C + c])
                        gx[static_cast<size_t>(r) * C + c] += g * std::exp(xr[c] - lse);
            }
        };
    }
    return out;
}

Var channel_affine(Var x, Var alpha, Var beta) {
    if (x.shape().rank() != 3) throw std::invalid_argument("channel_affine: expected H x W x C");
    const int H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
    if (alpha.shape().numel() != C || beta.shape().numel() != C)
        throw std::invalid_argument("channel_affine: parameter size mismatch");
    Var out = make(x, x.shape(), want_grad(x, alpha) || want_grad(beta));
    for (int p = 0; p < H * W; ++p)
        for (int c = 0; c < C; ++c)
            out.val()[static_cast<size_t>(p) * C + c] =
                (1.0 + alpha.val()[c]) * x.val()[static_cast<size_t>(p) * C + c] + beta.val()[c];
    if (out.requires_grad()) {
        Node *on = out.node(), *xn = x.node(), *an = alpha.node(), *bn = beta.node();
        on->back = [on, xn, an, bn, H, W, C] {
            for (int p = 0; p < H * W; ++p)
                for (int c = 0; c < C; ++c) {
                    const double g = on->grad[static_cast<size_t>(p) * C + c];
                    if (xn->requires_grad)
                        Tape::grad_of(xn)[static_cast<size_t>(p) * C + c] += g * (1.0 + an->val[c]);
                    if (an->requires_grad)
                        Tape::grad_of(an)[c] += g * xn->val[static_cast<size_t>(p) * C + c];
                    if (bn->requires_grad) Tape::grad_of(bn)[c] += g;
                }
        };
    }
    return out;
}

Var l2_normalize_rows(Var x, double eps) {
    if (x.shape().rank() != 2) throw std::invalid_argument("l2_normalize_rows: expected rank-2");
    const int N = x.shape()[0], C = x.shape()[1];
    Var out = make(x, x.shape(), want_grad(x));
    for (int r = 0; r < N; ++r) {
        const double* xr = x.val().data() + static_cast<size_t>(r) * C;
        double nrm = 0;
        for (int c = 0; c < C; ++c) nrm += xr[c] * xr[c];
        nrm = std::sqrt(std::max(nrm, eps));
        double* yr = out.val().data() + static_cast<size_t>(r) * C;
        for (int c = 0; c < C; ++c) yr[c] = xr[c] / nrm;
    }
    if (out.requires_grad()) {
        Node *on = out.node(), *xn = x.node();
        on->back = [on, xn, N, C, eps] {
            auto& gx = Tape::grad_of(xn);
            for (int r = 0; r < N; ++r) {
                const double* xr = xn->val.data() + static_cast<size_t>(r) * C;
                const double* yr = on->val.data() + static_cast<size_t>(r) * C;
                const double* g = on->grad.data() + static_cast<size_t>(r) * C;
                double nrm = 0;
                for (int c = 0; c < C; ++c) nrm += xr[c] * xr[c];
                nrm = std::sqrt(std::max(nrm, eps));
                double dot = 0;
                for (int c = 0; c < C; ++c) dot += g[c] * yr[c];
                for (int c = 0; c < C; ++c)
                    gx[static_cast<size_t>(r) * C + c] += (g[c] - yr[c] * dot) / nrm;
            }
        };
    }
    return out;
}

}  // namespace fmanet::ad
