#include "fmanetpp/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace fmanet::metrics {

namespace {

double mse_accum(const Tensor& a, const Tensor& b, double& acc) {
    if (a.shape != b.shape)
        throw std::invalid_argument("psnr: shape mismatch " + a.shape.str() + " vs " + b.shape.str());
    for (size_t i = 0; i < a.v.size(); ++i) {
        const double d = a.v[i] - b.v[i];
        acc += d * d;
    }
    return static_cast<double>(a.v.size());
}

double psnr_from_mse(double mse) {
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

}  // namespace

double psnr(const Tensor& a, const Tensor& b) {
    double acc = 0;
    const double n = mse_accum(a, b, acc);
    return psnr_from_mse(acc / n);
}

double psnr(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("psnr: sequence length mismatch");
    if (a.empty()) throw std::invalid_argument("psnr: empty sequence");
    double acc = 0, n = 0;
    for (size_t i = 0; i < a.size(); ++i) n += mse_accum(a[i], b[i], acc);
    return psnr_from_mse(acc / n);
}

Tensor to_gray(const Tensor& rgb) {
    if (rgb.shape.rank() == 2) return rgb;
    if (rgb.shape.rank() != 3) throw std::invalid_argument("to_gray: expected H x W x C");
    const int h = rgb.shape[0], w = rgb.shape[1], c = rgb.shape[2];
    Tensor g(Shape{h, w});
    if (c == 1) {
        for (int i = 0; i < h * w; ++i) g.v[i] = rgb.v[i];
        return g;
    }
    if (c != 3) throw std::invalid_argument("to_gray: expected 1 or 3 channels");
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            g.v[static_cast<size_t>(y) * w + x] =
                0.299 * rgb.at(y, x, 0) + 0.587 * rgb.at(y, x, 1) + 0.114 * rgb.at(y, x, 2);
    return g;
}

double ssim(const Tensor& a, const Tensor& b, int window, double k1, double k2) {
    if (a.shape != b.shape) throw std::invalid_argument("ssim: shape mismatch");
    Tensor ga = to_gray(a), gb = to_gray(b);
    const int h = ga.shape[0], w = ga.shape[1];
    if (h < window || w < window)
        throw std::invalid_argument("ssim: image smaller than the " + std::to_string(window) +
                                    "-tap window");

    const double sigma = 1.5;
    std::vector<double> kern(window);
    const int r = window / 2;
    double ksum = 0;
    for (int i = 0; i < window; ++i) {
        const double d = i - r;
        kern[i] = std::exp(-0.5 * d * d / (sigma * sigma));
        ksum += kern[i];
    }
    for (auto& k : kern) k /= ksum;

    // separable weighted moments, valid region
    const int hv = h - window + 1, wv = w - window + 1;
    auto filt = [&](const std::vector<double>& src) {
        std::vector<double> tmp(static_cast<size_t>(h) * wv), out(static_cast<size_t>(hv) * wv);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < wv; ++x) {
                double acc = 0;
                for (int i = 0; i < window; ++i) acc += kern[i] * src[static_cast<size_t>(y) * w + x + i];
                tmp[static_cast<size_t>(y) * wv + x] = acc;
            }
        for (int y = 0; y < hv; ++y)
            for (int x = 0; x < wv; ++x) {
                double acc = 0;
                for (int i = 0; i < window; ++i) acc += kern[i] * tmp[static_cast<size_t>(y + i) * wv + x];
                out[static_cast<size_t>(y) * wv + x] = acc;
            }
        return out;
    };

    std::vector<double> aa(ga.v.size()), bb(ga.v.size()), ab(ga.v.size());
    for (size_t i = 0; i < ga.v.size(); ++i) {
        aa[i] = ga.v[i] * ga.v[i];
        bb[i] = gb.v[i] * gb.v[i];
        ab[i] = ga.v[i] * gb.v[i];
    }
    auto mu_a = filt(ga.v), mu_b = filt(gb.v), m_aa = filt(aa), m_bb = filt(bb), m_ab = filt(ab);

    const double c1 = k1 * k1, c2 = k2 * k2;
    double acc = 0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = m_aa[i] - ma * ma;
        const double vb = m_bb[i] - mb * mb;
        const double cov = m_ab[i] - ma * mb;
        acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    return acc / static_cast<double>(mu_a.size());
}

double ssim(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    if (a.size() != b.size() || a.empty()) throw std::invalid_argument("ssim: bad sequences");
    double acc = 0;
    for (size_t i = 0; i < a.size(); ++i) acc += ssim(a[i], b[i]);
    return acc / static_cast<double>(a.size());
}

namespace {

Tensor halve(const Tensor& g) {
    const int h = g.shape[0] / 2, w = g.shape[1] / 2;
    Tensor out(Shape{h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.v[static_cast<size_t>(y) * w + x] =
                0.25 * (g.v[static_cast<size_t>(2 * y) * g.shape[1] + 2 * x] +
                        g.v[static_cast<size_t>(2 * y) * g.shape[1] + 2 * x + 1] +
                        g.v[static_cast<size_t>(2 * y + 1) * g.shape[1] + 2 * x] +
                        g.v[static_cast<size_t>(2 * y + 1) * g.shape[1] + 2 * x + 1]);
    return out;
}

// Zero-mean SAD: block means are removed before matching, so constant
// brightness offsets between the two frames do not disturb the flow.
double sad(const Tensor& a, const Tensor& b, int ax, int ay, int bx, int by, int r) {
    const int h = a.shape[0], w = a.shape[1];
    const int n = (2 * r + 1) * (2 * r + 1);
    double mean_a = 0, mean_b = 0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const int ya = std::clamp(ay + dy, 0, h - 1), xa = std::clamp(ax + dx, 0, w - 1);
            const int yb = std::clamp(by + dy, 0, h - 1), xb = std::clamp(bx + dx, 0, w - 1);
            mean_a += a.v[static_cast<size_t>(ya) * w + xa];
            mean_b += b.v[static_cast<size_t>(yb) * w + xb];
        }
    mean_a /= n;
    mean_b /= n;
    double acc = 0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const int ya = std::clamp(ay + dy, 0, h - 1), xa = std::clamp(ax + dx, 0, w - 1);
            const int yb = std::clamp(by + dy, 0, h - 1), xb = std::clamp(bx + dx, 0, w - 1);
            acc += std::abs(a.v[static_cast<size_t>(ya) * w + xa] - mean_a -
                            (b.v[static_cast<size_t>(yb) * w + xb] - mean_b));
        }
    return acc;
}

// One refinement pass: integer search around the propagated flow, then
// parabolic sub-pixel refinement per axis. The propagated candidate is
// evaluated first so exact matches keep their flow (ties never move it).
void refine_level(const Tensor& a, const Tensor& b, Tensor& flow, int radius, int block_r) {
    const int h = a.shape[0], w = a.shape[1];
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int px = static_cast<int>(std::lround(flow.at(y, x, 0)));
            const int py = static_cast<int>(std::lround(flow.at(y, x, 1)));
            int bx = px, by = py;
            double best = sad(a, b, x, y, x + px, y + py, block_r);
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const double c = sad(a, b, x, y, x + px + dx, y + py + dy, block_r);
                    if (c < best) {
                        best = c;
                        bx = px + dx;
                        by = py + dy;
                    }
                }
            double sub_x = 0, sub_y = 0;
            if (best > 0) {
                const double cxm = sad(a, b, x, y, x + bx - 1, y + by, block_r);
                const double cxp = sad(a, b, x, y, x + bx + 1, y + by, block_r);
                double den = cxm + cxp - 2 * best;
                if (den > 1e-12) sub_x = std::clamp(0.5 * (cxm - cxp) / den, -0.5, 0.5);
                const double cym = sad(a, b, x, y, x + bx, y + by - 1, block_r);
                const double cyp = sad(a, b, x, y, x + bx, y + by + 1, block_r);
                den = cym + cyp - 2 * best;
                if (den > 1e-12) sub_y = std::clamp(0.5 * (cym - cyp) / den, -0.5, 0.5);
            }
            flow.at(y, x, 0) = bx + sub_x;
            flow.at(y, x, 1) = by + sub_y;
        }
}

Tensor upsample_flow(const Tensor& flow, int h, int w) {
    Tensor out(Shape{h, w, 2});
    const int hs = flow.shape[0], ws = flow.shape[1];
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int ys = std::min(y / 2, hs - 1), xs = std::min(x / 2, ws - 1);
            out.at(y, x, 0) = 2.0 * flow.at(ys, xs, 0);
            out.at(y, x, 1) = 2.0 * flow.at(ys, xs, 1);
        }
    return out;
}

}  // namespace

Tensor pyramid_flow(const Tensor& a_in, const Tensor& b_in, const PyramidFlowConfig& cfg) {
    if (cfg.levels < 1) throw std::invalid_argument("pyramid_flow: levels must be >= 1");
    Tensor a = to_gray(a_in), b = to_gray(b_in);
    if (a.shape != b.shape) throw std::invalid_argument("pyramid_flow: shape mismatch");

    std::vector<Tensor> pa = {a}, pb = {b};
    while (static_cast<int>(pa.size()) < cfg.levels && pa.back().shape[0] >= 16 &&
           pa.back().shape[1] >= 16) {
        pa.push_back(halve(pa.back()));
        pb.push_back(halve(pb.back()));
    }

    Tensor flow(Shape{pa.back().shape[0], pa.back().shape[1], 2});
    for (int lvl = static_cast<int>(pa.size()) - 1; lvl >= 0; --lvl) {
        const int radius = lvl == static_cast<int>(pa.size()) - 1 ? cfg.radius : cfg.refine_radius;
        for (int it = 0; it < std::max(1, cfg.iterations); ++it)
            refine_level(pa[lvl], pb[lvl], flow, radius, cfg.block_radius);
        if (lvl > 0) flow = upsample_flow(flow, pa[lvl - 1].shape[0], pa[lvl - 1].shape[1]);
    }
    return flow;
}

double tof(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt,
           const PyramidFlowConfig& cfg) {
    if (pred.size() != gt.size()) throw std::invalid_argument("tof: sequence length mismatch");
    if (pred.size() < 2) throw std::invalid_argument("tof: need at least two frames");
    double acc = 0;
    std::int64_t cnt = 0;
    for (size_t t = 0; t + 1 < pred.size(); ++t) {
        Tensor fp = pyramid_flow(pred[t], pred[t + 1], cfg);
        Tensor fg = pyramid_flow(gt[t], gt[t + 1], cfg);
        for (size_t i = 0; i < fp.v.size(); ++i) {
            acc += std::abs(fp.v[i] - fg.v[i]);
            ++cnt;
        }
    }
    return acc / static_cast<double>(cnt);
}

}  // namespace fmanet::metrics
