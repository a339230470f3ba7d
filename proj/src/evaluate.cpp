#include "fmanetpp/evaluate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "fmanetpp/ete.hpp"
#include "fmanetpp/image_io.hpp"

namespace fmanet::eval {

namespace fs = std::filesystem;
using namespace fmanet::ad;
using nlohmann::json;
using nn::Ctx;
using nn::ParamStore;

std::vector<Tensor> ModelRunner::embeddings(const std::vector<Tensor>& x_lr) const {
    std::vector<Tensor> out;
    out.reserve(x_lr.size());
    if (force_level > 0) {
        if (centroids.shape.rank() != 2 || force_level > centroids.shape[0])
            throw std::invalid_argument("ModelRunner: no centroid for the forced level");
        const int ce = centroids.shape[1];
        Tensor u(Shape{1, ce});
        for (int c = 0; c < ce; ++c) u.v[c] = centroids.v[static_cast<size_t>(force_level - 1) * ce + c];
        for (size_t i = 0; i < x_lr.size(); ++i) out.push_back(u);
    } else {
        for (const Tensor& x : x_lr) out.push_back(ete::embed_frame(*ps, x));
    }
    return out;
}

std::vector<Tensor> ModelRunner::restore(const std::vector<Tensor>& x_lr) const {
    std::vector<Tensor> u = embeddings(x_lr);
    Tape tape(false);
    Ctx ctx(tape, *ps, false);
    std::vector<Var> x, uv;
    for (size_t i = 0; i < x_lr.size(); ++i) {
        x.push_back(ctx.c(x_lr[i]));
        uv.push_back(ctx.c(u[i]));
    }
    net::DegradationPriors priors = net::netd_forward(ctx, ncfg, x, uv, false);
    net::Restored r = net::netr_forward(ctx, ncfg, x, priors, uv, false);
    std::vector<Tensor> out;
    out.reserve(r.y.size());
    for (Var v : r.y) out.push_back(v.tensor());
    return out;
}

std::vector<Tensor> ModelRunner::reconstruct_x(const std::vector<Tensor>& x_lr,
                                               const std::vector<Tensor>& y_hr) const {
    std::vector<Tensor> u = embeddings(x_lr);
    Tape tape(false);
    Ctx ctx(tape, *ps, false);
    std::vector<Var> x, y, uv;
    for (size_t i = 0; i < x_lr.size(); ++i) {
        x.push_back(ctx.c(x_lr[i]));
        y.push_back(ctx.c(y_hr[i]));
        uv.push_back(ctx.c(u[i]));
    }
    net::DegradationPriors priors = net::netd_forward(ctx, ncfg, x, uv, false);
    std::vector<Var> xhat = net::reconstruct_from_priors(ncfg, priors, y);
    std::vector<Tensor> out;
    out.reserve(xhat.size());
    for (Var v : xhat) out.push_back(v.tensor());
    return out;
}

ModelRunner load_runner(const std::string& ckpt_path, ParamStore& ps) {
    json header = nn::load_checkpoint(ckpt_path, ps);
    const std::string kind = header.at("kind").get<std::string>();
    if (kind != "netd" && kind != "joint")
        throw std::invalid_argument("load_runner: expected a netd or joint checkpoint, got " + kind);
    ModelRunner r;
    r.ps = &ps;
    r.ncfg = net::NetworkConfig::from_json(header.at("extra").at("net_config"));
    const json& cj = header.at("extra").at("centroids");
    const int rows = cj.at("rows").get<int>();
    if (rows > 0) {
        r.centroids = Tensor(Shape{rows, cj.at("cols").get<int>()});
        r.centroids.v = cj.at("data").get<std::vector<double>>();
    }
    return r;
}

Tensor bilinear_up(const Tensor& x, int s) {
    Tape tape(false);
    return bilinear_upsample(tape.leaf(x, false), s).tensor();
}

namespace {

std::uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("file_checksum: cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
    return h;
}

// Minimal raster scatter plot: white canvas, black axes, filled points.
void write_scatter_png(const std::string& path, const std::vector<double>& xs,
                       const std::vector<double>& ys) {
    const int w = 480, h = 360, margin = 40;
    Tensor img(Shape{h, w, 3}, 1.0);
    auto put = [&](int y, int x, double r, double g, double b) {
        if (y < 0 || y >= h || x < 0 || x >= w) return;
        img.at(y, x, 0) = r;
        img.at(y, x, 1) = g;
        img.at(y, x, 2) = b;
    };
    for (int x = margin; x < w - margin / 2; ++x) put(h - margin, x, 0, 0, 0);
    for (int y = margin / 2; y <= h - margin; ++y) put(y, margin, 0, 0, 0);
    if (!xs.empty()) {
        double x0 = *std::min_element(xs.begin(), xs.end());
        double x1 = *std::max_element(xs.begin(), xs.end());
        double y0 = *std::min_element(ys.begin(), ys.end());
        double y1 = *std::max_element(ys.begin(), ys.end());
        if (x1 - x0 < 1e-12) x1 = x0 + 1;
        if (y1 - y0 < 1e-12) y1 = y0 + 1;
        for (size_t i = 0; i < xs.size(); ++i) {
            const int px = margin + static_cast<int>((xs[i] - x0) / (x1 - x0) * (w - 1.5 * margin));
            const int py = h - margin - static_cast<int>((ys[i] - y0) / (y1 - y0) * (h - 1.5 * margin));
            for (int dy = -2; dy <= 2; ++dy)
                for (int dx = -2; dx <= 2; ++dx)
                    if (dx * dx + dy * dy <= 4) put(py + dy, px + dx, 0.8, 0.1, 0.1);
        }
    }
    io::write_png(path, img);
}

Tensor hstack(const std::vector<Tensor>& frames) {
    const int h = frames[0].shape[0];
    int w = 0;
    for (const Tensor& f : frames) w += f.shape[1] + 2;
    Tensor out(Shape{h, w, 3}, 1.0);
    int off = 0;
    for (const Tensor& f : frames) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < f.shape[1]; ++x)
                for (int c = 0; c < 3; ++c) out.at(y, off + x, c) = f.at(y, x, c);
        off += f.shape[1] + 2;
    }
    return out;
}

}  // namespace

Report evaluate(const EvalOptions& opt) {
    if (!opt.baseline.empty() && opt.baseline != "bilinear")
        throw std::invalid_argument("evaluate: unknown baseline '" + opt.baseline + "'");
    fs::create_directories(opt.out_dir);

    const std::uint64_t ckpt_sum_before = file_checksum(opt.ckpt);
    ParamStore ps;
    ModelRunner runner = load_runner(opt.ckpt, ps);
    runner.force_level = opt.force_ete_level;

    data::Dataset ds = data::Dataset::load(opt.data_dir, opt.split, true, false);
    if (ds.samples.empty())
        throw std::invalid_argument("evaluate: split '" + opt.split + "' is empty");
    if (ds.scale != runner.ncfg.s)
        throw std::invalid_argument("evaluate: dataset scale does not match the checkpoint");

    const bool baseline = !opt.baseline.empty();
    Report rep;
    rep.per_sequence.resize(ds.samples.size());
    rep.config_hash = ds.config_hash;

    // warmup pass over the first sequence so timing excludes one-time costs
    {
        std::vector<Tensor> x;
        for (int f = 0; f < std::min(3, ds.samples[0].t); ++f)
            x.push_back(ds.samples[0].lr[f].to_tensor());
        if (baseline)
            for (const Tensor& xi : x) bilinear_up(xi, ds.scale);
        else
            runner.restore(x);
    }

    parallel_for(static_cast<int>(ds.samples.size()), [&](int i) {
        const data::Sample& smp = ds.samples[i];
        std::vector<Tensor> x, y;
        for (int f = 0; f < smp.t; ++f) {
            x.push_back(smp.lr[f].to_tensor());
            y.push_back(smp.hr[f].to_tensor());
        }
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<Tensor> yhat;
        if (baseline) {
            for (const Tensor& xi : x) yhat.push_back(bilinear_up(xi, ds.scale));
        } else {
            yhat = runner.restore(x);
        }
        const auto t1 = std::chrono::steady_clock::now();

        SequenceMetrics& m = rep.per_sequence[i];
        m.id = smp.id;
        m.psnr = metrics::psnr(yhat, y);
        m.ssim = metrics::ssim(yhat, y);
        m.tof = metrics::tof(yhat, y);
        m.runtime_per_frame = std::chrono::duration<double>(t1 - t0).count() / smp.t;

        if (opt.write_panels && i == 0) {
            for (int f : {0, smp.t / 2, smp.t - 1}) {
                Tensor panel = hstack({bilinear_up(x[f], ds.scale), yhat[f], y[f]});
                char name[96];
                std::snprintf(name, sizeof(name), "panel_%s_f%04d.png", smp.id.c_str(), f);
                io::write_png((fs::path(opt.out_dir) / name).string(), panel);
            }
        }
    });

    std::vector<double> runtimes;
    for (const auto& m : rep.per_sequence) {
        rep.psnr += m.psnr;
        rep.ssim += m.ssim;
        rep.tof += m.tof;
        runtimes.push_back(m.runtime_per_frame);
    }
    const double n = static_cast<double>(rep.per_sequence.size());
    rep.psnr /= n;
    rep.ssim /= n;
    rep.tof /= n;
    std::sort(runtimes.begin(), runtimes.end());
    rep.runtime_per_frame = runtimes[runtimes.size() / 2];

    const std::uint64_t ckpt_sum_after = file_checksum(opt.ckpt);
    if (ckpt_sum_before != ckpt_sum_after)
        throw std::runtime_error("evaluate: checkpoint file changed during evaluation");
    rep.checkpoint_checksum = hex64(ckpt_sum_after);

    // CSV: one row per sequence plus the aggregate
    {
        std::ofstream out(fs::path(opt.out_dir) / ("eval_" + opt.split + ".csv"));
        out << "id,psnr,ssim,tof,runtime_per_frame_s\n";
        for (const auto& m : rep.per_sequence) {
            char row[256];
            std::snprintf(row, sizeof(row), "%s,%.4f,%.5f,%.5f,%.6f", m.id.c_str(), m.psnr, m.ssim,
                          m.tof, m.runtime_per_frame);
            out << row << "\n";
        }
        char row[256];
        std::snprintf(row, sizeof(row), "aggregate,%.4f,%.5f,%.5f,%.6f", rep.psnr, rep.ssim, rep.tof,
                      rep.runtime_per_frame);
        out << row << "\n";
    }
    {
        std::vector<double> xs, ys;
        for (const auto& m : rep.per_sequence) {
            xs.push_back(m.runtime_per_frame);
            ys.push_back(m.psnr);
        }
        write_scatter_png((fs::path(opt.out_dir) / "psnr_vs_runtime.png").string(), xs, ys);
    }

    json summary;
    summary["split"] = opt.split;
    summary["baseline"] = opt.baseline;
    summary["force_ete_level"] = opt.force_ete_level;
    summary["psnr"] = rep.psnr;
    summary["ssim"] = rep.ssim;
    summary["tof"] = rep.tof;
    summary["runtime_per_frame_s"] = rep.runtime_per_frame;
    summary["sequences"] = rep.per_sequence.size();
    summary["checkpoint_checksum"] = rep.checkpoint_checksum;
    summary["dataset_config_hash"] = rep.config_hash;
    io::write_text((fs::path(opt.out_dir) / ("summary_" + opt.split + ".json")).string(),
                   summary.dump(2) + "\n");
    return rep;
}

void restore_dir(const std::string& ckpt, const std::string& in_dir, const std::string& out_dir) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(in_dir))
        if (e.path().extension() == ".png") files.push_back(e.path().string());
    if (files.empty()) throw std::invalid_argument("restore: no PNG frames in " + in_dir);
    std::sort(files.begin(), files.end());

    ParamStore ps;
    ModelRunner runner = load_runner(ckpt, ps);

    std::vector<Tensor> x;
    for (const std::string& f : files) x.push_back(io::read_png(f));
    std::vector<Tensor> y = runner.restore(x);

    fs::create_directories(out_dir);
    for (size_t i = 0; i < y.size(); ++i) {
        for (auto& v : y[i].v) v = v < 0 ? 0 : (v > 1 ? 1 : v);
        char name[64];
        std::snprintf(name, sizeof(name), "restored_%04d.png", static_cast<int>(i));
        io::write_png((fs::path(out_dir) / name).string(), y[i]);
    }
}

}  // namespace fmanet::eval
