#include "fmanetpp/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>

#include <nlohmann/json.hpp>

#include "fmanetpp/ete.hpp"
#include "fmanetpp/evaluate.hpp"
#include "fmanetpp/image_io.hpp"
#include "fmanetpp/metrics.hpp"

namespace fmanet::train {

namespace fs = std::filesystem;
using namespace fmanet::ad;
using nlohmann::json;
using nn::Ctx;
using nn::ParamStore;

LossWeights LossWeights::from_config(const Config& cfg) {
    LossWeights w;
    w.lambda1 = cfg.get_double("loss.lambda1", w.lambda1);
    w.lambda2 = cfg.get_double("loss.lambda2", w.lambda2);
    w.lambda3 = cfg.get_double("loss.lambda3", w.lambda3);
    if (w.lambda1 < 0 || w.lambda2 < 0 || w.lambda3 < 0)
        throw std::invalid_argument("loss weights must be non-negative");
    return w;
}

Var loss_d(Ctx& ctx, const net::NetworkConfig& ncfg, const net::DegradationPriors& priors,
           const std::vector<Var>& x, const std::vector<Var>& y, const std::vector<Var>& gt_flow_fwd,
           const std::vector<Var>& gt_flow_bwd, const LossWeights& w, LossDTerms* terms) {
    (void)ctx;
    const int t = static_cast<int>(x.size());
    if (static_cast<int>(y.size()) != t) throw std::invalid_argument("loss_d: X/Y length mismatch");

    std::vector<Var> xhat = net::reconstruct_from_priors(ncfg, priors, y);
    std::vector<Var> recon_terms;
    for (int i = 0; i < t; ++i) recon_terms.push_back(l1(xhat[i], x[i]));
    Var recon = scale(add_many(recon_terms), 1.0 / t);

    std::vector<Var> warp_terms;
    for (int i = 0; i < t; ++i) {
        if (i + 1 < t)
            warp_terms.push_back(
                l1(ops::occlusion_warp(y[i + 1], priors.fy_fwd[i].flow, priors.fy_fwd[i].mask), y[i]));
        if (i > 0)
            warp_terms.push_back(
                l1(ops::occlusion_warp(y[i - 1], priors.fy_bwd[i].flow, priors.fy_bwd[i].mask), y[i]));
    }
    Var warp = add_many(warp_terms);

    Var total = add(recon, scale(warp, w.lambda1));
    Var flow;
    if (w.lambda2 > 0) {
        if (static_cast<int>(gt_flow_fwd.size()) != t || static_cast<int>(gt_flow_bwd.size()) != t)
            throw std::invalid_argument("loss_d: reference flows required when lambda2 > 0");
        std::vector<Var> flow_terms;
        for (int i = 0; i < t; ++i) {
            if (i + 1 < t) {
                if (!gt_flow_fwd[i].defined())
                    throw std::invalid_argument("loss_d: missing forward reference flow");
                flow_terms.push_back(l1(priors.fy_fwd[i].flow, gt_flow_fwd[i]));
            }
            if (i > 0) {
                if (!gt_flow_bwd[i].defined())
                    throw std::invalid_argument("loss_d: missing backward reference flow");
                flow_terms.push_back(l1(priors.fy_bwd[i].flow, gt_flow_bwd[i]));
            }
        }
        flow = scale(add_many(flow_terms), 1.0 / flow_terms.size());
        total = add(total, scale(flow, w.lambda2));
    }

    if (terms) {
        terms->recon = recon.scalar();
        terms->warp = warp.scalar();
        terms->flow = flow.defined() ? flow.scalar() : 0.0;
        terms->total = total.scalar();
    }
    return total;
}

Var loss_total(const std::vector<Var>& y_hat, const std::vector<Var>& y, Var ld, double lambda3,
               double* restore_term) {
    if (y_hat.size() != y.size() || y_hat.empty())
        throw std::invalid_argument("loss_total: sequence mismatch");
    std::vector<Var> terms;
    for (size_t i = 0; i < y.size(); ++i) terms.push_back(l1(y_hat[i], y[i]));
    Var restore = scale(add_many(terms), 1.0 / y.size());
    if (restore_term) *restore_term = restore.scalar();
    return add(restore, scale(ld, lambda3));
}

double lr_at(double base, int step, int total_iters) {
    const int t1 = static_cast<int>(0.70 * total_iters);
    const int t2 = static_cast<int>(0.85 * total_iters);
    const int t3 = static_cast<int>(0.95 * total_iters);
    if (step < t1) return base;
    if (step < t2) return base * 0.5;
    if (step < t3) return base * 0.25;
    return base * 0.125;
}

namespace {

struct CropSpec {
    int sample = 0, t0 = 0, oy = 0, ox = 0;
};

json rng_to_json(const Rng& rng) {
    auto st = rng.state();
    return json::array({st[0], st[1], st[2], st[3]});
}

void rng_from_json(Rng& rng, const json& j) {
    std::array<std::uint64_t, 4> st{};
    for (int i = 0; i < 4; ++i) st[i] = j.at(i).get<std::uint64_t>();
    rng.set_state(st);
}

json centroids_to_json(const Tensor& c) {
    json j;
    j["rows"] = c.shape.rank() == 2 ? c.shape[0] : 0;
    j["cols"] = c.shape.rank() == 2 ? c.shape[1] : 0;
    j["data"] = c.v;
    return j;
}

Tensor centroids_from_json(const json& j) {
    const int r = j.at("rows").get<int>(), c = j.at("cols").get<int>();
    if (r == 0) return Tensor();
    Tensor t(Shape{r, c});
    t.v = j.at("data").get<std::vector<double>>();
    return t;
}

struct ElementResult {
    std::unique_ptr<Tape> tape;
    std::unique_ptr<Ctx> ctx;
    LossDTerms terms;
    double restore = 0;
    double loss = 0;
};

// Builds the loss graph for one batch element and runs backward; gradients
// stay in the element's leaves until the coordinator harvests them in order.
ElementResult run_element(const Config& /*cfg*/, const net::NetworkConfig& ncfg,
                          const LossWeights& weights, ParamStore& ps, const data::Dataset& ds,
                          const CropSpec& spec, int seq, int patch, bool joint, int batch) {
    ElementResult res;
    res.tape = std::make_unique<Tape>();
    res.ctx = std::make_unique<Ctx>(*res.tape, ps, true);
    Ctx& ctx = *res.ctx;
    const data::Sample& smp = ds.samples[spec.sample];
    const int s = ds.scale;

    std::vector<Var> x, y, gtf, gtb, u;
    for (int i = 0; i < seq; ++i) {
        const int fi = spec.t0 + i;
        x.push_back(ctx.c(data::crop(smp.lr[fi], spec.oy, spec.ox, patch)));
        y.push_back(ctx.c(data::crop(smp.hr[fi], spec.oy * s, spec.ox * s, patch * s)));
        u.push_back(ete::forward(ctx, x.back(), false));
    }
    gtf.resize(seq);
    gtb.resize(seq);
    for (int i = 0; i < seq; ++i) {
        const int fi = spec.t0 + i;
        if (i + 1 < seq)
            gtf[i] = ctx.c(data::crop(smp.flow_fwd[fi], spec.oy * s, spec.ox * s, patch * s));
        if (i > 0) gtb[i] = ctx.c(data::crop(smp.flow_bwd[fi], spec.oy * s, spec.ox * s, patch * s));
    }

    net::DegradationPriors priors = net::netd_forward(ctx, ncfg, x, u, true);
    Var loss;
    if (!joint) {
        loss = loss_d(ctx, ncfg, priors, x, y, gtf, gtb, weights, &res.terms);
    } else {
        net::Restored restored = net::netr_forward(ctx, ncfg, x, priors, u, true);
        Var ld = loss_d(ctx, ncfg, priors, x, y, gtf, gtb, weights, &res.terms);
        loss = loss_total(restored.y, y, ld, weights.lambda3, &res.restore);
    }
    res.loss = loss.scalar();
    res.tape->backward(scale(loss, 1.0 / batch));
    return res;
}

double validate(const net::NetworkConfig& ncfg, ParamStore& ps, const Tensor& centroids,
                const data::Dataset& val, bool joint) {
    eval::ModelRunner runner;
    runner.ncfg = ncfg;
    runner.ps = &ps;
    runner.centroids = centroids;
    std::vector<double> scores(val.samples.size(), 0.0);
    parallel_for(static_cast<int>(val.samples.size()), [&](int i) {
        const data::Sample& smp = val.samples[i];
        std::vector<Tensor> x, y;
        for (int f = 0; f < smp.t; ++f) {
            x.push_back(smp.lr[f].to_tensor());
            y.push_back(smp.hr[f].to_tensor());
        }
        if (joint) {
            scores[i] = metrics::psnr(runner.restore(x), y);
        } else {
            scores[i] = metrics::psnr(runner.reconstruct_x(x, y), x);
        }
    });
    double acc = 0;
    for (double v : scores) acc += v;
    return val.samples.empty() ? 0.0 : acc / scores.size();
}

void append_csv(const std::string& path, const std::string& header, const std::string& row) {
    const bool fresh = !fs::exists(path);
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("cannot open log " + path);
    if (fresh) out << header << "\n";
    out << row << "\n";
}

}  // namespace

StageResult run_stage(const Config& cfg, const StageOptions& opt) {
    if (opt.stage != "netd" && opt.stage != "joint")
        throw std::invalid_argument("run_stage: stage must be 'netd' or 'joint'");
    const bool joint = opt.stage == "joint";

    net::NetworkConfig ncfg = net::NetworkConfig::from_config(cfg);
    LossWeights weights = LossWeights::from_config(cfg);
    const int batch = static_cast<int>(cfg.get_int("train.batch", 4));
    const int patch = static_cast<int>(cfg.get_int("train.patch", 20));
    const int seq = opt.seq_override > 0 ? opt.seq_override
                                         : static_cast<int>(cfg.get_int("train.seq", 10));
    const double base_lr = cfg.get_double("train.lr", 2e-4);
    const int val_interval = static_cast<int>(cfg.get_int("train.val_interval", 250));
    const std::uint64_t seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", 1));
    // The LR boundaries anchor to the configured stage length so that a
    // resumed run replays the exact schedule of an uninterrupted one.
    const int schedule_total = static_cast<int>(cfg.get_int(
        joint ? "train.stage3_iters" : "train.stage2_iters", joint ? 5000 : 3000));
    int iters = schedule_total;
    if (opt.iters_override >= 0) iters = opt.iters_override;

    fs::create_directories(opt.out_dir);
    data::Dataset train_ds = data::Dataset::load(opt.data_dir, "train", true, true);
    data::Dataset val_ds = data::Dataset::load(opt.data_dir, "val", true, false);
    if (train_ds.samples.empty()) throw std::invalid_argument("run_stage: empty training split");
    if (train_ds.scale != ncfg.s)
        throw std::invalid_argument("run_stage: dataset scale does not match the model config");

    ParamStore ps;
    nn::Adam adam;
    adam.clip = cfg.get_double("train.clip", 1.0);
    Rng rng(seed ^ (joint ? 0x333ULL : 0x222ULL));
    Tensor centroids;
    int step = 0;

    if (opt.resume) {
        json header = nn::load_checkpoint(opt.init_ckpt, ps);
        if (header.at("config_hash").get<std::string>() != cfg.hash_hex())
            throw std::invalid_argument("run_stage: checkpoint/config hash mismatch, resume rejected");
        if (header.at("kind").get<std::string>() != opt.stage)
            throw std::invalid_argument("run_stage: checkpoint stage mismatch");
        const json& extra = header.at("extra");
        step = extra.at("step").get<int>();
        adam.t = extra.at("adam_t").get<std::int64_t>();
        rng_from_json(rng, extra.at("rng"));
        centroids = centroids_from_json(extra.at("centroids"));
    } else if (!joint) {
        if (opt.ete_ckpt.empty()) throw std::invalid_argument("run_stage: stage netd needs an ETE checkpoint");
        json header = nn::load_checkpoint(opt.ete_ckpt, ps);
        if (header.at("kind").get<std::string>() != "ete")
            throw std::invalid_argument("run_stage: expected an ETE checkpoint");
        centroids = centroids_from_json(header.at("extra").at("centroids"));
        Rng init_rng(seed ^ 0x1111ULL);
        net::build(ps, init_rng, ncfg);
    } else {
        if (opt.init_ckpt.empty())
            throw std::invalid_argument("run_stage: stage joint needs a netd checkpoint");
        json header = nn::load_checkpoint(opt.init_ckpt, ps);
        const std::string kind = header.at("kind").get<std::string>();
        if (kind != "netd")
            throw std::invalid_argument("run_stage: joint stage expects a netd checkpoint");
        centroids = centroids_from_json(header.at("extra").at("centroids"));
        // fresh optimizer for the joint stage
        for (auto& [name, p] : ps.all()) {
            std::fill(p.m.v.begin(), p.m.v.end(), 0.0);
            std::fill(p.v.v.begin(), p.v.v.end(), 0.0);
        }
    }

    auto trainable = [joint](const std::string& name) {
        if (name.rfind("netd.", 0) == 0) return true;
        return joint && name.rfind("netr.", 0) == 0;
    };

    const std::string log_path = opt.out_dir + "/train_" + opt.stage + "_log.csv";
    const std::string val_path = opt.out_dir + "/val_" + opt.stage + "_log.csv";
    const std::string last_path = opt.out_dir + "/" + opt.stage + "_last.ckpt";
    const std::string best_path = opt.out_dir + "/" + opt.stage + "_best.ckpt";

    StageResult result;
    result.best_val_metric = -1;
    result.last_ckpt = last_path;
    result.best_ckpt = best_path;

    auto save = [&](const std::string& path, double val_metric) {
        json extra;
        extra["stage"] = opt.stage;
        extra["step"] = step;
        extra["adam_t"] = adam.t;
        extra["rng"] = rng_to_json(rng);
        extra["centroids"] = centroids_to_json(centroids);
        extra["net_config"] = ncfg.to_json();
        extra["val_metric"] = val_metric;
        nn::save_checkpoint(path, opt.stage, cfg, ps, extra, true);
    };

    const int nthreads = std::min(default_threads(), batch);
    while (step < iters) {
        std::vector<CropSpec> specs(batch);
        for (int b = 0; b < batch; ++b) {
            CropSpec& sp = specs[b];
            sp.sample = rng.uniform_int(static_cast<int>(train_ds.samples.size()));
            const data::Sample& smp = train_ds.samples[sp.sample];
            const int hlr = smp.lr[0].shape[0], wlr = smp.lr[0].shape[1];
            if (smp.t < seq || hlr < patch || wlr < patch)
                throw std::invalid_argument("run_stage: sample smaller than the training window");
            sp.t0 = rng.uniform_int(smp.t - seq + 1);
            sp.oy = rng.uniform_int(hlr - patch + 1);
            sp.ox = rng.uniform_int(wlr - patch + 1);
        }

        ps.zero_grad();
        double mean_loss = 0;
        LossDTerms mean_terms;
        double mean_restore = 0;
        for (int wave = 0; wave < batch; wave += nthreads) {
            const int count = std::min(nthreads, batch - wave);
            std::vector<ElementResult> results(count);
            parallel_for(count, [&](int k) {
                results[k] = run_element(cfg, ncfg, weights, ps, train_ds, specs[wave + k], seq,
                                         patch, joint, batch);
            });
            for (int k = 0; k < count; ++k) {
                results[k].ctx->harvest();
                mean_loss += results[k].loss / batch;
                mean_terms.recon += results[k].terms.recon / batch;
                mean_terms.warp += results[k].terms.warp / batch;
                mean_terms.flow += results[k].terms.flow / batch;
                mean_restore += results[k].restore / batch;
            }
        }
        const double lr = lr_at(base_lr, step, schedule_total);
        const double gnorm = adam.step(ps, lr, trainable);
        ++step;
        if (std::getenv("FMA_DBG"))
            std::fprintf(stderr, "DBG step=%d loss=%.17g netd=%016llx rng0=%016llx adamt=%lld lr=%g specs=%d,%d,%d,%d\n",
                         step, mean_loss, (unsigned long long)ps.value_checksum("netd."),
                         (unsigned long long)rng.state()[0], (long long)adam.t, lr,
                         specs[0].sample, specs[0].t0, specs[0].oy, specs[0].ox);
        result.loss_history.push_back(mean_loss);

        {
            char row[320];
            std::snprintf(row, sizeof(row), "%d,%.8e,%.10e,%.10e,%.10e,%.10e,%.10e,%.6e", step, lr,
                          mean_loss, mean_terms.recon, mean_terms.warp, mean_terms.flow, mean_restore,
                          gnorm);
            append_csv(log_path, "step,lr,loss,recon,warp,flow,restore,grad_norm", row);
        }

        if (step % val_interval == 0 || step == iters) {
            const double val_metric = validate(ncfg, ps, centroids, val_ds, joint);
            result.final_val_metric = val_metric;
            char row[120];
            std::snprintf(row, sizeof(row), "%d,%.6f", step, val_metric);
            append_csv(val_path, "step,val_psnr", row);
            save(last_path, val_metric);
            if (val_metric > result.best_val_metric) {
                result.best_val_metric = val_metric;
                save(best_path, val_metric);
            }
        }
    }
    if (!fs::exists(last_path)) {  // short runs that never hit the validation cadence
        const double val_metric = validate(ncfg, ps, centroids, val_ds, joint);
        result.final_val_metric = val_metric;
        save(last_path, val_metric);
        result.best_val_metric = val_metric;
        save(best_path, val_metric);
    }
    result.steps_run = step;
    return result;
}

EteResult pretrain_ete(const Config& cfg, const std::string& data_dir, const std::string& out_ckpt) {
    ete::EteConfig ecfg = ete::EteConfig::from_config(cfg);
    data::Dataset train_ds = data::Dataset::load(data_dir, "train", false, false);

    ParamStore ps;
    Rng init_rng(ecfg.seed ^ 0xe7eULL);
    ete::build(ps, init_rng, ecfg.c_e);
    ete::PretrainResult pr = ete::pretrain(train_ds, ecfg, ps);

    json extra;
    extra["centroids"] = centroids_to_json(pr.centroids);
    extra["c_e"] = ecfg.c_e;
    extra["steps"] = ecfg.steps;
    extra["train_accuracy"] = pr.train_accuracy;
    if (!pr.loss_history.empty()) {
        extra["first_loss"] = pr.loss_history.front();
        extra["last_loss"] = pr.loss_history.back();
    }
    nn::save_checkpoint(out_ckpt, "ete", cfg, ps, extra, false);

    EteResult res;
    res.ckpt = out_ckpt;
    res.train_accuracy = pr.train_accuracy;
    if (!pr.loss_history.empty()) {
        res.first_loss = pr.loss_history.front();
        res.last_loss = pr.loss_history.back();
    }
    return res;
}

std::vector<AblationRow> ablation_sweep(const Config& base, const std::string& grid_path,
                                        const std::string& data_dir, const std::string& ete_ckpt,
                                        const std::string& out_dir) {
    Config grid = Config::load(grid_path);
    std::vector<std::string> run_ids;
    for (const auto& [key, value] : grid.entries()) {
        if (key.rfind("run.", 0) != 0) continue;
        const size_t dot = key.find('.', 4);
        if (dot == std::string::npos) continue;
        const std::string id = key.substr(4, dot - 4);
        if (std::find(run_ids.begin(), run_ids.end(), id) == run_ids.end()) run_ids.push_back(id);
    }
    std::sort(run_ids.begin(), run_ids.end());
    if (run_ids.empty()) throw std::invalid_argument("ablation_sweep: grid defines no runs");

    fs::create_directories(out_dir);
    std::vector<AblationRow> rows;
    std::vector<std::string> seen_hashes;
    for (const std::string& id : run_ids) {
        Config cfg = base;
        const std::string prefix = "run." + id + ".";
        for (const auto& [key, value] : grid.entries())
            if (key.rfind(prefix, 0) == 0) cfg.set(key.substr(prefix.size()), value);
        const std::string h = cfg.hash_hex();
        if (std::find(seen_hashes.begin(), seen_hashes.end(), h) != seen_hashes.end()) {
            std::fprintf(stderr, "ablation_sweep: run '%s' duplicates an earlier config, skipped\n",
                         id.c_str());
            continue;
        }
        seen_hashes.push_back(h);

        const std::string run_dir = out_dir + "/" + id;
        StageOptions s2;
        s2.stage = "netd";
        s2.data_dir = data_dir;
        s2.out_dir = run_dir;
        s2.ete_ckpt = ete_ckpt;
        StageResult r2 = run_stage(cfg, s2);

        StageOptions s3;
        s3.stage = "joint";
        s3.data_dir = data_dir;
        s3.out_dir = run_dir;
        s3.init_ckpt = r2.best_ckpt;
        StageResult r3 = run_stage(cfg, s3);

        eval::EvalOptions eo;
        eo.ckpt = r3.best_ckpt;
        eo.data_dir = data_dir;
        eo.split = "test";
        eo.out_dir = run_dir + "/eval";
        eo.write_panels = false;
        eval::Report rep = eval::evaluate(eo);

        AblationRow row;
        row.run = id;
        row.m = static_cast<int>(cfg.get_int("net.m", 4));
        row.n = static_cast<int>(cfg.get_int("net.n", 3));
        row.psnr = rep.psnr;
        row.ssim = rep.ssim;
        row.tof = rep.tof;
        rows.push_back(row);

        char line[240];
        std::snprintf(line, sizeof(line), "%s,%d,%d,%.4f,%.5f,%.5f", id.c_str(), row.m, row.n,
                      row.psnr, row.ssim, row.tof);
        append_csv(out_dir + "/ablation.csv", "run,m,n,psnr,ssim,tof", line);
    }
    return rows;
}

}  // namespace fmanet::train
