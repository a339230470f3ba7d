#include "fmanetpp.h"

#include <cstring>
#include <string>

#include "fmanetpp/evaluate.hpp"
#include "fmanetpp/synth.hpp"
#include "fmanetpp/training.hpp"

namespace {

thread_local std::string g_last_error;

int fail(int code, const std::string& msg) {
    g_last_error = msg;
    return code;
}

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        fn();
        return FMANETPP_OK;
    } catch (const std::invalid_argument& e) {
        return fail(FMANETPP_ERR_INVALID, e.what());
    } catch (const std::runtime_error& e) {
        return fail(FMANETPP_ERR_IO, e.what());
    } catch (const std::exception& e) {
        return fail(FMANETPP_ERR_INTERNAL, e.what());
    }
}

std::string arg(const char* s) { return s ? std::string(s) : std::string(); }

}  // namespace

struct fmanetpp_model {
    fmanet::nn::ParamStore ps;
    fmanet::eval::ModelRunner runner;
};

extern "C" {

const char* fmanetpp_last_error(void) { return g_last_error.c_str(); }

void fmanetpp_set_threads(int n) { fmanet::set_default_threads(n); }

int fmanetpp_synth(const char* config_path, const char* out_dir, const char* mode) {
    return guarded([&] {
        fmanet::Config cfg = fmanet::Config::load(arg(config_path));
        const std::string m = mode && *mode ? mode : "me";
        fmanet::synth::build_dataset(cfg, arg(out_dir), m);
    });
}

int fmanetpp_pretrain_ete(const char* config_path, const char* data_dir, const char* out_ckpt) {
    return guarded([&] {
        fmanet::Config cfg = fmanet::Config::load(arg(config_path));
        fmanet::train::pretrain_ete(cfg, arg(data_dir), arg(out_ckpt));
    });
}

int fmanetpp_train_netd(const char* config_path, const char* data_dir, const char* ete_ckpt,
                        const char* out_dir, const char* resume_ckpt) {
    return guarded([&] {
        fmanet::Config cfg = fmanet::Config::load(arg(config_path));
        fmanet::train::StageOptions opt;
        opt.stage = "netd";
        opt.data_dir = arg(data_dir);
        opt.out_dir = arg(out_dir);
        opt.ete_ckpt = arg(ete_ckpt);
        if (resume_ckpt && *resume_ckpt) {
            opt.resume = true;
            opt.init_ckpt = resume_ckpt;
        }
        fmanet::train::run_stage(cfg, opt);
    });
}

int fmanetpp_train_joint(const char* config_path, const char* data_dir, const char* netd_ckpt,
                         const char* out_dir, const char* resume_ckpt) {
    return guarded([&] {
        fmanet::Config cfg = fmanet::Config::load(arg(config_path));
        fmanet::train::StageOptions opt;
        opt.stage = "joint";
        opt.data_dir = arg(data_dir);
        opt.out_dir = arg(out_dir);
        opt.init_ckpt = arg(netd_ckpt);
        if (resume_ckpt && *resume_ckpt) {
            opt.resume = true;
            opt.init_ckpt = resume_ckpt;
        }
        fmanet::train::run_stage(cfg, opt);
    });
}

int fmanetpp_ablate(const char* config_path, const char* grid_path, const char* data_dir,
                    const char* ete_ckpt, const char* out_dir) {
    return guarded([&] {
        fmanet::Config cfg = fmanet::Config::load(arg(config_path));
        fmanet::train::ablation_sweep(cfg, arg(grid_path), arg(data_dir), arg(ete_ckpt),
                                      arg(out_dir));
    });
}

int fmanetpp_evaluate(const char* ckpt, const char* data_dir, const char* split,
                      const char* out_dir, const char* baseline, int force_ete_level) {
    return guarded([&] {
        fmanet::eval::EvalOptions opt;
        opt.ckpt = arg(ckpt);
        opt.data_dir = arg(data_dir);
        opt.split = split && *split ? split : "test";
        opt.out_dir = arg(out_dir);
        opt.baseline = arg(baseline);
        opt.force_ete_level = force_ete_level;
        fmanet::eval::evaluate(opt);
    });
}

int fmanetpp_restore_dir(const char* ckpt, const char* in_dir, const char* out_dir) {
    return guarded([&] { fmanet::eval::restore_dir(arg(ckpt), arg(in_dir), arg(out_dir)); });
}

int fmanetpp_model_load(const char* ckpt, fmanetpp_model** out) {
    if (!out) return fail(FMANETPP_ERR_INVALID, "model_load: null output pointer");
    *out = nullptr;
    auto* m = new fmanetpp_model();
    const int rc = guarded([&] {
        m->runner = fmanet::eval::load_runner(arg(ckpt), m->ps);
        m->runner.ps = &m->ps;
    });
    if (rc != FMANETPP_OK) {
        delete m;
        return rc;
    }
    *out = m;
    return FMANETPP_OK;
}

void fmanetpp_model_free(fmanetpp_model* model) { delete model; }

int fmanetpp_model_scale(const fmanetpp_model* model) {
    return model ? model->runner.ncfg.s : 0;
}

int fmanetpp_model_restore(fmanetpp_model* model, const float* frames, int t, int h, int w,
                           float* out) {
    if (!model || !frames || !out) return fail(FMANETPP_ERR_INVALID, "model_restore: null pointer");
    return guarded([&] {
        if (t < 2) throw std::invalid_argument("model_restore: need at least two frames");
        std::vector<fmanet::Tensor> x(t);
        const size_t frame_elems = static_cast<size_t>(h) * w * 3;
        for (int i = 0; i < t; ++i) {
            x[i] = fmanet::Tensor(fmanet::Shape{h, w, 3});
            for (size_t j = 0; j < frame_elems; ++j) x[i].v[j] = frames[i * frame_elems + j];
        }
        std::vector<fmanet::Tensor> y = model->runner.restore(x);
        const size_t out_elems = y[0].v.size();
        for (int i = 0; i < t; ++i)
            for (size_t j = 0; j < out_elems; ++j)
                out[i * out_elems + j] = static_cast<float>(y[i].v[j]);
    });
}

}  // extern "C"
