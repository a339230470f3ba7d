// Command-line front end; links only the C API of the shared library.

#include <cstdio>
#include <cstdlib>
#include <string>

#include <CLI11.hpp>

#include "fmanetpp.h"

namespace {

int check(int rc) {
    if (rc != FMANETPP_OK) {
        std::fprintf(stderr, "error: %s\n", fmanetpp_last_error());
        return rc;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    if (const char* env = std::getenv("FMANETPP_THREADS"))
        fmanetpp_set_threads(std::atoi(env));

    CLI::App app{"Joint video super-resolution and deblurring under dynamic exposure"};
    app.require_subcommand(1);

    // synth
    std::string cfg, out, mode = "me";
    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth->add_option("--config", cfg, "config file")->required();
    synth->add_option("--out", out, "output directory")->required();
    synth->add_option("--mode", mode, "me (constant levels) or re (random exposure)")
        ->check(CLI::IsMember({"me", "re"}));

    // pretrain-ete
    std::string pe_cfg, pe_data, pe_out;
    auto* pretrain = app.add_subcommand("pretrain-ete", "Stage 1: pretrain the exposure extractor");
    pretrain->add_option("--config", pe_cfg, "config file")->required();
    pretrain->add_option("--data", pe_data, "dataset directory (constant-level mode)")->required();
    pretrain->add_option("--out", pe_out, "output checkpoint")->required();

    // train-netd
    std::string d_cfg, d_data, d_ete, d_out, d_resume;
    auto* train_d = app.add_subcommand("train-netd", "Stage 2: train the degradation network");
    train_d->add_option("--config", d_cfg, "config file")->required();
    train_d->add_option("--data", d_data, "dataset directory")->required();
    train_d->add_option("--ete", d_ete, "stage-1 checkpoint");
    train_d->add_option("--out", d_out, "output directory")->required();
    train_d->add_option("--resume", d_resume, "resume from this checkpoint");

    // train (joint)
    std::string j_cfg, j_data, j_netd, j_out, j_resume;
    auto* train_j = app.add_subcommand("train", "Stage 3: joint training");
    train_j->add_option("--config", j_cfg, "config file")->required();
    train_j->add_option("--data", j_data, "dataset directory")->required();
    train_j->add_option("--netd", j_netd, "stage-2 checkpoint");
    train_j->add_option("--out", j_out, "output directory")->required();
    train_j->add_option("--resume", j_resume, "resume from this checkpoint");

    // ablate
    std::string a_cfg, a_grid, a_data, a_ete, a_out;
    auto* ablate = app.add_subcommand("ablate", "Run a config-grid ablation sweep");
    ablate->add_option("--config", a_cfg, "base config file")->required();
    ablate->add_option("--grid", a_grid, "grid file with [run.<id>] sections")->required();
    ablate->add_option("--data", a_data, "dataset directory")->required();
    ablate->add_option("--ete", a_ete, "stage-1 checkpoint")->required();
    ablate->add_option("--out", a_out, "output directory")->required();

    // eval
    std::string e_ckpt, e_data, e_split = "test", e_out, e_baseline;
    int e_force = 0;
    auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    evalc->add_option("--ckpt", e_ckpt, "model checkpoint")->required();
    evalc->add_option("--data", e_data, "dataset directory")->required();
    evalc->add_option("--split", e_split, "train / val / test");
    evalc->add_option("--out", e_out, "report directory")->required();
    evalc->add_option("--baseline", e_baseline, "bilinear")->check(CLI::IsMember({"bilinear"}));
    evalc->add_option("--force-ete-level", e_force, "force exposure guidance level 1..5")
        ->check(CLI::Range(1, 5));

    // restore
    std::string r_ckpt, r_in, r_out;
    auto* restore = app.add_subcommand("restore", "Restore a directory of PNG frames");
    restore->add_option("--ckpt", r_ckpt, "model checkpoint")->required();
    restore->add_option("--in", r_in, "input frame directory")->required();
    restore->add_option("--out", r_out, "output frame directory")->required();

    CLI11_PARSE(app, argc, argv);

    if (synth->parsed()) return check(fmanetpp_synth(cfg.c_str(), out.c_str(), mode.c_str()));
    if (pretrain->parsed())
        return check(fmanetpp_pretrain_ete(pe_cfg.c_str(), pe_data.c_str(), pe_out.c_str()));
    if (train_d->parsed())
        return check(fmanetpp_train_netd(d_cfg.c_str(), d_data.c_str(), d_ete.c_str(), d_out.c_str(),
                                         d_resume.empty() ? nullptr : d_resume.c_str()));
    if (train_j->parsed())
        return check(fmanetpp_train_joint(j_cfg.c_str(), j_data.c_str(), j_netd.c_str(),
                                          j_out.c_str(),
                                          j_resume.empty() ? nullptr : j_resume.c_str()));
    if (ablate->parsed())
        return check(fmanetpp_ablate(a_cfg.c_str(), a_grid.c_str(), a_data.c_str(), a_ete.c_str(),
                                     a_out.c_str()));
    if (evalc->parsed())
        return check(fmanetpp_evaluate(e_ckpt.c_str(), e_data.c_str(), e_split.c_str(),
                                       e_out.c_str(), e_baseline.c_str(), e_force));
    if (restore->parsed())
        return check(fmanetpp_restore_dir(r_ckpt.c_str(), r_in.c_str(), r_out.c_str()));
    return 1;
}
