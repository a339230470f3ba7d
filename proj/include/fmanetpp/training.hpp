#pragma once

#include <string>
#include <vector>

#include "fmanetpp/config.hpp"
#include "fmanetpp/dataset.hpp"
#include "fmanetpp/networks.hpp"
#include "fmanetpp/params.hpp"

namespace fmanet::train {

struct LossWeights {
    double lambda1 = 1e-4;  // warping loss
    double lambda2 = 1e-4;  // flow supervision against the reference flows
    double lambda3 = 0.1;   // L_D inside the total loss

    static LossWeights from_config(const Config& cfg);
};

struct LossDTerms {
    double total = 0, recon = 0, warp = 0, flow = 0;
};

// L_D = l1(X_hat, X) + lambda1 * sum_i l1(Y_{i+-1 -> i}, Y_i)
//     + lambda2 * l1(f_Y, f_ref). Reference flows may be absent only when
// lambda2 is zero. Boundary frames contribute only their existing direction.
ad::Var loss_d(nn::Ctx& ctx, const net::NetworkConfig& ncfg, const net::DegradationPriors& priors,
               const std::vector<ad::Var>& x, const std::vector<ad::Var>& y,
               const std::vector<ad::Var>& gt_flow_fwd, const std::vector<ad::Var>& gt_flow_bwd,
               const LossWeights& w, LossDTerms* terms = nullptr);

// l1(Y_hat, Y) + lambda3 * L_D
ad::Var loss_total(const std::vector<ad::Var>& y_hat, const std::vector<ad::Var>& y, ad::Var ld,
                   double lambda3, double* restore_term = nullptr);

// Piecewise LR schedule: halved at 70%, 85% and 95% of the total iterations.
double lr_at(double base, int step, int total_iters);

struct StageOptions {
    std::string stage;      // "netd" or "joint"
    std::string data_dir;   // constant-level dataset root
    std::string out_dir;    // checkpoints + CSV logs
    std::string ete_ckpt;   // stage "netd": pretrained ETE (required)
    std::string init_ckpt;  // stage "joint": a netd checkpoint; or resume source
    bool resume = false;
    int iters_override = -1;    // < 0 keeps the configured count
    int seq_override = -1;      // sequence length for debugging
};

struct StageResult {
    int steps_run = 0;
    double final_val_metric = 0;  // PSNR(X_hat, X) for netd, PSNR(Y_hat, Y) for joint
    double best_val_metric = 0;
    std::string last_ckpt;
    std::string best_ckpt;
    std::vector<double> loss_history;
};

StageResult run_stage(const Config& cfg, const StageOptions& opt);

// Pretrains the ETE on a constant-level dataset and writes the stage-1
// checkpoint (with level centroids in the header).
struct EteResult {
    double first_loss = 0, last_loss = 0;
    double train_accuracy = 0;
    std::string ckpt;
};
EteResult pretrain_ete(const Config& cfg, const std::string& data_dir, const std::string& out_ckpt);

// Grid-driven training/evaluation sweep; one CSV row per distinct config.
// Duplicate grid entries (identical effective configs) collapse with a
// warning.
struct AblationRow {
    std::string run;
    int m = 0, n = 0;
    double psnr = 0, ssim = 0, tof = 0;
};
std::vector<AblationRow> ablation_sweep(const Config& base, const std::string& grid_path,
                                        const std::string& data_dir, const std::string& ete_ckpt,
                                        const std::string& out_dir);

}  // namespace fmanet::train
