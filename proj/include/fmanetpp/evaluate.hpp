#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fmanetpp/config.hpp"
#include "fmanetpp/dataset.hpp"
#include "fmanetpp/metrics.hpp"
#include "fmanetpp/networks.hpp"
#include "fmanetpp/params.hpp"

namespace fmanet::eval {

// Inference wrapper over a parameter store: per-frame ETE guidance (or a
// forced level via the stored level centroids) feeding Net^D / Net^R.
class ModelRunner {
public:
    net::NetworkConfig ncfg;
    nn::ParamStore* ps = nullptr;
    Tensor centroids;     // 5 x ce unit rows; required for force_level
    int force_level = 0;  // 0: embed each input frame

    std::vector<Tensor> embeddings(const std::vector<Tensor>& x_lr) const;

    // Sharp HR prediction for a full LR sequence (values only, no grads).
    std::vector<Tensor> restore(const std::vector<Tensor>& x_lr) const;

    // Degradation-prior reconstruction X_hat from sharp HR frames.
    std::vector<Tensor> reconstruct_x(const std::vector<Tensor>& x_lr,
                                      const std::vector<Tensor>& y_hr) const;
};

// Loads any checkpoint kind ("netd"/"joint") into ps and returns a runner.
ModelRunner load_runner(const std::string& ckpt_path, nn::ParamStore& ps);

struct SequenceMetrics {
    std::string id;
    double psnr = 0, ssim = 0, tof = 0;
    double runtime_per_frame = 0;
};

struct Report {
    std::vector<SequenceMetrics> per_sequence;
    double psnr = 0, ssim = 0, tof = 0;          // aggregate = mean of per-sequence
    double runtime_per_frame = 0;                // median across sequences
    std::string config_hash;
    std::string checkpoint_checksum;             // file checksum, verified unchanged
};

struct EvalOptions {
    std::string ckpt;
    std::string data_dir;
    std::string split = "test";
    std::string out_dir;
    std::string baseline;    // "" or "bilinear"
    int force_ete_level = 0; // 0 disables
    bool write_panels = true;
};

Report evaluate(const EvalOptions& opt);

// Restores an arbitrary PNG frame directory (frames in lexicographic order).
void restore_dir(const std::string& ckpt, const std::string& in_dir, const std::string& out_dir);

// Bilinear x s upsampling of a plain frame (the comparison baseline).
Tensor bilinear_up(const Tensor& x, int s);

}  // namespace fmanet::eval
